pub mod aliasing;
pub mod bump;
pub mod calibration;
pub mod corpus;
pub mod error;
pub mod gaussian_field;
pub mod hs_analysis;
pub mod impulse_control;
pub mod observability;
pub mod perturbation;
pub mod quadrature;
pub mod report;
pub mod runner;
pub mod sinc_basis;
pub mod special;
pub mod spectral_field;
pub mod tensor;
pub mod weak_window;
