//! Standard test fields: five named Gaussian shapes per dimension and seeded random
//! mixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gaussian_field::{GaussianMixtureField, GaussianTerm};

pub const SHAPE_NAMES: [&str; 5] = ["unit", "narrow", "wide", "pair", "triple"];

fn term(amplitude: f64, center: &[f64], width: f64, d: usize) -> GaussianTerm {
    let mut c = vec![0.0; d];
    for (dst, src) in c.iter_mut().zip(center) {
        *dst = *src;
    }
    GaussianTerm::new(amplitude, c, width).expect("corpus terms are valid")
}

/// One of the five standard shapes in dimension `d`.
pub fn shape(name: &str, d: usize) -> Option<GaussianMixtureField> {
    let terms = match name {
        "unit" => vec![term(1.0, &[], 1.0, d)],
        "narrow" => vec![term(1.0, &[0.5, 0.25, -0.25], 0.25, d)],
        "wide" => vec![term(1.0, &[-1.0, 0.5, 0.0], 4.0, d)],
        "pair" => vec![term(1.0, &[1.0], 0.5, d), term(-0.6, &[-1.0, 0.5, 0.5], 1.0, d)],
        "triple" => vec![
            term(0.8, &[0.0, 1.0, 0.0], 0.3, d),
            term(0.5, &[2.0, -1.0, 1.0], 1.5, d),
            term(-0.3, &[-1.5, 0.0, -0.5], 0.7, d),
        ],
        _ => return None,
    };
    Some(GaussianMixtureField::new(d, terms).expect("corpus fields are valid"))
}

pub fn standard_shapes(d: usize) -> Vec<(&'static str, GaussianMixtureField)> {
    SHAPE_NAMES.iter().map(|&n| (n, shape(n, d).unwrap())).collect()
}

/// A random mixture of one to three terms with amplitudes in `±[0.2, 1]`, centres in
/// `[-2, 2]^d` and widths in `[0.2, 2]`. Deterministic in `(seed, index)`.
pub fn random_mixture(d: usize, seed: u64, index: u64) -> GaussianMixtureField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let k = rng.gen_range(1..=3);
    let terms = (0..k)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let amp = sign * rng.gen_range(0.2..=1.0);
            let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..=2.0)).collect();
            let width = rng.gen_range(0.2..=2.0);
            GaussianTerm::new(amp, center, width).expect("random terms are valid")
        })
        .collect();
    GaussianMixtureField::new(d, terms).expect("random mixtures are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_exist_in_every_dimension() {
        for d in 1..=3 {
            let s = standard_shapes(d);
            assert_eq!(s.len(), 5);
            assert!(s.iter().all(|(_, f)| f.dim() == d && f.l2_norm() > 0.0));
        }
        assert!(shape("nope", 1).is_none());
    }

    #[test]
    fn random_mixtures_are_reproducible() {
        assert_eq!(random_mixture(2, 5, 3), random_mixture(2, 5, 3));
        assert_ne!(random_mixture(2, 5, 3), random_mixture(2, 5, 4));
    }
}
