//! Experiment reports: a measured quantity set against a bound of known form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Which side of `bound_rhs` the measured value is claimed to lie on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Upper,
    Lower,
}

/// One experiment point.
///
/// `bound_form` is the bound's shape with the constant set to one, so `ratio` before
/// calibration is the empirical constant the point requires. `bound_rhs` is
/// `constant * bound_form` once a constant has been applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: String,
    pub measured: f64,
    pub certificate: f64,
    pub bound_form: f64,
    pub constant: Option<f64>,
    pub bound_rhs: f64,
    pub ratio: Option<f64>,
    /// Whether the inequality between `measured` and `bound_rhs` is a claim this report checks.
    pub asserted: bool,
    #[serde(default)]
    pub direction: Direction,
    pub backbone: String,
    pub params: BTreeMap<String, f64>,
    pub labels: BTreeMap<String, String>,
    pub extras: BTreeMap<String, f64>,
    pub fingerprint: Option<String>,
}

impl BoundReport {
    /// A report whose bound has an explicit, constant-free right-hand side.
    pub fn explicit(bound: &str, measured: f64, certificate: f64, bound_rhs: f64, backbone: &str) -> Self {
        let mut r = Self::with_form(bound, measured, certificate, bound_rhs, backbone);
        r.constant = Some(1.0);
        r.asserted = true;
        r
    }

    /// A report whose bound carries an unknown constant; `form` is the bound with `C = 1`.
    pub fn with_form(bound: &str, measured: f64, certificate: f64, form: f64, backbone: &str) -> Self {
        Self {
            bound: bound.to_string(),
            measured,
            certificate,
            bound_form: form,
            constant: None,
            bound_rhs: form,
            ratio: ratio(measured, form),
            asserted: false,
            direction: Direction::Upper,
            backbone: backbone.to_string(),
            params: BTreeMap::new(),
            labels: BTreeMap::new(),
            extras: BTreeMap::new(),
            fingerprint: None,
        }
    }

    /// A measurement with no bound attached.
    pub fn measurement(bound: &str, measured: f64, certificate: f64, backbone: &str) -> Self {
        Self::with_form(bound, measured, certificate, 0.0, backbone)
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn label(mut self, key: &str, value: impl Into<String>) -> Self {
        self.labels.insert(key.to_string(), value.into());
        self
    }

    pub fn extra(mut self, key: &str, value: f64) -> Self {
        self.extras.insert(key.to_string(), value);
        self
    }

    /// Applies a constant to the bound form and marks the inequality as asserted.
    pub fn with_constant(mut self, constant: f64, fingerprint: Option<String>) -> Self {
        self.constant = Some(constant);
        self.bound_rhs = constant * self.bound_form;
        self.ratio = ratio(self.measured, self.bound_rhs);
        self.asserted = true;
        self.fingerprint = fingerprint;
        self
    }

    /// Empirical constant this point needs, i.e. the ratio to the constant-free form.
    pub fn required_constant(&self) -> Option<f64> {
        ratio(self.measured, self.bound_form)
    }

    /// An asserted lower bound `measured >= bound_rhs`.
    pub fn lower_bound(bound: &str, measured: f64, certificate: f64, bound_rhs: f64, backbone: &str) -> Self {
        let mut r = Self::explicit(bound, measured, certificate, bound_rhs, backbone);
        r.direction = Direction::Lower;
        r
    }

    /// True unless the report asserts an inequality that fails beyond its certificate.
    pub fn holds(&self) -> bool {
        !self.asserted
            || match self.direction {
                Direction::Upper => self.measured <= self.bound_rhs + self.certificate,
                Direction::Lower => self.measured + self.certificate >= self.bound_rhs,
            }
    }
}

fn ratio(measured: f64, rhs: f64) -> Option<f64> {
    (rhs > 0.0).then(|| measured / rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_only_for_positive_rhs() {
        let r = BoundReport::measurement("x", 1.0, 0.0, "gaussian");
        assert_eq!(r.ratio, None);
        assert!(r.holds());
        let r = BoundReport::with_form("x", 1.0, 0.0, 4.0, "gaussian");
        assert_eq!(r.ratio, Some(0.25));
        let c = r.with_constant(0.2, None);
        assert_eq!(c.bound_rhs, 0.8);
        assert!(!c.holds());
        assert_eq!(c.required_constant(), Some(0.25));
    }

    #[test]
    fn certificate_gives_slack() {
        let r = BoundReport::explicit("x", 1.05, 0.1, 1.0, "spectral");
        assert!(r.holds());
        assert!(BoundReport::lower_bound("x", 0.95, 0.1, 1.0, "gaussian").holds());
        assert!(!BoundReport::lower_bound("x", 0.8, 0.1, 1.0, "gaussian").holds());
    }
}
