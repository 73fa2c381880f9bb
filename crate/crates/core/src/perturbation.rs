//! Named, reproducible perturbations `n/N ↦ λ_n` of the sampling lattice.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

type CustomRule = Arc<dyn Fn(f64, &[i64]) -> Vec<f64> + Send + Sync>;

/// A perturbation rule. Each built-in rule moves `n/N` by at most `eps/N`.
#[derive(Clone)]
pub enum PerturbationRule {
    Identity,
    /// `λ_n = n/N + (-1)^{n_1} (eps/N) e_1`.
    Alternating { eps: f64 },
    /// Outward shift by `eps/N` along `n/|n|`; the origin stays put.
    Radial { eps: f64 },
    /// Uniform shift in the cube of half-side `eps/(N√d)`, keyed by `(seed, n)`.
    Seeded { eps: f64, seed: u64 },
    /// Arbitrary rule `(N, n) ↦ λ_n`, used to exercise validation.
    Custom { name: String, eps: f64, rule: CustomRule },
}

impl fmt::Debug for PerturbationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl PerturbationRule {
    pub fn named(name: &str, eps: f64, seed: u64) -> Result<Self> {
        let rule = match name {
            "identity" | "none" => Self::Identity,
            "alternating" => Self::Alternating { eps },
            "radial" => Self::Radial { eps },
            "seeded" | "random" => Self::Seeded { eps, seed },
            other => return Err(Error::input(format!("unknown perturbation rule '{other}' (expected identity, alternating, radial, seeded)"))),
        };
        if !(0.0..1.0).contains(&rule.eps()) {
            return Err(Error::input(format!("perturbation size eps must lie in [0, 1), got {eps}")));
        }
        Ok(rule)
    }

    pub fn eps(&self) -> f64 {
        match self {
            Self::Identity => 0.0,
            Self::Alternating { eps } | Self::Radial { eps } | Self::Seeded { eps, .. } | Self::Custom { eps, .. } => *eps,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Alternating { .. } => "alternating".into(),
            Self::Radial { .. } => "radial".into(),
            Self::Seeded { seed, .. } => format!("seeded:{seed}"),
            Self::Custom { name, .. } => format!("custom:{name}"),
        }
    }

    pub fn point(&self, n_density: f64, n: &[i64]) -> Vec<f64> {
        let base: Vec<f64> = n.iter().map(|&k| k as f64 / n_density).collect();
        match self {
            Self::Identity => base,
            Self::Alternating { eps } => {
                let mut p = base;
                let sign = if n[0].rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                p[0] += sign * eps / n_density;
                p
            }
            Self::Radial { eps } => {
                let len = n.iter().map(|&k| (k * k) as f64).sum::<f64>().sqrt();
                if len == 0.0 {
                    return base;
                }
                base.iter().zip(n).map(|(b, &k)| b + eps / n_density * k as f64 / len).collect()
            }
            Self::Seeded { eps, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(key(*seed, n));
                let half = eps / (n_density * (n.len() as f64).sqrt());
                base.iter().map(|b| b + rng.gen_range(-half..=half)).collect()
            }
            Self::Custom { rule, .. } => rule(n_density, n),
        }
    }

    /// Checks `|λ_n - n/N| ≤ eps/N` for every listed index.
    pub fn validate<'a, I>(&self, n_density: f64, indices: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a [i64]>,
    {
        let eps = self.eps();
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::precondition(format!("perturbation size eps = {eps} is outside [0, 1)")));
        }
        let limit = eps / n_density * (1.0 + 1e-12);
        for n in indices {
            let p = self.point(n_density, n);
            let shift: f64 = p.iter().zip(n).map(|(x, &k)| (x - k as f64 / n_density).powi(2)).sum::<f64>().sqrt();
            if shift > limit {
                return Err(Error::precondition(format!(
                    "rule {} moves lattice point {n:?} by {shift:.3e} > eps/N = {:.3e}",
                    self.name(),
                    eps / n_density
                )));
            }
        }
        Ok(())
    }
}

fn key(seed: u64, n: &[i64]) -> u64 {
    // splitmix64 over the seed and each coordinate
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &k in n {
        h = h.wrapping_add(k as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_rules_respect_the_shift_bound() {
        let idx: Vec<Vec<i64>> = (-3..=3).flat_map(|a| (-3..=3).map(move |b| vec![a, b])).collect();
        for name in ["identity", "alternating", "radial", "seeded"] {
            let rule = PerturbationRule::named(name, 0.3, 7).unwrap();
            rule.validate(2.0, idx.iter().map(|v| v.as_slice())).unwrap();
        }
    }

    #[test]
    fn alternating_rule_shape() {
        let r = PerturbationRule::Alternating { eps: 0.1 };
        assert_eq!(r.point(1.0, &[0]), vec![0.1]);
        assert_eq!(r.point(1.0, &[-1]), vec![-1.1]);
        assert_eq!(r.point(2.0, &[3, 1]), vec![1.5 - 0.05, 0.5]);
    }

    #[test]
    fn seeded_rule_is_reproducible_and_seed_dependent() {
        let a = PerturbationRule::Seeded { eps: 0.2, seed: 1 };
        let b = PerturbationRule::Seeded { eps: 0.2, seed: 2 };
        assert_eq!(a.point(1.0, &[4, -2]), a.point(1.0, &[4, -2]));
        assert_ne!(a.point(1.0, &[4, -2]), b.point(1.0, &[4, -2]));
    }

    #[test]
    fn violating_rule_is_rejected() {
        let bad = PerturbationRule::Custom {
            name: "too-far".into(),
            eps: 0.1,
            rule: Arc::new(|n_density, n: &[i64]| n.iter().map(|&k| (k as f64 + 0.5) / n_density).collect()),
        };
        let idx = [vec![0i64]];
        assert!(matches!(bad.validate(1.0, idx.iter().map(|v| v.as_slice())), Err(Error::Precondition(_))));
        assert!(PerturbationRule::named("alternating", 1.5, 0).is_err());
        assert!(PerturbationRule::named("sideways", 0.1, 0).is_err());
    }
}
