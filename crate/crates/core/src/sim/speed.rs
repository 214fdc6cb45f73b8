//! Learner compute-time models.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::scheduler::LearnerId;

/// Distribution of one gradient computation's duration, in simulated seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedModel {
    Uniform { low: f64, high: f64 },
    /// Lognormal with the given mean (not median).
    Lognormal { mean: f64, sigma: f64 },
    /// Lognormal for everyone, multiplied by `slowdown` for the listed learners.
    Straggler { mean: f64, sigma: f64, stragglers: Vec<LearnerId>, slowdown: f64 },
}

impl Default for SpeedModel {
    fn default() -> Self {
        SpeedModel::Lognormal { mean: 1.0, sigma: 0.5 }
    }
}

enum Base {
    Uniform(Uniform<f64>),
    Lognormal(LogNormal<f64>),
}

fn lognormal(mean: f64, sigma: f64) -> Result<LogNormal<f64>, String> {
    LogNormal::new(mean.ln() - sigma * sigma / 2.0, sigma).map_err(|e| e.to_string())
}

/// Validated sampler built from a [`SpeedModel`].
pub struct SpeedSampler {
    base: Base,
    factors: Vec<f64>,
}

impl SpeedModel {
    /// Returns `(field, reason)` for the first bad parameter.
    pub fn check(&self, num_learners: usize) -> Result<(), (&'static str, String)> {
        let positive = |name: &'static str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err((name, format!("must be finite and > 0, got {x}")))
            }
        };
        match self {
            SpeedModel::Uniform { low, high } => {
                positive("low", *low)?;
                positive("high", *high)?;
                if low > high {
                    return Err(("high", format!("must be >= low ({low}), got {high}")));
                }
            }
            SpeedModel::Lognormal { mean, sigma } => {
                positive("mean", *mean)?;
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(("sigma", format!("must be finite and >= 0, got {sigma}")));
                }
            }
            SpeedModel::Straggler { mean, sigma, stragglers, slowdown } => {
                SpeedModel::Lognormal { mean: *mean, sigma: *sigma }.check(num_learners)?;
                positive("slowdown", *slowdown)?;
                if let Some(s) = stragglers.iter().find(|s| s.get() == 0 || s.get() > num_learners) {
                    return Err(("stragglers", format!("learner {s} is outside 1..={num_learners}")));
                }
            }
        }
        Ok(())
    }

    pub fn sampler(&self, num_learners: usize) -> Result<SpeedSampler, (&'static str, String)> {
        self.check(num_learners)?;
        let mut factors = vec![1.0; num_learners];
        let base = match self {
            SpeedModel::Uniform { low, high } => {
                Base::Uniform(Uniform::new_inclusive(*low, *high).map_err(|e| ("low", e.to_string()))?)
            }
            SpeedModel::Lognormal { mean, sigma } => Base::Lognormal(lognormal(*mean, *sigma).map_err(|e| ("sigma", e))?),
            SpeedModel::Straggler { mean, sigma, stragglers, slowdown } => {
                for s in stragglers {
                    factors[s.index()] = *slowdown;
                }
                Base::Lognormal(lognormal(*mean, *sigma).map_err(|e| ("sigma", e))?)
            }
        };
        Ok(SpeedSampler { base, factors })
    }
}

impl SpeedSampler {
    /// Duration of one gradient computation by `learner`; always > 0.
    pub fn sample<R: Rng + ?Sized>(&self, learner: LearnerId, rng: &mut R) -> f64 {
        let base = match &self.base {
            Base::Uniform(u) => u.sample(rng),
            Base::Lognormal(l) => l.sample(rng),
        };
        (base * self.factors[learner.index()]).max(f64::MIN_POSITIVE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_are_positive() {
        let models = [
            SpeedModel::default(),
            SpeedModel::Uniform { low: 0.5, high: 2.0 },
            SpeedModel::Straggler { mean: 1.0, sigma: 2.0, stragglers: vec![LearnerId::new(1)], slowdown: 10.0 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in models {
            let s = m.sampler(2).unwrap();
            for _ in 0..2000 {
                assert!(s.sample(LearnerId::new(1), &mut rng) > 0.0);
                assert!(s.sample(LearnerId::new(2), &mut rng) > 0.0);
            }
        }
    }

    #[test]
    fn lognormal_mean_is_preserved() {
        let s = SpeedModel::Lognormal { mean: 2.0, sigma: 0.5 }.sampler(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| s.sample(LearnerId::new(1), &mut rng)).sum::<f64>() / n as f64;
        // std of the estimate is about 0.0024
        assert!((mean - 2.0).abs() < 0.015, "{mean}");
    }

    #[test]
    fn stragglers_are_slower_by_the_factor() {
        let m = SpeedModel::Straggler { mean: 1.0, sigma: 0.0, stragglers: vec![LearnerId::new(2)], slowdown: 10.0 };
        let s = m.sampler(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((s.sample(LearnerId::new(1), &mut rng) - 1.0).abs() < 1e-12);
        assert!((s.sample(LearnerId::new(2), &mut rng) - 10.0).abs() < 1e-11);
    }

    #[test]
    fn bad_parameters_name_the_field() {
        assert_eq!(SpeedModel::Uniform { low: 0.0, high: 1.0 }.check(1).unwrap_err().0, "low");
        assert_eq!(SpeedModel::Lognormal { mean: 1.0, sigma: -1.0 }.check(1).unwrap_err().0, "sigma");
        let m = SpeedModel::Straggler { mean: 1.0, sigma: 0.5, stragglers: vec![LearnerId::new(5)], slowdown: 10.0 };
        assert_eq!(m.check(4).unwrap_err().0, "stragglers");
    }

    #[test]
    fn serde_shape() {
        let m: SpeedModel = serde_json::from_str(r#"{"kind":"uniform","low":1,"high":2}"#).unwrap();
        assert_eq!(m, SpeedModel::Uniform { low: 1.0, high: 2.0 });
        assert!(serde_json::from_str::<SpeedModel>(r#"{"kind":"lognormal","mean":1,"sigma":1,"x":2}"#).is_err());
    }
}
