use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatencyError {
    #[error("uniform bounds out of order: lo {lo} > hi {hi}")]
    BoundsOutOfOrder { lo: f64, hi: f64 },
    #[error("latency values must be finite and non-negative")]
    Negative,
    #[error("empirical latency model needs at least one sample")]
    NoSamples,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Delivery time of one payment, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyModel {
    Deterministic { seconds: f64 },
    /// Half-open `[lo, hi)`; degenerates to `lo` when the bounds are equal.
    Uniform { lo: f64, hi: f64 },
    /// Draws one of the recorded samples uniformly.
    Empirical { samples: Vec<f64> },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Deterministic { seconds: 7.0 }
    }
}

impl LatencyModel {
    /// Stand-in for the measured keysend delivery times: 4 to 10 s,
    /// averaging 7 s, never reaching 10 s.
    pub fn keysend_placeholder() -> Self {
        LatencyModel::Uniform { lo: 4.0, hi: 10.0 }
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        match self {
            LatencyModel::Deterministic { seconds } => {
                if !ok(*seconds) {
                    return Err(LatencyError::Negative);
                }
            }
            LatencyModel::Uniform { lo, hi } => {
                if !ok(*lo) || !ok(*hi) {
                    return Err(LatencyError::Negative);
                }
                if lo > hi {
                    return Err(LatencyError::BoundsOutOfOrder { lo: *lo, hi: *hi });
                }
            }
            LatencyModel::Empirical { samples } => {
                if samples.is_empty() {
                    return Err(LatencyError::NoSamples);
                }
                if !samples.iter().all(|&s| ok(s)) {
                    return Err(LatencyError::Negative);
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, LatencyError> {
        self.validate()?;
        Ok(match self {
            LatencyModel::Deterministic { seconds } => *seconds,
            LatencyModel::Uniform { lo, hi } if lo == hi => *lo,
            LatencyModel::Uniform { lo, hi } => rng.gen_range(*lo..*hi),
            LatencyModel::Empirical { samples } => samples[rng.gen_range(0..samples.len())],
        })
    }

    /// Loads one sample (seconds) per line; `#` starts a comment.
    pub fn load_samples(text: &str) -> Result<Self, LatencyError> {
        let mut samples = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let v: f64 = content.parse().map_err(|_| LatencyError::Parse {
                line: idx + 1,
                msg: format!("bad number {content:?}"),
            })?;
            samples.push(v);
        }
        let model = LatencyModel::Empirical { samples };
        model.validate()?;
        Ok(model)
    }
}

pub(crate) fn seconds_to_ns(seconds: f64) -> u64 {
    (seconds * 1e9).round() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_seven() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(LatencyModel::Deterministic { seconds: 7.0 }.sample(&mut rng).unwrap(), 7.0);
    }

    #[test]
    fn uniform_mean_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = LatencyModel::Uniform { lo: 4.0, hi: 10.0 };
        let draws: Vec<f64> = (0..1000).map(|_| m.sample(&mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((6.5..=7.5).contains(&mean), "mean {mean}");
        assert!(draws.iter().all(|&d| (4.0..10.0).contains(&d)));
    }

    #[test]
    fn degenerate_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(LatencyModel::Uniform { lo: 5.0, hi: 5.0 }.sample(&mut rng).unwrap(), 5.0);
    }

    #[test]
    fn invalid_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            LatencyModel::Uniform { lo: 6.0, hi: 4.0 }.sample(&mut rng),
            Err(LatencyError::BoundsOutOfOrder { .. })
        ));
        assert_eq!(LatencyModel::Empirical { samples: vec![] }.validate(), Err(LatencyError::NoSamples));
        assert_eq!(LatencyModel::Deterministic { seconds: -1.0 }.validate(), Err(LatencyError::Negative));
    }

    #[test]
    fn sample_file() {
        let m = LatencyModel::load_samples("# delays\n6.5\n7.25\n\n").unwrap();
        assert_eq!(m, LatencyModel::Empirical { samples: vec![6.5, 7.25] });
        assert!(matches!(LatencyModel::load_samples("x\n"), Err(LatencyError::Parse { line: 1, .. })));
    }

    #[test]
    fn ns_conversion() {
        assert_eq!(seconds_to_ns(7.0), 7_000_000_000);
        assert_eq!(seconds_to_ns(0.0), 0);
    }
}
