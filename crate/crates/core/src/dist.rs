//! Sampling distributions for durations, sizes and resource readings.

use rand::Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as NormalLaw};
use thiserror::Error;

use crate::model::{round_ms, Millis};
use crate::rng::SeededRng;

// Rejection sampling for the zero-truncated normal gives up after this many
// draws and returns 0.
const MAX_REJECTIONS: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid distribution: {0}")]
pub struct InvalidDistribution(pub String);

/// A distribution over non-negative reals.
///
/// In config files it is written as a one-key table, for example
/// `{ constant = 4770 }`, `{ uniform = { min = 5, max = 9 } }`,
/// `{ normal = { mean = 1000, std_dev = 100 } }` or `{ empirical = [1, 2, 3] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Constant(f64),
    Uniform {
        min: f64,
        max: f64,
    },
    /// Normal law truncated at zero.
    Normal {
        mean: f64,
        std_dev: f64,
    },
    /// Uniform choice among the listed values.
    Empirical(Vec<f64>),
}

impl Default for Distribution {
    fn default() -> Self {
        Distribution::Constant(0.0)
    }
}

impl Distribution {
    pub fn constant(value: f64) -> Self {
        Distribution::Constant(value)
    }

    pub fn validate(&self) -> Result<(), InvalidDistribution> {
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(InvalidDistribution(format!("{what} must be finite")))
            }
        };
        match self {
            Distribution::Constant(c) => finite(*c, "constant"),
            Distribution::Uniform { min, max } => {
                finite(*min, "uniform min")?;
                finite(*max, "uniform max")?;
                if min > max {
                    return Err(InvalidDistribution(format!(
                        "uniform bounds reversed: min {min} > max {max}"
                    )));
                }
                Ok(())
            }
            Distribution::Normal { mean, std_dev } => {
                finite(*mean, "normal mean")?;
                finite(*std_dev, "normal std_dev")?;
                if *std_dev < 0.0 {
                    return Err(InvalidDistribution(format!(
                        "normal std_dev {std_dev} is negative"
                    )));
                }
                Ok(())
            }
            Distribution::Empirical(values) => {
                if values.is_empty() {
                    return Err(InvalidDistribution("empirical list is empty".into()));
                }
                values
                    .iter()
                    .try_for_each(|v| finite(*v, "empirical value"))
            }
        }
    }

    /// Validation for durations and sizes: every reachable value is ≥ 0.
    pub fn validate_non_negative(&self) -> Result<(), InvalidDistribution> {
        self.validate()?;
        let negative = match self {
            Distribution::Constant(c) => *c < 0.0,
            Distribution::Uniform { min, .. } => *min < 0.0,
            Distribution::Normal { .. } => false,
            Distribution::Empirical(values) => values.iter().any(|v| *v < 0.0),
        };
        if negative {
            return Err(InvalidDistribution(
                "distribution can produce negative values".into(),
            ));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Result<f64, InvalidDistribution> {
        self.validate()?;
        Ok(self.sample_unchecked(rng))
    }

    /// Samples a duration or size rounded half-even onto the integer scale.
    pub fn sample_ms(&self, rng: &mut SeededRng) -> Result<Millis, InvalidDistribution> {
        self.sample(rng).map(round_ms)
    }

    pub fn sample_u64(&self, rng: &mut SeededRng) -> Result<u64, InvalidDistribution> {
        self.sample(rng).map(|v| round_ms(v).max(0) as u64)
    }

    fn sample_unchecked(&self, rng: &mut SeededRng) -> f64 {
        match self {
            Distribution::Constant(c) => *c,
            Distribution::Uniform { min, max } => {
                if min == max {
                    *min
                } else {
                    min + (max - min) * rng.random::<f64>()
                }
            }
            Distribution::Normal { mean, std_dev } => {
                if *std_dev == 0.0 {
                    return mean.max(0.0);
                }
                let law = Normal::new(*mean, *std_dev).expect("validated normal parameters");
                for _ in 0..MAX_REJECTIONS {
                    let x = law.sample(rng);
                    if x >= 0.0 {
                        return x;
                    }
                }
                0.0
            }
            Distribution::Empirical(values) => values[rng.random_range(0..values.len())],
        }
    }

    /// Expected value of a draw.
    pub fn mean(&self) -> f64 {
        match self {
            Distribution::Constant(c) => *c,
            Distribution::Uniform { min, max } => (min + max) / 2.0,
            Distribution::Normal { mean, std_dev } => truncated_normal_mean(*mean, *std_dev),
            Distribution::Empirical(values) => {
                values.iter().sum::<f64>() / values.len().max(1) as f64
            }
        }
    }
}

// Mean of N(mean, std_dev²) conditioned on X ≥ 0.
fn truncated_normal_mean(mean: f64, std_dev: f64) -> f64 {
    if std_dev == 0.0 {
        return mean.max(0.0);
    }
    let std = NormalLaw::new(0.0, 1.0).expect("standard normal");
    let alpha = -mean / std_dev;
    let tail = 1.0 - std.cdf(alpha);
    if tail <= f64::MIN_POSITIVE {
        return 0.0;
    }
    mean + std_dev * std.pdf(alpha) / tail
}
