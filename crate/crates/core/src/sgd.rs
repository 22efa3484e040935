//! Shared SGD plumbing: config, margin cost, and the deterministic
//! counter-based epoch shuffle used by every per-sample trainer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::ClassId;
use crate::error::{Error, Result};

/// Margin cost Δ(y_n, y) used inside the ranking losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginCost {
    /// Δ = 1 for wrong classes, 0 for the true class.
    #[default]
    ZeroOne,
}

impl MarginCost {
    #[inline]
    pub fn delta(self, truth: ClassId, candidate: ClassId) -> f64 {
        match self {
            MarginCost::ZeroOne => {
                if truth == candidate {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// Per-sample SGD schedule: fixed learning rate, `epochs` shuffled passes.
/// `epochs = 0` is allowed and returns the initial model untouched, which
/// tests rely on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub margin_cost: MarginCost,
}

impl SgdConfig {
    pub fn new(learning_rate: f64, epochs: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            learning_rate,
            epochs,
            seed,
            margin_cost: MarginCost::ZeroOne,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid(
                "sgd config",
                format!("learning_rate must be positive and finite, got {}", self.learning_rate),
            ));
        }
        Ok(())
    }
}

/// Visit order for one epoch: a seeded Fisher-Yates shuffle of 0..n where the
/// epoch index selects an independent ChaCha stream. Identical (n, seed,
/// epoch) always yields the identical permutation, on any platform.
pub fn epoch_shuffle(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_cost_zero_one() {
        let m = MarginCost::ZeroOne;
        assert_eq!(m.delta(3, 3), 0.0);
        assert_eq!(m.delta(3, 4), 1.0);
    }

    #[test]
    fn config_rejects_bad_learning_rate() {
        assert!(SgdConfig::new(0.0, 5, 1).is_err());
        assert!(SgdConfig::new(-1.0, 5, 1).is_err());
        assert!(SgdConfig::new(f64::NAN, 5, 1).is_err());
        assert!(SgdConfig::new(0.1, 0, 1).is_ok());
    }

    #[test]
    fn epoch_shuffle_is_reproducible_and_epoch_dependent() {
        let a = epoch_shuffle(20, 7, 0);
        let b = epoch_shuffle(20, 7, 0);
        let c = epoch_shuffle(20, 7, 1);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }
}
