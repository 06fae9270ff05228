//! Finetuning objectives.
//!
//! * contrastive: pair generation and Siamese cosine-similarity training of
//!   the encoder, followed by a logistic head on frozen embeddings;
//! * vanilla: encoder plus softmax layer trained end to end on
//!   cross-entropy.
//!
//! Both share the Adam optimizer with linear warmup and decay.

mod contrastive;
mod head;
mod optim;
mod pairs;
mod vanilla;

pub use contrastive::{contrastive_loss, contrastive_loss_grad, train_contrastive};
pub use head::{
    fit_logistic_head, head_loss_and_grad, train_head, HeadFit, HeadFitOptions, HeadFitReport,
};
pub use optim::{Adam, WarmupLinear};
pub use pairs::{candidate_pairs, generate_pairs, Pair, PairSet};
pub use vanilla::{train_vanilla, vanilla_loss_and_grad, VanillaGrad};

use serde::{Deserialize, Serialize};

/// Hyperparameters shared by both objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Positive and negative pairs generated per class (R).
    pub pairs_per_class: usize,
}

impl TrainConfig {
    /// Learning rate 2e-5, warmup 0.1, seed 42, batch 8, one epoch, R = 20.
    pub fn paper() -> Self {
        Self {
            learning_rate: 2e-5,
            warmup_ratio: 0.1,
            seed: 42,
            batch_size: 8,
            epochs: 1,
            pairs_per_class: 20,
        }
    }

    /// Same as [`TrainConfig::paper`] but with a learning rate and epoch
    /// count suited to the small encoder.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 5,
            ..Self::paper()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio must lie in [0, 1], got {}", self.warmup_ratio));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.pairs_per_class == 0 {
            return bad("batch_size, epochs and pairs_per_class must be >= 1".into());
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(format!("unknown profile `{other}` (expected paper or desk)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training data: {0}")]
    Data(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] crate::classify::ModelError),
}

/// Loss trace of one optimizer run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub total_steps: usize,
    pub warmup_steps: usize,
    /// Mean loss of every mini-batch, in step order.
    pub batch_losses: Vec<f64>,
}

pub(crate) fn check_finite(step: usize, loss: f64) -> Result<(), TrainError> {
    if loss.is_finite() {
        Ok(())
    } else {
        log::error!("aborting: loss {loss} at step {step}");
        Err(TrainError::NonFinite { step, loss })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles() {
        let p = TrainConfig::paper();
        assert_eq!(
            (p.learning_rate, p.warmup_ratio, p.seed, p.batch_size, p.epochs, p.pairs_per_class),
            (2e-5, 0.1, 42, 8, 1, 20)
        );
        let d = TrainConfig::desk();
        assert_eq!((d.learning_rate, d.epochs), (1e-2, 5));
        assert_eq!("desk".parse::<Profile>().unwrap(), Profile::Desk);
        assert!("fast".parse::<Profile>().is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::paper().validate().is_ok());
        let mut c = TrainConfig::paper();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::paper();
        c.warmup_ratio = 1.5;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::paper();
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}
