//! Encoder, conditional generator, the contrastive/augmentation/reconstruction
//! objective and the training loop.

mod losses;
mod nets;
mod train;

use std::fmt;
use std::str::FromStr;

pub use losses::{
    augmentation_loss, contrastive_per_domain_loss, contrastive_terms, global_contrastive_loss, perceptual_loss,
    reconstruction_loss,
};
pub use nets::{network_input, Encoder, Generator, Params, PerceptualNet, ENCODER_CHANNELS, PIXEL_WEIGHT};
pub use train::{
    sample_batch, total_loss, train, Batch, EpochLosses, LossTerms, StepInputs, TrainOptions, Trained, LOSS_FILE,
};

use crate::augment::AugmentPolicy;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Per-domain contrastive + augmentation + reconstruction.
    Redpanda,
    /// One contrastive loss over the whole batch + augmentation.
    SimclrGlobal,
    /// The seeded initialization, never trained.
    RawEncoder,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Redpanda, Mode::SimclrGlobal, Mode::RawEncoder];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Redpanda => "redpanda",
            Mode::SimclrGlobal => "simclr_global",
            Mode::RawEncoder => "raw_encoder",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?} (expected redpanda, simclr_global or raw_encoder)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub tau: f64,
    pub rec_weight: f64,
    pub aug_weight: f64,
    pub epochs: usize,
    pub domains_per_batch: usize,
    pub samples_per_domain: usize,
    pub lr_encoder: f64,
    pub lr_generator: f64,
    pub seed: u64,
    pub mode: Mode,
    pub code_dim: usize,
    /// Channels of the generator's first feature map.
    pub generator_width: usize,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Encode two augmented views instead of original vs augmented.
    pub two_views: bool,
    pub augment: AugmentPolicy,
    pub perceptual_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            rec_weight: 0.3,
            aug_weight: 1.0,
            epochs: 200,
            domains_per_batch: 4,
            samples_per_domain: 32,
            lr_encoder: 1e-4,
            lr_generator: 3e-4,
            seed: 0,
            mode: Mode::Redpanda,
            code_dim: 64,
            generator_width: 256,
            checkpoint_every: 0,
            two_views: false,
            augment: AugmentPolicy::standard(),
            perceptual_seed: 7,
        }
    }
}

impl TrainingConfig {
    pub fn batch_size(&self) -> usize {
        self.domains_per_batch * self.samples_per_domain
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        for (name, w) in [("rec_weight", self.rec_weight), ("aug_weight", self.aug_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be non-negative, got {w}"));
            }
        }
        for (name, lr) in [("lr_encoder", self.lr_encoder), ("lr_generator", self.lr_generator)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be non-negative, got {lr}"));
            }
        }
        if self.domains_per_batch == 0 || self.samples_per_domain == 0 {
            return bad("domains_per_batch and samples_per_domain must be positive".into());
        }
        if self.code_dim == 0 {
            return bad("code_dim must be positive".into());
        }
        if self.generator_width < 8 || self.generator_width % 8 != 0 {
            return bad(format!("generator_width must be a positive multiple of 8, got {}", self.generator_width));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
