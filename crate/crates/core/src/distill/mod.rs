//! Offline joint compression and transfer: fidelity loss, differentiable
//! correlation-filter layer with analytic backward, multi-level tracking
//! loss, SGD training loop, and training-pair ingestion (real sequences or
//! the synthetic generator).

mod loss;
mod pairs;
mod synth;
mod train;

pub use loss::{
    cf_layer, fidelity_loss, make_level_targets, multilevel_tracking_loss, offline_loss,
    prepare_pair, CfLayerOutput, FidelityOutput, LevelTargets, PreparedPair, TrackingLossOutput,
};
pub use pairs::{build_training_set, sample_pair, CropConfig};
pub use synth::{synth_sequences, SynthConfig, SynthKind};
pub use train::{
    learning_rate, sgd_step, train_offline, write_history_csv, OptimizerState, TrainOutput,
};

use crate::tensor::Tensor3;

/// Hyper-parameters of the offline distillation run.
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    /// Weight-decay coefficient applied to all learnable parameters.
    pub weight_decay: f64,
    /// Weight of the fidelity term in the total objective.
    pub fidelity_weight: f64,
    /// Ridge regularizer of the correlation-filter layer.
    pub lambda_cf: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Apply the fidelity loss on every tap instead of the high tap only.
    pub per_level_fidelity: bool,
    /// Crop side relative to target size for training patches.
    pub pad_factor: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 50,
            lr_start: 1e-2,
            lr_end: 1e-5,
            momentum: 0.9,
            weight_decay: 0.005,
            fidelity_weight: 1e-5,
            lambda_cf: 1e-4,
            batch_size: 8,
            seed: 0,
            per_level_fidelity: false,
            pad_factor: 2.0,
        }
    }
}

/// A target patch, a search patch of the same size, and the target's offset
/// from the search-patch center in input pixels (row, col).
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub target: Tensor3,
    pub search: Tensor3,
    pub offset: (f64, f64),
}

/// Components of one loss evaluation. `total` recombines the raw parts with
/// the configured weights.
#[derive(Debug, Clone, Default)]
pub struct LossBreakdown {
    pub tracking_per_level: [f64; 3],
    pub tracking: f64,
    pub fidelity_target: f64,
    pub fidelity_search: f64,
    /// Squared parameter norm (unweighted).
    pub decay: f64,
    pub fidelity_weight: f64,
    pub weight_decay: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn fidelity(&self) -> f64 {
        self.fidelity_target + self.fidelity_search
    }

    pub(crate) fn finish(&mut self) {
        self.tracking = self.tracking_per_level.iter().sum();
        self.total = self.tracking
            + self.fidelity_weight * self.fidelity()
            + self.weight_decay * self.decay;
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub tracking: f64,
    /// Fidelity contribution after weighting.
    pub fidelity: f64,
    /// Decay contribution after weighting.
    pub decay: f64,
    pub total: f64,
}

impl EpochLoss {
    pub fn from_breakdown(epoch: usize, b: &LossBreakdown) -> Self {
        EpochLoss {
            epoch,
            tracking: b.tracking,
            fidelity: b.fidelity_weight * b.fidelity(),
            decay: b.weight_decay * b.decay,
            total: b.total,
        }
    }
}
