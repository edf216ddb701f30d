//! SGD with momentum, the exponential learning-rate schedule, and the
//! offline training loop.

use std::path::Path;

use rand::seq::SliceRandom;

use super::loss::{fidelity_levels, offline_loss_prepared, prepare_pair, PreparedPair};
use super::{EpochLoss, LossBreakdown, TrainingConfig, TrainingPair};
use crate::error::{Error, Result};
use crate::nnet::{prune_init, Adapter1x1, NetworkSpec, NetworkWeights, PruneRecord};
use crate::util::seeded_rng;

/// Momentum buffer, same structure as the weights.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: NetworkWeights,
}

impl OptimizerState {
    pub fn zeros(weights: &NetworkWeights) -> Self {
        OptimizerState {
            velocity: weights.zeros_like(),
        }
    }
}

/// lr(e) = lr_start · (lr_end / lr_start)^(e / (epochs − 1)).
pub fn learning_rate(config: &TrainingConfig, epoch: usize) -> f64 {
    if config.epochs <= 1 {
        return config.lr_start;
    }
    let t = epoch as f64 / (config.epochs as f64 - 1.0);
    config.lr_start * (config.lr_end / config.lr_start).powf(t)
}

/// One momentum step: v ← m·v − lr·g, w ← w + v. Weight decay is already a
/// gradient term inside the loss, so it is not applied again here.
pub fn sgd_step(
    weights: &NetworkWeights,
    grads: &NetworkWeights,
    state: &OptimizerState,
    lr: f64,
    momentum: f64,
) -> Result<(NetworkWeights, OptimizerState)> {
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient step rejected".into()));
    }
    let mut velocity = state.velocity.clone();
    velocity.scale(momentum);
    velocity.add_scaled(grads, -lr);
    let mut next = weights.clone();
    next.add_scaled(&velocity, 1.0);
    Ok((next, OptimizerState { velocity }))
}

/// Result of [`train_offline`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub spec: NetworkSpec,
    pub weights: NetworkWeights,
    pub history: Vec<EpochLoss>,
    pub prune: PruneRecord,
}

fn accumulate(acc: &mut LossBreakdown, b: &LossBreakdown, w: f64) {
    for i in 0..3 {
        acc.tracking_per_level[i] += w * b.tracking_per_level[i];
    }
    acc.fidelity_target += w * b.fidelity_target;
    acc.fidelity_search += w * b.fidelity_search;
    acc.decay += w * b.decay;
}

fn mean_over_dataset(
    prepared: &[PreparedPair],
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    config: &TrainingConfig,
) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown {
        fidelity_weight: config.fidelity_weight,
        weight_decay: config.weight_decay,
        ..LossBreakdown::default()
    };
    let w = 1.0 / prepared.len() as f64;
    for p in prepared {
        let (b, _) = offline_loss_prepared(p, spec, weights, config)?;
        accumulate(&mut acc, &b, w);
    }
    acc.finish();
    Ok(acc)
}

/// Distills the teacher into a pruned student. The student starts from a
/// seeded random pruning of the teacher; pairs are revisited in a fresh
/// seeded shuffle every epoch. Aborts with the partial history if the loss
/// stops being finite.
pub fn train_offline(
    dataset: &[TrainingPair],
    teacher_spec: &NetworkSpec,
    teacher: &NetworkWeights,
    config: &TrainingConfig,
) -> Result<TrainOutput> {
    if dataset.is_empty() {
        return Err(Error::Invalid("training dataset is empty".into()));
    }
    teacher_spec.validate()?;
    let (spec, mut weights, prune) = prune_init(teacher_spec, teacher, 1.0 / 8.0, config.seed)?;
    for (i, &level) in fidelity_levels(config).iter().enumerate() {
        let (_, _, student_c) = spec.tap_dims(level)?;
        let (_, _, teacher_c) = teacher_spec.tap_dims(level)?;
        *weights.adapters.get_mut(level) = Some(Adapter1x1::seeded(
            student_c,
            teacher_c,
            config.seed.wrapping_add(0x5eed + i as u64),
        ));
    }

    let mut prepared = Vec::with_capacity(dataset.len());
    for pair in dataset {
        prepared.push(prepare_pair(pair.clone(), teacher_spec, teacher)?);
    }

    let mut history = Vec::with_capacity(config.epochs + 1);
    let init = mean_over_dataset(&prepared, &spec, &weights, config)?;
    history.push(EpochLoss::from_breakdown(0, &init));

    let mut rng = seeded_rng(config.seed.wrapping_add(0x0ffe11e));
    let mut state = OptimizerState::zeros(&weights);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let lr = learning_rate(config, epoch);
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_acc = LossBreakdown {
            fidelity_weight: config.fidelity_weight,
            weight_decay: config.weight_decay,
            ..LossBreakdown::default()
        };
        for chunk in order.chunks(config.batch_size.max(1)) {
            let bw = 1.0 / chunk.len() as f64;
            let mut grads = weights.zeros_like();
            let mut batch_acc = LossBreakdown {
                fidelity_weight: config.fidelity_weight,
                weight_decay: config.weight_decay,
                ..LossBreakdown::default()
            };
            for &idx in chunk {
                let (b, g) = offline_loss_prepared(&prepared[idx], &spec, &weights, config)?;
                accumulate(&mut batch_acc, &b, bw);
                grads.add_scaled(&g, bw);
            }
            batch_acc.finish();
            if !batch_acc.total.is_finite() {
                return Err(Error::Diverged { step, history });
            }
            accumulate(&mut epoch_acc, &batch_acc, chunk.len() as f64 / prepared.len() as f64);
            let (next, next_state) = sgd_step(&weights, &grads, &state, lr, config.momentum)?;
            weights = next;
            state = next_state;
            step += 1;
        }
        epoch_acc.finish();
        history.push(EpochLoss::from_breakdown(epoch + 1, &epoch_acc));
    }
    Ok(TrainOutput {
        spec,
        weights,
        history,
        prune,
    })
}

/// Writes the loss history as `epoch,tracking,fidelity,decay,total`.
pub fn write_history_csv(path: &Path, history: &[EpochLoss]) -> Result<()> {
    let mut out = String::from("epoch,tracking,fidelity,decay,total\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.tracking, row.fidelity, row.decay, row.total
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
