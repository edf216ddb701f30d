//! Training-pair extraction from annotated sequences.

use rand::Rng;

use super::TrainingPair;
use crate::bench::SequenceRecord;
use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::tracker::extract_patch;
use crate::util::seeded_rng;

/// Cropping geometry for training pairs.
#[derive(Debug, Clone)]
pub struct CropConfig {
    /// Crop side = pad_factor · √(target area).
    pub pad_factor: f64,
    /// Output patch side in pixels (network input).
    pub out_size: usize,
    /// Search-patch jitter, fraction of the patch side.
    pub jitter_frac: f64,
    /// Frame gaps are drawn uniformly from [0, max_gap].
    pub max_gap: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            pad_factor: 2.0,
            out_size: 64,
            jitter_frac: 0.15,
            max_gap: 10,
        }
    }
}

/// Cuts a (target, search) pair `gap` frames apart at a seeded random
/// position in the sequence. The search crop is jittered so the target sits
/// at a known offset from the patch center; that offset is recorded in
/// output-pixel units. Degenerate boxes (shorter than 2 px) are rejected so
/// callers can skip them.
pub fn sample_pair(
    seq: &SequenceRecord,
    gap: usize,
    config: &CropConfig,
    seed: u64,
) -> Result<TrainingPair> {
    if seq.len() == 0 {
        return Err(Error::Invalid("empty sequence".into()));
    }
    if gap >= seq.len() {
        return Err(Error::Invalid(format!(
            "gap {gap} too large for sequence of {} frames",
            seq.len()
        )));
    }
    let mut rng = seeded_rng(seed);
    let first = rng.gen_range(0..seq.len() - gap);
    let second = first + gap;
    let box_a = seq.boxes[first];
    let box_b = seq.boxes[second];
    for b in [&box_a, &box_b] {
        if b.w < 2.0 || b.h < 2.0 {
            return Err(Error::Invalid(format!(
                "degenerate box {}x{}, pair skipped",
                b.w, b.h
            )));
        }
    }
    let frame_a = seq.frame(first)?;
    let frame_b = seq.frame(second)?;
    let target = extract_patch(&frame_a, box_a, config.pad_factor, config.out_size)?;

    let out = config.out_size as f64;
    let jit = config.jitter_frac * out;
    let offset_patch = (rng.gen_range(-jit..=jit), rng.gen_range(-jit..=jit));
    let side_b = config.pad_factor * (box_b.w * box_b.h).sqrt();
    let scale = side_b / out;
    let (cx, cy) = box_b.center();
    // Shifting the crop center opposite to the offset puts the target at
    // +offset from the patch center.
    let shifted = Rect::from_center(
        cx - offset_patch.1 * scale,
        cy - offset_patch.0 * scale,
        box_b.w,
        box_b.h,
    );
    let search = extract_patch(&frame_b, shifted, config.pad_factor, config.out_size)?;
    Ok(TrainingPair {
        target,
        search,
        offset: offset_patch,
    })
}

/// Draws `count` pairs round-robin over the sequences, skipping degenerate
/// boxes. Deterministic for a given seed.
pub fn build_training_set(
    sequences: &[SequenceRecord],
    count: usize,
    config: &CropConfig,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    if sequences.is_empty() {
        return Err(Error::Invalid("no sequences to sample from".into()));
    }
    let mut rng = seeded_rng(seed.wrapping_add(0x9a15));
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    let max_attempts = count * 10 + 100;
    let mut si = 0usize;
    while out.len() < count && attempts < max_attempts {
        attempts += 1;
        let seq = &sequences[si % sequences.len()];
        si += 1;
        let gap_cap = config.max_gap.min(seq.len().saturating_sub(1));
        let gap = rng.gen_range(0..=gap_cap);
        let pair_seed: u64 = rng.gen();
        match sample_pair(seq, gap, config, pair_seed) {
            Ok(p) => out.push(p),
            Err(_) => continue,
        }
    }
    if out.len() < count {
        return Err(Error::Invalid(format!(
            "only {} of {count} pairs could be sampled",
            out.len()
        )));
    }
    Ok(out)
}
