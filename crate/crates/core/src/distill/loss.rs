//! Loss surfaces of the offline distillation objective. The correlation
//! filter layer solves the ridge regression in the frequency domain on the
//! forward pass and returns exact analytic gradients for both feature
//! branches; everything is verified against finite differences in the test
//! suites.

use num_complex::Complex;

use super::{LossBreakdown, TrainingConfig, TrainingPair};
use crate::error::{Error, Result};
use crate::nnet::{
    adapter_backward, adapter_forward, backward, forward_taps, Adapter1x1, Level, NetworkSpec,
    NetworkWeights, TapGrads, TapOutputs, TapSet,
};
use crate::spectral::{dft2, gaussian_map, idft2, idft2_complex, Spectrum};
use crate::tensor::Tensor3;

/// Forward response plus exact gradients of ‖r − g‖²/N w.r.t. both feature
/// patches.
#[derive(Debug, Clone)]
pub struct CfLayerOutput {
    pub response: Tensor3,
    pub loss: f64,
    pub grad_target: Tensor3,
    pub grad_search: Tensor3,
}

/// Differentiable correlation-filter layer.
///
/// A filter is solved in closed form from the target features and the
/// training label `y`, applied to the search features, and the squared error
/// against the response target `g` (normalized by element count) is returned
/// together with its gradients. `g` may be any map of the response size; the
/// background branch of online adaptation passes an all-zero map.
pub fn cf_layer(
    target_feats: &Tensor3,
    search_feats: &Tensor3,
    train_label: &Tensor3,
    response_target: &Tensor3,
    lambda_cf: f64,
) -> Result<CfLayerOutput> {
    if lambda_cf <= 0.0 {
        return Err(Error::Invalid(format!(
            "cf layer needs lambda > 0 for a differentiable backward, got {lambda_cf}"
        )));
    }
    if !target_feats.same_dims(search_feats) {
        return Err(Error::Shape(format!(
            "target feats {:?} != search feats {:?}",
            target_feats.dims(),
            search_feats.dims()
        )));
    }
    let (h, w, d) = target_feats.dims();
    for (name, m) in [("train label", train_label), ("response target", response_target)] {
        if m.channels() != 1 || m.height() != h || m.width() != w {
            return Err(Error::Shape(format!(
                "{name} dims {:?} do not match feature grid {h}x{w}",
                m.dims()
            )));
        }
    }
    let n = h * w;
    let numel = n as f64;
    let xs = dft2(target_feats)?;
    let zs = dft2(search_feats)?;
    let ys = dft2(train_label)?;
    let y = ys.channel(0);

    let mut den = vec![lambda_cf; n];
    for ch in 0..d {
        let x = xs.channel(ch);
        for i in 0..n {
            den[i] += x[i].norm_sqr();
        }
    }
    // Cross spectrum s = Σ_d conj(x̂_d) ⊙ ẑ_d.
    let mut s = vec![Complex::new(0.0, 0.0); n];
    for ch in 0..d {
        let x = xs.channel(ch);
        let z = zs.channel(ch);
        for i in 0..n {
            s[i] += x[i].conj() * z[i];
        }
    }
    let mut rs = Spectrum::zeros(h, w, 1);
    for i in 0..n {
        rs.data_mut()[i] = y[i] * s[i] / den[i];
    }
    let response = idft2(&rs);

    let mut loss = 0.0;
    let mut err = Tensor3::zeros(h, w, 1);
    for i in 0..n {
        let diff = response.data()[i] - response_target.data()[i];
        loss += diff * diff / numel;
        err.data_mut()[i] = 2.0 * diff / numel;
    }
    let es = dft2(&err)?;
    let e = es.channel(0);

    // q = Re(ŷ ⊙ s ⊙ conj(ê)) / den², shared across channels.
    let mut q = vec![0.0; n];
    for i in 0..n {
        q[i] = (y[i] * s[i] * e[i].conj()).re / (den[i] * den[i]);
    }

    let mut gx_spec = Spectrum::zeros(h, w, d);
    let mut gz_spec = Spectrum::zeros(h, w, d);
    for ch in 0..d {
        let x = xs.channel(ch);
        let z = zs.channel(ch);
        let base = ch * n;
        for i in 0..n {
            // ŵ_d = conj(ŷ) x̂_d / den; ∂L/∂z lives on ŵ_d ⊙ ê.
            let w_hat = y[i].conj() * x[i] / den[i];
            gz_spec.data_mut()[base + i] = w_hat * e[i];
            gx_spec.data_mut()[base + i] =
                y[i] * z[i] * e[i].conj() / den[i] - 2.0 * q[i] * x[i];
        }
    }
    let gx = idft2_complex(&gx_spec);
    let gz = idft2_complex(&gz_spec);
    let take_re = |s: &Spectrum| {
        let mut t = Tensor3::zeros(h, w, d);
        for (dst, src) in t.data_mut().iter_mut().zip(s.data()) {
            *dst = src.re;
        }
        t
    };
    Ok(CfLayerOutput {
        response,
        loss,
        grad_target: take_re(&gx),
        grad_search: take_re(&gz),
    })
}

/// Squared feature difference between the adapter-projected student tap and
/// the (frozen) teacher tap, normalized by element count.
#[derive(Debug, Clone)]
pub struct FidelityOutput {
    pub loss: f64,
    pub grad_student_tap: Tensor3,
    pub grad_adapter: Adapter1x1,
}

pub fn fidelity_loss(
    student_tap: &Tensor3,
    teacher_tap: &Tensor3,
    adapter: &Adapter1x1,
) -> Result<FidelityOutput> {
    let projected = adapter_forward(adapter, student_tap)?;
    if !projected.same_dims(teacher_tap) {
        return Err(Error::Shape(format!(
            "adapter output {:?} does not match teacher tap {:?}",
            projected.dims(),
            teacher_tap.dims()
        )));
    }
    let numel = projected.len() as f64;
    let mut loss = 0.0;
    let mut gout = Tensor3::zeros(projected.height(), projected.width(), projected.channels());
    for i in 0..projected.len() {
        let diff = projected.data()[i] - teacher_tap.data()[i];
        loss += diff * diff / numel;
        gout.data_mut()[i] = 2.0 * diff / numel;
    }
    let (grad_adapter, grad_student_tap) = adapter_backward(adapter, student_tap, &gout);
    Ok(FidelityOutput {
        loss,
        grad_student_tap,
        grad_adapter,
    })
}

/// Per-level regression targets: the filter-training label (peak wrapped to
/// the origin) and the desired response map.
#[derive(Debug, Clone)]
pub struct LevelTargets {
    pub train_label: Tensor3,
    pub response_target: Tensor3,
}

/// Builds per-level targets for a pair whose target sits `offset_px` (row,
/// col, input pixels) from the search-patch center. Label bandwidth follows
/// sigma = 0.1 · target_extent measured in cells of each tap grid.
pub fn make_level_targets(
    spec: &NetworkSpec,
    pad_factor: f64,
    offset_px: (f64, f64),
) -> Result<TapSet<LevelTargets>> {
    let input_extent = ((spec.input.0 * spec.input.1) as f64).sqrt();
    let make = |level: Level| -> Result<LevelTargets> {
        let (th, tw, _) = spec.tap_dims(level)?;
        let stride = spec.tap_stride(level) as f64;
        let sigma = 0.1 * input_extent / (pad_factor * stride);
        Ok(LevelTargets {
            train_label: gaussian_map(th, tw, sigma, 0.0, 0.0),
            response_target: gaussian_map(th, tw, sigma, offset_px.0 / stride, offset_px.1 / stride),
        })
    };
    Ok(TapSet {
        low: make(Level::Low)?,
        middle: make(Level::Middle)?,
        high: make(Level::High)?,
    })
}

/// Sum of correlation-filter losses over the three feature levels.
#[derive(Debug, Clone)]
pub struct TrackingLossOutput {
    pub total: f64,
    pub per_level: [f64; 3],
    pub grad_target_taps: TapGrads,
    pub grad_search_taps: TapGrads,
}

pub fn multilevel_tracking_loss(
    target_taps: &TapOutputs,
    search_taps: &TapOutputs,
    targets: &TapSet<LevelTargets>,
    lambda_cf: f64,
) -> Result<TrackingLossOutput> {
    let mut per_level = [0.0; 3];
    let mut grad_target_taps: TapGrads = TapSet::default();
    let mut grad_search_taps: TapGrads = TapSet::default();
    for (i, level) in Level::ALL.iter().enumerate() {
        let t = targets.get(*level);
        let out = cf_layer(
            target_taps.get(*level),
            search_taps.get(*level),
            &t.train_label,
            &t.response_target,
            lambda_cf,
        )?;
        per_level[i] = out.loss;
        *grad_target_taps.get_mut(*level) = Some(out.grad_target);
        *grad_search_taps.get_mut(*level) = Some(out.grad_search);
    }
    Ok(TrackingLossOutput {
        total: per_level.iter().sum(),
        per_level,
        grad_target_taps,
        grad_search_taps,
    })
}

/// A training pair with the teacher taps evaluated once; the teacher is
/// frozen, so its activations never change across epochs.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub pair: TrainingPair,
    pub teacher_target_taps: TapOutputs,
    pub teacher_search_taps: TapOutputs,
}

pub fn prepare_pair(
    pair: TrainingPair,
    teacher_spec: &NetworkSpec,
    teacher: &NetworkWeights,
) -> Result<PreparedPair> {
    let (teacher_target_taps, _) = forward_taps(teacher_spec, teacher, &pair.target)?;
    let (teacher_search_taps, _) = forward_taps(teacher_spec, teacher, &pair.search)?;
    Ok(PreparedPair {
        pair,
        teacher_target_taps,
        teacher_search_taps,
    })
}

pub(crate) fn fidelity_levels(config: &TrainingConfig) -> &'static [Level] {
    if config.per_level_fidelity {
        &Level::ALL
    } else {
        &[Level::High]
    }
}

/// Full offline objective for one pair: multi-level tracking loss plus
/// weighted fidelity plus weight decay. Gradients flow through both
/// shared-weight student passes and the adapters; the teacher is constant.
pub fn offline_loss(
    pair: &TrainingPair,
    student_spec: &NetworkSpec,
    student: &NetworkWeights,
    teacher_spec: &NetworkSpec,
    teacher: &NetworkWeights,
    config: &TrainingConfig,
) -> Result<(LossBreakdown, NetworkWeights)> {
    let prepared = prepare_pair(pair.clone(), teacher_spec, teacher)?;
    offline_loss_prepared(&prepared, student_spec, student, config)
}

pub(crate) fn offline_loss_prepared(
    prepared: &PreparedPair,
    student_spec: &NetworkSpec,
    student: &NetworkWeights,
    config: &TrainingConfig,
) -> Result<(LossBreakdown, NetworkWeights)> {
    let pair = &prepared.pair;
    if !pair.target.same_dims(&pair.search) {
        return Err(Error::Shape(format!(
            "pair patches differ: {:?} vs {:?}",
            pair.target.dims(),
            pair.search.dims()
        )));
    }
    let (taps_x, cache_x) = forward_taps(student_spec, student, &pair.target)?;
    let (taps_z, cache_z) = forward_taps(student_spec, student, &pair.search)?;
    let targets = make_level_targets(student_spec, config.pad_factor, pair.offset)?;
    let tracking = multilevel_tracking_loss(&taps_x, &taps_z, &targets, config.lambda_cf)?;

    let mut breakdown = LossBreakdown {
        tracking_per_level: tracking.per_level,
        fidelity_weight: config.fidelity_weight,
        weight_decay: config.weight_decay,
        ..LossBreakdown::default()
    };

    let mut grad_x_taps = tracking.grad_target_taps;
    let mut grad_z_taps = tracking.grad_search_taps;
    let mut grads = student.zeros_like();
    for &level in fidelity_levels(config) {
        let adapter = student.adapters.get(level).as_ref().ok_or_else(|| {
            Error::Invalid(format!("missing {} adapter for fidelity loss", level.name()))
        })?;
        let fx = fidelity_loss(
            taps_x.get(level),
            prepared.teacher_target_taps.get(level),
            adapter,
        )?;
        let fz = fidelity_loss(
            taps_z.get(level),
            prepared.teacher_search_taps.get(level),
            adapter,
        )?;
        breakdown.fidelity_target += fx.loss;
        breakdown.fidelity_search += fz.loss;
        // Tracking already produced a gradient at every level; fold in the
        // weighted fidelity contribution.
        if let Some(g) = grad_x_taps.get_mut(level) {
            g.add_scaled(&fx.grad_student_tap, config.fidelity_weight);
        }
        if let Some(g) = grad_z_taps.get_mut(level) {
            g.add_scaled(&fz.grad_student_tap, config.fidelity_weight);
        }
        let ga = grads.adapters.get_mut(level).as_mut().expect("adapter grads");
        for (dst, (a, b)) in ga
            .weights
            .iter_mut()
            .zip(fx.grad_adapter.weights.iter().zip(&fz.grad_adapter.weights))
        {
            *dst += config.fidelity_weight * (a + b);
        }
    }

    let (gx, _) = backward(student_spec, student, &cache_x, &grad_x_taps)?;
    let (gz, _) = backward(student_spec, student, &cache_z, &grad_z_taps)?;
    grads.add_scaled(&gx, 1.0);
    grads.add_scaled(&gz, 1.0);

    breakdown.decay = student.sq_norm();
    grads.add_scaled(student, 2.0 * config.weight_decay);

    breakdown.finish();
    Ok((breakdown, grads))
}
