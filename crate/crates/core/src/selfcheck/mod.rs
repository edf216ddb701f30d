//! Oracle and gradient verification suites, runnable from the command line.
//! Each check pits a fast implementation against an independent reference
//! (dense solves, naive convolution, finite differences) and reports a
//! deterministic pass/fail line.

pub mod oracles;

use oracles::{
    central_difference, context_filter_spatial, naive_conv_forward, rel_err, ridge_filter_spatial,
};
use rand::Rng;

use crate::distill::{self, cf_layer, offline_loss, TrainingConfig, TrainingPair};
use crate::nnet::{
    self, backward, count_flops, count_params, forward_taps, prune_init, Adapter1x1, LayerSpec,
    Level, NetworkSpec, NetworkWeights, TapIndices, TapSet,
};
use crate::spectral::{
    circshift, detect_cf, dft2, gaussian_label, gaussian_map, idft2, train_cf, train_cf_context,
};
use crate::tensor::Tensor3;
use crate::util::seeded_rng;

/// Outcome of one verification suite.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

fn random_tensor(h: usize, w: usize, c: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor3 {
    Tensor3::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
}

/// Round trip and Parseval consistency of the 2-D DFT.
pub fn check_dft(seed: u64) -> CheckResult {
    let mut rng = seeded_rng(seed);
    let mut worst_rt: f64 = 0.0;
    let mut worst_pv: f64 = 0.0;
    for (h, w, c) in [(8, 8, 2), (5, 7, 1), (1, 9, 3), (16, 16, 1)] {
        let t = random_tensor(h, w, c, &mut rng);
        let back = idft2(&dft2(&t).unwrap());
        let num: f64 = t
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst_rt = worst_rt.max(num / t.sq_norm().sqrt().max(1e-12));
        let s = dft2(&t).unwrap();
        let lhs = t.sq_norm();
        let rhs = s.sq_norm() / (h * w) as f64;
        worst_pv = worst_pv.max((lhs - rhs).abs() / lhs.max(1e-12));
    }
    CheckResult::new(
        "dft round trip + parseval",
        worst_rt < 1e-10 && worst_pv < 1e-9,
        format!("round-trip rel {worst_rt:.3e}, parseval rel {worst_pv:.3e}"),
    )
}

/// Closed-form filter training against the dense circulant ridge oracle.
pub fn check_train_cf_oracle(instances: usize, tol: f64, seed: u64) -> CheckResult {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let channels = 1 + i % 3;
        let x = random_tensor(8, 8, channels, &mut rng);
        let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
        let filter = train_cf(&x, &label, 0.1).unwrap();
        let got = idft2(&filter.quotient());
        let want = ridge_filter_spatial(&x, label.map(), 0.1);
        let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    CheckResult::new(
        "train_cf vs dense ridge oracle",
        worst < tol,
        format!("{instances} instances, worst rel {worst:.3e} (tol {tol:.0e})"),
    )
}

/// Context-aware training against the dense oracle (single channel, where
/// the shared-denominator closed form is the exact minimizer).
pub fn check_context_oracle(instances: usize, tol: f64, seed: u64) -> CheckResult {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let x = random_tensor(8, 8, 1, &mut rng);
        let negs: Vec<Tensor3> = (0..1 + i % 3)
            .map(|_| random_tensor(8, 8, 1, &mut rng))
            .collect();
        let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
        let filter = train_cf_context(&x, &negs, &label, 0.2, 0.5).unwrap();
        let got = idft2(&filter.quotient());
        let want = context_filter_spatial(&x, &negs, label.map(), 0.2, 0.5);
        let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    CheckResult::new(
        "train_cf_context vs dense oracle",
        worst < tol,
        format!("{instances} instances, worst rel {worst:.3e} (tol {tol:.0e})"),
    )
}

/// Detection argmax must track every circular shift of an 8×8 patch exactly.
pub fn check_shift_equivariance(seed: u64) -> CheckResult {
    let mut rng = seeded_rng(seed);
    let x = random_tensor(8, 8, 2, &mut rng);
    let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
    let filter = train_cf(&x, &label, 0.01).unwrap();
    let base = detect_cf(&filter, &x).unwrap().argmax;
    let mut failures = 0;
    for dr in 0..8 {
        for dc in 0..8 {
            let z = circshift(&x, dr as isize, dc as isize);
            let det = detect_cf(&filter, &z).unwrap();
            let got = (
                (det.argmax.0 + 8 - base.0) % 8,
                (det.argmax.1 + 8 - base.1) % 8,
            );
            if got != (dr, dc) {
                failures += 1;
            }
        }
    }
    CheckResult::new(
        "detect_cf shift equivariance",
        failures == 0,
        format!("64 shifts, {failures} mismatches"),
    )
}

/// With λ = 0 on a spectrum-nonvanishing patch, detection on the training
/// patch reproduces the label exactly.
pub fn check_exact_interpolation(seed: u64) -> CheckResult {
    let mut rng = seeded_rng(seed);
    let x = Tensor3::from_fn(8, 8, 1, |_, _, _| rng.gen_range(0.5..1.5));
    let label = gaussian_label(8, 8, 1.2, (0, 0)).unwrap();
    let filter = train_cf(&x, &label, 0.0).unwrap();
    let det = detect_cf(&filter, &x).unwrap();
    let worst = det
        .response
        .data()
        .iter()
        .zip(label.map().data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    CheckResult::new(
        "zero-lambda exact interpolation",
        worst < 1e-8,
        format!("max abs deviation {worst:.3e}"),
    )
}

fn fd_spec_channels(channels: [usize; 3]) -> NetworkSpec {
    let conv = |cin: usize, cout: usize| LayerSpec::Conv {
        kernel: 3,
        stride: 1,
        pad: 1,
        in_channels: cin,
        out_channels: cout,
        has_bias: false,
    };
    NetworkSpec {
        input: (16, 16, 2),
        layers: vec![
            conv(2, channels[0]),
            LayerSpec::Relu,
            LayerSpec::Maxpool { window: 2, stride: 2 },
            conv(channels[0], channels[1]),
            LayerSpec::Relu,
            LayerSpec::Maxpool { window: 2, stride: 2 },
            conv(channels[1], channels[2]),
        ],
        taps: TapIndices {
            low: 0,
            middle: 3,
            high: 6,
        },
    }
}

fn fd_spec() -> NetworkSpec {
    fd_spec_channels([2, 3, 4])
}

/// Forward convolution against the naive sliding-window oracle.
pub fn check_conv_oracle(seed: u64) -> CheckResult {
    let mut rng = seeded_rng(seed);
    let spec = fd_spec();
    let weights = NetworkWeights::seeded(&spec, seed).unwrap();
    let input = random_tensor(16, 16, 2, &mut rng);
    let (taps, _) = forward_taps(&spec, &weights, &input).unwrap();
    let slow = naive_conv_forward(&input, 3, 1, 1, 2, &weights.convs[0].kernel, None);
    let mut worst: f64 = 0.0;
    for (a, b) in taps.low.data().iter().zip(slow.data()) {
        worst = worst.max((a - b).abs());
    }
    CheckResult::new(
        "conv forward vs naive oracle",
        worst < 1e-10,
        format!("max abs deviation {worst:.3e}"),
    )
}

/// Network backward against central finite differences.
pub fn check_backward_fd(seed: u64, coords: usize, tol: f64) -> CheckResult {
    let spec = fd_spec();
    let weights = NetworkWeights::seeded(&spec, seed).unwrap();
    let mut rng = seeded_rng(seed + 1);
    let input = random_tensor(16, 16, 2, &mut rng);
    let loss = |w: &NetworkWeights| -> f64 {
        let (taps, _) = forward_taps(&spec, w, &input).unwrap();
        Level::ALL.iter().map(|l| 0.5 * taps.get(*l).sq_norm()).sum()
    };
    let (taps, cache) = forward_taps(&spec, &weights, &input).unwrap();
    let tap_grads = TapSet::from_fn(|l| Some(taps.get(l).clone()));
    let (grads, _) = backward(&spec, &weights, &cache, &tap_grads).unwrap();
    let mut worst: f64 = 0.0;
    let n = weights.param_count();
    for _ in 0..coords {
        let idx = rng.gen_range(0..n);
        let x0 = weights.param_get(idx);
        let mut probe = weights.clone();
        let fd = central_difference(
            &mut |v| {
                probe.param_set(idx, v);
                loss(&probe)
            },
            x0,
            1e-4,
        );
        worst = worst.max(rel_err(grads.param_get(idx), fd, 1e-6));
    }
    CheckResult::new(
        "network backward vs finite differences",
        worst < tol,
        format!("{coords} coords, worst rel {worst:.3e} (tol {tol:.0e})"),
    )
}

/// Correlation-filter layer gradients against central finite differences.
pub fn check_cf_layer_fd(instances: usize, coords: usize, tol: f64, seed: u64) -> CheckResult {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let lambda = [0.1, 0.5, 1.0][i % 3];
        let x = random_tensor(6, 6, 2, &mut rng);
        let z = random_tensor(6, 6, 2, &mut rng);
        let y = gaussian_map(6, 6, 0.8, 0.0, 0.0);
        let g = gaussian_map(6, 6, 0.8, 1.0, -1.0);
        let out = cf_layer(&x, &z, &y, &g, lambda).unwrap();
        for k in 0..coords {
            let idx = rng.gen_range(0..x.len());
            let on_target = k % 2 == 0;
            let analytic = if on_target {
                out.grad_target.data()[idx]
            } else {
                out.grad_search.data()[idx]
            };
            let source = if on_target { &x } else { &z };
            let x0 = source.data()[idx];
            let mut probe = source.clone();
            let fd = central_difference(
                &mut |v| {
                    probe.data_mut()[idx] = v;
                    if on_target {
                        cf_layer(&probe, &z, &y, &g, lambda).unwrap().loss
                    } else {
                        cf_layer(&x, &probe, &y, &g, lambda).unwrap().loss
                    }
                },
                x0,
                1e-4,
            );
            worst = worst.max(rel_err(analytic, fd, 1e-6));
        }
    }
    CheckResult::new(
        "cf layer backward vs finite differences",
        worst < tol,
        format!("{instances} instances x {coords} coords, worst rel {worst:.3e} (tol {tol:.0e})"),
    )
}

/// Full offline objective gradients against finite differences.
pub fn check_offline_fd(samples: usize, tol: f64, seed: u64) -> CheckResult {
    let teacher_spec = fd_spec_channels([4, 6, 8]);
    let teacher = NetworkWeights::seeded(&teacher_spec, seed + 2).unwrap();
    let spec = fd_spec();
    let mut student = NetworkWeights::seeded(&spec, seed + 3).unwrap();
    let (_, _, sc) = spec.tap_dims(Level::High).unwrap();
    let (_, _, tc) = teacher_spec.tap_dims(Level::High).unwrap();
    student.adapters.high = Some(Adapter1x1::seeded(sc, tc, seed + 4));
    let mut rng = seeded_rng(seed + 5);
    let pair = TrainingPair {
        target: random_tensor(16, 16, 2, &mut rng),
        search: random_tensor(16, 16, 2, &mut rng),
        offset: (1.0, -1.5),
    };
    let config = TrainingConfig {
        lambda_cf: 0.1,
        fidelity_weight: 1e-2,
        weight_decay: 1e-3,
        ..TrainingConfig::default()
    };
    let (_, grads) =
        offline_loss(&pair, &spec, &student, &teacher_spec, &teacher, &config).unwrap();
    let mut worst: f64 = 0.0;
    let n = student.param_count();
    for _ in 0..samples {
        let idx = rng.gen_range(0..n);
        let x0 = student.param_get(idx);
        let mut probe = student.clone();
        let fd = central_difference(
            &mut |v| {
                probe.param_set(idx, v);
                offline_loss(&pair, &spec, &probe, &teacher_spec, &teacher, &config)
                    .unwrap()
                    .0
                    .total
            },
            x0,
            1e-4,
        );
        worst = worst.max(rel_err(grads.param_get(idx), fd, 1e-6));
    }
    CheckResult::new(
        "offline loss gradients vs finite differences",
        worst < tol,
        format!("{samples} weights, worst rel {worst:.3e} (tol {tol:.0e})"),
    )
}

/// Pruning determinism, weight copying, and published channel counts.
pub fn check_prune(seed: u64) -> CheckResult {
    let spec = NetworkSpec::table3_teacher();
    let weights = NetworkWeights::seeded(&spec, seed).unwrap();
    let (student, _, a) = prune_init(&spec, &weights, 1.0 / 8.0, seed).unwrap();
    let (_, _, b) = prune_init(&spec, &weights, 1.0 / 8.0, seed).unwrap();
    let channels: Vec<usize> = student
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
            _ => None,
        })
        .collect();
    let ok = a == b && channels == vec![12, 32, 64, 64, 64];
    CheckResult::new(
        "prune determinism + channel counts",
        ok,
        format!("student channels {channels:?}"),
    )
}

/// Published FLOPs and parameter totals for the full-size geometries.
pub fn check_flops_params() -> CheckResult {
    let tf = count_flops(&NetworkSpec::table3_teacher()).unwrap().total_flops;
    let sf = count_flops(&NetworkSpec::table3_student()).unwrap().total_flops;
    let tp = count_params(&NetworkSpec::table3_teacher()).unwrap();
    let sp = count_params(&NetworkSpec::table3_student()).unwrap();
    let ratio = tp as f64 / sp as f64;
    let ok = tf == 1_816_471_552 && sf == 47_930_624 && tp == 6_526_752 && sp == 103_524;
    CheckResult::new(
        "flops + parameter accounting",
        ok && (ratio - 63.05).abs() < 0.1,
        format!("teacher {tf} / student {sf} flops, param ratio {ratio:.2}"),
    )
}

/// Weight file round trip through a temporary file.
pub fn check_weights_io(seed: u64) -> CheckResult {
    let spec = NetworkSpec::desk64_student();
    let mut weights = NetworkWeights::seeded(&spec, seed).unwrap();
    weights.adapters.high = Some(Adapter1x1::seeded(8, 64, seed + 1));
    let path = std::env::temp_dir().join(format!("cftrack-selfcheck-{seed}-{}.bin", std::process::id()));
    let result = (|| -> crate::error::Result<bool> {
        nnet::save_weights(&path, &spec, &weights)?;
        let (spec2, weights2) = nnet::load_weights(&path, Some(&spec))?;
        Ok(spec2 == spec && weights2 == weights)
    })();
    let _ = std::fs::remove_file(&path);
    match result {
        Ok(ok) => CheckResult::new("weight file round trip", ok, "bit-identical reload".into()),
        Err(e) => CheckResult::new("weight file round trip", false, format!("{e}")),
    }
}

/// Gaussian label and window edge values.
pub fn check_label_window() -> CheckResult {
    let label = gaussian_label(5, 5, 1.0, (2, 2)).unwrap();
    let ok_label = (label.map().get(0, 2, 2) - 1.0).abs() < 1e-15
        && (label.map().get(0, 2, 3) - (-0.5f64).exp()).abs() < 1e-12;
    let w = crate::spectral::cosine_window(5, 5).unwrap();
    let ok_window = (w.get(0, 2, 2) - 1.0).abs() < 1e-15 && w.get(0, 0, 3).abs() < 1e-15;
    CheckResult::new(
        "gaussian label + cosine window values",
        ok_label && ok_window,
        "analytic point values".into(),
    )
}

/// Success/AUC arithmetic on constructed box sequences.
pub fn check_metrics() -> CheckResult {
    use crate::geom::{iou, Rect};
    let a = Rect::new(0.0, 0.0, 2.0, 2.0);
    let b = Rect::new(1.0, 0.0, 2.0, 2.0);
    let ok_iou = (iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12 && iou(&a, &a) == 1.0;
    // A perfect IoU row scores 20/21 on the strict threshold grid.
    let grid = crate::bench::thresholds();
    let auc: f64 = grid.iter().map(|t| if 1.0 > *t { 1.0 } else { 0.0 }).sum::<f64>() / 21.0;
    let ok_auc = (auc - 20.0 / 21.0).abs() < 1e-12;
    CheckResult::new(
        "iou + auc grid arithmetic",
        ok_iou && ok_auc,
        format!("perfect-row auc {auc:.6}"),
    )
}

/// Training determinism on a miniature run.
pub fn check_training_determinism(seed: u64) -> CheckResult {
    let teacher_spec = fd_spec_channels([8, 12, 16]);
    let teacher = NetworkWeights::seeded(&teacher_spec, seed).unwrap();
    let mut rng = seeded_rng(seed + 1);
    let data: Vec<TrainingPair> = (0..4)
        .map(|_| TrainingPair {
            target: random_tensor(16, 16, 2, &mut rng),
            search: random_tensor(16, 16, 2, &mut rng),
            offset: (0.5, -0.5),
        })
        .collect();
    let config = TrainingConfig {
        epochs: 2,
        batch_size: 2,
        lambda_cf: 0.1,
        seed,
        ..TrainingConfig::default()
    };
    let a = distill::train_offline(&data, &teacher_spec, &teacher, &config);
    let b = distill::train_offline(&data, &teacher_spec, &teacher, &config);
    match (a, b) {
        (Ok(a), Ok(b)) => CheckResult::new(
            "training determinism",
            a.weights == b.weights,
            "two runs, identical weights".into(),
        ),
        (Err(e), _) | (_, Err(e)) => {
            CheckResult::new("training determinism", false, format!("{e}"))
        }
    }
}

/// Runs every suite with spec tolerances; deterministic given the seed.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        check_dft(seed),
        check_label_window(),
        check_train_cf_oracle(100, 1e-6, seed.wrapping_add(1)),
        check_context_oracle(100, 1e-6, seed.wrapping_add(2)),
        check_shift_equivariance(seed.wrapping_add(3)),
        check_exact_interpolation(seed.wrapping_add(4)),
        check_conv_oracle(seed.wrapping_add(5)),
        check_backward_fd(seed.wrapping_add(6), 50, 1e-4),
        check_cf_layer_fd(20, 50, 1e-4, seed.wrapping_add(7)),
        check_offline_fd(30, 1e-3, seed.wrapping_add(8)),
        check_prune(seed.wrapping_add(9)),
        check_flops_params(),
        check_weights_io(seed.wrapping_add(10)),
        check_metrics(),
        check_training_determinism(seed.wrapping_add(11)),
    ]
}
