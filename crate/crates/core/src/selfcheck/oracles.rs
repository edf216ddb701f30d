//! Independent reference implementations used to verify the fast paths.
//! Everything here is deliberately written the slow, obvious way and shares
//! no code with the implementations it checks.

use crate::tensor::Tensor3;

/// Relative error with a floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Sliding-window convolution written output-first with explicit padding.
pub fn naive_conv_forward(
    input: &Tensor3,
    kernel_size: usize,
    stride: usize,
    pad: usize,
    out_channels: usize,
    kernel: &[f64],
    bias: Option<&[f64]>,
) -> Tensor3 {
    let (ih, iw, ic) = input.dims();
    // Materialize the zero-padded input.
    let ph = ih + 2 * pad;
    let pw = iw + 2 * pad;
    let mut padded = Tensor3::zeros(ph, pw, ic);
    for c in 0..ic {
        for r in 0..ih {
            for col in 0..iw {
                padded.set(c, r + pad, col + pad, input.get(c, r, col));
            }
        }
    }
    let oh = (ph - kernel_size) / stride + 1;
    let ow = (pw - kernel_size) / stride + 1;
    let mut out = Tensor3::zeros(oh, ow, out_channels);
    for o in 0..out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for ky in 0..kernel_size {
                    for kx in 0..kernel_size {
                        for c in 0..ic {
                            let wv = kernel
                                [((o * ic + c) * kernel_size + ky) * kernel_size + kx];
                            acc += wv * padded.get(c, y * stride + ky, x * stride + kx);
                        }
                    }
                }
                out.set(o, y, x, acc);
            }
        }
    }
    out
}

/// Gaussian elimination with partial pivoting; returns None on a singular
/// system.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc -= a[col][c] * x[c];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Rows of the circular cross-correlation operator for one channel:
/// row n, column m holds x[(n_r+m_r) mod H, (n_c+m_c) mod W].
fn correlation_matrix(x: &Tensor3, channel: usize) -> Vec<Vec<f64>> {
    let (h, w, _) = x.dims();
    let n = h * w;
    let mut c = vec![vec![0.0; n]; n];
    for nr in 0..h {
        for nc in 0..w {
            let row = nr * w + nc;
            for mr in 0..h {
                for mc in 0..w {
                    let col = mr * w + mc;
                    c[row][col] = x.get(channel, (nr + mr) % h, (nc + mc) % w);
                }
            }
        }
    }
    c
}

/// Dense ridge regression over all circular shifts of a multi-channel patch.
/// Returns the spatial filter, channels concatenated: w[d·N + m].
pub fn ridge_filter_spatial(features: &Tensor3, label: &Tensor3, lambda: f64) -> Vec<f64> {
    let (h, w, d) = features.dims();
    let n = h * w;
    let blocks: Vec<Vec<Vec<f64>>> = (0..d).map(|ch| correlation_matrix(features, ch)).collect();
    let nd = n * d;
    let mut a = vec![vec![0.0; nd]; nd];
    let mut b = vec![0.0; nd];
    for di in 0..d {
        for mi in 0..n {
            let row = di * n + mi;
            for dj in 0..d {
                for mj in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += blocks[di][k][mi] * blocks[dj][k][mj];
                    }
                    a[row][dj * n + mj] = acc;
                }
            }
            a[row][row] += lambda;
            let mut acc = 0.0;
            for k in 0..n {
                acc += blocks[di][k][mi] * label.data()[k];
            }
            b[row] = acc;
        }
    }
    solve_dense(a, b).expect("ridge system is singular")
}

/// Dense minimizer of the context-aware objective for single-channel
/// patches: ‖C⁺w − y‖² + λ1‖w‖² + λ2 Σ_k ‖C⁻_k w‖².
pub fn context_filter_spatial(
    positive: &Tensor3,
    negatives: &[Tensor3],
    label: &Tensor3,
    lambda1: f64,
    lambda2: f64,
) -> Vec<f64> {
    assert_eq!(positive.channels(), 1, "context oracle is single-channel");
    let (h, w, _) = positive.dims();
    let n = h * w;
    let cp = correlation_matrix(positive, 0);
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for mi in 0..n {
        for mj in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += cp[k][mi] * cp[k][mj];
            }
            a[mi][mj] = acc;
        }
        a[mi][mi] += lambda1;
        let mut acc = 0.0;
        for k in 0..n {
            acc += cp[k][mi] * label.data()[k];
        }
        b[mi] = acc;
    }
    for neg in negatives {
        let cn = correlation_matrix(neg, 0);
        for mi in 0..n {
            for mj in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += cn[k][mi] * cn[k][mj];
                }
                a[mi][mj] += lambda2 * acc;
            }
        }
    }
    solve_dense(a, b).expect("context system is singular")
}

/// Central finite difference of `f` along one coordinate, where `f` reads a
/// probe value and is responsible for restoring state itself.
pub fn central_difference(f: &mut dyn FnMut(f64) -> f64, x0: f64, step: f64) -> f64 {
    let plus = f(x0 + step);
    let minus = f(x0 - step);
    (plus - minus) / (2.0 * step)
}
