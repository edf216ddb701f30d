//! Minimal convolutional-network engine: conv / relu / maxpool layers with
//! exact backward passes, tapped intermediate outputs, pruning-based student
//! initialization, weight persistence, and FLOPs/parameter accounting.
//!
//! Everything is plain f64 with fixed summation order (channel-major, then
//! kernel row, then kernel column) so repeated runs are bit-identical.

mod io;

pub use io::{load_weights, save_weights};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;
use crate::util::{normal_f32, seeded_rng};

/// Feature-representation level exported by a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Middle,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Middle, Level::High];

    pub fn name(&self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Middle => "middle",
            Level::High => "high",
        }
    }
}

/// One value per feature level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TapSet<T> {
    pub low: T,
    pub middle: T,
    pub high: T,
}

impl<T> TapSet<T> {
    pub fn from_fn(mut f: impl FnMut(Level) -> T) -> Self {
        TapSet {
            low: f(Level::Low),
            middle: f(Level::Middle),
            high: f(Level::High),
        }
    }

    pub fn get(&self, level: Level) -> &T {
        match level {
            Level::Low => &self.low,
            Level::Middle => &self.middle,
            Level::High => &self.high,
        }
    }

    pub fn get_mut(&mut self, level: Level) -> &mut T {
        match level {
            Level::Low => &mut self.low,
            Level::Middle => &mut self.middle,
            Level::High => &mut self.high,
        }
    }
}

pub type TapOutputs = TapSet<Tensor3>;
pub type TapGrads = TapSet<Option<Tensor3>>;

/// A single layer of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        stride: usize,
        pad: usize,
        in_channels: usize,
        out_channels: usize,
        has_bias: bool,
    },
    Relu,
    Maxpool {
        window: usize,
        stride: usize,
    },
}

/// Layer indices of the low / middle / high taps (conv outputs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapIndices {
    pub low: usize,
    pub middle: usize,
    pub high: usize,
}

impl TapIndices {
    pub fn get(&self, level: Level) -> usize {
        match level {
            Level::Low => self.low,
            Level::Middle => self.middle,
            Level::High => self.high,
        }
    }
}

/// Layered network description: input dims, ordered layers, tap positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input dims as (height, width, channels).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub taps: TapIndices,
}

fn conv_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl NetworkSpec {
    /// Output dims (h, w, c) of every layer in order.
    pub fn layer_dims(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut dims = Vec::with_capacity(self.layers.len());
        let (mut h, mut w, mut c) = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    kernel,
                    stride,
                    pad,
                    in_channels,
                    out_channels,
                    ..
                } => {
                    if in_channels != c {
                        return Err(Error::Shape(format!(
                            "layer {i}: conv expects {in_channels} input channels, gets {c}"
                        )));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(Error::Invalid(format!("layer {i}: degenerate conv spec")));
                    }
                    h = conv_out(h, kernel, stride, pad).ok_or_else(|| {
                        Error::Invalid(format!("layer {i}: kernel exceeds padded input"))
                    })?;
                    w = conv_out(w, kernel, stride, pad).ok_or_else(|| {
                        Error::Invalid(format!("layer {i}: kernel exceeds padded input"))
                    })?;
                    c = out_channels;
                }
                LayerSpec::Relu => {}
                LayerSpec::Maxpool { window, stride } => {
                    if window == 0 || stride == 0 {
                        return Err(Error::Invalid(format!("layer {i}: degenerate pool spec")));
                    }
                    h = conv_out(h, window, stride, 0).ok_or_else(|| {
                        Error::Invalid(format!("layer {i}: pool window exceeds input"))
                    })?;
                    w = conv_out(w, window, stride, 0).ok_or_else(|| {
                        Error::Invalid(format!("layer {i}: pool window exceeds input"))
                    })?;
                }
            }
            if h == 0 || w == 0 {
                return Err(Error::Invalid(format!("layer {i}: output collapses to zero size")));
            }
            dims.push((h, w, c));
        }
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.layer_dims()?;
        let taps = [self.taps.low, self.taps.middle, self.taps.high];
        if !(taps[0] < taps[1] && taps[1] < taps[2]) {
            return Err(Error::Invalid(format!(
                "taps must be strictly increasing, got {taps:?}"
            )));
        }
        for t in taps {
            if t >= self.layers.len() {
                return Err(Error::Invalid(format!("tap index {t} out of range")));
            }
            if !matches!(self.layers[t], LayerSpec::Conv { .. }) {
                return Err(Error::Invalid(format!("tap index {t} is not a conv layer")));
            }
        }
        let _ = dims;
        Ok(())
    }

    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Output dims of the tap at `level`.
    pub fn tap_dims(&self, level: Level) -> Result<(usize, usize, usize)> {
        let dims = self.layer_dims()?;
        Ok(dims[self.taps.get(level)])
    }

    /// Cumulative stride from the input to the tap at `level`.
    pub fn tap_stride(&self, level: Level) -> usize {
        let tap = self.taps.get(level);
        self.layers[..=tap]
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv { stride, .. } => stride,
                LayerSpec::Maxpool { stride, .. } => stride,
                LayerSpec::Relu => 1,
            })
            .product()
    }

    fn five_conv(input: usize, channels: [usize; 5]) -> NetworkSpec {
        let conv = |k: usize, s: usize, p: usize, cin: usize, cout: usize| LayerSpec::Conv {
            kernel: k,
            stride: s,
            pad: p,
            in_channels: cin,
            out_channels: cout,
            has_bias: false,
        };
        NetworkSpec {
            input: (input, input, 3),
            layers: vec![
                conv(7, 2, 3, 3, channels[0]),
                LayerSpec::Relu,
                LayerSpec::Maxpool { window: 2, stride: 2 },
                conv(5, 2, 2, channels[0], channels[1]),
                LayerSpec::Relu,
                LayerSpec::Maxpool { window: 2, stride: 2 },
                conv(3, 1, 1, channels[1], channels[2]),
                LayerSpec::Relu,
                conv(3, 1, 1, channels[2], channels[3]),
                LayerSpec::Relu,
                conv(3, 1, 1, channels[3], channels[4]),
            ],
            taps: TapIndices {
                low: 0,
                middle: 3,
                high: 10,
            },
        }
    }

    /// Full-size teacher geometry: 224×224 input, channels 96..512.
    pub fn table3_teacher() -> NetworkSpec {
        Self::five_conv(224, [96, 256, 512, 512, 512])
    }

    /// Full-size student geometry (teacher channels divided by 8).
    pub fn table3_student() -> NetworkSpec {
        Self::five_conv(224, [12, 32, 64, 64, 64])
    }

    /// Desk-scale teacher: 64×64 input with proportionally reduced widths.
    pub fn desk64_teacher() -> NetworkSpec {
        Self::five_conv(64, [16, 32, 64, 64, 64])
    }

    /// Desk-scale student geometry (desk teacher channels divided by 8).
    pub fn desk64_student() -> NetworkSpec {
        Self::five_conv(64, [2, 4, 8, 8, 8])
    }

    /// Named teacher profile used by the command line.
    pub fn profile(name: &str) -> Option<NetworkSpec> {
        match name {
            "table3" | "table3-teacher" => Some(Self::table3_teacher()),
            "table3-student" => Some(Self::table3_student()),
            "desk64" | "desk64-teacher" => Some(Self::desk64_teacher()),
            "desk64-student" => Some(Self::desk64_student()),
            _ => None,
        }
    }
}

/// Kernel plus optional bias of one conv layer. Kernel layout is
/// [out][in][ky][kx], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kernel: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// 1×1 projection used to match student tap channels to teacher tap
/// channels during distillation; stripped for deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter1x1 {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Layout [out][in].
    pub weights: Vec<f64>,
}

impl Adapter1x1 {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Adapter1x1 {
            in_channels,
            out_channels,
            weights: vec![0.0; in_channels * out_channels],
        }
    }

    pub fn seeded(in_channels: usize, out_channels: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let std = (1.0f32 / in_channels as f32).sqrt();
        let weights = (0..in_channels * out_channels)
            .map(|_| (normal_f32(&mut rng) * std) as f64)
            .collect();
        Adapter1x1 {
            in_channels,
            out_channels,
            weights,
        }
    }

    pub fn identity(channels: usize) -> Self {
        let mut a = Adapter1x1::zeros(channels, channels);
        for i in 0..channels {
            a.weights[i * channels + i] = 1.0;
        }
        a
    }
}

pub type AdapterSet = TapSet<Option<Adapter1x1>>;

/// All learnable parameters of a network, including any adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub convs: Vec<ConvWeights>,
    pub adapters: AdapterSet,
}

impl NetworkWeights {
    /// Seeded He-style initialization. Values are drawn in f32 so they are
    /// exactly representable in the 32-bit weight file format.
    pub fn seeded(spec: &NetworkSpec, seed: u64) -> Result<NetworkWeights> {
        spec.validate()?;
        let mut rng = seeded_rng(seed);
        let mut convs = Vec::new();
        for layer in &spec.layers {
            if let LayerSpec::Conv {
                kernel,
                in_channels,
                out_channels,
                has_bias,
                ..
            } = *layer
            {
                let fan_in = (kernel * kernel * in_channels) as f32;
                let std = (2.0f32 / fan_in).sqrt();
                let kernel_vals = (0..out_channels * in_channels * kernel * kernel)
                    .map(|_| (normal_f32(&mut rng) * std) as f64)
                    .collect();
                convs.push(ConvWeights {
                    kernel: kernel_vals,
                    bias: has_bias.then(|| vec![0.0; out_channels]),
                });
            }
        }
        Ok(NetworkWeights {
            convs,
            adapters: TapSet::default(),
        })
    }

    pub fn zeros_like(&self) -> NetworkWeights {
        NetworkWeights {
            convs: self
                .convs
                .iter()
                .map(|c| ConvWeights {
                    kernel: vec![0.0; c.kernel.len()],
                    bias: c.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
                .collect(),
            adapters: TapSet::from_fn(|l| {
                self.adapters
                    .get(l)
                    .as_ref()
                    .map(|a| Adapter1x1::zeros(a.in_channels, a.out_channels))
            }),
        }
    }

    /// Drops the adapters (deployment form).
    pub fn stripped(&self) -> NetworkWeights {
        NetworkWeights {
            convs: self.convs.clone(),
            adapters: TapSet::default(),
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(c.kernel.as_slice());
            if let Some(b) = &c.bias {
                out.push(b.as_slice());
            }
        }
        for level in Level::ALL {
            if let Some(a) = self.adapters.get(level) {
                out.push(a.weights.as_slice());
            }
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(c.kernel.as_mut_slice());
            if let Some(b) = &mut c.bias {
                out.push(b.as_mut_slice());
            }
        }
        for level in [&mut self.adapters.low, &mut self.adapters.middle, &mut self.adapters.high] {
            if let Some(a) = level {
                out.push(a.weights.as_mut_slice());
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.slices()
            .iter()
            .map(|s| s.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// self += s · other, where other has identical structure.
    pub fn add_scaled(&mut self, other: &NetworkWeights, s: f64) {
        let theirs = other.slices();
        for (mine, other) in self.slices_mut().into_iter().zip(theirs) {
            debug_assert_eq!(mine.len(), other.len());
            for (a, b) in mine.iter_mut().zip(other) {
                *a += s * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for slice in self.slices_mut() {
            for v in slice {
                *v *= s;
            }
        }
    }

    pub fn param_get(&self, index: usize) -> f64 {
        let mut i = index;
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn param_set(&mut self, index: usize, value: f64) {
        let mut i = index;
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = value;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index {index} out of range");
    }
}

/// Activations retained by [`forward_taps`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// inputs[i] is the input of layer i.
    inputs: Vec<Tensor3>,
    /// For each maxpool layer: per output element, the flat input index the
    /// maximum came from (first maximum in scan order on ties).
    pool_argmax: Vec<Option<Vec<usize>>>,
    output: Tensor3,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor3 {
        &self.output
    }

    fn layer_output(&self, i: usize) -> &Tensor3 {
        if i + 1 < self.inputs.len() {
            &self.inputs[i + 1]
        } else {
            &self.output
        }
    }
}

fn conv_forward(
    input: &Tensor3,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_channels: usize,
    w: &ConvWeights,
) -> Tensor3 {
    let (ih, iw, ic) = input.dims();
    let oh = (ih + 2 * pad - kernel) / stride + 1;
    let ow = (iw + 2 * pad - kernel) / stride + 1;
    let mut out = Tensor3::zeros(oh, ow, out_channels);
    let k2 = kernel * kernel;
    for o in 0..out_channels {
        let bias = w.bias.as_ref().map_or(0.0, |b| b[o]);
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias;
                for c in 0..ic {
                    let kbase = (o * ic + c) * k2;
                    for ky in 0..kernel {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            acc += w.kernel[kbase + ky * kernel + kx]
                                * input.get(c, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(o, y, x, acc);
            }
        }
    }
    out
}

fn pool_forward(input: &Tensor3, window: usize, stride: usize) -> (Tensor3, Vec<usize>) {
    let (ih, iw, ic) = input.dims();
    let oh = (ih - window) / stride + 1;
    let ow = (iw - window) / stride + 1;
    let mut out = Tensor3::zeros(oh, ow, ic);
    let mut argmax = Vec::with_capacity(oh * ow * ic);
    for c in 0..ic {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..window {
                    for kx in 0..window {
                        let iy = y * stride + ky;
                        let ix = x * stride + kx;
                        let v = input.get(c, iy, ix);
                        if v > best {
                            best = v;
                            best_idx = input.index(c, iy, ix);
                        }
                    }
                }
                out.set(c, y, x, best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}

/// Runs the network and returns the three tap outputs plus the cache needed
/// by [`backward`].
pub fn forward_taps(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    input: &Tensor3,
) -> Result<(TapOutputs, ForwardCache)> {
    let (h, w, c) = spec.input;
    if input.dims() != (h, w, c) {
        return Err(Error::Shape(format!(
            "input dims {:?} do not match spec input {:?}",
            input.dims(),
            spec.input
        )));
    }
    if weights.convs.len() != spec.conv_indices().len() {
        return Err(Error::Shape(format!(
            "weights carry {} conv layers, spec has {}",
            weights.convs.len(),
            spec.conv_indices().len()
        )));
    }
    let mut inputs = Vec::with_capacity(spec.layers.len());
    let mut pool_argmax = Vec::with_capacity(spec.layers.len());
    let mut cur = input.clone();
    let mut conv_i = 0;
    for (i, layer) in spec.layers.iter().enumerate() {
        inputs.push(cur.clone());
        let next = match *layer {
            LayerSpec::Conv {
                kernel,
                stride,
                pad,
                in_channels,
                out_channels,
                ..
            } => {
                if cur.channels() != in_channels {
                    return Err(Error::Shape(format!(
                        "layer {i}: conv expects {in_channels} channels, got {}",
                        cur.channels()
                    )));
                }
                let out = conv_forward(&cur, kernel, stride, pad, out_channels, &weights.convs[conv_i]);
                conv_i += 1;
                pool_argmax.push(None);
                out
            }
            LayerSpec::Relu => {
                pool_argmax.push(None);
                let mut out = cur.clone();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                out
            }
            LayerSpec::Maxpool { window, stride } => {
                let (out, argmax) = pool_forward(&cur, window, stride);
                pool_argmax.push(Some(argmax));
                out
            }
        };
        cur = next;
    }
    let cache = ForwardCache {
        inputs,
        pool_argmax,
        output: cur,
    };
    let taps = TapSet::from_fn(|level| cache.layer_output(spec.taps.get(level)).clone());
    Ok((taps, cache))
}

fn conv_backward(
    input: &Tensor3,
    gout: &Tensor3,
    kernel: usize,
    stride: usize,
    pad: usize,
    w: &ConvWeights,
    gw: &mut ConvWeights,
) -> Tensor3 {
    let (ih, iw, ic) = input.dims();
    let (oh, ow, oc) = gout.dims();
    let mut din = Tensor3::zeros(ih, iw, ic);
    let k2 = kernel * kernel;
    for o in 0..oc {
        for y in 0..oh {
            for x in 0..ow {
                let g = gout.get(o, y, x);
                if let Some(b) = gw.bias.as_mut() {
                    b[o] += g;
                }
                for c in 0..ic {
                    let kbase = (o * ic + c) * k2;
                    for ky in 0..kernel {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let ii = input.index(c, iy as usize, ix as usize);
                            gw.kernel[kbase + ky * kernel + kx] += g * input.data()[ii];
                            din.data_mut()[ii] += g * w.kernel[kbase + ky * kernel + kx];
                        }
                    }
                }
            }
        }
    }
    din
}

/// Exact gradients of a scalar loss whose per-tap gradients are supplied.
/// Returns parameter gradients (adapters zero) and the input gradient.
pub fn backward(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    cache: &ForwardCache,
    tap_grads: &TapGrads,
) -> Result<(NetworkWeights, Tensor3)> {
    if cache.inputs.len() != spec.layers.len() {
        return Err(Error::Invalid(
            "forward cache does not match spec (missing cache)".into(),
        ));
    }
    for level in Level::ALL {
        if let Some(g) = tap_grads.get(level) {
            let expect = cache.layer_output(spec.taps.get(level)).dims();
            if g.dims() != expect {
                return Err(Error::Shape(format!(
                    "tap grad {} dims {:?} != tap dims {:?}",
                    level.name(),
                    g.dims(),
                    expect
                )));
            }
        }
    }
    let mut grads = weights.zeros_like();
    let mut conv_i = weights.convs.len();
    let last = spec.layers.len() - 1;
    let mut g = {
        let d = cache.layer_output(last).dims();
        Tensor3::zeros(d.0, d.1, d.2)
    };
    for i in (0..spec.layers.len()).rev() {
        for level in Level::ALL {
            if spec.taps.get(level) == i {
                if let Some(tg) = tap_grads.get(level) {
                    g.add_scaled(tg, 1.0);
                }
            }
        }
        let input = &cache.inputs[i];
        g = match spec.layers[i] {
            LayerSpec::Conv {
                kernel,
                stride,
                pad,
                ..
            } => {
                conv_i -= 1;
                conv_backward(
                    input,
                    &g,
                    kernel,
                    stride,
                    pad,
                    &weights.convs[conv_i],
                    &mut grads.convs[conv_i],
                )
            }
            LayerSpec::Relu => {
                let mut din = g;
                for (d, x) in din.data_mut().iter_mut().zip(input.data()) {
                    if *x <= 0.0 {
                        *d = 0.0;
                    }
                }
                din
            }
            LayerSpec::Maxpool { .. } => {
                let argmax = cache.pool_argmax[i]
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("missing pool cache".into()))?;
                let mut din = Tensor3::zeros(input.height(), input.width(), input.channels());
                for (gi, &src) in g.data().iter().zip(argmax.iter()) {
                    din.data_mut()[src] += gi;
                }
                din
            }
        };
    }
    Ok((grads, g))
}

/// 1×1 projection forward: out[o] = Σ_c A[o,c] · in[c], per cell.
pub fn adapter_forward(adapter: &Adapter1x1, input: &Tensor3) -> Result<Tensor3> {
    if input.channels() != adapter.in_channels {
        return Err(Error::Shape(format!(
            "adapter expects {} channels, got {}",
            adapter.in_channels,
            input.channels()
        )));
    }
    let (h, w, _) = input.dims();
    let n = h * w;
    let mut out = Tensor3::zeros(h, w, adapter.out_channels);
    for o in 0..adapter.out_channels {
        let dst = out.channel_mut(o);
        for c in 0..adapter.in_channels {
            let a = adapter.weights[o * adapter.in_channels + c];
            let src = input.channel(c);
            for i in 0..n {
                dst[i] += a * src[i];
            }
        }
    }
    Ok(out)
}

/// Gradients of the 1×1 projection w.r.t. its weights and its input.
pub fn adapter_backward(
    adapter: &Adapter1x1,
    input: &Tensor3,
    gout: &Tensor3,
) -> (Adapter1x1, Tensor3) {
    let n = input.spatial_len();
    let mut ga = Adapter1x1::zeros(adapter.in_channels, adapter.out_channels);
    let mut din = Tensor3::zeros(input.height(), input.width(), input.channels());
    for o in 0..adapter.out_channels {
        let go = gout.channel(o);
        for c in 0..adapter.in_channels {
            let a = adapter.weights[o * adapter.in_channels + c];
            let src = input.channel(c);
            let dst = din.channel_mut(c);
            let mut acc = 0.0;
            for i in 0..n {
                acc += go[i] * src[i];
                dst[i] += a * go[i];
            }
            ga.weights[o * adapter.in_channels + c] = acc;
        }
    }
    (ga, din)
}

/// Per-conv-layer record of which teacher filters the student kept.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneRecord {
    /// kept[i] lists kept teacher filter indices (ascending) for conv i.
    pub kept: Vec<Vec<usize>>,
    pub notes: Vec<String>,
}

/// Random filter pruning: each conv keeps `keep_fraction` of its filters
/// (chosen uniformly, seeded) and the next conv keeps the matching input
/// channels. Kept weights are copied, not re-drawn.
pub fn prune_init(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    keep_fraction: f64,
    seed: u64,
) -> Result<(NetworkSpec, NetworkWeights, PruneRecord)> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Invalid(format!(
            "keep fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let mut new_spec = spec.clone();
    let mut new_convs = Vec::new();
    let mut kept_record = Vec::new();
    let mut notes = Vec::new();
    // Input channels of the first conv are always kept in full.
    let mut prev_kept: Vec<usize> = (0..spec.input.2).collect();
    let mut conv_i = 0;
    for (i, layer) in spec.layers.iter().enumerate() {
        if let LayerSpec::Conv {
            kernel,
            in_channels,
            out_channels,
            ..
        } = *layer
        {
            let keep = ((out_channels as f64 * keep_fraction).ceil() as usize)
                .clamp(1, out_channels);
            if (out_channels as f64 * keep_fraction).fract() != 0.0 {
                notes.push(format!(
                    "layer {i}: {out_channels} filters not divisible, keeping ceil = {keep}"
                ));
            }
            let mut all: Vec<usize> = (0..out_channels).collect();
            // Partial Fisher-Yates: the first `keep` slots are a uniform draw.
            for j in 0..keep {
                let k = rng.gen_range(j..out_channels);
                all.swap(j, k);
            }
            let mut kept: Vec<usize> = all[..keep].to_vec();
            kept.sort_unstable();

            let old = &weights.convs[conv_i];
            let k2 = kernel * kernel;
            let mut kernel_vals = Vec::with_capacity(keep * prev_kept.len() * k2);
            for &of in &kept {
                for &cf in &prev_kept {
                    let base = (of * in_channels + cf) * k2;
                    kernel_vals.extend_from_slice(&old.kernel[base..base + k2]);
                }
            }
            let bias = old
                .bias
                .as_ref()
                .map(|b| kept.iter().map(|&of| b[of]).collect::<Vec<_>>());
            new_convs.push(ConvWeights {
                kernel: kernel_vals,
                bias,
            });
            if let LayerSpec::Conv {
                in_channels: ic,
                out_channels: oc,
                ..
            } = &mut new_spec.layers[i]
            {
                *ic = prev_kept.len();
                *oc = keep;
            }
            kept_record.push(kept.clone());
            prev_kept = kept;
            conv_i += 1;
        }
    }
    let new_weights = NetworkWeights {
        convs: new_convs,
        adapters: TapSet::default(),
    };
    new_spec.validate()?;
    Ok((
        new_spec,
        new_weights,
        PruneRecord {
            kept: kept_record,
            notes,
        },
    ))
}

/// Per-layer cost entry of a [`FlopsReport`].
#[derive(Debug, Clone, Serialize)]
pub struct LayerCost {
    pub index: usize,
    pub kind: String,
    pub output: (usize, usize, usize),
    pub flops: u64,
    pub params: u64,
}

/// FLOPs and parameter counts per layer plus totals.
#[derive(Debug, Clone, Serialize)]
pub struct FlopsReport {
    pub layers: Vec<LayerCost>,
    pub total_flops: u64,
    pub total_params: u64,
}

/// Conv FLOPs are (C_in·K² + 1)·H_out·W_out·C_out; the +1 counts the bias
/// operation whether or not the layer has one. Relu and pooling count zero.
pub fn count_flops(spec: &NetworkSpec) -> Result<FlopsReport> {
    let dims = spec.layer_dims()?;
    let mut layers = Vec::new();
    let mut total_flops = 0u64;
    let mut total_params = 0u64;
    for (i, layer) in spec.layers.iter().enumerate() {
        let (h, w, c) = dims[i];
        let (kind, flops, params) = match *layer {
            LayerSpec::Conv {
                kernel,
                in_channels,
                out_channels,
                has_bias,
                ..
            } => {
                let flops = (in_channels as u64 * (kernel * kernel) as u64 + 1)
                    * (h as u64)
                    * (w as u64)
                    * out_channels as u64;
                let mut params = (kernel * kernel * in_channels * out_channels) as u64;
                if has_bias {
                    params += out_channels as u64;
                }
                ("conv", flops, params)
            }
            LayerSpec::Relu => ("relu", 0, 0),
            LayerSpec::Maxpool { .. } => ("maxpool", 0, 0),
        };
        total_flops += flops;
        total_params += params;
        layers.push(LayerCost {
            index: i,
            kind: kind.to_string(),
            output: (h, w, c),
            flops,
            params,
        });
    }
    Ok(FlopsReport {
        layers,
        total_flops,
        total_params,
    })
}

/// Total learnable parameter count (conv kernels plus biases where present).
pub fn count_params(spec: &NetworkSpec) -> Result<u64> {
    Ok(count_flops(spec)?.total_params)
}

/// reference / spec parameter ratio.
pub fn param_ratio(reference: &NetworkSpec, spec: &NetworkSpec) -> Result<f64> {
    let r = count_params(reference)? as f64;
    let s = count_params(spec)? as f64;
    Ok(r / s)
}

/// Parses a [`NetworkSpec`] from its JSON form (kind/kernel/stride/pad and
/// channels per layer, plus tap indices).
pub fn spec_from_json(text: &str) -> Result<NetworkSpec> {
    serde_json::from_str(text).map_err(|e| Error::Format(format!("bad spec json: {e}")))
}

/// Serializes a [`NetworkSpec`] to JSON.
pub fn spec_to_json(spec: &NetworkSpec) -> Result<String> {
    serde_json::to_string_pretty(spec).map_err(|e| Error::Format(format!("spec json: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selfcheck::oracles::{central_difference, naive_conv_forward, rel_err};
    use crate::util::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor3 {
        let mut rng = seeded_rng(seed);
        Tensor3::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    /// Three 3×3 convs with taps on each; 16×16 input, tap grids 16/8/4.
    pub(crate) fn tiny_spec(channels: [usize; 3], in_channels: usize) -> NetworkSpec {
        let conv = |cin: usize, cout: usize| LayerSpec::Conv {
            kernel: 3,
            stride: 1,
            pad: 1,
            in_channels: cin,
            out_channels: cout,
            has_bias: false,
        };
        NetworkSpec {
            input: (16, 16, in_channels),
            layers: vec![
                conv(in_channels, channels[0]),
                LayerSpec::Relu,
                LayerSpec::Maxpool { window: 2, stride: 2 },
                conv(channels[0], channels[1]),
                LayerSpec::Relu,
                LayerSpec::Maxpool { window: 2, stride: 2 },
                conv(channels[1], channels[2]),
            ],
            taps: TapIndices { low: 0, middle: 3, high: 6 },
        }
    }

    #[test]
    fn identity_conv_passes_input_through() {
        let spec = NetworkSpec {
            input: (4, 4, 1),
            layers: vec![
                LayerSpec::Conv {
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                    in_channels: 1,
                    out_channels: 1,
                    has_bias: false,
                },
                LayerSpec::Relu,
                LayerSpec::Conv {
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                    in_channels: 1,
                    out_channels: 1,
                    has_bias: false,
                },
                LayerSpec::Conv {
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                    in_channels: 1,
                    out_channels: 1,
                    has_bias: false,
                },
            ],
            taps: TapIndices { low: 0, middle: 2, high: 3 },
        };
        let weights = NetworkWeights {
            convs: vec![
                ConvWeights { kernel: vec![1.0], bias: None },
                ConvWeights { kernel: vec![1.0], bias: None },
                ConvWeights { kernel: vec![1.0], bias: None },
            ],
            adapters: TapSet::default(),
        };
        let input = Tensor3::from_fn(4, 4, 1, |_, r, c| (r * 4 + c) as f64 + 1.0);
        let (taps, _) = forward_taps(&spec, &weights, &input).unwrap();
        assert_eq!(taps.low.data(), input.data());
        assert_eq!(taps.high.data(), input.data());
    }

    #[test]
    fn relu_zeroes_negative_input() {
        let spec = tiny_spec([2, 2, 2], 1);
        let weights = NetworkWeights::seeded(&spec, 1).unwrap();
        let input = Tensor3::from_fn(16, 16, 1, |_, _, _| -1.0);
        let (_, cache) = forward_taps(&spec, &weights, &input).unwrap();
        // Output of the relu after conv1 is input of the first pool.
        let relu_out = &cache.inputs[2];
        assert!(relu_out.data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = seeded_rng(7);
        let input = random_tensor(5, 5, 2, 8);
        let kernel: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let w = ConvWeights {
            kernel: kernel.clone(),
            bias: Some(bias.clone()),
        };
        let fast = conv_forward(&input, 3, 1, 1, 3, &w);
        let slow = naive_conv_forward(&input, 3, 1, 1, 3, &kernel, Some(&bias));
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        // And a strided, padless case.
        let fast = conv_forward(&input, 2, 2, 0, 3, &w_head(&kernel, 2 * 2 * 2 * 3));
        let slow = naive_conv_forward(&input, 2, 2, 0, 3, &kernel[..2 * 2 * 2 * 3], None);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    fn w_head(kernel: &[f64], n: usize) -> ConvWeights {
        ConvWeights {
            kernel: kernel[..n].to_vec(),
            bias: None,
        }
    }

    #[test]
    fn pool_ties_route_to_first_in_scan_order() {
        let input = Tensor3::from_fn(2, 2, 1, |_, _, _| 3.5);
        let (out, argmax) = pool_forward(&input, 2, 2);
        assert_eq!(out.get(0, 0, 0), 3.5);
        assert_eq!(argmax, vec![0]); // (0,0) wins the 4-way tie
    }

    #[test]
    fn zero_tap_grads_give_zero_grads() {
        let spec = tiny_spec([2, 3, 4], 2);
        let weights = NetworkWeights::seeded(&spec, 2).unwrap();
        let input = random_tensor(16, 16, 2, 3);
        let (taps, cache) = forward_taps(&spec, &weights, &input).unwrap();
        let zeros = TapSet::from_fn(|l| {
            let t = taps.get(l);
            Some(Tensor3::zeros(t.height(), t.width(), t.channels()))
        });
        let (grads, din) = backward(&spec, &weights, &cache, &zeros).unwrap();
        assert_eq!(grads.sq_norm(), 0.0);
        assert_eq!(din.sq_norm(), 0.0);
    }

    #[test]
    fn single_1x1_conv_grad_is_input_times_output() {
        // Loss = ½‖out‖² so the tap gradient is the output itself and the
        // weight gradient collapses to Σ input·out.
        let spec = NetworkSpec {
            input: (3, 3, 1),
            layers: vec![
                LayerSpec::Conv {
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                    in_channels: 1,
                    out_channels: 1,
                    has_bias: false,
                },
                LayerSpec::Conv {
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                    in_channels: 1,
                    out_channels: 1,
                    has_bias: false,
                },
                LayerSpec::Conv {
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                    in_channels: 1,
                    out_channels: 1,
                    has_bias: false,
                },
            ],
            taps: TapIndices { low: 0, middle: 1, high: 2 },
        };
        let weights = NetworkWeights {
            convs: vec![
                ConvWeights { kernel: vec![2.0], bias: None },
                ConvWeights { kernel: vec![1.0], bias: None },
                ConvWeights { kernel: vec![1.0], bias: None },
            ],
            adapters: TapSet::default(),
        };
        let input = random_tensor(3, 3, 1, 4);
        let (taps, cache) = forward_taps(&spec, &weights, &input).unwrap();
        let grads_in = TapSet {
            low: Some(taps.low.clone()),
            middle: None,
            high: None,
        };
        let (grads, _) = backward(&spec, &weights, &cache, &grads_in).unwrap();
        let expect: f64 = input
            .data()
            .iter()
            .zip(taps.low.data())
            .map(|(x, o)| x * o)
            .sum();
        assert!((grads.convs[0].kernel[0] - expect).abs() < 1e-12);
    }

    fn fd_check_spec(spec: &NetworkSpec, seed: u64, coords: usize, tol: f64) {
        let weights = NetworkWeights::seeded(spec, seed).unwrap();
        let input = random_tensor(spec.input.0, spec.input.1, spec.input.2, seed + 50);
        // Loss = Σ_l ½‖tap_l‖², so tap gradients are the tap values.
        let loss = |w: &NetworkWeights| -> f64 {
            let (taps, _) = forward_taps(spec, w, &input).unwrap();
            Level::ALL
                .iter()
                .map(|l| 0.5 * taps.get(*l).sq_norm())
                .sum()
        };
        let (taps, cache) = forward_taps(spec, &weights, &input).unwrap();
        let tap_grads = TapSet::from_fn(|l| Some(taps.get(l).clone()));
        let (grads, _) = backward(spec, &weights, &cache, &tap_grads).unwrap();
        let n = weights.param_count();
        let mut rng = seeded_rng(seed + 99);
        for _ in 0..coords {
            let idx = rng.gen_range(0..n);
            let x0 = weights.param_get(idx);
            let mut w = weights.clone();
            let fd = central_difference(
                &mut |v| {
                    w.param_set(idx, v);
                    loss(&w)
                },
                x0,
                1e-4,
            );
            let analytic = grads.param_get(idx);
            let re = rel_err(analytic, fd, 1e-6);
            assert!(re < tol, "coord {idx}: analytic {analytic} vs fd {fd} (rel {re})");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        fd_check_spec(&tiny_spec([2, 3, 4], 2), 11, 50, 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn backward_fd_over_random_small_specs(
            c1 in 1usize..3,
            c2 in 1usize..3,
            c3 in 1usize..3,
            seed in 0u64..1000,
        ) {
            fd_check_spec(&tiny_spec([c1, c2, c3], 2), seed, 10, 1e-4);
        }
    }

    #[test]
    fn prune_yields_published_student_channels() {
        let spec = NetworkSpec::table3_teacher();
        let weights = NetworkWeights::seeded(&spec, 0).unwrap();
        let (student, _, record) = prune_init(&spec, &weights, 1.0 / 8.0, 0).unwrap();
        let channels: Vec<usize> = student
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .collect();
        assert_eq!(channels, vec![12, 32, 64, 64, 64]);
        assert_eq!(record.kept.len(), 5);
        assert!(record.notes.is_empty());
        assert!(student.validate().is_ok());
    }

    #[test]
    fn prune_keep_all_is_identity() {
        let spec = NetworkSpec::desk64_teacher();
        let weights = NetworkWeights::seeded(&spec, 3).unwrap();
        let (s2, w2, _) = prune_init(&spec, &weights, 1.0, 9).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(w2.convs, weights.convs);
    }

    #[test]
    fn prune_is_seed_deterministic_and_seed_sensitive() {
        let spec = NetworkSpec::desk64_teacher();
        let weights = NetworkWeights::seeded(&spec, 4).unwrap();
        let (_, _, a) = prune_init(&spec, &weights, 1.0 / 8.0, 42).unwrap();
        let (_, _, b) = prune_init(&spec, &weights, 1.0 / 8.0, 42).unwrap();
        assert_eq!(a, b);
        let records: Vec<PruneRecord> = (0..10)
            .map(|s| prune_init(&spec, &weights, 1.0 / 8.0, s).unwrap().2)
            .collect();
        for i in 0..records.len() {
            for j in i + 1..records.len() {
                assert_ne!(records[i].kept, records[j].kept, "seeds {i} and {j} collided");
            }
        }
    }

    #[test]
    fn prune_copies_kept_weights_exactly() {
        let spec = NetworkSpec::desk64_teacher();
        let weights = NetworkWeights::seeded(&spec, 5).unwrap();
        let (sspec, sweights, record) = prune_init(&spec, &weights, 1.0 / 8.0, 6).unwrap();
        // Check conv2: student kernel[f][c] equals teacher kernel at the
        // recorded indices.
        let (tk, sk) = (&weights.convs[1].kernel, &sweights.convs[1].kernel);
        let t_in = 16;
        let s_in = match sspec.layers[3] {
            LayerSpec::Conv { in_channels, .. } => in_channels,
            _ => unreachable!(),
        };
        let k2 = 25;
        for (f_new, &f_old) in record.kept[1].iter().enumerate() {
            for (c_new, &c_old) in record.kept[0].iter().enumerate() {
                for k in 0..k2 {
                    let sv = sk[(f_new * s_in + c_new) * k2 + k];
                    let tv = tk[(f_old * t_in + c_old) * k2 + k];
                    assert_eq!(sv, tv);
                }
            }
        }
    }

    #[test]
    fn flops_match_published_totals_exactly() {
        let teacher = count_flops(&NetworkSpec::table3_teacher()).unwrap();
        assert_eq!(teacher.total_flops, 1_816_471_552);
        let student = count_flops(&NetworkSpec::table3_student()).unwrap();
        assert_eq!(student.total_flops, 47_930_624);
    }

    #[test]
    fn flops_of_trivial_conv() {
        let spec = NetworkSpec {
            input: (1, 1, 1),
            layers: vec![
                LayerSpec::Conv {
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                    in_channels: 1,
                    out_channels: 1,
                    has_bias: false,
                },
            ],
            taps: TapIndices { low: 0, middle: 1, high: 2 }, // not validated here
        };
        assert_eq!(count_flops(&spec).unwrap().total_flops, 2);
    }

    #[test]
    fn param_counts_and_ratio() {
        let teacher = NetworkSpec::table3_teacher();
        let student = NetworkSpec::table3_student();
        assert_eq!(count_params(&teacher).unwrap(), 6_526_752);
        assert_eq!(count_params(&student).unwrap(), 103_524);
        let ratio = param_ratio(&teacher, &student).unwrap();
        assert!((ratio - 63.05).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn empty_spec_has_zero_params() {
        let spec = NetworkSpec {
            input: (8, 8, 3),
            layers: vec![],
            taps: TapIndices { low: 0, middle: 1, high: 2 },
        };
        assert_eq!(count_params(&spec).unwrap(), 0);
    }

    #[test]
    fn tap_dims_follow_published_geometry() {
        let teacher = NetworkSpec::table3_teacher();
        assert_eq!(teacher.tap_dims(Level::Low).unwrap(), (112, 112, 96));
        assert_eq!(teacher.tap_dims(Level::Middle).unwrap(), (28, 28, 256));
        assert_eq!(teacher.tap_dims(Level::High).unwrap(), (14, 14, 512));
        let desk = NetworkSpec::desk64_teacher();
        assert_eq!(desk.tap_dims(Level::Low).unwrap(), (32, 32, 16));
        assert_eq!(desk.tap_dims(Level::Middle).unwrap(), (8, 8, 32));
        assert_eq!(desk.tap_dims(Level::High).unwrap(), (4, 4, 64));
        assert_eq!(desk.tap_stride(Level::Low), 2);
        assert_eq!(desk.tap_stride(Level::Middle), 8);
        assert_eq!(desk.tap_stride(Level::High), 16);
    }

    #[test]
    fn weights_roundtrip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let spec = NetworkSpec::desk64_student();
        let mut weights = NetworkWeights::seeded(&spec, 7).unwrap();
        weights.adapters.high = Some(Adapter1x1::seeded(8, 64, 13));
        save_weights(&path, &spec, &weights).unwrap();
        let (spec2, weights2) = load_weights(&path, Some(&spec)).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(weights2, weights);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let spec = NetworkSpec::desk64_student();
        let weights = NetworkWeights::seeded(&spec, 8).unwrap();
        save_weights(&path, &spec, &weights).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_weights(&path, None).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let spec = NetworkSpec::desk64_student();
        let weights = NetworkWeights::seeded(&spec, 9).unwrap();
        save_weights(&path, &spec, &weights).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_weights(&path, None).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn mismatched_spec_names_offending_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let spec = NetworkSpec::desk64_student();
        let weights = NetworkWeights::seeded(&spec, 10).unwrap();
        save_weights(&path, &spec, &weights).unwrap();
        let err = load_weights(&path, Some(&NetworkSpec::desk64_teacher())).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        let mut longer = spec.clone();
        longer.layers.push(LayerSpec::Relu);
        let err = load_weights(&path, Some(&longer)).unwrap_err();
        assert!(err.to_string().contains("layer count"), "{err}");
    }

    #[test]
    fn forward_rejects_bad_input_with_layer_index() {
        let spec = tiny_spec([2, 3, 4], 2);
        let weights = NetworkWeights::seeded(&spec, 12).unwrap();
        let err = forward_taps(&spec, &weights, &random_tensor(8, 8, 2, 1)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn adapter_projects_and_differentiates() {
        let a = Adapter1x1::identity(3);
        let x = random_tensor(4, 4, 3, 20);
        let out = adapter_forward(&a, &x).unwrap();
        assert_eq!(out.data(), x.data());
        let gout = random_tensor(4, 4, 3, 21);
        let (ga, din) = adapter_backward(&a, &x, &gout);
        assert_eq!(din.data(), gout.data());
        // dA[o][c] = Σ gout_o · x_c
        for o in 0..3 {
            for c in 0..3 {
                let expect: f64 = gout
                    .channel(o)
                    .iter()
                    .zip(x.channel(c))
                    .map(|(g, v)| g * v)
                    .sum();
                assert!((ga.weights[o * 3 + c] - expect).abs() < 1e-12);
            }
        }
    }
}
