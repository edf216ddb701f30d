//! DFT-domain correlation-filter mathematics: Gaussian labels, cosine
//! windows, closed-form ridge-regression filter training, detection with
//! sub-cell peak refinement, the context-aware variant, and running model
//! updates.
//!
//! Conventions: the forward 2-D DFT is unnormalized and the inverse divides
//! by H·W, so a filter trained with zero regularization reproduces its label
//! exactly at detection time. Labels are usually stored "wrapped", with the
//! peak at index (0,0), so a response argmax directly encodes displacement.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Complex 2-D spectra of a [`Tensor3`], one plane per channel, same layout.
#[derive(Debug, Clone)]
pub struct Spectrum {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Spectrum {
            height,
            width,
            channels,
            data: vec![Complex::new(0.0, 0.0); height * width * channels],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[Complex<f64>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<f64>] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[Complex<f64>] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

fn fft2_plane(plane: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    for r in 0..h {
        row_fft.process(&mut plane[r * w..(r + 1) * w]);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = plane[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            plane[r * w + c] = col[r];
        }
    }
}

/// Unnormalized forward 2-D DFT of every channel.
pub fn dft2(t: &Tensor3) -> Result<Spectrum> {
    if !t.all_finite() {
        return Err(Error::NonFinite("dft2 input".into()));
    }
    let (h, w, c) = t.dims();
    let mut out = Spectrum::zeros(h, w, c);
    let n = h * w;
    for ch in 0..c {
        let src = t.channel(ch);
        let dst = &mut out.data[ch * n..(ch + 1) * n];
        for i in 0..n {
            dst[i] = Complex::new(src[i], 0.0);
        }
        fft2_plane(dst, h, w, false);
    }
    Ok(out)
}

/// Inverse 2-D DFT, normalized by H·W. Returns the real part; for spectra of
/// real signals the imaginary residue is at rounding level and is discarded.
pub fn idft2(s: &Spectrum) -> Tensor3 {
    let (h, w, c) = s.dims();
    let n = h * w;
    let scale = 1.0 / (n as f64);
    let mut out = Tensor3::zeros(h, w, c);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for ch in 0..c {
        buf.copy_from_slice(s.channel(ch));
        fft2_plane(&mut buf, h, w, true);
        let dst = out.channel_mut(ch);
        for i in 0..n {
            dst[i] = buf[i].re * scale;
        }
    }
    out
}

/// Like [`idft2`] but keeps the complex result (used by gradient formulas
/// whose spectra are not conjugate-symmetric).
pub fn idft2_complex(s: &Spectrum) -> Spectrum {
    let (h, w, c) = s.dims();
    let n = h * w;
    let scale = 1.0 / (n as f64);
    let mut out = s.clone();
    for ch in 0..c {
        let plane = &mut out.data[ch * n..(ch + 1) * n];
        fft2_plane(plane, h, w, true);
        for v in plane.iter_mut() {
            *v *= scale;
        }
    }
    out
}

/// Single-channel map with a unit peak and Gaussian falloff under toroidal
/// distance. The peak may sit between cells.
pub fn gaussian_map(h: usize, w: usize, sigma: f64, peak_row: f64, peak_col: f64) -> Tensor3 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    Tensor3::from_fn(h, w, 1, |_, r, c| {
        let dr = toroidal_delta(r as f64 - peak_row, h as f64);
        let dc = toroidal_delta(c as f64 - peak_col, w as f64);
        (-(dr * dr + dc * dc) * inv).exp()
    })
}

fn toroidal_delta(d: f64, n: f64) -> f64 {
    let m = d.rem_euclid(n);
    if m > n / 2.0 {
        m - n
    } else {
        m
    }
}

/// Gaussian regression label with an integer-cell peak.
#[derive(Debug, Clone)]
pub struct GaussianLabel {
    map: Tensor3,
    sigma: f64,
    peak: (usize, usize),
}

impl GaussianLabel {
    pub fn map(&self) -> &Tensor3 {
        &self.map
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn peak(&self) -> (usize, usize) {
        self.peak
    }
}

pub fn gaussian_label(h: usize, w: usize, sigma: f64, peak: (usize, usize)) -> Result<GaussianLabel> {
    if sigma <= 0.0 {
        return Err(Error::Invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if peak.0 >= h || peak.1 >= w {
        return Err(Error::Invalid(format!(
            "peak {:?} outside {h}x{w} map",
            peak
        )));
    }
    Ok(GaussianLabel {
        map: gaussian_map(h, w, sigma, peak.0 as f64, peak.1 as f64),
        sigma,
        peak,
    })
}

/// Outer product of 1-D Hann windows; zero on the border, one at the center
/// of odd-sized maps.
pub fn cosine_window(h: usize, w: usize) -> Result<Tensor3> {
    if h < 2 || w < 2 {
        return Err(Error::Invalid(format!(
            "cosine window needs dims >= 2, got {h}x{w}"
        )));
    }
    let hann = |n: usize, len: usize| {
        0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / (len as f64 - 1.0)).cos())
    };
    Ok(Tensor3::from_fn(h, w, 1, |_, r, c| hann(r, h) * hann(c, w)))
}

/// Circularly shifts every channel by (dr, dc); positive shifts move content
/// down and right. Converts between wrapped and centered layouts.
pub fn circshift(t: &Tensor3, dr: isize, dc: isize) -> Tensor3 {
    let (h, w, ch) = t.dims();
    let hs = h as isize;
    let ws = w as isize;
    Tensor3::from_fn(h, w, ch, |c, r, col| {
        let sr = (r as isize - dr).rem_euclid(hs) as usize;
        let sc = (col as isize - dc).rem_euclid(ws) as usize;
        t.get(c, sr, sc)
    })
}

/// Decodes a wrapped-layout index into a signed displacement: indices past
/// the midpoint wrap to negative values.
pub fn wrapped_displacement(index: f64, n: usize) -> f64 {
    if index > n as f64 / 2.0 {
        index - n as f64
    } else {
        index
    }
}

/// Correlation filter stored as a numerator spectrum per channel and a real
/// denominator map shared across channels. Keeping the two parts separate
/// (instead of the quotient) keeps running averages unbiased.
#[derive(Debug, Clone)]
pub struct CorrelationFilter {
    numerator: Spectrum,
    denominator: Vec<f64>,
    lambda: f64,
}

impl CorrelationFilter {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.numerator.dims()
    }

    pub fn numerator(&self) -> &Spectrum {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Filter spectrum w = numerator / denominator, formed on demand.
    pub fn quotient(&self) -> Spectrum {
        let c = self.numerator.channels();
        let n = self.numerator.spatial_len();
        let mut out = self.numerator.clone();
        for ch in 0..c {
            for i in 0..n {
                out.data_mut()[ch * n + i] /= self.denominator[i];
            }
        }
        out
    }
}

fn check_label(features: &Tensor3, label: &GaussianLabel) -> Result<()> {
    let m = label.map();
    if m.height() != features.height() || m.width() != features.width() {
        return Err(Error::Shape(format!(
            "label {}x{} does not match features {}x{}",
            m.height(),
            m.width(),
            features.height(),
            features.width()
        )));
    }
    Ok(())
}

/// Closed-form ridge-regression training over all circular shifts of the
/// feature patch: numerator_d = conj(ŷ) ⊙ x̂_d, denominator = Σ_i |x̂_i|² + λ.
pub fn train_cf(features: &Tensor3, label: &GaussianLabel, lambda_cf: f64) -> Result<CorrelationFilter> {
    if lambda_cf < 0.0 {
        return Err(Error::Invalid(format!("lambda must be >= 0, got {lambda_cf}")));
    }
    check_label(features, label)?;
    let xs = dft2(features)?;
    let ys = dft2(label.map())?;
    train_cf_spectra(&xs, &ys, lambda_cf)
}

pub(crate) fn train_cf_spectra(xs: &Spectrum, ys: &Spectrum, lambda_cf: f64) -> Result<CorrelationFilter> {
    let (h, w, c) = xs.dims();
    let n = h * w;
    let y = ys.channel(0);
    let mut numerator = Spectrum::zeros(h, w, c);
    let mut denominator = vec![lambda_cf; n];
    for ch in 0..c {
        let x = xs.channel(ch);
        for i in 0..n {
            denominator[i] += x[i].norm_sqr();
        }
    }
    if lambda_cf == 0.0 {
        if let Some(i) = denominator.iter().position(|&d| d == 0.0) {
            return Err(Error::Invalid(format!(
                "zero denominator at bin {i} with lambda = 0 (division by zero)"
            )));
        }
    }
    for ch in 0..c {
        let x = xs.channel(ch);
        let dst = &mut numerator.data_mut()[ch * n..(ch + 1) * n];
        for i in 0..n {
            dst[i] = y[i].conj() * x[i];
        }
    }
    Ok(CorrelationFilter {
        numerator,
        denominator,
        lambda: lambda_cf,
    })
}

/// Context-aware training: background patches enter the shared denominator,
/// suppressing their response. Empty `negatives` degenerates to [`train_cf`].
pub fn train_cf_context(
    positive: &Tensor3,
    negatives: &[Tensor3],
    label: &GaussianLabel,
    lambda1: f64,
    lambda2: f64,
) -> Result<CorrelationFilter> {
    if lambda1 <= 0.0 {
        return Err(Error::Invalid(format!("lambda1 must be > 0, got {lambda1}")));
    }
    if lambda2 < 0.0 {
        return Err(Error::Invalid(format!("lambda2 must be >= 0, got {lambda2}")));
    }
    check_label(positive, label)?;
    for (k, neg) in negatives.iter().enumerate() {
        if !neg.same_dims(positive) {
            return Err(Error::Shape(format!(
                "negative patch {k} dims {:?} != positive dims {:?}",
                neg.dims(),
                positive.dims()
            )));
        }
    }
    let mut filter = train_cf(positive, label, lambda1)?;
    let n = positive.spatial_len();
    for neg in negatives {
        let ns = dft2(neg)?;
        for ch in 0..ns.channels() {
            let plane = ns.channel(ch);
            for i in 0..n {
                filter.denominator[i] += lambda2 * plane[i].norm_sqr();
            }
        }
    }
    Ok(filter)
}

/// Detection output: the real response map plus peak bookkeeping.
#[derive(Debug, Clone)]
pub struct Detection {
    pub response: Tensor3,
    pub peak_value: f64,
    /// Argmax cell, ties broken by lowest (row, col).
    pub argmax: (usize, usize),
    /// Argmax refined by a quadratic fit over its 3×3 neighborhood.
    pub refined: (f64, f64),
}

/// Applies the filter to a feature patch: r = F⁻¹(Σ_i conj(ŵ_i) ⊙ ẑ_i).
pub fn detect_cf(filter: &CorrelationFilter, features: &Tensor3) -> Result<Detection> {
    if filter.dims() != features.dims() {
        return Err(Error::Shape(format!(
            "filter dims {:?} != feature dims {:?}",
            filter.dims(),
            features.dims()
        )));
    }
    let (h, w, c) = features.dims();
    let n = h * w;
    let zs = dft2(features)?;
    let mut rs = Spectrum::zeros(h, w, 1);
    for ch in 0..c {
        let num = filter.numerator.channel(ch);
        let z = zs.channel(ch);
        let dst = rs.data_mut();
        for i in 0..n {
            dst[i] += num[i].conj() * z[i] / filter.denominator[i];
        }
    }
    let response = idft2(&rs);
    let (r, cidx, peak_value) = response.argmax_first(0);
    let refined = refine_peak(&response, r, cidx);
    Ok(Detection {
        response,
        peak_value,
        argmax: (r, cidx),
        refined,
    })
}

/// Least-squares quadratic fit over the 3×3 toroidal neighborhood of the
/// argmax; returns a fractional (row, col) clamped to half a cell. Falls back
/// to the integer argmax when the fit has no interior maximum.
pub fn refine_peak(response: &Tensor3, row: usize, col: usize) -> (f64, f64) {
    let (h, w, _) = response.dims();
    let mut sf = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let rr = (row as i64 + dy).rem_euclid(h as i64) as usize;
            let cc = (col as i64 + dx).rem_euclid(w as i64) as usize;
            let f = response.get(0, rr, cc);
            let (x, y) = (dx as f64, dy as f64);
            sf += f;
            sx += f * x;
            sy += f * y;
            sxx += f * x * x;
            syy += f * y * y;
            sxy += f * x * y;
        }
    }
    // Model f ≈ a + b·x + c·y + d·x² + e·xy + g·y² on the 9 samples.
    let b = sx / 6.0;
    let c = sy / 6.0;
    let e = sxy / 4.0;
    let a2 = sxx + syy;
    let sum_dg = (3.0 * a2 - 4.0 * sf) / 6.0;
    let diff_dg = (sxx - syy) / 2.0;
    let d = (sum_dg + diff_dg) / 2.0;
    let g = (sum_dg - diff_dg) / 2.0;
    let det = 4.0 * d * g - e * e;
    // Only refine toward a genuine interior maximum.
    if det <= 1e-12 || d >= 0.0 {
        return (row as f64, col as f64);
    }
    let dx = (-2.0 * g * b + e * c) / det;
    let dy = (-2.0 * d * c + e * b) / det;
    let dx = dx.clamp(-0.5, 0.5);
    let dy = dy.clamp(-0.5, 0.5);
    (row as f64 + dy, col as f64 + dx)
}

/// Running-average model update; numerator and denominator blend separately.
pub fn update_cf(old: &CorrelationFilter, new: &CorrelationFilter, eta: f64) -> Result<CorrelationFilter> {
    if old.dims() != new.dims() {
        return Err(Error::Shape(format!(
            "filter dims {:?} != {:?}",
            old.dims(),
            new.dims()
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Invalid(format!("eta must be in [0,1], got {eta}")));
    }
    if old.lambda != new.lambda {
        return Err(Error::Invalid(format!(
            "filters trained with different lambdas: {} vs {}",
            old.lambda, new.lambda
        )));
    }
    let mut out = old.clone();
    for (o, n) in out
        .numerator
        .data_mut()
        .iter_mut()
        .zip(new.numerator.data().iter())
    {
        *o = *o * (1.0 - eta) + *n * eta;
    }
    for (o, n) in out.denominator.iter_mut().zip(new.denominator.iter()) {
        *o = *o * (1.0 - eta) + *n * eta;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor3 {
        let mut rng = seeded_rng(seed);
        Tensor3::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_map_has_dc_only() {
        let t = Tensor3::from_fn(4, 6, 1, |_, _, _| 2.5);
        let s = dft2(&t).unwrap();
        assert!((s.channel(0)[0].re - 2.5 * 24.0).abs() < 1e-10);
        assert!(s.channel(0)[0].im.abs() < 1e-10);
        for v in &s.channel(0)[1..] {
            assert!(v.norm() < 1e-10);
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let mut t = Tensor3::zeros(5, 5, 1);
        t.set(0, 0, 0, 1.0);
        let s = dft2(&t).unwrap();
        for v in s.channel(0) {
            assert!((v.re - 1.0).abs() < 1e-12 && v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_identity() {
        let t = random_tensor(8, 8, 2, 1);
        let back = idft2(&dft2(&t).unwrap());
        let num: f64 = t
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(num.sqrt() / t.sq_norm().sqrt() < 1e-10);
    }

    #[test]
    fn rejects_non_finite() {
        let mut t = Tensor3::zeros(3, 3, 1);
        t.set(0, 1, 1, f64::NAN);
        assert!(dft2(&t).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn parseval(h in 1usize..9, w in 1usize..9, c in 1usize..3, seed in 0u64..1000) {
            let t = random_tensor(h, w, c, seed);
            let s = dft2(&t).unwrap();
            let lhs = t.sq_norm();
            let rhs = s.sq_norm() / (h * w) as f64;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1e-12));
        }

        #[test]
        fn gaussian_toroidal_symmetry(h in 3usize..12, w in 3usize..12, pr in 0usize..12, pc in 0usize..12, dr in 1usize..5, dc in 1usize..5) {
            let (pr, pc) = (pr % h, pc % w);
            let label = gaussian_label(h, w, 1.3, (pr, pc)).unwrap();
            let m = label.map();
            let plus = m.get(0, (pr + dr) % h, (pc + dc) % w);
            let minus = m.get(
                0,
                ((pr + h) - dr % h) % h,
                ((pc + w) - dc % w) % w,
            );
            prop_assert!((plus - minus).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_direct_values() {
        let label = gaussian_label(5, 5, 1.0, (2, 2)).unwrap();
        assert!((label.map().get(0, 2, 2) - 1.0).abs() < 1e-15);
        assert!((label.map().get(0, 2, 3) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_wraps_around_origin() {
        let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
        let m = label.map();
        assert!((m.get(0, 0, 7) - m.get(0, 0, 1)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_sum_matches_direct_summation() {
        let label = gaussian_label(16, 16, 2.0, (8, 8)).unwrap();
        let got: f64 = label.map().data().iter().sum();
        // Independent direct summation over explicit wrap-around distances.
        let mut want = 0.0;
        for r in 0..16i64 {
            for c in 0..16i64 {
                let dr = (r - 8).abs().min(16 - (r - 8).abs()) as f64;
                let dc = (c - 8).abs().min(16 - (c - 8).abs()) as f64;
                want += (-(dr * dr + dc * dc) / 8.0).exp();
            }
        }
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn gaussian_rejects_bad_sigma() {
        assert!(gaussian_label(4, 4, 0.0, (0, 0)).is_err());
        assert!(gaussian_label(4, 4, -1.0, (0, 0)).is_err());
    }

    #[test]
    fn window_3x3() {
        let w = cosine_window(3, 3).unwrap();
        assert!((w.get(0, 1, 1) - 1.0).abs() < 1e-15);
        for (r, c) in [(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)] {
            assert!(w.get(0, r, c).abs() < 1e-15);
        }
    }

    #[test]
    fn window_2x2_all_zero() {
        let w = cosine_window(2, 2).unwrap();
        assert!(w.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn window_5x5_half_point() {
        let w = cosine_window(5, 5).unwrap();
        assert!((w.get(0, 1, 2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn window_rejects_degenerate() {
        assert!(cosine_window(1, 5).is_err());
    }

    #[test]
    fn train_on_delta_gives_conjugate_label() {
        let mut x = Tensor3::zeros(6, 6, 1);
        x.set(0, 0, 0, 1.0);
        let label = gaussian_label(6, 6, 1.0, (0, 0)).unwrap();
        let filter = train_cf(&x, &label, 0.0).unwrap();
        let q = filter.quotient();
        let ys = dft2(label.map()).unwrap();
        for (a, b) in q.channel(0).iter().zip(ys.channel(0)) {
            assert!((a - b.conj()).norm() < 1e-10);
        }
    }

    #[test]
    fn huge_lambda_kills_filter() {
        let x = random_tensor(8, 8, 2, 3);
        let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
        let filter = train_cf(&x, &label, 1e12).unwrap();
        let xs = dft2(&x).unwrap();
        let ys = dft2(label.map()).unwrap();
        let xmax = xs.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
        let ymax = ys.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
        let bound = xmax * ymax / 1e12;
        let q = filter.quotient();
        for v in q.data() {
            assert!(v.norm() <= bound * (1.0 + 1e-9));
        }
    }

    #[test]
    fn zero_lambda_zero_bin_rejected() {
        // Zero-mean feature has a zero DC bin.
        let x = Tensor3::from_fn(4, 4, 1, |_, r, c| if (r + c) % 2 == 0 { 1.0 } else { -1.0 });
        let label = gaussian_label(4, 4, 1.0, (0, 0)).unwrap();
        assert!(train_cf(&x, &label, 0.0).is_err());
    }

    #[test]
    fn detect_reproduces_label_at_zero_lambda() {
        // Strictly positive patch keeps every spectrum bin away from zero.
        let mut rng = seeded_rng(9);
        let x = Tensor3::from_fn(8, 8, 1, |_, _, _| rng.gen_range(0.5..1.5));
        let label = gaussian_label(8, 8, 1.2, (0, 0)).unwrap();
        let filter = train_cf(&x, &label, 0.0).unwrap();
        let det = detect_cf(&filter, &x).unwrap();
        for (a, b) in det.response.data().iter().zip(label.map().data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_filter_zero_response() {
        let x = Tensor3::zeros(6, 6, 2);
        let label = gaussian_label(6, 6, 1.0, (0, 0)).unwrap();
        let filter = train_cf(&x, &label, 0.5).unwrap();
        let z = random_tensor(6, 6, 2, 4);
        let det = detect_cf(&filter, &z).unwrap();
        assert!(det.response.max_abs() < 1e-12);
    }

    #[test]
    fn detect_tracks_circular_shifts() {
        let x = random_tensor(8, 8, 2, 5);
        let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
        let filter = train_cf(&x, &label, 0.01).unwrap();
        let base = detect_cf(&filter, &x).unwrap().argmax;
        for (dr, dc) in [(1usize, 0usize), (0, 3), (5, 6), (7, 7)] {
            let z = circshift(&x, dr as isize, dc as isize);
            let det = detect_cf(&filter, &z).unwrap();
            let got = (
                (det.argmax.0 + 8 - base.0) % 8,
                (det.argmax.1 + 8 - base.1) % 8,
            );
            assert_eq!(got, (dr, dc));
        }
    }

    #[test]
    fn detect_rejects_dim_mismatch() {
        let x = random_tensor(8, 8, 1, 6);
        let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
        let filter = train_cf(&x, &label, 0.1).unwrap();
        assert!(detect_cf(&filter, &random_tensor(8, 4, 1, 7)).is_err());
        assert!(detect_cf(&filter, &random_tensor(8, 8, 2, 8)).is_err());
    }

    #[test]
    fn context_with_zero_lambda2_matches_train_cf() {
        let x = random_tensor(8, 8, 2, 10);
        let negs = vec![random_tensor(8, 8, 2, 11), random_tensor(8, 8, 2, 12)];
        let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
        let plain = train_cf(&x, &label, 0.3).unwrap();
        let ctx = train_cf_context(&x, &negs, &label, 0.3, 0.0).unwrap();
        for (a, b) in plain.numerator.data().iter().zip(ctx.numerator.data()) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in plain.denominator.iter().zip(&ctx.denominator) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn context_negative_copies_double_signal_term() {
        let x = random_tensor(8, 8, 1, 13);
        let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
        let l1 = 0.2;
        let plain = train_cf(&x, &label, l1).unwrap();
        let ctx = train_cf_context(&x, &[x.clone()], &label, l1, 1.0).unwrap();
        for (d_ctx, d_plain) in ctx.denominator.iter().zip(&plain.denominator) {
            let expected = 2.0 * (d_plain - l1) + l1;
            assert!((d_ctx - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_negatives_degenerate_to_train_cf() {
        let x = random_tensor(6, 6, 1, 14);
        let label = gaussian_label(6, 6, 1.0, (0, 0)).unwrap();
        let a = train_cf(&x, &label, 0.4).unwrap();
        let b = train_cf_context(&x, &[], &label, 0.4, 1.0).unwrap();
        for (u, v) in a.denominator.iter().zip(&b.denominator) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn update_endpoints_and_mean() {
        let x0 = random_tensor(6, 6, 1, 15);
        let x1 = random_tensor(6, 6, 1, 16);
        let label = gaussian_label(6, 6, 1.0, (0, 0)).unwrap();
        let f0 = train_cf(&x0, &label, 0.1).unwrap();
        let f1 = train_cf(&x1, &label, 0.1).unwrap();
        let same = update_cf(&f0, &f1, 0.0).unwrap();
        for (a, b) in same.numerator.data().iter().zip(f0.numerator.data()) {
            assert_eq!(a, b);
        }
        let new = update_cf(&f0, &f1, 1.0).unwrap();
        for (a, b) in new.numerator.data().iter().zip(f1.numerator.data()) {
            assert_eq!(a, b);
        }
        let mid = update_cf(&f0, &f1, 0.5).unwrap();
        for ((m, a), b) in mid
            .denominator
            .iter()
            .zip(&f0.denominator)
            .zip(&f1.denominator)
        {
            assert!((m - 0.5 * (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn wrapped_decode() {
        assert_eq!(wrapped_displacement(3.0, 8), 3.0);
        assert_eq!(wrapped_displacement(5.0, 8), -3.0);
        assert_eq!(wrapped_displacement(4.0, 8), 4.0); // midpoint stays positive
        assert_eq!(wrapped_displacement(7.0, 8), -1.0);
    }

    #[test]
    fn refine_recovers_quadratic_peak() {
        // Paraboloid with a maximum at (3.3, 4.2); the fit is exact on it.
        let peak = (3.3, 4.2);
        let resp = Tensor3::from_fn(8, 8, 1, |_, r, c| {
            let dr = r as f64 - peak.0;
            let dc = c as f64 - peak.1;
            10.0 - dr * dr - 0.8 * dc * dc - 0.2 * dr * dc
        });
        let (r, c, _) = resp.argmax_first(0);
        let (rr, rc) = refine_peak(&resp, r, c);
        assert!((rr - peak.0).abs() < 0.05, "row {rr}");
        assert!((rc - peak.1).abs() < 0.05, "col {rc}");
    }
}

#[cfg(test)]
mod oracle_tests {
    use super::*;
    use crate::selfcheck::oracles::{context_filter_spatial, ridge_filter_spatial};
    use crate::tensor::Tensor3;
    use crate::util::seeded_rng;
    use rand::Rng;

    fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor3 {
        let mut rng = seeded_rng(seed);
        Tensor3::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    fn spatial_filter(filter: &CorrelationFilter) -> Vec<f64> {
        idft2(&filter.quotient()).data().to_vec()
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn train_cf_matches_dense_ridge_oracle() {
        for (seed, channels) in [(1u64, 1usize), (2, 2), (3, 3)] {
            let x = random_tensor(8, 8, channels, seed);
            let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
            let filter = train_cf(&x, &label, 0.1).unwrap();
            let got = spatial_filter(&filter);
            let want = ridge_filter_spatial(&x, label.map(), 0.1);
            let rel = max_rel(&got, &want);
            assert!(rel < 1e-6, "channels {channels}: rel {rel}");
        }
    }

    #[test]
    fn context_filter_matches_dense_oracle_single_channel() {
        for seed in [5u64, 6, 7] {
            let x = random_tensor(8, 8, 1, seed);
            let negs = vec![
                random_tensor(8, 8, 1, seed + 100),
                random_tensor(8, 8, 1, seed + 200),
            ];
            let label = gaussian_label(8, 8, 1.0, (0, 0)).unwrap();
            let filter = train_cf_context(&x, &negs, &label, 0.2, 0.5).unwrap();
            let got = spatial_filter(&filter);
            let want = context_filter_spatial(&x, &negs, label.map(), 0.2, 0.5);
            let rel = max_rel(&got, &want);
            assert!(rel < 1e-6, "seed {seed}: rel {rel}");
        }
    }
}
