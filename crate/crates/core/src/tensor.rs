//! Dense H×W×C real array, row-major within each channel plane.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Tensor3 {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Invalid(format!(
                "tensor dims must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Tensor3 {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a tensor by evaluating `f(channel, row, col)` at every cell.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Tensor3::zeros(height, width, channels);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    let v = f(c, r, col);
                    t.data[(c * height + r) * width + col] = v;
                }
            }
        }
        t
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

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_dims(&self, other: &Tensor3) -> bool {
        self.dims() == other.dims()
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, v: f64) {
        let i = self.index(channel, row, col);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.spatial_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// self += s * other (dims must match).
    pub fn add_scaled(&mut self, other: &Tensor3, s: f64) {
        debug_assert!(self.same_dims(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    /// Multiplies every channel by a single-channel window.
    pub fn windowed(&self, window: &Tensor3) -> Result<Tensor3> {
        if window.channels != 1 || window.height != self.height || window.width != self.width {
            return Err(Error::Shape(format!(
                "window {}x{}x{} does not fit tensor {}x{}x{}",
                window.height, window.width, window.channels, self.height, self.width, self.channels
            )));
        }
        let mut out = self.clone();
        let n = self.spatial_len();
        for c in 0..self.channels {
            for i in 0..n {
                out.data[c * n + i] *= window.data[i];
            }
        }
        Ok(out)
    }

    /// Largest value in channel 0 with ties broken by lowest (row, col).
    pub fn argmax_first(&self, channel: usize) -> (usize, usize, f64) {
        let plane = self.channel(channel);
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for r in 0..self.height {
            for c in 0..self.width {
                let v = plane[r * self.width + c];
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        best
    }
}
