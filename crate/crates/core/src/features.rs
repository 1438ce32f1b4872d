//! Frame to model-input transform: overlapping windows rendered as
//! three-channel images (amplitude, phase, raw I/Q).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::IqFrame;

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowPlan {
    pub window_len: usize,
    pub stride: usize,
    pub count: usize,
}

impl Default for WindowPlan {
    fn default() -> Self {
        Self { window_len: 224, stride: 112, count: 8 }
    }
}

impl WindowPlan {
    /// Half-overlapping plan with `count` windows of `window_len`.
    pub fn half_overlap(window_len: usize, count: usize) -> Self {
        Self { window_len, stride: (window_len / 2).max(1), count }
    }

    /// Samples covered from the frame start.
    pub fn span(&self) -> usize {
        self.window_len + (self.count.saturating_sub(1)) * self.stride
    }

    pub fn offsets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.count).map(move |k| k * self.stride)
    }

    pub fn validate(&self, frame_len: usize) -> Result<()> {
        if self.window_len == 0 || self.count == 0 {
            return Err(Error::Config("window_len and count must be positive".into()));
        }
        if self.count > 1 && self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if self.span() > frame_len {
            return Err(Error::Config(format!(
                "window plan covers {} samples ({} + {}*{}) but frame has {}",
                self.span(),
                self.window_len,
                self.count - 1,
                self.stride,
                frame_len
            )));
        }
        Ok(())
    }
}

/// One window rendered as a `3 x S x S` image, stored channel-major:
/// channel 0 amplitude, channel 1 phase, channel 2 interleaved I/Q rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub side: usize,
    pub data: Vec<f64>,
    pub source_window: usize,
}

impl FeatureTensor {
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.side + row) * self.side + col]
    }

    pub fn row(&self, channel: usize, row: usize) -> &[f64] {
        let start = (channel * self.side + row) * self.side;
        &self.data[start..start + self.side]
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.data[channel * n..(channel + 1) * n]
    }
}

/// Splits a frame into `plan.count` windows; samples past the last window
/// are ignored.
pub fn segment<'a>(frame: &'a IqFrame, plan: &WindowPlan) -> Result<Vec<&'a [Complex64]>> {
    plan.validate(frame.samples.len())?;
    Ok(plan.offsets().map(|start| &frame.samples[start..start + plan.window_len]).collect())
}

/// Envelope `sqrt(I^2 + Q^2)`.
pub fn amplitude(window: &[Complex64]) -> Vec<f64> {
    window.iter().map(|s| s.re.hypot(s.im)).collect()
}

/// Quadrant-aware instantaneous phase in `[-pi, pi]`, with the origin
/// mapped to 0.
pub fn phase(window: &[Complex64]) -> Vec<f64> {
    window.iter().map(|s| if s.re == 0.0 && s.im == 0.0 { 0.0 } else { s.im.atan2(s.re) }).collect()
}

/// Renders one window as an `S x S x 3` image by row tiling.
///
/// Every row of channels 0 and 1 repeats the amplitude and phase vectors,
/// so columns carry time. Channel 2 alternates the I vector (even rows)
/// and Q vector (odd rows).
pub fn tensorize(window: &[Complex64], side: usize, source_window: usize) -> Result<FeatureTensor> {
    if window.len() != side {
        return Err(Error::Config(format!("window length {} does not match tensor side {side}", window.len())));
    }
    let amp = amplitude(window);
    let ph = phase(window);
    let i_row: Vec<f64> = window.iter().map(|s| s.re).collect();
    let q_row: Vec<f64> = window.iter().map(|s| s.im).collect();

    let mut data = Vec::with_capacity(CHANNELS * side * side);
    for _ in 0..side {
        data.extend_from_slice(&amp);
    }
    for _ in 0..side {
        data.extend_from_slice(&ph);
    }
    for r in 0..side {
        data.extend_from_slice(if r % 2 == 0 { &i_row } else { &q_row });
    }
    Ok(FeatureTensor { side, data, source_window })
}

/// segment -> amplitude/phase -> tensorize, one tensor per window in order.
pub fn frame_to_input(frame: &IqFrame, plan: &WindowPlan, side: usize) -> Result<Vec<FeatureTensor>> {
    segment(frame, plan)?.into_iter().enumerate().map(|(k, w)| tensorize(w, side, k)).collect()
}

/// Binary PPM (P6) rendering of a tensor: red = amplitude, green = phase,
/// blue = I/Q. Amplitude scales by its max, phase maps `[-pi, pi]` onto
/// `[0, 255]`, I/Q scales symmetrically by its max magnitude.
pub fn to_ppm(t: &FeatureTensor) -> Vec<u8> {
    let n = t.side * t.side;
    let amp_max = t.channel(0).iter().cloned().fold(0.0, f64::max);
    let iq_max = t.channel(2).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let quant = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;

    let mut out = format!("P6\n{} {}\n255\n", t.side, t.side).into_bytes();
    out.reserve(3 * n);
    for p in 0..n {
        let a = t.data[p];
        let ph = t.data[n + p];
        let iq = t.data[2 * n + p];
        out.push(quant(if amp_max > 0.0 { a / amp_max } else { 0.0 }));
        out.push(quant((ph + PI) / (2.0 * PI)));
        out.push(quant(if iq_max > 0.0 { 0.5 + 0.5 * iq / iq_max } else { 0.5 }));
    }
    out
}
