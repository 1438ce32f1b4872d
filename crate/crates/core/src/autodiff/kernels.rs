//! Forward and backward kernels for the spatial layers. All feature maps
//! are `N x C x H x W`, row-major.

use super::linalg::{gemm, Mat};

/// `floor((n + 2 pad - k) / stride) + 1`, or `None` when the window does
/// not fit.
pub fn conv_out_dim(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || k == 0 || k > n + 2 * pad {
        return None;
    }
    Some((n + 2 * pad - k) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    fn in_image(&self) -> usize {
        self.c_in * self.h * self.w
    }

    fn out_image(&self) -> usize {
        self.c_out * self.positions()
    }
}

/// Unfolds one image into a `(C k k) x (H' W')` column matrix.
fn im2col(g: &ConvGeom, img: &[f64], cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oh * g.w_out..(oh + 1) * g.w_out];
                    if ih < 0 || ih >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &img[(c * g.h + ih as usize) * g.w..][..g.w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *v = if iw >= 0 && iw < g.w as isize { src[iw as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back into an image.
fn col2im(g: &ConvGeom, cols: &[f64], img: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut img[(c * g.h + ih as usize) * g.w..][..g.w];
                    for ow in 0..g.w_out {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += src[oh * g.w_out + ow];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    let mut cols = vec![0.0; g.patch() * g.positions()];
    let wm = Mat::new(w, g.c_out, g.patch());
    for n in 0..g.n {
        im2col(g, &x[n * g.in_image()..(n + 1) * g.in_image()], &mut cols);
        let out = &mut y[n * g.out_image()..(n + 1) * g.out_image()];
        for (o, row) in out.chunks_mut(g.positions()).enumerate() {
            row.fill(b[o]);
        }
        gemm(wm, Mat::new(&cols, g.patch(), g.positions()), 1.0, out);
    }
}

/// Accumulates gradients into `dx` (if given), `dw` and `db`.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let p = g.positions();
    let mut cols = vec![0.0; g.patch() * p];
    let mut dcols = vec![0.0; g.patch() * p];
    let wm = Mat::new(w, g.c_out, g.patch());
    let mut dw_acc = dw.as_ref().map(|_| vec![0.0; w.len()]);
    let mut db_acc = db.as_ref().map(|_| vec![0.0; g.c_out]);
    for n in 0..g.n {
        let dyn_ = &dy[n * g.out_image()..(n + 1) * g.out_image()];
        if let Some(acc) = db_acc.as_mut() {
            for (o, row) in dyn_.chunks(p).enumerate() {
                acc[o] += row.iter().sum::<f64>();
            }
        }
        if let Some(acc) = dw_acc.as_mut() {
            im2col(g, &x[n * g.in_image()..(n + 1) * g.in_image()], &mut cols);
            gemm(Mat::new(dyn_, g.c_out, p), Mat::new(&cols, g.patch(), p).t(), 1.0, acc);
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(wm.t(), Mat::new(dyn_, g.c_out, p), 0.0, &mut dcols);
            col2im(g, &dcols, &mut dx[n * g.in_image()..(n + 1) * g.in_image()]);
        }
    }
    if let (Some(dw), Some(acc)) = (dw, dw_acc) {
        dw.iter_mut().zip(acc).for_each(|(d, a)| *d += a);
    }
    if let (Some(db), Some(acc)) = (db, db_acc) {
        db.iter_mut().zip(acc).for_each(|(d, a)| *d += a);
    }
}

/// Max pooling without padding; returns the flat input index of each
/// maximum (first occurrence wins ties).
#[allow(clippy::too_many_arguments)]
pub(crate) fn max_pool_forward(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    h_out: usize,
    w_out: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut y = Vec::with_capacity(planes * h_out * w_out);
    let mut arg = Vec::with_capacity(planes * h_out * w_out);
    for pl in 0..planes {
        let base = pl * h * w;
        for oh in 0..h_out {
            for ow in 0..w_out {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + oh * stride * w + ow * stride;
                for i in 0..window {
                    for j in 0..window {
                        let idx = base + (oh * stride + i) * w + ow * stride + j;
                        if x[idx] > best {
                            best = x[idx];
                            best_i = idx;
                        }
                    }
                }
                y.push(best);
                arg.push(best_i);
            }
        }
    }
    (y, arg)
}

/// Cross-channel local response normalization constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrnParams {
    pub k: f64,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self { k: 2.0, n: 5, alpha: 1e-4, beta: 0.75 }
    }
}

/// `k + alpha * sum of squares over the channel window`, per element.
fn lrn_denominators(x: &[f64], n: usize, c: usize, hw: usize, p: &LrnParams) -> Vec<f64> {
    let half = p.n / 2;
    let mut d = vec![0.0; x.len()];
    for img in 0..n {
        let base = img * c * hw;
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            for s in 0..hw {
                let sq: f64 = (lo..=hi).map(|cc| x[base + cc * hw + s].powi(2)).sum();
                d[base + ch * hw + s] = p.k + p.alpha * sq;
            }
        }
    }
    d
}

pub(crate) fn lrn_forward(x: &[f64], n: usize, c: usize, hw: usize, p: &LrnParams) -> Vec<f64> {
    let d = lrn_denominators(x, n, c, hw, p);
    x.iter().zip(&d).map(|(a, d)| a * d.powf(-p.beta)).collect()
}

pub(crate) fn lrn_backward(x: &[f64], dy: &[f64], n: usize, c: usize, hw: usize, p: &LrnParams, dx: &mut [f64]) {
    let d = lrn_denominators(x, n, c, hw, p);
    let t: Vec<f64> = (0..x.len()).map(|i| dy[i] * x[i] * d[i].powf(-p.beta - 1.0)).collect();
    let half = p.n / 2;
    for img in 0..n {
        let base = img * c * hw;
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            for s in 0..hw {
                let i = base + ch * hw + s;
                let cross: f64 = (lo..=hi).map(|cc| t[base + cc * hw + s]).sum();
                dx[i] += dy[i] * d[i].powf(-p.beta) - 2.0 * p.alpha * p.beta * x[i] * cross;
            }
        }
    }
}
