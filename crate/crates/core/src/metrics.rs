//! Fidelity metrics and the leaderboard arithmetic (PSNR gain and score).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const DEFAULT_SCORE_C: f64 = 0.1;

/// Baseline Lanczos PSNR-Y at QP31 and QP63.
pub const BASELINE_PSNR_Y: QpPair = QpPair { qp31: 32.75, qp63: 29.12 };

/// BT.601 limited-range luma of an RGB image in [0, 1]; output is `(n, 1, h, w)`.
pub fn to_luma(img: &Tensor) -> Result<Tensor> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::invalid("to_luma", s, "expected 3 channels"));
    }
    let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
    for n in 0..s.n {
        let (r, g, b) = (img.plane(n, 0), img.plane(n, 1), img.plane(n, 2));
        for (i, y) in out.plane_mut(n, 0).iter_mut().enumerate() {
            let v = 16.0 + 65.481 * r[i] as f64 + 128.553 * g[i] as f64 + 24.966 * b[i] as f64;
            *y = (v / 255.0) as f32;
        }
    }
    Ok(out)
}

/// `10·log10(peak²/MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.expect_same(b, "psnr")?;
    if a.numel() == 0 {
        return Err(Error::invalid("psnr", a.shape(), "empty image"));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum();
    let mse = sse / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian filter over valid positions of one plane.
fn blur_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| g[t] * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| g[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize, peak: f64, g: &[f64]) -> f64 {
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = blur_valid(&a, h, w, g);
    let mu_b = blur_valid(&b, h, w, g);
    let aa = blur_valid(&prod(&a, &a), h, w, g);
    let bb = blur_valid(&prod(&b, &b), h, w, g);
    let ab = blur_valid(&prod(&a, &b), h, w, g);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}

/// Mean SSIM over valid 11×11 Gaussian windows, averaged over channels and batch.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.expect_same(b, "ssim")?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW || s.n == 0 || s.c == 0 {
        return Err(Error::invalid("ssim", s, "image smaller than the 11x11 window"));
    }
    if a == b {
        return Ok(1.0);
    }
    let g = gaussian_window();
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            total += ssim_plane(a.plane(n, c), b.plane(n, c), s.h, s.w, peak, &g);
        }
    }
    Ok(total / (s.n * s.c) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpPair {
    pub qp31: f64,
    pub qp63: f64,
}

impl QpPair {
    pub fn mean(&self) -> f64 {
        0.5 * (self.qp31 + self.qp63)
    }
}

/// Gain of the model's mean PSNR-Y at QP31/QP63 over the baseline's.
pub fn delta_psnr(model_psnr_y: QpPair, baseline_psnr_y: QpPair) -> f64 {
    model_psnr_y.mean() - baseline_psnr_y.mean()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreInputs {
    pub delta_db: f64,
    pub runtime_ms: f64,
    pub c: f64,
}

impl ScoreInputs {
    pub fn new(delta_db: f64, runtime_ms: f64) -> Self {
        ScoreInputs { delta_db, runtime_ms, c: DEFAULT_SCORE_C }
    }
}

/// `2·2^Δ / (√T·C)`.
pub fn challenge_score(inp: ScoreInputs) -> Result<f64> {
    if inp.runtime_ms <= 0.0 || !inp.runtime_ms.is_finite() {
        return Err(Error::InvalidArgument(format!("runtime must be positive, got {}", inp.runtime_ms)));
    }
    if inp.c <= 0.0 || !inp.c.is_finite() {
        return Err(Error::InvalidArgument(format!("scaling constant must be positive, got {}", inp.c)));
    }
    Ok(2.0 * inp.delta_db.exp2() / (inp.runtime_ms.sqrt() * inp.c))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub psnr_rgb: f64,
    pub psnr_y: f64,
    pub ssim_rgb: f64,
    pub ssim_y: f64,
}

/// Metrics for one (prediction, reference) pair; both are clamped to [0, 1], peak 1.
pub fn quality_metrics(pred: &Tensor, reference: &Tensor) -> Result<QualityMetrics> {
    let p = pred.clamp(0.0, 1.0);
    let r = reference.clamp(0.0, 1.0);
    let (py, ry) = (to_luma(&p)?, to_luma(&r)?);
    Ok(QualityMetrics {
        psnr_rgb: psnr(&p, &r, 1.0)?,
        psnr_y: psnr(&py, &ry, 1.0)?,
        ssim_rgb: ssim(&p, &r, 1.0)?,
        ssim_y: ssim(&py, &ry, 1.0)?,
    })
}

/// Per-QP averages plus the codec-free setting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_qp: BTreeMap<u32, QualityMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncompressed: Option<QualityMetrics>,
}

impl MetricsReport {
    /// PSNR-Y at QP31 and QP63 when both are present.
    pub fn psnr_y_pair(&self) -> Option<QpPair> {
        Some(QpPair {
            qp31: self.per_qp.get(&31)?.psnr_y,
            qp63: self.per_qp.get(&63)?.psnr_y,
        })
    }
}

/// Averages per-image metrics field by field.
pub fn mean_metrics(items: &[QualityMetrics]) -> Option<QualityMetrics> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    let avg = |f: fn(&QualityMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
    Some(QualityMetrics {
        psnr_rgb: avg(|m| m.psnr_rgb),
        psnr_y: avg(|m| m.psnr_y),
        ssim_rgb: avg(|m| m.ssim_rgb),
        ssim_y: avg(|m| m.ssim_y),
    })
}
