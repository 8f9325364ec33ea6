//! Separable image resampling and the blur-then-decimate degradation used to
//! manufacture low-resolution inputs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Quantization parameters used by the challenge's compression stage.
pub const CHALLENGE_QPS: [u32; 5] = [31, 39, 47, 55, 63];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleKind {
    Lanczos,
    BicubicCatmullRom,
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResampleKernel {
    pub kind: ResampleKind,
    /// Lanczos window; ignored by the other kinds.
    pub a: usize,
}

impl ResampleKernel {
    pub const fn lanczos(a: usize) -> Self {
        ResampleKernel {
            kind: ResampleKind::Lanczos,
            a,
        }
    }

    pub const fn bicubic() -> Self {
        ResampleKernel {
            kind: ResampleKind::BicubicCatmullRom,
            a: 2,
        }
    }

    pub const fn nearest() -> Self {
        ResampleKernel {
            kind: ResampleKind::Nearest,
            a: 1,
        }
    }

    /// Window used to manufacture challenge LR inputs.
    pub const fn challenge_downsample() -> Self {
        Self::lanczos(5)
    }

    /// Window of the interpolation baseline.
    pub const fn baseline_upsample() -> Self {
        Self::lanczos(3)
    }

    /// Half-width of the unscaled kernel.
    pub fn support(&self) -> f64 {
        match self.kind {
            ResampleKind::Lanczos => self.a as f64,
            ResampleKind::BicubicCatmullRom => 2.0,
            ResampleKind::Nearest => 0.5,
        }
    }

    pub fn weight(&self, x: f64) -> f64 {
        match self.kind {
            ResampleKind::Lanczos => lanczos_weight(x, self.a),
            ResampleKind::BicubicCatmullRom => catmull_rom(x),
            ResampleKind::Nearest => {
                if (-0.5..0.5).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x == x.round() {
        0.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// `sinc(x)·sinc(x/a)` inside `|x| < a`, zero outside.
pub fn lanczos_weight(x: f64, a: usize) -> f64 {
    let a = a.max(1) as f64;
    if x.abs() >= a {
        0.0
    } else {
        sinc(x) * sinc(x / a)
    }
}

fn catmull_rom(x: f64) -> f64 {
    let t = x.abs();
    if t < 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Normalized taps `(source index, weight)` for every output position along one axis.
pub fn axis_weights(in_len: usize, out_len: usize, kernel: ResampleKernel) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    let stretch = scale.max(1.0);
    let support = kernel.support() * stretch;
    (0..out_len)
        .map(|dst| {
            let center = (dst as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).ceil() as isize;
            let hi = (center + support).floor() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let w = kernel.weight((i as f64 - center) / stretch);
                if w == 0.0 {
                    continue;
                }
                let src = i.clamp(0, in_len as isize - 1) as usize;
                match taps.iter_mut().find(|(s, _)| *s == src) {
                    Some(t) => t.1 += w,
                    None => taps.push((src, w)),
                }
            }
            let sum: f64 = taps.iter().map(|t| t.1).sum();
            if taps.is_empty() || sum == 0.0 {
                // degenerate window: fall back to the nearest source sample
                let src = center.round().clamp(0.0, in_len as f64 - 1.0) as usize;
                return vec![(src, 1.0)];
            }
            taps.iter().map(|&(s, w)| (s, w / sum)).collect()
        })
        .collect()
}

/// Separable resampling, horizontal pass then vertical pass, with
/// pixel-center alignment and clamped edges.
pub fn resample_image(img: &Tensor, out_h: usize, out_w: usize, kernel: ResampleKernel) -> Result<Tensor> {
    let s = img.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::EmptyOutput {
            op: "resample_image",
            reason: format!("requested {out_h}x{out_w}"),
        });
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::invalid("resample_image", s, "empty image"));
    }
    let wx = axis_weights(s.w, out_w, kernel);
    let wy = axis_weights(s.h, out_h, kernel);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    let mut tmp = vec![0.0f64; s.h * out_w];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = img.plane(n, c);
            for y in 0..s.h {
                let row = &src[y * s.w..(y + 1) * s.w];
                for (x, taps) in wx.iter().enumerate() {
                    tmp[y * out_w + x] = taps.iter().map(|&(i, w)| row[i] as f64 * w).sum();
                }
            }
            let dst = out.plane_mut(n, c);
            for (y, taps) in wy.iter().enumerate() {
                for x in 0..out_w {
                    dst[y * out_w + x] = taps.iter().map(|&(i, w)| tmp[i * out_w + x] * w).sum::<f64>() as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Replicates every pixel into an `r×r` block.
pub fn nearest_upsample(img: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::InvalidArgument("upsample factor must be positive".into()));
    }
    if r == 1 {
        return Ok(img.clone());
    }
    let s = img.shape();
    let (oh, ow) = (s.h * r, s.w * r);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = img.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..oh {
                let srow = &src[(y / r) * s.w..(y / r + 1) * s.w];
                for (x, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                    *d = srow[x / r];
                }
            }
        }
    }
    Ok(out)
}

/// Rounds to the nearest 8-bit level: `round(clamp(v)·255) / 255`.
pub fn quantize_8bit(img: &Tensor) -> Tensor {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Round trip through a lossy image codec at a quantization parameter.
pub trait LrCodec {
    fn name(&self) -> &str;
    fn round_trip(&self, lr: &Tensor, qp: u32) -> Result<Tensor>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub scale: usize,
    pub kernel: ResampleKernel,
    pub qp: Option<u32>,
}

impl DegradationSpec {
    pub fn new(scale: usize, kernel: ResampleKernel, qp: Option<u32>) -> Result<Self> {
        let spec = DegradationSpec { scale, kernel, qp };
        spec.validate()?;
        Ok(spec)
    }

    /// ×4 Lanczos-5 decimation, optionally followed by compression at `qp`.
    pub fn challenge(qp: Option<u32>) -> Result<Self> {
        Self::new(4, ResampleKernel::challenge_downsample(), qp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::InvalidArgument("scale must be >= 1".into()));
        }
        if let Some(qp) = self.qp {
            if !CHALLENGE_QPS.contains(&qp) {
                return Err(Error::InvalidArgument(format!(
                    "qp {qp} not in {CHALLENGE_QPS:?}"
                )));
            }
        }
        Ok(())
    }

    /// LR size for an HR size: `ceil(dim / scale)`.
    pub fn lr_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.scale), w.div_ceil(self.scale))
    }
}

/// Downsample by `spec.scale` and optionally compress; output clamped to `[0, 1]`.
pub fn degrade(img: &Tensor, spec: &DegradationSpec, codec: Option<&dyn LrCodec>) -> Result<Tensor> {
    spec.validate()?;
    let s = img.shape();
    let (lh, lw) = spec.lr_size(s.h, s.w);
    let lr = if spec.scale == 1 {
        img.clone()
    } else {
        resample_image(img, lh, lw, spec.kernel)?
    };
    let lr = lr.clamp(0.0, 1.0);
    match spec.qp {
        None => Ok(lr),
        Some(qp) => {
            let codec = codec.ok_or_else(|| {
                Error::CodecUnavailable(format!("qp {qp} requested without an image codec"))
            })?;
            Ok(codec.round_trip(&lr, qp)?.clamp(0.0, 1.0))
        }
    }
}
