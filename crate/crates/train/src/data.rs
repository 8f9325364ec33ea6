//! Training pairs: procedural HR textures or fixed pairs, degraded on the fly.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rtsr_core::resample::{degrade, DegradationSpec, LrCodec, ResampleKernel};
use rtsr_core::{Shape, Tensor};

use crate::error::{Result, TrainError};

/// A minibatch of aligned patches; `qps[i]` is the compression level of item `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub lr: Tensor,
    pub hr: Tensor,
    pub qps: Vec<Option<u32>>,
}

pub trait DataSource {
    fn scale(&self) -> usize;
    /// `batch` pairs with HR side `patch`, drawn from the QP subset `qps`
    /// (empty means uncompressed).
    fn sample(&mut self, qps: &[u32], patch: usize, batch: usize, rng: &mut ChaCha8Rng) -> Result<Batch>;
}

fn check_patch(patch: usize, scale: usize, batch: usize) -> Result<()> {
    if batch == 0 || patch == 0 || !patch.is_multiple_of(scale) {
        return Err(TrainError::Data(format!(
            "patch {patch} must be a positive multiple of scale {scale}, batch {batch} positive"
        )));
    }
    Ok(())
}

fn random_crop(img: &Tensor, side_h: usize, side_w: usize, rng: &mut ChaCha8Rng) -> Result<(usize, usize, Tensor)> {
    let s = img.shape();
    if s.h < side_h || s.w < side_w {
        return Err(TrainError::Data(format!("image {s} is smaller than a {side_h}x{side_w} patch")));
    }
    let y = rng.random_range(0..=s.h - side_h);
    let x = rng.random_range(0..=s.w - side_w);
    Ok((y, x, window(img, y, x, side_h, side_w)))
}

fn window(img: &Tensor, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
    let s = img.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = img.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&src[(y0 + y) * s.w + x0..(y0 + y) * s.w + x0 + w]);
            }
        }
    }
    out
}

/// Smooth gradients, gratings, hard-edged shapes and mild noise, values in [0, 1].
pub fn procedural_texture(side: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut img = Tensor::zeros(Shape::new(1, 3, side, side));
    let base: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let tilt: [f32; 3] = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
    let freq = rng.random_range(0.05..0.6f32);
    let angle = rng.random_range(0.0..std::f32::consts::PI);
    let amp = rng.random_range(0.05..0.25f32);
    let (ca, sa) = (angle.cos(), angle.sin());
    let shapes: Vec<(f32, f32, f32, [f32; 3], bool)> = (0..rng.random_range(2..6))
        .map(|_| {
            (
                rng.random_range(0.0..side as f32),
                rng.random_range(0.0..side as f32),
                rng.random_range(3.0..side as f32 / 2.0),
                [rng.random(), rng.random(), rng.random()],
                rng.random_bool(0.5),
            )
        })
        .collect();
    let s = side as f32;
    for y in 0..side {
        for x in 0..side {
            let (fy, fx) = (y as f32, x as f32);
            let wave = amp * (freq * (fx * ca + fy * sa)).sin();
            let mut px = [0.0f32; 3];
            for c in 0..3 {
                px[c] = base[c] + tilt[c] * (fx / s - 0.5) + wave;
            }
            for &(cy, cx, r, col, square) in &shapes {
                let inside = if square {
                    (fy - cy).abs() < r && (fx - cx).abs() < r * 0.6
                } else {
                    (fy - cy).powi(2) + (fx - cx).powi(2) < r * r
                };
                if inside {
                    px = col;
                }
            }
            for (c, v) in px.iter().enumerate() {
                let noise = rng.random_range(-0.01..0.01f32);
                img.set(0, c, y, x, (v + noise).clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// Stand-in for the image codec when none is installed: coarser quantization at higher QP,
/// applied to 2×2 block means blended with the pixel values.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimulatedCodec;

impl LrCodec for SimulatedCodec {
    fn name(&self) -> &str {
        "simulated"
    }

    fn round_trip(&self, lr: &Tensor, qp: u32) -> rtsr_core::Result<Tensor> {
        let strength = (qp.saturating_sub(23) as f32 / 40.0).clamp(0.0, 1.0);
        let levels = (255.0 * (1.0 - strength) + 8.0 * strength).max(2.0);
        let s = lr.shape();
        let mut out = lr.clone();
        for n in 0..s.n {
            for c in 0..s.c {
                let src = lr.plane(n, c).to_vec();
                let dst = out.plane_mut(n, c);
                for y in 0..s.h {
                    for x in 0..s.w {
                        let (by, bx) = (y & !1, x & !1);
                        let mut sum = 0.0;
                        let mut cnt = 0.0;
                        for yy in by..(by + 2).min(s.h) {
                            for xx in bx..(bx + 2).min(s.w) {
                                sum += src[yy * s.w + xx];
                                cnt += 1.0;
                            }
                        }
                        let v = (1.0 - strength) * src[y * s.w + x] + strength * sum / cnt;
                        dst[y * s.w + x] = (v * levels).round() / levels;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// HR pool degraded per sample.
pub struct SyntheticSource {
    images: Vec<Tensor>,
    scale: usize,
    kernel: ResampleKernel,
    codec: Option<Box<dyn LrCodec>>,
    consumed: Vec<Option<u32>>,
}

impl SyntheticSource {
    pub fn from_images(images: Vec<Tensor>, scale: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(TrainError::Data("empty image pool".into()));
        }
        if let Some(bad) = images.iter().find(|i| i.shape().n != 1 || i.shape().c != 3) {
            return Err(TrainError::Data(format!("expected single RGB images, got {}", bad.shape())));
        }
        Ok(SyntheticSource {
            images,
            scale,
            kernel: ResampleKernel::challenge_downsample(),
            codec: None,
            consumed: Vec::new(),
        })
    }

    /// `count` procedural textures of side `side`.
    pub fn procedural(count: usize, side: usize, scale: usize, seed: u64) -> Result<Self> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        Self::from_images((0..count).map(|_| procedural_texture(side, &mut rng)).collect(), scale)
    }

    pub fn with_codec(mut self, codec: Box<dyn LrCodec>) -> Self {
        self.codec = Some(codec);
        self
    }

    pub fn with_kernel(mut self, kernel: ResampleKernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    /// QP of every item handed out so far, in order.
    pub fn consumed(&self) -> &[Option<u32>] {
        &self.consumed
    }

    fn degrade_one(&self, hr: &Tensor, qp: Option<u32>) -> Result<Tensor> {
        let spec = DegradationSpec::new(self.scale, self.kernel, qp)?;
        Ok(degrade(hr, &spec, self.codec.as_deref())?)
    }

    /// Fixed LR/HR pairs of side `patch`, one crop per pool image.
    pub fn materialize(&self, patch: usize, qp: Option<u32>, rng: &mut ChaCha8Rng) -> Result<PairSource> {
        check_patch(patch, self.scale, 1)?;
        let mut pairs = Vec::with_capacity(self.images.len());
        for img in &self.images {
            let (_, _, hr) = random_crop(img, patch, patch, rng)?;
            pairs.push((qp, self.degrade_one(&hr, qp)?, hr));
        }
        PairSource::new(pairs, self.scale)
    }
}

impl DataSource for SyntheticSource {
    fn scale(&self) -> usize {
        self.scale
    }

    fn sample(&mut self, qps: &[u32], patch: usize, batch: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
        check_patch(patch, self.scale, batch)?;
        let (mut lrs, mut hrs, mut used) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..batch {
            let img = self.images.choose(rng).expect("non-empty pool");
            let (_, _, hr) = random_crop(img, patch, patch, rng)?;
            let qp = qps.choose(rng).copied();
            lrs.push(self.degrade_one(&hr, qp)?);
            hrs.push(hr);
            used.push(qp);
        }
        self.consumed.extend_from_slice(&used);
        Ok(Batch {
            lr: Tensor::stack_batch(&lrs)?,
            hr: Tensor::stack_batch(&hrs)?,
            qps: used,
        })
    }
}

/// Pre-degraded pairs; samples aligned crops.
pub struct PairSource {
    pairs: Vec<(Option<u32>, Tensor, Tensor)>,
    scale: usize,
    consumed: Vec<Option<u32>>,
}

impl PairSource {
    /// `(qp, lr, hr)` triples; every HR must be exactly `scale` times its LR.
    pub fn new(pairs: Vec<(Option<u32>, Tensor, Tensor)>, scale: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(TrainError::Data("no pairs".into()));
        }
        for (_, lr, hr) in &pairs {
            let (l, h) = (lr.shape(), hr.shape());
            if l.n != 1 || h.n != 1 || l.c != h.c || l.h * scale != h.h || l.w * scale != h.w {
                return Err(TrainError::Data(format!("pair {l} / {h} is not a x{scale} pair")));
            }
        }
        Ok(PairSource {
            pairs,
            scale,
            consumed: Vec::new(),
        })
    }

    pub fn pairs(&self) -> &[(Option<u32>, Tensor, Tensor)] {
        &self.pairs
    }

    pub fn consumed(&self) -> &[Option<u32>] {
        &self.consumed
    }
}

impl DataSource for PairSource {
    fn scale(&self) -> usize {
        self.scale
    }

    fn sample(&mut self, qps: &[u32], patch: usize, batch: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
        check_patch(patch, self.scale, batch)?;
        let eligible: Vec<usize> = (0..self.pairs.len())
            .filter(|&i| match self.pairs[i].0 {
                Some(q) => qps.contains(&q),
                None => qps.is_empty(),
            })
            .collect();
        if eligible.is_empty() {
            return Err(TrainError::Data(format!("no pairs for qp subset {qps:?}")));
        }
        let lp = patch / self.scale;
        let (mut lrs, mut hrs, mut used) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..batch {
            let (qp, lr, hr) = &self.pairs[*eligible.choose(rng).expect("non-empty")];
            let (y, x, l) = random_crop(lr, lp, lp, rng)?;
            lrs.push(l);
            hrs.push(window(hr, y * self.scale, x * self.scale, patch, patch));
            used.push(*qp);
        }
        self.consumed.extend_from_slice(&used);
        Ok(Batch {
            lr: Tensor::stack_batch(&lrs)?,
            hr: Tensor::stack_batch(&hrs)?,
            qps: used,
        })
    }
}
