//! Upscalers benchmarked by name: the Lanczos baseline and trained networks.

use rtsr_core::resample::{resample_image, ResampleKernel};
use rtsr_core::{Shape, Tensor};
use rtsr_zoo::ModelGraph;

use crate::error::{BenchError, Result};

pub const BASELINE_NAME: &str = "lanczos";

pub trait Upscaler: Send + Sync {
    fn name(&self) -> &str;
    fn scale(&self) -> usize;
    fn param_count(&self) -> usize;
    /// The Lanczos baseline is reported without a score.
    fn is_baseline(&self) -> bool {
        false
    }
    fn upscale(&self, lr: &Tensor) -> Result<Tensor>;
}

/// Lanczos-3 interpolation, the reference every Δ is measured against.
pub struct LanczosBaseline {
    pub scale: usize,
}

impl Default for LanczosBaseline {
    fn default() -> Self {
        LanczosBaseline { scale: 4 }
    }
}

impl Upscaler for LanczosBaseline {
    fn name(&self) -> &str {
        BASELINE_NAME
    }

    fn scale(&self) -> usize {
        self.scale
    }

    fn param_count(&self) -> usize {
        0
    }

    fn is_baseline(&self) -> bool {
        true
    }

    fn upscale(&self, lr: &Tensor) -> Result<Tensor> {
        let s = lr.shape();
        Ok(resample_image(lr, s.h * self.scale, s.w * self.scale, ResampleKernel::baseline_upsample())?)
    }
}

pub struct NetworkUpscaler {
    name: String,
    model: ModelGraph,
}

impl NetworkUpscaler {
    pub fn new(model: ModelGraph) -> Self {
        NetworkUpscaler {
            name: model.spec().name.clone(),
            model,
        }
    }

    pub fn named(name: impl Into<String>, model: ModelGraph) -> Self {
        NetworkUpscaler { name: name.into(), model }
    }

    pub fn model(&self) -> &ModelGraph {
        &self.model
    }
}

/// Replicates the last row and column so both sides become multiples of `m`.
pub fn pad_to_multiple(x: &Tensor, m: usize) -> Tensor {
    let s = x.shape();
    let (h, w) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
    if (h, w) == (s.h, s.w) {
        return x.clone();
    }
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..h {
                for xx in 0..w {
                    out.set(n, c, y, xx, x.at(n, c, y.min(s.h - 1), xx.min(s.w - 1)));
                }
            }
        }
    }
    out
}

/// Top-left `h × w` window.
pub fn crop_to(x: &Tensor, h: usize, w: usize) -> Tensor {
    let s = x.shape();
    if (h, w) == (s.h, s.w) {
        return x.clone();
    }
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..h {
                for xx in 0..w {
                    out.set(n, c, y, xx, x.at(n, c, y, xx));
                }
            }
        }
    }
    out
}

impl Upscaler for NetworkUpscaler {
    fn name(&self) -> &str {
        &self.name
    }

    fn scale(&self) -> usize {
        self.model.scale()
    }

    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    fn upscale(&self, lr: &Tensor) -> Result<Tensor> {
        let s = lr.shape();
        let padded = pad_to_multiple(lr, self.model.input_multiple());
        let out = self.model.run(&padded)?;
        Ok(crop_to(&out, s.h * self.scale(), s.w * self.scale()))
    }
}

/// Upscalers looked up by name.
#[derive(Default)]
pub struct UpscalerRegistry {
    entries: Vec<Box<dyn Upscaler>>,
}

impl UpscalerRegistry {
    pub fn new() -> Self {
        UpscalerRegistry::default()
    }

    /// Holds the Lanczos baseline.
    pub fn builtin() -> Self {
        let mut r = UpscalerRegistry::new();
        r.entries.push(Box::new(LanczosBaseline::default()));
        r
    }

    pub fn register(&mut self, up: Box<dyn Upscaler>) -> Result<()> {
        if self.get(up.name()).is_some() {
            return Err(BenchError::Usage(format!("upscaler {:?} registered twice", up.name())));
        }
        self.entries.push(up);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn Upscaler> {
        self.entries.iter().find(|e| e.name() == name).map(|e| e.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rtsr_zoo::{build, zoo_catalog, Mode};

    #[test]
    fn pad_then_crop_is_identity() {
        let x = Tensor::from_vec([1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let p = pad_to_multiple(&x, 4);
        assert_eq!(p.shape(), Shape::new(1, 1, 4, 4));
        assert_eq!(p.at(0, 0, 3, 3), 6.0);
        assert_eq!(crop_to(&p, 2, 3), x);
    }

    #[test]
    fn network_handles_odd_sizes() {
        for spec in zoo_catalog() {
            let up = NetworkUpscaler::new(build(&spec, Mode::Deploy, 0).unwrap());
            let out = up.upscale(&Tensor::full([1, 3, 7, 5], 0.5)).unwrap();
            assert_eq!(out.shape(), Shape::new(1, 3, 28, 20), "{}", spec.name);
        }
    }

    #[test]
    fn registry_rejects_duplicates() {
        let mut r = UpscalerRegistry::builtin();
        assert!(r.get(BASELINE_NAME).unwrap().is_baseline());
        assert!(r.register(Box::new(LanczosBaseline::default())).is_err());
    }
}
