//! Dense NCHW `f32` tensors.
//!
//! Every feature map, image and weight in the crate is a [`Tensor`]. Tensors
//! are plain values: operations return new tensors and never mutate their
//! inputs.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a 4-D tensor in `(n, c, h, w)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn is_empty(&self) -> bool {
        self.numel() == 0
    }

    fn validate(&self) -> Result<()> {
        let zeros = self.dims().iter().filter(|&&d| d == 0).count();
        if zeros != 0 && zeros != 4 {
            return Err(Error::invalid(
                "tensor",
                *self,
                "dimensions may be zero only all together",
            ));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::invalid(
                "tensor",
                shape,
                format!("data length {} != {}", data.len(), shape.numel()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: impl Into<Shape>, value: f32) -> Self {
        let shape = shape.into();
        shape.validate().expect("invalid tensor shape");
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn empty() -> Self {
        Tensor {
            shape: Shape::new(0, 0, 0, 0),
            data: Vec::new(),
        }
    }

    /// Unit-normal samples.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Shape>, rng: &mut R) -> Self {
        let shape = shape.into();
        shape.validate().expect("invalid tensor shape");
        let data = (0..shape.numel())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Tensor { shape, data }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(
        shape: impl Into<Shape>,
        lo: f32,
        hi: f32,
        rng: &mut R,
    ) -> Self {
        let shape = shape.into();
        shape.validate().expect("invalid tensor shape");
        let data = (0..shape.numel())
            .map(|_| rng.random_range(lo..hi))
            .collect();
        Tensor { shape, data }
    }

    /// Per-channel vector stored in broadcast shape `(1, c, 1, 1)`.
    pub fn channel_vector(values: Vec<f32>) -> Self {
        let c = values.len();
        Tensor {
            shape: Shape::new(1, c, 1, 1),
            data: values,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous `h*w` slice for one `(n, c)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.expect_same(other, op)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    pub fn scale(&self, k: f32) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.expect_same(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Adds `other` into `self` in place.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// One batch item as a `(1, c, h, w)` tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let s = self.shape;
        let len = s.c * s.plane();
        Tensor {
            shape: Shape::new(1, s.c, s.h, s.w),
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack_batch of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            let f = first.shape;
            if (s.c, s.h, s.w) != (f.c, f.h, f.w) {
                return Err(Error::ShapeMismatch {
                    op: "stack_batch",
                    left: f,
                    right: s,
                });
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(n, first.shape.c, first.shape.h, first.shape.w), data)
    }
}

/// Elementwise binary operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

pub fn elementwise(a: &Tensor, b: &Tensor, op: BinaryOp) -> Result<Tensor> {
    match op {
        BinaryOp::Add => a.zip_map(b, "add", |x, y| x + y),
        BinaryOp::Mul => a.zip_map(b, "mul", |x, y| x * y),
    }
}

/// Stacks tensors along the channel axis in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let base = first.shape;
    let mut c_total = 0;
    for p in parts {
        let s = p.shape;
        if (s.n, s.h, s.w) != (base.n, base.h, base.w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: base,
                right: s,
            });
        }
        c_total += s.c;
    }
    let out_shape = Shape::new(base.n, c_total, base.h, base.w);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..base.n {
        for p in parts {
            let len = p.shape.c * p.shape.plane();
            data.extend_from_slice(&p.data[n * len..(n + 1) * len]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Channels `start..start + len`.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let s = x.shape;
    if start + len > s.c || len == 0 {
        return Err(Error::invalid(
            "slice_channels",
            s,
            format!("range {}..{} out of bounds", start, start + len),
        ));
    }
    let p = s.plane();
    let mut data = Vec::with_capacity(s.n * len * p);
    for n in 0..s.n {
        let base = (n * s.c + start) * p;
        data.extend_from_slice(&x.data[base..base + len * p]);
    }
    Tensor::from_vec(Shape::new(s.n, len, s.h, s.w), data)
}

/// Zero-pads both spatial axes by `p` on every side.
pub fn pad_zero(x: &Tensor, p: usize) -> Tensor {
    if p == 0 {
        return x.clone();
    }
    let s = x.shape;
    let (oh, ow) = (s.h + 2 * p, s.w + 2 * p);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                dst[(y + p) * ow + p..(y + p) * ow + p + s.w]
                    .copy_from_slice(&src[y * s.w..(y + 1) * s.w]);
            }
        }
    }
    out
}

/// Removes `m` pixels from every spatial border.
pub fn crop(x: &Tensor, m: usize) -> Result<Tensor> {
    if m == 0 {
        return Ok(x.clone());
    }
    let s = x.shape;
    if s.h <= 2 * m || s.w <= 2 * m {
        return Err(Error::EmptyOutput {
            op: "crop",
            reason: format!("cropping {m} from {s}"),
        });
    }
    let (oh, ow) = (s.h - 2 * m, s.w - 2 * m);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..oh {
                dst[y * ow..(y + 1) * ow]
                    .copy_from_slice(&src[(y + m) * s.w + m..(y + m) * s.w + m + ow]);
            }
        }
    }
    Ok(out)
}

/// Multiplies each channel by the matching entry of a `(1, c, 1, 1)` vector.
pub fn scale_channels(x: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let s = x.shape;
    if scale.numel() != s.c {
        return Err(Error::ShapeMismatch {
            op: "scale_channels",
            left: s,
            right: scale.shape,
        });
    }
    let mut out = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let k = scale.data[c];
            out.plane_mut(n, c).iter_mut().for_each(|v| *v *= k);
        }
    }
    Ok(out)
}

/// Repeats every channel `times` times contiguously: `[a, b] -> [a, a, .., b, b, ..]`.
pub fn repeat_channels(x: &Tensor, times: usize) -> Result<Tensor> {
    if times == 0 {
        return Err(Error::InvalidArgument("repeat factor must be positive".into()));
    }
    let s = x.shape;
    let mut data = Vec::with_capacity(s.numel() * times);
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            for _ in 0..times {
                data.extend_from_slice(plane);
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c * times, s.h, s.w), data)
}
