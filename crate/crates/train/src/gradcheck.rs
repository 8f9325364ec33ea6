//! Central finite-difference checks of analytic gradients.
//!
//! The numeric side runs forward passes on [`Precise`], an f64 backend written
//! independently of the f32 kernels, so rounding does not swamp the difference quotient.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtsr_core::tensor::BinaryOp;
use rtsr_core::{ActivationKind, Backend, ConvGeometry, Error, FixedKernel, Shape, Tensor};
use rtsr_zoo::ModelGraph;

use crate::error::{Result, TrainError};
use crate::tape::{Tape, Var};

pub const FD_STEP: f64 = 1e-3;

/// Denominator floor of the relative error, so that near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub points: usize,
    pub max_rel_err: f64,
    pub worst: (f64, f64),
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `grad` with central differences of `f` at `points` random entries of `x`.
pub fn check_scalar<F>(name: &str, x: &Tensor, grad: &Tensor, points: usize, seed: u64, f: F) -> Result<GradCheck>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if grad.shape() != x.shape() {
        return Err(TrainError::Tape(format!("{name}: gradient shape {} != input {}", grad.shape(), x.shape())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.min(x.numel());
    let mut report = GradCheck {
        name: name.to_string(),
        points: n,
        max_rel_err: 0.0,
        worst: (0.0, 0.0),
    };
    for i in sample(&mut rng, x.numel(), n) {
        let mut plus = x.clone();
        plus.data_mut()[i] = (x.data()[i] as f64 + FD_STEP) as f32;
        let mut minus = x.clone();
        minus.data_mut()[i] = (x.data()[i] as f64 - FD_STEP) as f32;
        let step = plus.data()[i] as f64 - minus.data()[i] as f64;
        let numeric = (f(&plus)? - f(&minus)?) / step;
        let analytic = grad.data()[i] as f64;
        let err = relative_error(analytic, numeric);
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = (analytic, numeric);
        }
    }
    Ok(report)
}

/// A differentiable computation that can run on any backend.
pub trait Probe {
    fn apply<B: Backend>(&self, b: &mut B, xs: &[B::Value]) -> rtsr_core::Result<B::Value>;
}

/// The individual ops of the model op set.
#[derive(Clone, Copy, Debug)]
pub enum OpProbe {
    /// Inputs: x, weight, optional bias.
    Conv(ConvGeometry),
    Act(ActivationKind),
    Shuffle(usize),
    Unshuffle(usize),
    Add,
    Mul,
    /// Concatenates both inputs and keeps `len` channels from `start`.
    ConcatSlice { start: usize, len: usize },
    /// Pads by `p`, then crops `m`.
    PadCrop { p: usize, m: usize },
    ScaleChannels,
    Fixed(FixedKernel),
    Repeat(usize),
    Nearest(usize),
}

impl Probe for OpProbe {
    fn apply<B: Backend>(&self, b: &mut B, xs: &[B::Value]) -> rtsr_core::Result<B::Value> {
        match *self {
            OpProbe::Conv(g) => b.conv2d(&xs[0], &xs[1], xs.get(2), g),
            OpProbe::Act(k) => b.activation(&xs[0], k),
            OpProbe::Shuffle(r) => b.pixel_shuffle(&xs[0], r),
            OpProbe::Unshuffle(r) => b.pixel_unshuffle(&xs[0], r),
            OpProbe::Add => b.binary(&xs[0], &xs[1], BinaryOp::Add),
            OpProbe::Mul => b.binary(&xs[0], &xs[1], BinaryOp::Mul),
            OpProbe::ConcatSlice { start, len } => {
                let c = b.concat_channels(xs)?;
                b.slice_channels(&c, start, len)
            }
            OpProbe::PadCrop { p, m } => {
                let y = b.pad_zero(&xs[0], p)?;
                b.crop(&y, m)
            }
            OpProbe::ScaleChannels => b.scale_channels(&xs[0], &xs[1]),
            OpProbe::Fixed(k) => b.fixed_filter(&xs[0], k, &xs[1]),
            OpProbe::Repeat(t) => b.repeat_channels(&xs[0], t),
            OpProbe::Nearest(r) => b.nearest_upsample(&xs[0], r),
        }
    }
}

fn project(y: &[f64], r: &Tensor) -> f64 {
    y.iter().zip(r.data()).map(|(&a, &b)| a * b as f64).sum()
}

/// Checks the gradient of every input through the projection `Σ r ⊙ probe(inputs)` with a fixed random `r`.
pub fn check_op<P: Probe>(name: &str, probe: &P, inputs: &[Tensor], points: usize, seed: u64) -> Result<Vec<GradCheck>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = probe.apply(&mut tape, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let r = Tensor::randn(tape.value(out).shape(), &mut rng);
    let grads = tape.backward(&[(out, r.clone())])?;
    let mut reports = Vec::new();
    for (k, x) in inputs.iter().enumerate() {
        let g = grads.of(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let f = |x: &Tensor| -> Result<f64> {
            let mut p = Precise;
            let vals: Vec<Exact> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| p.constant(if j == k { x.clone() } else { t.clone() }))
                .collect();
            Ok(project(&probe.apply(&mut p, &vals)?.data, &r))
        };
        reports.push(check_scalar(&format!("{name}[{k}]"), x, &g, points, seed + k as u64, f)?);
    }
    Ok(reports)
}

/// Checks parameter gradients of a whole model at `points` entries of each listed parameter.
pub fn check_model(model: &ModelGraph, input: &Tensor, names: &[&str], points: usize, seed: u64) -> Result<Vec<GradCheck>> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = model.forward(&mut tape, &x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
    let r = Tensor::randn(tape.value(y).shape(), &mut rng);
    let grads = tape.backward(&[(y, r.clone())])?;
    let mut reports = Vec::new();
    for (k, &name) in names.iter().enumerate() {
        let value = model
            .params()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| TrainError::Tape(format!("no parameter {name:?}")))?;
        let g = grads.param_or_zero(value);
        let value = value.clone();
        let f = |p: &Tensor| -> Result<f64> {
            let mut m = model.clone();
            m.set_param(name, p.clone())?;
            let mut b = Precise;
            let xv = b.constant(input.clone());
            Ok(project(&m.forward(&mut b, &xv)?.data, &r))
        };
        reports.push(check_scalar(name, &value, &g, points, seed + k as u64, f)?);
    }
    Ok(reports)
}

/// An f64 NCHW array.
#[derive(Clone, Debug, PartialEq)]
pub struct Exact {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Exact {
    fn zeros(shape: Shape) -> Self {
        Exact {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    fn build(shape: Shape, f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut out = Exact::zeros(shape);
        let mut i = 0;
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        out.data[i] = f(n, c, y, x);
                        i += 1;
                    }
                }
            }
        }
        out
    }
}

fn bad(op: &'static str, shape: Shape, reason: &str) -> Error {
    Error::invalid(op, shape, reason.to_string())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn activation(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Relu => x.max(0.0),
        ActivationKind::GeluTanhApprox => {
            0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
        }
        ActivationKind::Sigmoid => sigmoid(x),
        ActivationKind::Identity => x,
        ActivationKind::SigmoidCentered => sigmoid(x) - 0.5,
    }
}

/// Direct-loop f64 backend.
#[derive(Clone, Copy, Debug, Default)]
pub struct Precise;

impl Backend for Precise {
    type Value = Exact;

    fn constant(&mut self, t: Tensor) -> Exact {
        Exact {
            shape: t.shape(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn param(&mut self, t: &Tensor) -> Exact {
        self.constant(t.clone())
    }

    fn shape(&self, v: &Exact) -> Shape {
        v.shape
    }

    fn conv2d(&mut self, x: &Exact, w: &Exact, bias: Option<&Exact>, g: ConvGeometry) -> rtsr_core::Result<Exact> {
        let (s, ws) = (x.shape, w.shape);
        if g.groups == 0 || g.stride == 0 || s.c != ws.c * g.groups || ws.n % g.groups != 0 {
            return Err(bad("conv2d", s, "channel/group mismatch"));
        }
        let (ph, pw) = (s.h + 2 * g.padding, s.w + 2 * g.padding);
        if ph < ws.h || pw < ws.w {
            return Err(bad("conv2d", s, "kernel larger than padded input"));
        }
        let oh = (ph - ws.h) / g.stride + 1;
        let ow = (pw - ws.w) / g.stride + 1;
        let per_group = ws.n / g.groups;
        Ok(Exact::build(Shape::new(s.n, ws.n, oh, ow), |n, o, y, xo| {
            let group = o / per_group;
            let mut acc = bias.map_or(0.0, |b| b.data[o]);
            for ci in 0..ws.c {
                let c = group * ws.c + ci;
                for ky in 0..ws.h {
                    for kx in 0..ws.w {
                        let iy = (y * g.stride + ky) as isize - g.padding as isize;
                        let ix = (xo * g.stride + kx) as isize - g.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                            acc += w.get(o, ci, ky, kx) * x.get(n, c, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        }))
    }

    fn activation(&mut self, x: &Exact, kind: ActivationKind) -> rtsr_core::Result<Exact> {
        Ok(Exact {
            shape: x.shape,
            data: x.data.iter().map(|&v| activation(kind, v)).collect(),
        })
    }

    fn pixel_shuffle(&mut self, x: &Exact, r: usize) -> rtsr_core::Result<Exact> {
        let s = x.shape;
        if r == 0 || !s.c.is_multiple_of(r * r) {
            return Err(bad("pixel_shuffle", s, "channels not divisible"));
        }
        Ok(Exact::build(Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r), |n, c, y, xx| {
            x.get(n, c * r * r + (y % r) * r + xx % r, y / r, xx / r)
        }))
    }

    fn pixel_unshuffle(&mut self, x: &Exact, r: usize) -> rtsr_core::Result<Exact> {
        let s = x.shape;
        if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
            return Err(bad("pixel_unshuffle", s, "spatial dims not divisible"));
        }
        Ok(Exact::build(Shape::new(s.n, s.c * r * r, s.h / r, s.w / r), |n, c, y, xx| {
            let (base, sub) = (c / (r * r), c % (r * r));
            x.get(n, base, y * r + sub / r, xx * r + sub % r)
        }))
    }

    fn binary(&mut self, a: &Exact, b: &Exact, op: BinaryOp) -> rtsr_core::Result<Exact> {
        if a.shape != b.shape {
            return Err(Error::ShapeMismatch {
                op: "binary",
                left: a.shape,
                right: b.shape,
            });
        }
        let f = |(x, y): (&f64, &f64)| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Mul => x * y,
        };
        Ok(Exact {
            shape: a.shape,
            data: a.data.iter().zip(&b.data).map(f).collect(),
        })
    }

    fn concat_channels(&mut self, parts: &[Exact]) -> rtsr_core::Result<Exact> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?.shape;
        let c: usize = parts.iter().map(|p| p.shape.c).sum();
        let mut owner = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            if (p.shape.n, p.shape.h, p.shape.w) != (first.n, first.h, first.w) {
                return Err(bad("concat", p.shape, "spatial mismatch"));
            }
            owner.extend((0..p.shape.c).map(|ch| (i, ch)));
        }
        Ok(Exact::build(Shape::new(first.n, c, first.h, first.w), |n, ch, y, x| {
            let (i, local) = owner[ch];
            parts[i].get(n, local, y, x)
        }))
    }

    fn slice_channels(&mut self, x: &Exact, start: usize, len: usize) -> rtsr_core::Result<Exact> {
        let s = x.shape;
        if len == 0 || start + len > s.c {
            return Err(bad("slice", s, "range out of bounds"));
        }
        Ok(Exact::build(Shape::new(s.n, len, s.h, s.w), |n, c, y, xx| x.get(n, start + c, y, xx)))
    }

    fn pad_zero(&mut self, x: &Exact, p: usize) -> rtsr_core::Result<Exact> {
        let s = x.shape;
        Ok(Exact::build(Shape::new(s.n, s.c, s.h + 2 * p, s.w + 2 * p), |n, c, y, xx| {
            if y < p || xx < p || y >= s.h + p || xx >= s.w + p {
                0.0
            } else {
                x.get(n, c, y - p, xx - p)
            }
        }))
    }

    fn crop(&mut self, x: &Exact, m: usize) -> rtsr_core::Result<Exact> {
        let s = x.shape;
        if 2 * m >= s.h || 2 * m >= s.w {
            return Err(bad("crop", s, "margin too large"));
        }
        Ok(Exact::build(Shape::new(s.n, s.c, s.h - 2 * m, s.w - 2 * m), |n, c, y, xx| x.get(n, c, y + m, xx + m)))
    }

    fn scale_channels(&mut self, x: &Exact, scale: &Exact) -> rtsr_core::Result<Exact> {
        if scale.data.len() != x.shape.c {
            return Err(bad("scale_channels", scale.shape, "one scale per channel"));
        }
        Ok(Exact::build(x.shape, |n, c, y, xx| x.get(n, c, y, xx) * scale.data[c]))
    }

    fn fixed_filter(&mut self, x: &Exact, kind: FixedKernel, scale: &Exact) -> rtsr_core::Result<Exact> {
        let s = x.shape;
        if scale.data.len() != s.c || s.h < 3 || s.w < 3 {
            return Err(bad("fixed_filter", s, "bad scale or input too small"));
        }
        let taps = kind.taps();
        Ok(Exact::build(Shape::new(s.n, s.c, s.h - 2, s.w - 2), |n, c, y, xx| {
            let mut acc = 0.0;
            for (ky, row) in taps.iter().enumerate() {
                for (kx, &t) in row.iter().enumerate() {
                    acc += t as f64 * x.get(n, c, y + ky, xx + kx);
                }
            }
            acc * scale.data[c]
        }))
    }

    fn repeat_channels(&mut self, x: &Exact, times: usize) -> rtsr_core::Result<Exact> {
        let s = x.shape;
        if times == 0 {
            return Err(Error::InvalidArgument("repeat factor must be positive".into()));
        }
        Ok(Exact::build(Shape::new(s.n, s.c * times, s.h, s.w), |n, c, y, xx| x.get(n, c / times, y, xx)))
    }

    fn nearest_upsample(&mut self, x: &Exact, r: usize) -> rtsr_core::Result<Exact> {
        let s = x.shape;
        if r == 0 {
            return Err(Error::InvalidArgument("upsample factor must be positive".into()));
        }
        Ok(Exact::build(Shape::new(s.n, s.c, s.h * r, s.w * r), |n, c, y, xx| x.get(n, c, y / r, xx / r)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rtsr_core::Eager;

    /// The f64 backend agrees with the f32 kernels on a model forward pass.
    #[test]
    fn precise_backend_matches_eager() {
        let reg = rtsr_zoo::Registry::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for name in reg.names() {
            let model = rtsr_zoo::build(&reg.spec(name, None).unwrap(), rtsr_zoo::Mode::Train, 1).unwrap();
            let x = rtsr_zoo::graph::random_input(&model, 1, 12, &mut rng);
            let a = model.forward(&mut Eager, &x).unwrap();
            let mut p = Precise;
            let xv = p.constant(x.clone());
            let b = model.forward(&mut p, &xv).unwrap();
            let err = a.data().iter().zip(&b.data).map(|(&u, &v)| (u as f64 - v).abs()).fold(0.0, f64::max);
            assert!(err < 1e-3, "{name}: {err}");
        }
    }
}
