//! Recording backend and reverse-mode gradients.

use std::collections::HashMap;

use rtsr_core::activation::activation_apply;
use rtsr_core::conv::{conv2d_backward_input, conv2d_backward_params, conv2d_raw};
use rtsr_core::filters::fixed_filter_valid;
use rtsr_core::resample::nearest_upsample;
use rtsr_core::shuffle::{pixel_shuffle, pixel_unshuffle};
use rtsr_core::tensor::{self, BinaryOp};
use rtsr_core::{ActivationKind, Backend, ConvGeometry, FixedKernel, Shape, Tensor};

use crate::error::{Result, TrainError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, g: ConvGeometry },
    Act { x: Var, kind: ActivationKind },
    Shuffle { x: Var, r: usize },
    Unshuffle { x: Var, r: usize },
    Binary { a: Var, b: Var, op: BinaryOp },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    Pad { x: Var, p: usize },
    Crop { x: Var, m: usize },
    ScaleChannels { x: Var, s: Var },
    Fixed { x: Var, kind: FixedKernel, s: Var },
    Repeat { x: Var, times: usize },
    Nearest { x: Var, r: usize },
}

struct Record {
    value: Tensor,
    op: Op,
}

/// Records every op with its output. Parameters are keyed by the address of the
/// borrowed tensor, so a model must not move while its tape is alive.
#[derive(Default)]
pub struct Tape {
    records: Vec<Record>,
    params: HashMap<usize, Var>,
}

/// Gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<usize, Var>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a parameter recorded via [`Backend::param`]; `None` if it did not influence the output.
    pub fn of_param(&self, t: &Tensor) -> Option<&Tensor> {
        self.params.get(&key(t)).and_then(|&v| self.of(v))
    }

    /// Gradient of `t`, zeros when unreachable.
    pub fn param_or_zero(&self, t: &Tensor) -> Tensor {
        self.of_param(t).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))
    }
}

fn key(t: &Tensor) -> usize {
    t as *const Tensor as usize
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g)?,
        None => *slot = Some(g),
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.records.push(Record { value, op });
        Var(self.records.len() - 1)
    }

    /// Reverse pass from one or more outputs, each seeded with its upstream gradient.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        if self.records.is_empty() {
            return Err(TrainError::Tape("backward called before any forward op was recorded".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.records.len()];
        let mut last = 0;
        for (v, g) in seeds {
            let rec = self
                .records
                .get(v.0)
                .ok_or_else(|| TrainError::Tape(format!("unknown output {v:?}")))?;
            rec.value.expect_same(g, "backward seed")?;
            accumulate(&mut grads[v.0], g.clone())?;
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.records[v.0].value;
        match &self.records[i].op {
            Op::Leaf => {}
            Op::Conv { x, w, b, g: geom } => {
                let dx = conv2d_backward_input(g, val(*w), val(*x).shape(), *geom)?;
                let (dw, db) = conv2d_backward_params(g, val(*x), val(*w).shape(), *geom)?;
                accumulate(&mut grads[x.0], dx)?;
                accumulate(&mut grads[w.0], dw)?;
                if let Some(b) = b {
                    accumulate(&mut grads[b.0], db.reshape(val(*b).shape())?)?;
                }
            }
            Op::Act { x, kind } => {
                let dx = val(*x).zip_map(g, "activation backward", |xv, gv| gv * kind.derivative(xv))?;
                accumulate(&mut grads[x.0], dx)?;
            }
            Op::Shuffle { x, r } => accumulate(&mut grads[x.0], pixel_unshuffle(g, *r)?)?,
            Op::Unshuffle { x, r } => accumulate(&mut grads[x.0], pixel_shuffle(g, *r)?)?,
            Op::Binary { a, b, op } => match op {
                BinaryOp::Add => {
                    accumulate(&mut grads[a.0], g.clone())?;
                    accumulate(&mut grads[b.0], g.clone())?;
                }
                BinaryOp::Mul => {
                    let da = tensor::elementwise(g, val(*b), BinaryOp::Mul)?;
                    let db = tensor::elementwise(g, val(*a), BinaryOp::Mul)?;
                    accumulate(&mut grads[a.0], da)?;
                    accumulate(&mut grads[b.0], db)?;
                }
            },
            Op::Concat { parts } => {
                let mut start = 0;
                for p in parts {
                    let c = val(*p).shape().c;
                    accumulate(&mut grads[p.0], tensor::slice_channels(g, start, c)?)?;
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let xs = val(*x).shape();
                let gs = g.shape();
                let mut dx = Tensor::zeros(xs);
                for n in 0..xs.n {
                    for c in 0..gs.c {
                        dx.plane_mut(n, start + c).copy_from_slice(g.plane(n, c));
                    }
                }
                accumulate(&mut grads[x.0], dx)?;
            }
            Op::Pad { x, p } => accumulate(&mut grads[x.0], tensor::crop(g, *p)?)?,
            Op::Crop { x, m } => accumulate(&mut grads[x.0], tensor::pad_zero(g, *m))?,
            Op::ScaleChannels { x, s } => {
                let dx = tensor::scale_channels(g, val(*s))?;
                let xs = val(*x);
                let sh = xs.shape();
                let mut ds = vec![0.0f64; sh.c];
                for n in 0..sh.n {
                    for (c, acc) in ds.iter_mut().enumerate() {
                        *acc += xs
                            .plane(n, c)
                            .iter()
                            .zip(g.plane(n, c))
                            .map(|(&a, &b)| a as f64 * b as f64)
                            .sum::<f64>();
                    }
                }
                accumulate(&mut grads[x.0], dx)?;
                let ds = Tensor::channel_vector(ds.into_iter().map(|v| v as f32).collect());
                accumulate(&mut grads[s.0], ds.reshape(val(*s).shape())?)?;
            }
            Op::Fixed { x, kind, s } => {
                let xs = val(*x);
                let c = xs.shape().c;
                let geom = ConvGeometry {
                    stride: 1,
                    padding: 0,
                    groups: c,
                };
                let dx = conv2d_backward_input(g, &kind.depthwise_weight(val(*s)), xs.shape(), geom)?;
                let unit = fixed_filter_valid(xs, *kind, &Tensor::ones(Shape::new(1, c, 1, 1)))?;
                let mut ds = vec![0.0f64; c];
                for n in 0..g.shape().n {
                    for (ch, acc) in ds.iter_mut().enumerate() {
                        *acc += unit
                            .plane(n, ch)
                            .iter()
                            .zip(g.plane(n, ch))
                            .map(|(&a, &b)| a as f64 * b as f64)
                            .sum::<f64>();
                    }
                }
                accumulate(&mut grads[x.0], dx)?;
                let ds = Tensor::channel_vector(ds.into_iter().map(|v| v as f32).collect());
                accumulate(&mut grads[s.0], ds.reshape(val(*s).shape())?)?;
            }
            Op::Repeat { x, times } => {
                let xs = val(*x).shape();
                let mut dx = Tensor::zeros(xs);
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let dst = dx.plane_mut(n, c);
                        for t in 0..*times {
                            for (d, &v) in dst.iter_mut().zip(g.plane(n, c * times + t)) {
                                *d += v;
                            }
                        }
                    }
                }
                accumulate(&mut grads[x.0], dx)?;
            }
            Op::Nearest { x, r } => {
                let xs = val(*x).shape();
                let mut dx = Tensor::zeros(xs);
                let gw = xs.w * r;
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let src = g.plane(n, c);
                        let dst = dx.plane_mut(n, c);
                        for (i, &v) in src.iter().enumerate() {
                            let (y, xx) = (i / gw, i % gw);
                            dst[(y / r) * xs.w + xx / r] += v;
                        }
                    }
                }
                accumulate(&mut grads[x.0], dx)?;
            }
        }
        Ok(())
    }
}

impl Backend for Tape {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn param(&mut self, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&key(t)) {
            return v;
        }
        let v = self.push(t.clone(), Op::Leaf);
        self.params.insert(key(t), v);
        v
    }

    fn shape(&self, v: &Var) -> Shape {
        self.value(*v).shape()
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, g: ConvGeometry) -> rtsr_core::Result<Var> {
        let out = conv2d_raw(self.value(*x), self.value(*w), b.map(|b| self.value(*b)), g)?;
        Ok(self.push(
            out,
            Op::Conv {
                x: *x,
                w: *w,
                b: b.copied(),
                g,
            },
        ))
    }

    fn activation(&mut self, x: &Var, kind: ActivationKind) -> rtsr_core::Result<Var> {
        let out = activation_apply(self.value(*x), kind);
        Ok(self.push(out, Op::Act { x: *x, kind }))
    }

    fn pixel_shuffle(&mut self, x: &Var, r: usize) -> rtsr_core::Result<Var> {
        let out = pixel_shuffle(self.value(*x), r)?;
        Ok(self.push(out, Op::Shuffle { x: *x, r }))
    }

    fn pixel_unshuffle(&mut self, x: &Var, r: usize) -> rtsr_core::Result<Var> {
        let out = pixel_unshuffle(self.value(*x), r)?;
        Ok(self.push(out, Op::Unshuffle { x: *x, r }))
    }

    fn binary(&mut self, a: &Var, b: &Var, op: BinaryOp) -> rtsr_core::Result<Var> {
        let out = tensor::elementwise(self.value(*a), self.value(*b), op)?;
        Ok(self.push(out, Op::Binary { a: *a, b: *b, op }))
    }

    fn concat_channels(&mut self, parts: &[Var]) -> rtsr_core::Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = tensor::concat_channels(&refs)?;
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }))
    }

    fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> rtsr_core::Result<Var> {
        let out = tensor::slice_channels(self.value(*x), start, len)?;
        Ok(self.push(out, Op::Slice { x: *x, start }))
    }

    fn pad_zero(&mut self, x: &Var, p: usize) -> rtsr_core::Result<Var> {
        if p == 0 {
            return Ok(*x);
        }
        let out = tensor::pad_zero(self.value(*x), p);
        Ok(self.push(out, Op::Pad { x: *x, p }))
    }

    fn crop(&mut self, x: &Var, m: usize) -> rtsr_core::Result<Var> {
        if m == 0 {
            return Ok(*x);
        }
        let out = tensor::crop(self.value(*x), m)?;
        Ok(self.push(out, Op::Crop { x: *x, m }))
    }

    fn scale_channels(&mut self, x: &Var, s: &Var) -> rtsr_core::Result<Var> {
        let out = tensor::scale_channels(self.value(*x), self.value(*s))?;
        Ok(self.push(out, Op::ScaleChannels { x: *x, s: *s }))
    }

    fn fixed_filter(&mut self, x: &Var, kind: FixedKernel, s: &Var) -> rtsr_core::Result<Var> {
        let out = fixed_filter_valid(self.value(*x), kind, self.value(*s))?;
        Ok(self.push(out, Op::Fixed { x: *x, kind, s: *s }))
    }

    fn repeat_channels(&mut self, x: &Var, times: usize) -> rtsr_core::Result<Var> {
        let out = tensor::repeat_channels(self.value(*x), times)?;
        Ok(self.push(out, Op::Repeat { x: *x, times }))
    }

    fn nearest_upsample(&mut self, x: &Var, r: usize) -> rtsr_core::Result<Var> {
        let out = nearest_upsample(self.value(*x), r)?;
        Ok(self.push(out, Op::Nearest { x: *x, r }))
    }
}
