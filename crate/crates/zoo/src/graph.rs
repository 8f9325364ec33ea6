//! Executable model graphs in training (multi-branch) and deploy (fused) form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtsr_core::reparam::{lower_branch, BranchGraph};
use rtsr_core::{ActivationKind, Backend, ConvParams, Eager, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZooError};
use crate::spec::{Layer, ModelSpec, IMAGE_CHANNELS};
use crate::template::init_conv;

pub const SPAB_ACTIVATION: ActivationKind = ActivationKind::Relu;
pub const SPAB_ATTENTION: ActivationKind = ActivationKind::SigmoidCentered;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Deploy,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Deploy => "deploy",
        }
    }
}

/// A linear layer: a plain conv, or a fusible block in training form.
#[derive(Clone, Debug, PartialEq)]
pub enum Unit {
    Plain(ConvParams),
    Branch(BranchGraph),
}

impl Unit {
    fn forward<B: Backend>(&self, b: &mut B, x: &B::Value) -> Result<B::Value> {
        match self {
            Unit::Plain(p) => {
                let w = b.param(&p.weight);
                let bias = p.bias.as_ref().map(|t| b.param(t));
                Ok(b.conv2d(x, &w, bias.as_ref(), p.geometry)?)
            }
            Unit::Branch(g) => Ok(g.forward(b, x)?),
        }
    }

    fn fused(&self) -> Result<ConvParams> {
        match self {
            Unit::Plain(p) => Ok(p.clone()),
            Unit::Branch(g) => Ok(lower_branch(g)?),
        }
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            Unit::Plain(p) => {
                out.push((format!("{prefix}.weight"), &p.weight));
                if let Some(b) = &p.bias {
                    out.push((format!("{prefix}.bias"), b));
                }
            }
            Unit::Branch(g) => out.extend(g.params().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t))),
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        match self {
            Unit::Plain(p) => {
                out.push((format!("{prefix}.weight"), &mut p.weight));
                if let Some(b) = &mut p.bias {
                    out.push((format!("{prefix}.bias"), b));
                }
            }
            Unit::Branch(g) => out.extend(g.params_mut().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t))),
        }
    }

    fn strip_biases(&mut self) {
        match self {
            Unit::Plain(p) => p.bias = None,
            Unit::Branch(g) => g.strip_biases(),
        }
    }
}

/// Rows `0..3` become a centered identity on input channels `0..3`.
fn passthrough_rows(p: &mut ConvParams) -> std::result::Result<(), String> {
    let (kh, kw) = p.kernel();
    if p.geometry.stride != 1 || p.geometry.groups != 1 || p.in_channels() < IMAGE_CHANNELS || p.out_channels() < IMAGE_CHANNELS {
        return Err("passthrough needs a stride-1 dense conv with at least 3 channels".into());
    }
    for o in 0..IMAGE_CHANNELS {
        for i in 0..p.in_channels() {
            for y in 0..kh {
                for x in 0..kw {
                    p.weight.set(o, i, y, x, if o == i && y == kh / 2 && x == kw / 2 { 1.0 } else { 0.0 });
                }
            }
        }
        if let Some(b) = &mut p.bias {
            b.set(0, o, 0, 0, 0.0);
        }
    }
    Ok(())
}

fn zero_rows(p: &mut ConvParams) {
    let s = p.weight.shape();
    for o in 0..IMAGE_CHANNELS {
        p.weight.data_mut()[o * s.c * s.h * s.w..(o + 1) * s.c * s.h * s.w].fill(0.0);
        if let Some(b) = &mut p.bias {
            b.set(0, o, 0, 0, 0.0);
        }
    }
}

fn last_conv(g: &mut BranchGraph) -> Option<&mut ConvParams> {
    match g {
        BranchGraph::Conv(p) => Some(p),
        BranchGraph::Sequential(ch) => match ch.last_mut()? {
            BranchGraph::Conv(p) => Some(p),
            _ => None,
        },
        _ => None,
    }
}

impl Unit {
    fn passthrough(&mut self) -> std::result::Result<(), String> {
        match self {
            Unit::Plain(p) => passthrough_rows(p),
            Unit::Branch(BranchGraph::ParallelSum(branches)) => {
                let has_identity = branches.iter().any(|b| matches!(b, BranchGraph::Identity(_)));
                let mut carrier_set = has_identity;
                for b in branches.iter_mut().filter(|b| !matches!(b, BranchGraph::Identity(_))) {
                    if !carrier_set {
                        if let BranchGraph::Conv(p) = b {
                            passthrough_rows(p)?;
                            carrier_set = true;
                            continue;
                        }
                    }
                    zero_rows(last_conv(b).ok_or("branch does not end in a conv")?);
                }
                if carrier_set {
                    Ok(())
                } else {
                    Err("block has neither an identity nor a single-conv branch".into())
                }
            }
            Unit::Branch(other) => match other {
                BranchGraph::Conv(p) => passthrough_rows(p),
                _ => Err("unsupported block structure".into()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Linear(Unit),
    Act(ActivationKind),
    PixelShuffle(usize),
    PixelUnshuffle(usize),
    Spab(Box<[Unit; 3]>),
    AnchorResidual(usize),
    ConcatTaps(Vec<usize>),
    GlobalResidual(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    spec: ModelSpec,
    mode: Mode,
    nodes: Vec<Node>,
    tapped: Vec<bool>,
    input_multiple: usize,
}

/// Builds a graph with seeded Kaiming-uniform weights and zero biases.
///
/// Train mode instantiates block templates as branch graphs; deploy mode
/// allocates the fused 3×3 convs directly (to be filled from a weight file
/// or by [`ModelGraph::to_deploy`]).
pub fn build(spec: &ModelSpec, mode: Mode, seed: u64) -> Result<ModelGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tapped = vec![false; spec.layers.len()];
    let mut nodes = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let node = match layer {
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                bias,
            } => {
                let mut p = init_conv(*out_ch, *in_ch, *kernel, *bias, &mut rng);
                p.geometry.stride = *stride;
                Node::Linear(Unit::Plain(p))
            }
            Layer::RepBlock { block, bias } => Node::Linear(match mode {
                Mode::Train => Unit::Branch(block.instantiate(*bias, &mut rng)),
                Mode::Deploy => Unit::Plain(init_conv(
                    block.out_channels(),
                    block.in_channels(),
                    block.fused_kernel(),
                    *bias,
                    &mut rng,
                )),
            }),
            Layer::Activation { kind } => Node::Act(*kind),
            Layer::PixelShuffle { r } => Node::PixelShuffle(*r),
            Layer::PixelUnshuffle { r } => Node::PixelUnshuffle(*r),
            Layer::Spab { channels, bias, block } => {
                let mut unit = || match (mode, block) {
                    (Mode::Train, Some(t)) => Unit::Branch(t.instantiate(*bias, &mut rng)),
                    _ => Unit::Plain(init_conv(*channels, *channels, 3, *bias, &mut rng)),
                };
                Node::Spab(Box::new([unit(), unit(), unit()]))
            }
            Layer::AnchorResidual { r } => Node::AnchorResidual(*r),
            Layer::ConcatTaps { taps } => {
                for &t in taps {
                    tapped[t] = true;
                }
                Node::ConcatTaps(taps.clone())
            }
            Layer::GlobalResidual => Node::GlobalResidual(spec.scale),
        };
        nodes.push(node);
    }
    Ok(ModelGraph {
        spec: spec.clone(),
        mode,
        nodes,
        tapped,
        input_multiple: spec.input_multiple(),
    })
}

/// Channel-major repetition of a 3-channel image, `r²` copies per channel.
pub fn anchor_residual(lr_img: &Tensor, r: usize) -> Result<Tensor> {
    if lr_img.shape().c != IMAGE_CHANNELS {
        return Err(rtsr_core::Error::InvalidShape {
            op: "anchor_residual",
            shape: lr_img.shape(),
            reason: "expected 3 channels".into(),
        }
        .into());
    }
    Ok(rtsr_core::tensor::repeat_channels(lr_img, r * r)?)
}

fn spab<B: Backend>(b: &mut B, o: &B::Value, convs: &[Unit; 3], act: ActivationKind, attn: ActivationKind) -> Result<B::Value> {
    let h1 = convs[0].forward(b, o)?;
    let h1 = b.activation(&h1, act)?;
    let h2 = convs[1].forward(b, &h1)?;
    let h2 = b.activation(&h2, act)?;
    let h = convs[2].forward(b, &h2)?;
    let u = b.add(o, &h)?;
    let v = b.activation(&h, attn)?;
    Ok(b.mul(&u, &v)?)
}

/// `(O + H) ⊙ σ_a(H)` with `H = W3 ⊗ σ(W2 ⊗ σ(W1 ⊗ O))`.
pub fn spab_forward(
    o_prev: &Tensor,
    weights: &[ConvParams; 3],
    act: ActivationKind,
    attn: ActivationKind,
) -> Result<Tensor> {
    let c = o_prev.shape().c;
    for (i, w) in weights.iter().enumerate() {
        if w.in_channels() != c || w.out_channels() != c {
            return Err(ZooError::layer(
                i,
                format!("spab conv must map {c}->{c}, got {}->{}", w.in_channels(), w.out_channels()),
            ));
        }
    }
    let units = [
        Unit::Plain(weights[0].clone()),
        Unit::Plain(weights[1].clone()),
        Unit::Plain(weights[2].clone()),
    ];
    spab(&mut Eager, o_prev, &units, act, attn)
}

impl ModelGraph {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn scale(&self) -> usize {
        self.spec.scale
    }

    pub fn input_multiple(&self) -> usize {
        self.input_multiple
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::Value) -> Result<B::Value> {
        Ok(self.forward_with_feature(b, x, None)?.0)
    }

    /// Forward pass that also returns the output of layer `feature` when requested.
    pub fn forward_with_feature<B: Backend>(
        &self,
        b: &mut B,
        x: &B::Value,
        feature: Option<usize>,
    ) -> Result<(B::Value, Option<B::Value>)> {
        let s = b.shape(x);
        let m = self.input_multiple;
        if s.c != IMAGE_CHANNELS || s.h == 0 || s.w == 0 || s.h % m != 0 || s.w % m != 0 {
            return Err(rtsr_core::Error::InvalidShape {
                op: "model forward",
                shape: s,
                reason: format!("expected 3 channels and spatial dims divisible by {m}"),
            }
            .into());
        }
        let mut taps: Vec<Option<B::Value>> = vec![None; self.nodes.len()];
        let mut feat = None;
        let mut cur = x.clone();
        for (i, node) in self.nodes.iter().enumerate() {
            cur = self.step(b, node, x, cur, &taps).map_err(|e| match e {
                ZooError::Core(c) => ZooError::layer(i, c.to_string()),
                other => other,
            })?;
            if self.tapped[i] {
                taps[i] = Some(cur.clone());
            }
            if feature == Some(i) {
                feat = Some(cur.clone());
            }
        }
        Ok((cur, feat))
    }

    fn step<B: Backend>(
        &self,
        b: &mut B,
        node: &Node,
        input: &B::Value,
        cur: B::Value,
        taps: &[Option<B::Value>],
    ) -> Result<B::Value> {
        Ok(match node {
            Node::Linear(u) => u.forward(b, &cur)?,
            Node::Act(kind) => b.activation(&cur, *kind)?,
            Node::PixelShuffle(r) => b.pixel_shuffle(&cur, *r)?,
            Node::PixelUnshuffle(r) => b.pixel_unshuffle(&cur, *r)?,
            Node::Spab(units) => spab(b, &cur, units, SPAB_ACTIVATION, SPAB_ATTENTION)?,
            Node::AnchorResidual(r) => {
                let anchor = b.repeat_channels(input, r * r)?;
                b.add(&cur, &anchor)?
            }
            Node::ConcatTaps(indices) => {
                let mut parts: Vec<B::Value> = indices
                    .iter()
                    .map(|&t| taps[t].clone().expect("tap recorded by build"))
                    .collect();
                parts.push(cur);
                b.concat_channels(&parts)?
            }
            Node::GlobalResidual(scale) => {
                let up = b.nearest_upsample(input, *scale)?;
                b.add(&cur, &up)?
            }
        })
    }

    /// Eager inference on a tensor.
    pub fn run(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(&mut Eager, x)
    }

    /// Fuses every multi-branch block into a single conv.
    pub fn to_deploy(&self) -> Result<ModelGraph> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let wrap = |e: ZooError| match e {
                ZooError::Core(c) => ZooError::layer(i, c.to_string()),
                other => other,
            };
            nodes.push(match node {
                Node::Linear(u) => Node::Linear(Unit::Plain(u.fused().map_err(wrap)?)),
                Node::Spab(units) => {
                    let [a, b, c] = units.as_ref();
                    Node::Spab(Box::new([
                        Unit::Plain(a.fused().map_err(wrap)?),
                        Unit::Plain(b.fused().map_err(wrap)?),
                        Unit::Plain(c.fused().map_err(wrap)?),
                    ]))
                }
                other => other.clone(),
            });
        }
        Ok(ModelGraph {
            mode: Mode::Deploy,
            nodes,
            ..self.clone()
        })
    }

    /// True when no node carries branch structure.
    pub fn is_fused(&self) -> bool {
        self.nodes.iter().all(|n| match n {
            Node::Linear(u) => matches!(u, Unit::Plain(_)),
            Node::Spab(units) => units.iter().all(|u| matches!(u, Unit::Plain(_))),
            _ => true,
        })
    }

    /// Number of conv layers the deploy graph executes.
    pub fn conv_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Linear(_) => 1,
                Node::Spab(_) => 3,
                _ => 0,
            })
            .sum()
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Linear(u) => u.collect(&format!("layers.{i}"), &mut out),
                Node::Spab(units) => {
                    for (j, u) in units.iter().enumerate() {
                        u.collect(&format!("layers.{i}.conv{}", j + 1), &mut out);
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            match node {
                Node::Linear(u) => u.collect_mut(&format!("layers.{i}"), &mut out),
                Node::Spab(units) => {
                    for (j, u) in units.iter_mut().enumerate() {
                        u.collect_mut(&format!("layers.{i}.conv{}", j + 1), &mut out);
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces the named tensor; the shape must match.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let mut params = self.params_mut();
        let slot = params
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| ZooError::UnknownParam(name.to_string()))?;
        if slot.1.shape() != value.shape() {
            return Err(rtsr_core::Error::ShapeMismatch {
                op: "set_param",
                left: slot.1.shape(),
                right: value.shape(),
            }
            .into());
        }
        *slot.1 = value;
        Ok(())
    }

    /// Starts a plain chain (conv, ReLU, ..., conv, shuffle) at bilinear upsampling.
    ///
    /// Feature channels 0..3 carry the input image unchanged, which ReLU keeps
    /// since pixels are non-negative; the head reads only those channels with
    /// bilinear weights. All other head weights start at zero, so the remaining
    /// channels learn a correction on top of the interpolation.
    pub fn anchor_bilinear(&mut self) -> Result<()> {
        let fail = |reason: String| ZooError::Spec(format!("{} cannot be anchored: {reason}", self.spec.name));
        let n = self.nodes.len();
        let r = match self.nodes.last() {
            Some(Node::PixelShuffle(r)) if *r == self.spec.scale => *r,
            _ => return Err(fail("expected a final pixel shuffle by the model scale".into())),
        };
        let linear: Vec<usize> = (0..n).filter(|&i| matches!(self.nodes[i], Node::Linear(_))).collect();
        if linear.len() < 2 || linear[0] != 0 || *linear.last().unwrap() != n - 2 {
            return Err(fail("expected a conv chain ending in the head conv".into()));
        }
        for node in &self.nodes[..n - 1] {
            match node {
                Node::Linear(_) | Node::Act(ActivationKind::Relu) | Node::Act(ActivationKind::Identity) => {}
                other => return Err(fail(format!("unsupported node {other:?}"))),
            }
        }
        for &i in &linear[..linear.len() - 1] {
            if let Node::Linear(u) = &mut self.nodes[i] {
                u.passthrough().map_err(|e| fail(format!("layer {i}: {e}")))?;
            }
        }
        let Node::Linear(Unit::Plain(head)) = &mut self.nodes[n - 2] else {
            return Err(fail("head must be a plain conv".into()));
        };
        let (kh, kw) = head.kernel();
        if (kh, kw) != (3, 3) || head.out_channels() != IMAGE_CHANNELS * r * r || head.in_channels() < IMAGE_CHANNELS {
            return Err(fail(format!("head must be 3x3 with {} outputs", IMAGE_CHANNELS * r * r)));
        }
        // sub-pixel d sits at offset (d + 0.5) / r - 0.5 from its LR pixel, within half a pixel
        let taps = |d: usize| -> [f32; 3] {
            let u = (d as f32 + 0.5) / r as f32 - 0.5;
            if u < 0.0 {
                [-u, 1.0 + u, 0.0]
            } else {
                [0.0, 1.0 - u, u]
            }
        };
        head.weight.data_mut().fill(0.0);
        if let Some(b) = &mut head.bias {
            b.data_mut().fill(0.0);
        }
        for c in 0..IMAGE_CHANNELS {
            for dy in 0..r {
                for dx in 0..r {
                    let o = c * r * r + dy * r + dx;
                    for y in 0..3 {
                        for x in 0..3 {
                            head.weight.set(o, c, y, x, taps(dy)[y] * taps(dx)[x]);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Drops every conv bias and clears the spec's bias flags.
    pub fn strip_biases(&mut self) {
        for node in &mut self.nodes {
            match node {
                Node::Linear(u) => u.strip_biases(),
                Node::Spab(units) => units.iter_mut().for_each(Unit::strip_biases),
                _ => {}
            }
        }
        self.spec.strip_bias_flags();
    }

    /// Adds `N(0, std²)` noise to every parameter (used to exercise non-trivial biases and scales).
    pub fn perturb(&mut self, seed: u64, std: f32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, t) in self.params_mut() {
            let noise = Tensor::randn(t.shape(), &mut rng);
            for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
                *v += std * n;
            }
        }
    }

    /// Zeroes the last linear layer's weights and bias.
    pub fn zero_last_linear(&mut self) {
        if let Some(Node::Linear(u)) = self.nodes.iter_mut().rev().find(|n| matches!(n, Node::Linear(_))) {
            let mut params = Vec::new();
            u.collect_mut("", &mut params);
            for (_, t) in params {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Output shape for an input of the given spatial size.
    pub fn output_shape(&self, n: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, IMAGE_CHANNELS, h * self.spec.scale, w * self.spec.scale)
    }
}

/// Random input of a valid size for `graph`, values uniform in [0, 1).
pub fn random_input<R: Rng + ?Sized>(graph: &ModelGraph, n: usize, side: usize, rng: &mut R) -> Tensor {
    let m = graph.input_multiple();
    let side = side.div_ceil(m) * m;
    Tensor::rand_uniform(Shape::new(n, IMAGE_CHANNELS, side, side), 0.0, 1.0, rng)
}
