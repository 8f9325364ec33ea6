//! Training-time multi-branch blocks and their lowering to a single convolution.
//!
//! A [`BranchGraph`] describes a linear block: convolutions, identities,
//! per-channel scales and fixed edge stencils combined in sequence or summed
//! in parallel. Because every node is linear (affine with biases), the whole
//! block collapses into one convolution; [`lower_branch`] computes it and
//! [`verify_equivalence`] certifies the result numerically.
//!
//! Spatial semantics: a block behaves like a single "same" convolution over
//! the zero-padded input. Its forward pass pads the input once by the block's
//! total halo and then evaluates every node unpadded, so intermediate border
//! values (for example the bias of a leading 1×1 conv) match what the fused
//! kernel sees.

mod fuse;
mod verify;

pub use fuse::{dirac, fuse_dual_stream, fuse_parallel_sum, fuse_sequential, lower_branch, pad_kernel, strip_bias};
pub use verify::{verify_equivalence, EquivalenceReport};

use crate::backend::Backend;
use crate::conv::{ConvGeometry, ConvParams};
use crate::error::{Error, Result};
use crate::filters::FixedKernel;
use crate::tensor::Tensor;

/// Two-stream block: `[out_b; out_r] = [[K_b, K_r2b], [K_b2r, K_r]] ⋆ [x_b; x_r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualStream {
    /// backbone → backbone
    pub backbone: ConvParams,
    /// residual → backbone
    pub residual_to_backbone: ConvParams,
    /// backbone → residual
    pub backbone_to_residual: ConvParams,
    /// residual → residual
    pub residual: ConvParams,
}

impl DualStream {
    pub fn backbone_channels(&self) -> usize {
        self.backbone.out_channels()
    }

    pub fn residual_channels(&self) -> usize {
        self.residual.out_channels()
    }

    fn convs(&self) -> [&ConvParams; 4] {
        [
            &self.backbone,
            &self.residual_to_backbone,
            &self.backbone_to_residual,
            &self.residual,
        ]
    }

    fn convs_mut(&mut self) -> [&mut ConvParams; 4] {
        [
            &mut self.backbone,
            &mut self.residual_to_backbone,
            &mut self.backbone_to_residual,
            &mut self.residual,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (cb, cr) = (self.backbone_channels(), self.residual_channels());
        let expect = [(cb, cb), (cb, cr), (cr, cb), (cr, cr)];
        let names = ["K_b", "K_r2b", "K_b2r", "K_r"];
        for ((conv, (o, i)), name) in self.convs().iter().zip(expect).zip(names) {
            validate_leaf(conv)?;
            if conv.out_channels() != o || conv.in_channels() != i {
                return Err(Error::Unfusible(format!(
                    "dual stream block {name} is {}->{}, expected {i}->{o}",
                    conv.in_channels(),
                    conv.out_channels()
                )));
            }
        }
        Ok(())
    }

    fn halo(&self) -> usize {
        self.convs().iter().map(|c| c.kernel().0 / 2).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BranchGraph {
    Conv(ConvParams),
    Sequential(Vec<BranchGraph>),
    ParallelSum(Vec<BranchGraph>),
    Identity(usize),
    /// Per-channel scale, stored as a `(1, c, 1, 1)` tensor.
    ChannelScale(Tensor),
    /// Depthwise fixed stencil with a learnable per-channel scale.
    FixedFilter { kind: FixedKernel, scale: Tensor },
    DualStream(Box<DualStream>),
}

fn validate_leaf(p: &ConvParams) -> Result<()> {
    p.validate()?;
    let (kh, kw) = p.kernel();
    let g = p.geometry;
    if kh != kw || kh % 2 == 0 || g.stride != 1 || g.groups != 1 || g.padding != kh / 2 {
        return Err(Error::Unfusible(format!(
            "branch conv must be a stride-1 'same' odd square conv with groups=1, got {kh}x{kw} {g:?}"
        )));
    }
    Ok(())
}

impl BranchGraph {
    pub fn in_channels(&self) -> usize {
        match self {
            BranchGraph::Conv(p) => p.in_channels(),
            BranchGraph::Sequential(ch) => ch.first().map_or(0, BranchGraph::in_channels),
            BranchGraph::ParallelSum(br) => br.first().map_or(0, BranchGraph::in_channels),
            BranchGraph::Identity(c) => *c,
            BranchGraph::ChannelScale(s) => s.numel(),
            BranchGraph::FixedFilter { scale, .. } => scale.numel(),
            BranchGraph::DualStream(ds) => ds.backbone_channels() + ds.residual_channels(),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            BranchGraph::Conv(p) => p.out_channels(),
            BranchGraph::Sequential(ch) => ch.last().map_or(0, BranchGraph::out_channels),
            BranchGraph::ParallelSum(br) => br.first().map_or(0, BranchGraph::out_channels),
            other => other.in_channels(),
        }
    }

    /// Border the block reads beyond each output pixel; a fused kernel is `2*halo + 1` wide.
    pub fn halo(&self) -> usize {
        match self {
            BranchGraph::Conv(p) => p.kernel().0 / 2,
            BranchGraph::Sequential(ch) => ch.iter().map(BranchGraph::halo).sum(),
            BranchGraph::ParallelSum(br) => br.iter().map(BranchGraph::halo).max().unwrap_or(0),
            BranchGraph::Identity(_) | BranchGraph::ChannelScale(_) => 0,
            BranchGraph::FixedFilter { .. } => 1,
            BranchGraph::DualStream(ds) => ds.halo(),
        }
    }

    /// Structural checks: channel agreement and leaf geometry.
    pub fn validate(&self) -> Result<()> {
        match self {
            BranchGraph::Conv(p) => validate_leaf(p),
            BranchGraph::Sequential(ch) => {
                if ch.is_empty() {
                    return Err(Error::Unfusible("empty sequential".into()));
                }
                for c in ch {
                    c.validate()?;
                }
                for (i, pair) in ch.windows(2).enumerate() {
                    if pair[0].out_channels() != pair[1].in_channels() {
                        return Err(Error::Unfusible(format!(
                            "sequential stage {i} emits {} channels but stage {} expects {}",
                            pair[0].out_channels(),
                            i + 1,
                            pair[1].in_channels()
                        )));
                    }
                }
                Ok(())
            }
            BranchGraph::ParallelSum(br) => {
                let first = br.first().ok_or_else(|| Error::Unfusible("empty parallel sum".into()))?;
                for (i, b) in br.iter().enumerate() {
                    b.validate()?;
                    if b.in_channels() != first.in_channels() || b.out_channels() != first.out_channels() {
                        return Err(Error::Unfusible(format!(
                            "parallel branch {i} is {}->{}, branch 0 is {}->{}",
                            b.in_channels(),
                            b.out_channels(),
                            first.in_channels(),
                            first.out_channels()
                        )));
                    }
                }
                Ok(())
            }
            BranchGraph::Identity(c) => {
                if *c == 0 {
                    Err(Error::Unfusible("identity over zero channels".into()))
                } else {
                    Ok(())
                }
            }
            BranchGraph::ChannelScale(s) | BranchGraph::FixedFilter { scale: s, .. } => {
                if s.numel() == 0 {
                    Err(Error::Unfusible("empty channel scale".into()))
                } else {
                    Ok(())
                }
            }
            BranchGraph::DualStream(ds) => ds.validate(),
        }
    }

    /// Same-size forward pass over the zero-padded input.
    pub fn forward<B: Backend>(&self, backend: &mut B, x: &B::Value) -> Result<B::Value> {
        let padded = backend.pad_zero(x, self.halo())?;
        self.forward_valid(backend, &padded)
    }

    /// Unpadded evaluation; the output is `halo` pixels smaller on every side.
    pub fn forward_valid<B: Backend>(&self, backend: &mut B, x: &B::Value) -> Result<B::Value> {
        match self {
            BranchGraph::Conv(p) => conv_valid(backend, p, x),
            BranchGraph::Identity(_) => Ok(x.clone()),
            BranchGraph::ChannelScale(s) => {
                let s = backend.param(s);
                backend.scale_channels(x, &s)
            }
            BranchGraph::FixedFilter { kind, scale } => {
                let s = backend.param(scale);
                backend.fixed_filter(x, *kind, &s)
            }
            BranchGraph::Sequential(children) => {
                let mut cur = x.clone();
                for child in children {
                    cur = child.forward_valid(backend, &cur)?;
                }
                Ok(cur)
            }
            BranchGraph::ParallelSum(branches) => {
                let halo = self.halo();
                let mut acc: Option<B::Value> = None;
                for br in branches {
                    let input = backend.crop(x, halo - br.halo())?;
                    let y = br.forward_valid(backend, &input)?;
                    acc = Some(match acc {
                        None => y,
                        Some(a) => backend.add(&a, &y)?,
                    });
                }
                acc.ok_or_else(|| Error::Unfusible("empty parallel sum".into()))
            }
            BranchGraph::DualStream(ds) => {
                let halo = ds.halo();
                let (cb, cr) = (ds.backbone_channels(), ds.residual_channels());
                let xb = backend.slice_channels(x, 0, cb)?;
                let xr = backend.slice_channels(x, cb, cr)?;
                let run = |backend: &mut B, p: &ConvParams, input: &B::Value| -> Result<B::Value> {
                    let cropped = backend.crop(input, halo - p.kernel().0 / 2)?;
                    conv_valid(backend, p, &cropped)
                };
                let bb = run(backend, &ds.backbone, &xb)?;
                let rb = run(backend, &ds.residual_to_backbone, &xr)?;
                let br = run(backend, &ds.backbone_to_residual, &xb)?;
                let rr = run(backend, &ds.residual, &xr)?;
                let out_b = backend.add(&bb, &rb)?;
                let out_r = backend.add(&br, &rr)?;
                backend.concat_channels(&[out_b, out_r])
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Trainable tensors with dotted path names, in a fixed traversal order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect_params(String::new(), &mut out);
        out
    }

    /// Mutable view of [`BranchGraph::params`], same order and names.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.collect_params_mut(String::new(), &mut out);
        out
    }

    fn collect_params<'a>(&'a self, prefix: String, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            BranchGraph::Conv(p) => push_conv(&prefix, p, out),
            BranchGraph::Sequential(ch) | BranchGraph::ParallelSum(ch) => {
                for (i, c) in ch.iter().enumerate() {
                    c.collect_params(join(&prefix, &i.to_string()), out);
                }
            }
            BranchGraph::Identity(_) => {}
            BranchGraph::ChannelScale(s) | BranchGraph::FixedFilter { scale: s, .. } => {
                out.push((join(&prefix, "scale"), s))
            }
            BranchGraph::DualStream(ds) => {
                for (name, p) in DUAL_NAMES.iter().zip(ds.convs()) {
                    push_conv(&join(&prefix, name), p, out);
                }
            }
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: String, out: &mut Vec<(String, &'a mut Tensor)>) {
        match self {
            BranchGraph::Conv(p) => push_conv_mut(&prefix, p, out),
            BranchGraph::Sequential(ch) | BranchGraph::ParallelSum(ch) => {
                for (i, c) in ch.iter_mut().enumerate() {
                    c.collect_params_mut(join(&prefix, &i.to_string()), out);
                }
            }
            BranchGraph::Identity(_) => {}
            BranchGraph::ChannelScale(s) | BranchGraph::FixedFilter { scale: s, .. } => {
                out.push((join(&prefix, "scale"), s))
            }
            BranchGraph::DualStream(ds) => {
                for (name, p) in DUAL_NAMES.iter().zip(ds.convs_mut()) {
                    push_conv_mut(&join(&prefix, name), p, out);
                }
            }
        }
    }

    /// Visits every conv leaf mutably.
    pub fn for_each_conv_mut(&mut self, f: &mut dyn FnMut(&mut ConvParams)) {
        match self {
            BranchGraph::Conv(p) => f(p),
            BranchGraph::Sequential(ch) | BranchGraph::ParallelSum(ch) => {
                ch.iter_mut().for_each(|c| c.for_each_conv_mut(f))
            }
            BranchGraph::DualStream(ds) => ds.convs_mut().into_iter().for_each(f),
            _ => {}
        }
    }

    /// Removes the bias of every conv leaf.
    pub fn strip_biases(&mut self) {
        self.for_each_conv_mut(&mut |p| p.bias = None);
    }

    pub fn has_bias(&self) -> bool {
        self.params().iter().any(|(n, _)| n.ends_with("bias"))
    }
}

const DUAL_NAMES: [&str; 4] = ["backbone", "residual_to_backbone", "backbone_to_residual", "residual"];

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn push_conv<'a>(prefix: &str, p: &'a ConvParams, out: &mut Vec<(String, &'a Tensor)>) {
    out.push((join(prefix, "weight"), &p.weight));
    if let Some(b) = &p.bias {
        out.push((join(prefix, "bias"), b));
    }
}

fn push_conv_mut<'a>(prefix: &str, p: &'a mut ConvParams, out: &mut Vec<(String, &'a mut Tensor)>) {
    out.push((join(prefix, "weight"), &mut p.weight));
    if let Some(b) = &mut p.bias {
        out.push((join(prefix, "bias"), b));
    }
}

fn conv_valid<B: Backend>(backend: &mut B, p: &ConvParams, x: &B::Value) -> Result<B::Value> {
    let w = backend.param(&p.weight);
    let b = p.bias.as_ref().map(|t| backend.param(t));
    let geometry = ConvGeometry {
        stride: 1,
        padding: 0,
        groups: p.geometry.groups,
    };
    backend.conv2d(x, &w, b.as_ref(), geometry)
}
