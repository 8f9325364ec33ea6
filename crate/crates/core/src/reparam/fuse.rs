use crate::conv::{ConvGeometry, ConvParams};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::{validate_leaf, BranchGraph, DualStream};

/// Identity kernel `(c, c, k, k)` with a single 1 at the center of each diagonal tap.
pub fn dirac(channels: usize, k: usize) -> Tensor {
    let mut w = Tensor::zeros(Shape::new(channels, channels, k, k));
    for c in 0..channels {
        w.set(c, c, k / 2, k / 2, 1.0);
    }
    w
}

/// Zero-pads a square odd kernel to `k×k`, keeping it centered.
pub fn pad_kernel(w: &Tensor, k: usize) -> Result<Tensor> {
    let s = w.shape();
    if s.h > k || s.h != s.w || !(k - s.h).is_multiple_of(2) {
        return Err(Error::Unfusible(format!("cannot pad {}x{} kernel to {k}x{k}", s.h, s.w)));
    }
    if s.h == k {
        return Ok(w.clone());
    }
    let off = (k - s.h) / 2;
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, k, k));
    for o in 0..s.n {
        for i in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    out.set(o, i, y + off, x + off, w.at(o, i, y, x));
                }
            }
        }
    }
    Ok(out)
}

fn same_conv(weight: Tensor, bias: Option<Tensor>) -> Result<ConvParams> {
    let k = weight.shape().h;
    ConvParams::new(weight, bias, ConvGeometry::same(k))
}

/// Single conv equal to `second ∘ first`.
///
/// At least one of the two must be 1×1; 3×3∘3×3 would widen the deploy kernel
/// and is rejected.
pub fn fuse_sequential(first: &ConvParams, second: &ConvParams) -> Result<ConvParams> {
    validate_leaf(first)?;
    validate_leaf(second)?;
    if first.out_channels() != second.in_channels() {
        return Err(Error::Unfusible(format!(
            "channel mismatch: first emits {}, second expects {}",
            first.out_channels(),
            second.in_channels()
        )));
    }
    let (k1, k2) = (first.kernel().0, second.kernel().0);
    if k1 != 1 && k2 != 1 {
        return Err(Error::Unfusible(format!(
            "unsupported kernel pair {k1}x{k1} then {k2}x{k2}: one factor must be 1x1"
        )));
    }
    let k = k1.max(k2);
    let (cout, mid, cin) = (second.out_channels(), first.out_channels(), first.in_channels());
    let w1 = &first.weight;
    let w2 = &second.weight;
    let mut w = Tensor::zeros(Shape::new(cout, cin, k, k));
    for o in 0..cout {
        for i in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0f64;
                    for m in 0..mid {
                        acc += if k1 == 1 {
                            w2.at(o, m, ky, kx) as f64 * w1.at(m, i, 0, 0) as f64
                        } else {
                            w2.at(o, m, 0, 0) as f64 * w1.at(m, i, ky, kx) as f64
                        };
                    }
                    w.set(o, i, ky, kx, acc as f32);
                }
            }
        }
    }
    let bias = match (&first.bias, &second.bias) {
        (None, None) => None,
        (b1, b2) => {
            let mut out = vec![0.0f64; cout];
            for (o, v) in out.iter_mut().enumerate() {
                if let Some(b2) = b2 {
                    *v += b2.data()[o] as f64;
                }
                if let Some(b1) = b1 {
                    for m in 0..mid {
                        let tap_sum: f64 = (0..k2)
                            .flat_map(|y| (0..k2).map(move |x| (y, x)))
                            .map(|(y, x)| w2.at(o, m, y, x) as f64)
                            .sum();
                        *v += tap_sum * b1.data()[m] as f64;
                    }
                }
            }
            Some(Tensor::channel_vector(out.into_iter().map(|v| v as f32).collect()))
        }
    };
    same_conv(w, bias)
}

/// Single conv equal to the sum of the branch outputs.
pub fn fuse_parallel_sum(branches: &[ConvParams]) -> Result<ConvParams> {
    let first = branches
        .first()
        .ok_or_else(|| Error::Unfusible("no branches to sum".into()))?;
    if branches.len() == 1 {
        return Ok(first.clone());
    }
    let k = branches.iter().map(|b| b.kernel().0).max().unwrap_or(1);
    let mut weight = Tensor::zeros(Shape::new(first.out_channels(), first.in_channels(), k, k));
    let mut bias: Option<Tensor> = None;
    for (i, b) in branches.iter().enumerate() {
        validate_leaf(b)?;
        if b.in_channels() != first.in_channels() || b.out_channels() != first.out_channels() {
            return Err(Error::Unfusible(format!(
                "branch {i} is {}->{} but branch 0 is {}->{}",
                b.in_channels(),
                b.out_channels(),
                first.in_channels(),
                first.out_channels()
            )));
        }
        if b.geometry.stride != first.geometry.stride {
            return Err(Error::Unfusible(format!("branch {i} has a different stride")));
        }
        weight.add_assign(&pad_kernel(&b.weight, k)?)?;
        if let Some(bb) = &b.bias {
            match &mut bias {
                Some(acc) => acc.add_assign(bb)?,
                None => bias = Some(bb.clone()),
            }
        }
    }
    same_conv(weight, bias)
}

/// Merges the four stream kernels into one conv over concatenated channels.
pub fn fuse_dual_stream(ds: &DualStream) -> Result<ConvParams> {
    ds.validate()?;
    let (cb, cr) = (ds.backbone_channels(), ds.residual_channels());
    let k = ds.convs().iter().map(|c| c.kernel().0).max().unwrap_or(1);
    let c = cb + cr;
    let mut w = Tensor::zeros(Shape::new(c, c, k, k));
    let blocks = [
        (&ds.backbone, 0, 0),
        (&ds.residual_to_backbone, 0, cb),
        (&ds.backbone_to_residual, cb, 0),
        (&ds.residual, cb, cb),
    ];
    let mut bias = vec![0.0f32; c];
    let mut any_bias = false;
    for (p, out_off, in_off) in blocks {
        let kp = pad_kernel(&p.weight, k)?;
        let s = kp.shape();
        for o in 0..s.n {
            for i in 0..s.c {
                for y in 0..k {
                    for x in 0..k {
                        w.set(out_off + o, in_off + i, y, x, kp.at(o, i, y, x));
                    }
                }
            }
        }
        if let Some(b) = &p.bias {
            any_bias = true;
            for (o, &v) in b.data().iter().enumerate() {
                bias[out_off + o] += v;
            }
        }
    }
    same_conv(w, any_bias.then(|| Tensor::channel_vector(bias)))
}

pub fn strip_bias(params: &ConvParams) -> ConvParams {
    ConvParams {
        bias: None,
        ..params.clone()
    }
}

fn scaled_dirac(scale: &Tensor) -> Tensor {
    let c = scale.numel();
    let mut w = dirac(c, 1);
    for (i, &s) in scale.data().iter().enumerate() {
        w.set(i, i, 0, 0, s);
    }
    w
}

/// Recursively lowers a block to one conv, innermost nodes first.
pub fn lower_branch(node: &BranchGraph) -> Result<ConvParams> {
    lower_at(node, "root")
}

fn lower_at(node: &BranchGraph, path: &str) -> Result<ConvParams> {
    let wrap = |e: Error| match e {
        Error::Unfusible(msg) => Error::Unfusible(format!("at {path}: {msg}")),
        other => other,
    };
    match node {
        BranchGraph::Conv(p) => {
            validate_leaf(p).map_err(wrap)?;
            Ok(p.clone())
        }
        BranchGraph::Identity(c) => {
            node.validate().map_err(wrap)?;
            same_conv(dirac(*c, 1), None)
        }
        BranchGraph::ChannelScale(s) => {
            node.validate().map_err(wrap)?;
            same_conv(scaled_dirac(s), None)
        }
        BranchGraph::FixedFilter { kind, scale } => {
            node.validate().map_err(wrap)?;
            let c = scale.numel();
            let taps = kind.taps();
            let mut w = Tensor::zeros(Shape::new(c, c, 3, 3));
            for (ch, &k) in scale.data().iter().enumerate() {
                for (y, row) in taps.iter().enumerate() {
                    for (x, &t) in row.iter().enumerate() {
                        w.set(ch, ch, y, x, t * k);
                    }
                }
            }
            same_conv(w, None)
        }
        BranchGraph::Sequential(children) => {
            node.validate().map_err(wrap)?;
            let mut acc: Option<ConvParams> = None;
            for (i, child) in children.iter().enumerate() {
                let lowered = lower_at(child, &format!("{path}.seq[{i}]"))?;
                acc = Some(match acc {
                    None => lowered,
                    Some(prev) => fuse_sequential(&prev, &lowered).map_err(|e| match e {
                        Error::Unfusible(msg) => Error::Unfusible(format!("at {path}.seq[{i}]: {msg}")),
                        other => other,
                    })?,
                });
            }
            acc.ok_or_else(|| Error::Unfusible(format!("at {path}: empty sequential")))
        }
        BranchGraph::ParallelSum(branches) => {
            node.validate().map_err(wrap)?;
            let lowered = branches
                .iter()
                .enumerate()
                .map(|(i, b)| lower_at(b, &format!("{path}.sum[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            fuse_parallel_sum(&lowered).map_err(wrap)
        }
        BranchGraph::DualStream(ds) => fuse_dual_stream(ds).map_err(wrap),
    }
}
