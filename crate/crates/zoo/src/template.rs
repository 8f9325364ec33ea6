//! Multi-branch block families, instantiated into fusible branch graphs.

use rand::Rng;
use rtsr_core::reparam::{BranchGraph, DualStream};
use rtsr_core::{ConvParams, FixedKernel, Shape, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockTemplate {
    /// 3×3 ⊕ 1×1, plus identity when channels are preserved.
    RepVgg { in_ch: usize, out_ch: usize },
    /// Edge-oriented block: 3×3 ⊕ (1×1→3×3) ⊕ (1×1→Sobel-x) ⊕ (1×1→Sobel-y) ⊕ (1×1→Laplacian).
    Ecb { in_ch: usize, out_ch: usize, expand: usize },
    /// (1×1 widen → 3×3 → 1×1 narrow) ⊕ 1×1.
    ResidualExpand { in_ch: usize, out_ch: usize, expand: usize },
    /// (1×1 widen → 3×3 → 1×1 narrow) ⊕ identity.
    Rrrb { channels: usize, expand: usize },
    /// (1×1 widen → edge-oriented block → 1×1 narrow) ⊕ identity.
    Nested { channels: usize, expand: usize },
    /// 3×3 ⊕ per-channel scale.
    ScaledIdentity { channels: usize },
    /// Backbone and residual streams with cross terms, all 3×3.
    DualStream { backbone: usize, residual: usize },
}

/// Kaiming-uniform weights for ReLU fan-in, optional zero bias.
pub fn init_conv<R: Rng + ?Sized>(out: usize, inp: usize, k: usize, bias: bool, rng: &mut R) -> ConvParams {
    let fan_in = (inp * k * k) as f32;
    let bound = (6.0 / fan_in).sqrt();
    let w = Tensor::rand_uniform(Shape::new(out, inp, k, k), -bound, bound, rng);
    let b = bias.then(|| Tensor::zeros(Shape::new(1, out, 1, 1)));
    ConvParams::same(w, b).expect("well-formed conv")
}

fn conv<R: Rng + ?Sized>(out: usize, inp: usize, k: usize, bias: bool, rng: &mut R) -> BranchGraph {
    BranchGraph::Conv(init_conv(out, inp, k, bias, rng))
}

/// Unit-gain init for convs followed by another linear conv.
fn inner<R: Rng + ?Sized>(out: usize, inp: usize, k: usize, bias: bool, rng: &mut R) -> BranchGraph {
    let mut p = init_conv(out, inp, k, bias, rng);
    p.weight = p.weight.scale(0.5f32.sqrt());
    BranchGraph::Conv(p)
}

/// Scales the output conv of every branch by `1/sqrt(n)` so the sum keeps the variance of one branch.
fn balanced(branches: Vec<BranchGraph>) -> BranchGraph {
    let n = branches.len();
    balanced_as(branches, n)
}

fn balanced_as(branches: Vec<BranchGraph>, effective: usize) -> BranchGraph {
    let k = 1.0 / (effective as f32).sqrt();
    let branches = branches
        .into_iter()
        .map(|mut b| {
            let last = match &mut b {
                BranchGraph::Sequential(ch) => ch.iter_mut().rev().find(|c| matches!(c, BranchGraph::Conv(_))),
                other => Some(other),
            };
            if let Some(BranchGraph::Conv(p)) = last {
                p.weight = p.weight.scale(k);
            }
            b
        })
        .collect();
    BranchGraph::ParallelSum(branches)
}

fn edge_scale<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Tensor {
    Tensor::rand_uniform(Shape::new(1, c, 1, 1), -1e-2, 1e-2, rng)
}

impl BlockTemplate {
    pub fn in_channels(&self) -> usize {
        match *self {
            BlockTemplate::RepVgg { in_ch, .. }
            | BlockTemplate::Ecb { in_ch, .. }
            | BlockTemplate::ResidualExpand { in_ch, .. } => in_ch,
            BlockTemplate::Rrrb { channels, .. }
            | BlockTemplate::Nested { channels, .. }
            | BlockTemplate::ScaledIdentity { channels } => channels,
            BlockTemplate::DualStream { backbone, residual } => backbone + residual,
        }
    }

    pub fn out_channels(&self) -> usize {
        match *self {
            BlockTemplate::RepVgg { out_ch, .. }
            | BlockTemplate::Ecb { out_ch, .. }
            | BlockTemplate::ResidualExpand { out_ch, .. } => out_ch,
            _ => self.in_channels(),
        }
    }

    /// Side of the single conv this block lowers to.
    pub fn fused_kernel(&self) -> usize {
        3
    }

    pub fn check(&self) -> Result<(), String> {
        let expand = match *self {
            BlockTemplate::Ecb { expand, .. }
            | BlockTemplate::ResidualExpand { expand, .. }
            | BlockTemplate::Rrrb { expand, .. }
            | BlockTemplate::Nested { expand, .. } => expand,
            BlockTemplate::DualStream { residual, .. } => residual,
            _ => 1,
        };
        if self.in_channels() == 0 || self.out_channels() == 0 || expand == 0 {
            return Err(format!("degenerate block template {self:?}"));
        }
        Ok(())
    }

    pub fn instantiate<R: Rng + ?Sized>(&self, bias: bool, rng: &mut R) -> BranchGraph {
        use BranchGraph::{Identity, Sequential};
        match *self {
            BlockTemplate::RepVgg { in_ch, out_ch } => {
                let mut branches = vec![conv(out_ch, in_ch, 3, bias, rng), conv(out_ch, in_ch, 1, bias, rng)];
                if in_ch == out_ch {
                    branches.push(Identity(in_ch));
                }
                balanced(branches)
            }
            BlockTemplate::Ecb { in_ch, out_ch, expand } => ecb(in_ch, out_ch, expand, bias, rng),
            BlockTemplate::ResidualExpand { in_ch, out_ch, expand } => {
                let mid = in_ch * expand;
                balanced(vec![
                    Sequential(vec![
                        inner(mid, in_ch, 1, bias, rng),
                        inner(mid, mid, 3, bias, rng),
                        conv(out_ch, mid, 1, bias, rng),
                    ]),
                    conv(out_ch, in_ch, 1, bias, rng),
                ])
            }
            BlockTemplate::Rrrb { channels, expand } => {
                let mid = channels * expand;
                balanced(vec![
                    Sequential(vec![
                        inner(mid, channels, 1, bias, rng),
                        inner(mid, mid, 3, bias, rng),
                        conv(channels, mid, 1, bias, rng),
                    ]),
                    Identity(channels),
                ])
            }
            BlockTemplate::Nested { channels, expand } => {
                let mid = channels * expand;
                balanced(vec![
                    Sequential(vec![
                        inner(mid, channels, 1, bias, rng),
                        ecb(mid, mid, 2, bias, rng),
                        conv(channels, mid, 1, bias, rng),
                    ]),
                    Identity(channels),
                ])
            }
            BlockTemplate::ScaledIdentity { channels } => balanced(vec![
                conv(channels, channels, 3, bias, rng),
                BranchGraph::ChannelScale(Tensor::ones(Shape::new(1, channels, 1, 1))),
            ]),
            BlockTemplate::DualStream { backbone, residual } => BranchGraph::DualStream(Box::new(DualStream {
                backbone: init_conv(backbone, backbone, 3, bias, rng),
                residual_to_backbone: init_conv(backbone, residual, 3, bias, rng),
                backbone_to_residual: init_conv(residual, backbone, 3, bias, rng),
                residual: init_conv(residual, residual, 3, bias, rng),
            })),
        }
    }
}

fn ecb<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, expand: usize, bias: bool, rng: &mut R) -> BranchGraph {
    use BranchGraph::{FixedFilter, Sequential};
    let mut branches = vec![
        conv(out_ch, in_ch, 3, bias, rng),
        Sequential(vec![
            inner(out_ch * expand, in_ch, 1, bias, rng),
            conv(out_ch, out_ch * expand, 3, bias, rng),
        ]),
    ];
    for kind in [FixedKernel::SobelX, FixedKernel::SobelY, FixedKernel::Laplacian] {
        branches.push(Sequential(vec![
            inner(out_ch, in_ch, 1, bias, rng),
            FixedFilter {
                kind,
                scale: edge_scale(out_ch, rng),
            },
        ]));
    }
    // the edge branches start near zero, so only the two conv paths set the scale
    balanced_as(branches, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rtsr_core::reparam::{lower_branch, verify_equivalence};

    #[test]
    fn every_template_lowers_to_3x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let templates = [
            BlockTemplate::RepVgg { in_ch: 4, out_ch: 4 },
            BlockTemplate::RepVgg { in_ch: 3, out_ch: 5 },
            BlockTemplate::Ecb { in_ch: 4, out_ch: 6, expand: 2 },
            BlockTemplate::ResidualExpand { in_ch: 3, out_ch: 5, expand: 4 },
            BlockTemplate::Rrrb { channels: 4, expand: 2 },
            BlockTemplate::Nested { channels: 4, expand: 2 },
            BlockTemplate::ScaledIdentity { channels: 4 },
            BlockTemplate::DualStream { backbone: 4, residual: 3 },
        ];
        for t in templates {
            let g = t.instantiate(true, &mut rng);
            assert_eq!(g.in_channels(), t.in_channels());
            assert_eq!(g.out_channels(), t.out_channels());
            let fused = lower_branch(&g).unwrap();
            assert_eq!(fused.kernel(), (t.fused_kernel(), t.fused_kernel()));
            let report = verify_equivalence(&g, &fused, 5, 1e-4, 1).unwrap();
            assert!(report.pass, "{t:?}: {}", report.max_abs_err);
        }
    }

    #[test]
    fn bias_free_blocks_lower_bias_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = BlockTemplate::Nested { channels: 3, expand: 2 }.instantiate(false, &mut rng);
        assert!(lower_branch(&g).unwrap().bias.is_none());
    }
}
