use rand::SeedableRng;
use rand::rngs::StdRng;

use crate::backend::Eager;
use crate::conv::{conv2d, ConvParams};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::BranchGraph;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub max_abs_err: f32,
    pub trials: usize,
    pub pass: bool,
}

/// Runs the block and its fused conv on `trials` unit-normal `(1, c, 8, 8)` inputs.
pub fn verify_equivalence(
    graph: &BranchGraph,
    fused: &ConvParams,
    trials: usize,
    tol: f32,
    seed: u64,
) -> Result<EquivalenceReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if graph.in_channels() != fused.in_channels() || graph.out_channels() != fused.out_channels() {
        return Err(Error::ShapeMismatch {
            op: "verify_equivalence",
            left: Shape::new(1, graph.in_channels(), graph.out_channels(), 0),
            right: Shape::new(1, fused.in_channels(), fused.out_channels(), 0),
        });
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst = 0.0f32;
    for _ in 0..trials {
        let x = Tensor::randn(Shape::new(1, graph.in_channels(), 8, 8), &mut rng);
        let reference = graph.forward(&mut Eager, &x)?;
        let candidate = conv2d(&x, fused)?;
        worst = worst.max(reference.max_abs_diff(&candidate)?);
    }
    Ok(EquivalenceReport {
        max_abs_err: worst,
        trials,
        pass: worst <= tol,
    })
}
