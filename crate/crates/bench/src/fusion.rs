//! Train-form versus deploy-form agreement for whole models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtsr_zoo::graph::random_input;
use rtsr_zoo::ModelGraph;

use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionCheck {
    pub trials: usize,
    pub max_abs_err: f32,
    pub tol: f32,
}

impl FusionCheck {
    pub fn pass(&self) -> bool {
        self.max_abs_err <= self.tol
    }
}

/// Fuses `model` and compares both forms on `trials` random `side × side` inputs.
pub fn verify_fusion(model: &ModelGraph, trials: usize, side: usize, tol: f32, seed: u64) -> Result<FusionCheck> {
    if trials == 0 {
        return Err(BenchError::Usage("trials must be >= 1".into()));
    }
    let deploy = model.to_deploy()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f32;
    for _ in 0..trials {
        let x = random_input(model, 1, side, &mut rng);
        let a = model.run(&x)?;
        let b = deploy.run(&x)?;
        worst = worst.max(a.max_abs_diff(&b)?);
    }
    Ok(FusionCheck {
        trials,
        max_abs_err: worst,
        tol,
    })
}
