//! Bias-corrected Adam.

use rtsr_core::Tensor;

use crate::error::{Result, TrainError};

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Forgets the moments and the step count.
    pub fn reset(&mut self) {
        self.step = 0;
        self.m.clear();
        self.v.clear();
    }

    /// One update of `params` (in a fixed order) with the matching `grads`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TrainError::Optimizer(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TrainError::Optimizer(format!(
                    "gradient shape {} does not match parameter {}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape()) {
            return Err(TrainError::Optimizer("parameter set changed; reset the optimizer".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, gd) = (p.data_mut(), g.data());
            for i in 0..pd.len() {
                let gi = gd[i] as f64;
                let mi = b1 * m.data()[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] as f64 + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi as f32;
                v.data_mut()[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                pd[i] = (pd[i] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Tensor {
        Tensor::full([1, 1, 1, 1], v)
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut w = scalar(0.7);
        let mut opt = Adam::default();
        opt.step(&mut [&mut w], &[scalar(0.0)], 0.1).unwrap();
        assert_eq!(w.data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0f32, -0.02] {
            let mut w = scalar(1.0);
            let mut opt = Adam::default();
            opt.step(&mut [&mut w], &[scalar(g)], 0.01).unwrap();
            let moved = w.data()[0] as f64 - 1.0;
            assert!((moved + 0.01 * g.signum() as f64).abs() < 1e-6, "{moved}");
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut w = Tensor::from_vec([1, 1, 1, 3], vec![0.1, -2.0, 5.0]).unwrap();
        let before = w.clone();
        let mut opt = Adam::default();
        for _ in 0..5 {
            let g = Tensor::from_vec([1, 1, 1, 3], vec![1.0, -3.0, 0.5]).unwrap();
            opt.step(&mut [&mut w], &[g], 0.0).unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn minimizes_square() {
        let mut w = scalar(1.0);
        let mut opt = Adam::default();
        for _ in 0..100 {
            let g = scalar(2.0 * w.data()[0]);
            opt.step(&mut [&mut w], &[g], 0.1).unwrap();
        }
        assert!(w.data()[0].abs() < 0.1, "{}", w.data()[0]);
    }

    #[test]
    fn shape_errors() {
        let mut w = scalar(1.0);
        let mut opt = Adam::default();
        assert!(opt.step(&mut [&mut w], &[Tensor::zeros([1, 1, 1, 2])], 0.1).is_err());
        assert!(opt.step(&mut [&mut w], &[], 0.1).is_err());
    }
}
