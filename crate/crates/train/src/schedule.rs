//! Learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    CosineWarmup,
    Multistep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub lr_max: f64,
    #[serde(default)]
    pub lr_min: f64,
    /// Fraction of `total` spent in linear warmup (cosine_warmup only).
    #[serde(default)]
    pub warmup_fraction: f64,
    /// Steps at which the multistep schedule halves the rate.
    #[serde(default)]
    pub milestones: Vec<u64>,
}

impl Schedule {
    pub fn cosine(lr_max: f64, lr_min: f64) -> Self {
        Schedule {
            kind: ScheduleKind::Cosine,
            lr_max,
            lr_min,
            warmup_fraction: 0.0,
            milestones: Vec::new(),
        }
    }

    pub fn cosine_warmup(lr_max: f64, lr_min: f64, warmup_fraction: f64) -> Self {
        Schedule {
            kind: ScheduleKind::CosineWarmup,
            warmup_fraction,
            ..Schedule::cosine(lr_max, lr_min)
        }
    }

    pub fn multistep(lr_max: f64, milestones: Vec<u64>) -> Self {
        Schedule {
            kind: ScheduleKind::Multistep,
            milestones,
            ..Schedule::cosine(lr_max, 0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_max.is_finite()
            && self.lr_max >= 0.0
            && self.lr_min >= 0.0
            && self.lr_min <= self.lr_max
            && (0.0..1.0).contains(&self.warmup_fraction);
        if !ok {
            return Err(TrainError::Schedule(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }

    /// Rate at `step` of a run lasting `total` steps.
    pub fn lr_at(&self, step: u64, total: u64) -> Result<f64> {
        self.validate()?;
        if step > total {
            return Err(TrainError::Schedule(format!("step {step} is past the end ({total})")));
        }
        let cosine = |t: f64| self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos());
        Ok(match self.kind {
            ScheduleKind::Cosine => cosine(if total == 0 { 1.0 } else { step as f64 / total as f64 }),
            ScheduleKind::CosineWarmup => {
                let warm = (self.warmup_fraction * total as f64).round() as u64;
                if step < warm {
                    self.lr_max * step as f64 / warm as f64
                } else if total == warm {
                    self.lr_min
                } else {
                    cosine((step - warm) as f64 / (total - warm) as f64)
                }
            }
            ScheduleKind::Multistep => {
                let halvings = self.milestones.iter().filter(|&&m| m <= step).count() as i32;
                self.lr_max * 0.5f64.powi(halvings)
            }
        })
    }
}
