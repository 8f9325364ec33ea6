//! Multi-stage training recipes.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtsr_core::resample::{resample_image, ResampleKernel, CHALLENGE_QPS};
use rtsr_core::{Backend, ConvParams, Tensor};
use rtsr_zoo::{init_conv, ModelGraph, Node};
use serde::{Deserialize, Serialize};

use crate::data::DataSource;
use crate::error::{Result, TrainError};
use crate::loss::{loss_eval, LossConfig, LossInputs, LossRegistry, WeightedTerm};
use crate::optim::Adam;
use crate::schedule::Schedule;
use crate::tape::{Tape, Var};

fn default_log_every() -> u64 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    /// QP subset to draw from; empty trains on uncompressed LR.
    #[serde(default)]
    pub qps: Vec<u32>,
    /// HR patch side.
    pub patch: usize,
    pub batch: usize,
    pub iterations: u64,
    #[serde(default)]
    pub loss: LossConfig,
    pub schedule: Schedule,
    #[serde(default)]
    pub strip_bias_before: bool,
    #[serde(default)]
    pub fuse_before: bool,
    #[serde(default)]
    pub distill_teacher: Option<String>,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
}

impl Stage {
    pub fn new(name: &str, patch: usize, batch: usize, iterations: u64, schedule: Schedule) -> Self {
        Stage {
            name: name.to_string(),
            qps: Vec::new(),
            patch,
            batch,
            iterations,
            loss: LossConfig::l1(),
            schedule,
            strip_bias_before: false,
            fuse_before: false,
            distill_teacher: None,
            log_every: default_log_every(),
        }
    }

    /// The loss with an implicit unit-weight distillation term when a teacher is set.
    pub fn effective_loss(&self) -> LossConfig {
        let mut loss = self.loss.clone();
        if self.distill_teacher.is_some() && !loss.terms.iter().any(|t| t.name == "distill_mse") {
            loss.terms.push(WeightedTerm {
                name: "distill_mse".into(),
                weight: 1.0,
            });
        }
        loss
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl StagePlan {
    pub fn validate(&self, model: &ModelGraph, teachers: &BTreeMap<String, ModelGraph>) -> Result<()> {
        if self.stages.is_empty() {
            return Err(TrainError::Plan("no stages".into()));
        }
        let registry = LossRegistry::builtin();
        let align = model.scale() * model.input_multiple();
        for s in &self.stages {
            let fail = |m: String| Err(TrainError::Plan(format!("stage {:?}: {m}", s.name)));
            if s.iterations == 0 || s.batch == 0 {
                return fail("iterations and batch must be >= 1".into());
            }
            if s.patch == 0 || s.patch % align != 0 {
                return fail(format!("patch {} is not a multiple of {align} (scale x unshuffle factors)", s.patch));
            }
            if let Some(q) = s.qps.iter().find(|q| !CHALLENGE_QPS.contains(q)) {
                return fail(format!("qp {q} not in {CHALLENGE_QPS:?}"));
            }
            let loss = s.effective_loss();
            loss.validate(&registry)?;
            s.schedule.validate()?;
            match &s.distill_teacher {
                Some(t) if !teachers.contains_key(t) => return Err(TrainError::UnknownTeacher(t.clone())),
                None if loss.uses("distill_mse") => return fail("distill_mse needs a teacher".into()),
                _ => {}
            }
            if loss.uses("aux_x2") && s.patch % (2 * align) != 0 {
                return fail("the x2 head needs a patch divisible by twice the alignment".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: String,
    pub iter: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(TrainLog { records })
    }

    pub fn stage(&self, name: &str) -> impl Iterator<Item = &LogRecord> {
        let name = name.to_string();
        self.records.iter().filter(move |r| r.stage == name)
    }
}

/// Extra conv + ×q shuffle on the backbone features, predicting the ×2 image.
struct AuxHead {
    feature: usize,
    r: usize,
    conv: ConvParams,
}

impl AuxHead {
    fn new(model: &ModelGraph, seed: u64) -> Result<Self> {
        let last = model
            .nodes()
            .iter()
            .rposition(|n| matches!(n, Node::Linear(_)))
            .filter(|&i| i > 0)
            .ok_or_else(|| TrainError::Plan("model has no backbone before its head".into()))?;
        let feature = last - 1;
        let shape = model.spec().infer_shapes()?[feature];
        if (2 * shape.den) % shape.num != 0 {
            return Err(TrainError::Plan("backbone resolution is finer than x2".into()));
        }
        let r = 2 * shape.den / shape.num;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = init_conv(3 * r * r, shape.channels, 3, true, &mut rng);
        Ok(AuxHead { feature, r, conv })
    }

    fn forward(&self, tape: &mut Tape, feat: Var) -> Result<Var> {
        let w = tape.param(&self.conv.weight);
        let b = self.conv.bias.as_ref().map(|t| tape.param(t));
        let y = tape.conv2d(&feat, &w, b.as_ref(), self.conv.geometry)?;
        Ok(tape.pixel_shuffle(&y, self.r)?)
    }
}

/// Lanczos-3 ×2 reduction of the HR target.
pub fn half_size(hr: &Tensor) -> Result<Tensor> {
    let s = hr.shape();
    Ok(resample_image(hr, s.h / 2, s.w / 2, ResampleKernel::lanczos(3))?)
}

/// Runs every stage in order, updating `model` in place.
pub fn run_stage_plan(
    model: &mut ModelGraph,
    plan: &StagePlan,
    source: &mut dyn DataSource,
    teachers: &BTreeMap<String, ModelGraph>,
    seed: u64,
) -> Result<TrainLog> {
    plan.validate(model, teachers)?;
    if source.scale() != model.scale() {
        return Err(TrainError::Plan(format!(
            "data scale {} does not match model scale {}",
            source.scale(),
            model.scale()
        )));
    }
    let registry = LossRegistry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrainLog::default();
    let mut aux: Option<AuxHead> = None;
    for stage in &plan.stages {
        if stage.strip_bias_before {
            model.strip_biases();
        }
        if stage.fuse_before {
            *model = model.to_deploy()?;
        }
        let loss = stage.effective_loss();
        if loss.uses("aux_x2") && aux.is_none() {
            aux = Some(AuxHead::new(model, seed ^ 0xa0)?);
        }
        let head = aux.as_mut().filter(|_| loss.uses("aux_x2"));
        let teacher = stage.distill_teacher.as_ref().map(|t| &teachers[t]);
        let mut adam = Adam::default();
        train_stage(model, stage, &loss, head, teacher, source, &registry, &mut adam, &mut rng, &mut log)?;
    }
    Ok(log)
}

#[allow(clippy::too_many_arguments)]
fn train_stage(
    model: &mut ModelGraph,
    stage: &Stage,
    loss: &LossConfig,
    mut head: Option<&mut AuxHead>,
    teacher: Option<&ModelGraph>,
    source: &mut dyn DataSource,
    registry: &LossRegistry,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
    log: &mut TrainLog,
) -> Result<()> {
    for iter in 0..stage.iterations {
        let lr = stage.schedule.lr_at(iter, stage.iterations)?;
        let batch = source.sample(&stage.qps, stage.patch, stage.batch, rng)?;
        let teacher_sr = teacher.map(|t| t.run(&batch.lr)).transpose()?;
        let hr2 = head.as_ref().map(|_| half_size(&batch.hr)).transpose()?;

        let mut tape = Tape::new();
        let x = tape.constant(batch.lr.clone());
        let feature = head.as_ref().map(|h| h.feature);
        let (y, feat) = model.forward_with_feature(&mut tape, &x, feature)?;
        let aux_out = match (&head, feat) {
            (Some(h), Some(f)) => Some(h.forward(&mut tape, f)?),
            _ => None,
        };
        let inputs = LossInputs {
            sr: tape.value(y),
            hr: &batch.hr,
            teacher_sr: teacher_sr.as_ref(),
            aux_sr2: aux_out.map(|a| tape.value(a)),
            hr2: hr2.as_ref(),
        };
        let out = loss_eval(&inputs, loss, registry)?;
        if !out.total.is_finite() {
            return Err(TrainError::Loss(format!("non-finite loss at {} iteration {iter}", stage.name)));
        }
        let mut seeds = vec![(y, out.grad_sr)];
        if let (Some(a), Some(g)) = (aux_out, out.grad_aux) {
            seeds.push((a, g));
        }
        let grads = tape.backward(&seeds)?;
        drop(tape);

        let mut g: Vec<Tensor> = model.params().iter().map(|(_, t)| grads.param_or_zero(t)).collect();
        if let Some(h) = &head {
            g.push(grads.param_or_zero(&h.conv.weight));
            if let Some(b) = &h.conv.bias {
                g.push(grads.param_or_zero(b));
            }
        }
        let mut params: Vec<&mut Tensor> = model.params_mut().into_iter().map(|(_, t)| t).collect();
        if let Some(h) = head.as_mut() {
            params.push(&mut h.conv.weight);
            if let Some(b) = h.conv.bias.as_mut() {
                params.push(b);
            }
        }
        adam.step(&mut params, &g, lr)?;

        let every = stage.log_every.max(1);
        if iter % every == 0 || iter + 1 == stage.iterations {
            log.records.push(LogRecord {
                stage: stage.name.clone(),
                iter,
                loss: out.total,
                lr,
            });
        }
    }
    Ok(())
}
