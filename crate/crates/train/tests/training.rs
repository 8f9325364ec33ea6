use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtsr_core::resample::{degrade, DegradationSpec};
use rtsr_zoo::{build, Mode, ModelGraph, Registry};
use rtsr_train::data::procedural_texture;
use rtsr_train::{
    run_stage_plan, LossConfig, PairSource, Schedule, SimulatedCodec, Stage, StagePlan, SyntheticSource, TrainError,
    TrainLog,
};

fn model(name: &str, seed: u64) -> ModelGraph {
    build(&Registry::builtin().spec(name, None).unwrap(), Mode::Train, seed).unwrap()
}

fn one_pair(seed: u64) -> PairSource {
    let hr = procedural_texture(32, &mut ChaCha8Rng::seed_from_u64(seed));
    let lr = degrade(&hr, &DegradationSpec::challenge(None).unwrap(), None).unwrap();
    PairSource::new(vec![(None, lr, hr)], 4).unwrap()
}

fn l1(model: &ModelGraph, src: &PairSource) -> f64 {
    let (_, lr, hr) = &src.pairs()[0];
    let sr = model.run(lr).unwrap();
    sr.data().iter().zip(hr.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / hr.numel() as f64
}

fn plan(stages: Vec<Stage>) -> StagePlan {
    StagePlan { stages }
}

#[test]
fn overfits_one_pair() {
    let mut m = model("reptcn", 0);
    let mut src = one_pair(1);
    let before = l1(&m, &src);
    let stage = Stage::new("overfit", 32, 1, 200, Schedule::cosine(5e-3, 1e-5));
    let log = run_stage_plan(&mut m, &plan(vec![stage]), &mut src, &BTreeMap::new(), 7).unwrap();
    let after = l1(&m, &src);
    assert!(after < 0.2 * before, "{before} -> {after}");
    assert_eq!(log.records.first().unwrap().iter, 0);
    assert_eq!(log.records.last().unwrap().iter, 199);
}

#[test]
fn strip_bias_stage_removes_every_bias() {
    let mut m = model("reptcn", 0);
    let mut src = one_pair(2);
    let first = Stage::new("a", 32, 1, 3, Schedule::cosine(1e-3, 0.0));
    let mut second = Stage::new("b", 32, 1, 3, Schedule::cosine(1e-3, 0.0));
    second.strip_bias_before = true;
    run_stage_plan(&mut m, &plan(vec![first, second]), &mut src, &BTreeMap::new(), 1).unwrap();
    assert!(m.params().iter().all(|(n, _)| !n.ends_with("bias")));
    let fused = m.to_deploy().unwrap();
    assert!(fused.params().iter().all(|(n, _)| !n.ends_with("bias")));
}

#[test]
fn curriculum_consumes_declared_qps() {
    let mut m = model("reptcn", 0);
    let mut src = SyntheticSource::procedural(4, 48, 4, 3).unwrap().with_codec(Box::new(SimulatedCodec));
    let subsets: [&[u32]; 3] = [&[31], &[39, 47], &[55, 63]];
    let stages = subsets
        .iter()
        .enumerate()
        .map(|(i, qps)| {
            let mut s = Stage::new(&format!("s{i}"), 16, 2, 4, Schedule::cosine(1e-3, 0.0));
            s.qps = qps.to_vec();
            s
        })
        .collect();
    run_stage_plan(&mut m, &plan(stages), &mut src, &BTreeMap::new(), 5).unwrap();
    let used = src.consumed();
    assert_eq!(used.len(), 24);
    for (i, qps) in subsets.iter().enumerate() {
        for q in &used[i * 8..(i + 1) * 8] {
            assert!(qps.contains(&q.unwrap()), "stage {i} drew {q:?}");
        }
    }
}

#[test]
fn seeded_runs_are_bit_reproducible() {
    let run = || {
        let mut m = model("anunet", 4);
        let mut src = SyntheticSource::procedural(3, 32, 4, 9).unwrap();
        let mut stage = Stage::new("s", 16, 2, 6, Schedule::cosine_warmup(1e-3, 1e-6, 0.2));
        stage.loss = LossConfig::default();
        stage.log_every = 1;
        let log = run_stage_plan(&mut m, &plan(vec![stage]), &mut src, &BTreeMap::new(), 11).unwrap();
        (m, log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    for ((_, x), (_, y)) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn distillation_needs_a_known_teacher() {
    let mut m = model("reptcn", 0);
    let mut src = one_pair(3);
    let mut stage = Stage::new("kd", 32, 1, 3, Schedule::cosine(1e-3, 0.0));
    stage.distill_teacher = Some("c3".into());
    let p = plan(vec![stage]);
    let err = run_stage_plan(&mut m, &p, &mut src, &BTreeMap::new(), 1).unwrap_err();
    assert!(matches!(err, TrainError::UnknownTeacher(ref t) if t == "c3"));
    let teachers = BTreeMap::from([("c3".to_string(), model("c3", 5).to_deploy().unwrap())]);
    let log = run_stage_plan(&mut m, &p, &mut src, &teachers, 1).unwrap();
    assert!(log.records.iter().all(|r| r.loss.is_finite() && r.loss > 0.0));
}

#[test]
fn patch_must_match_unshuffle_factors() {
    let mut m = model("anunet", 0);
    let mut src = SyntheticSource::procedural(1, 48, 4, 0).unwrap();
    let stage = Stage::new("s", 36, 1, 1, Schedule::cosine(1e-3, 0.0));
    let err = run_stage_plan(&mut m, &plan(vec![stage]), &mut src, &BTreeMap::new(), 0).unwrap_err();
    assert!(matches!(err, TrainError::Plan(_)));
    let mut bad_qp = Stage::new("s", 32, 1, 1, Schedule::cosine(1e-3, 0.0));
    bad_qp.qps = vec![30];
    assert!(run_stage_plan(&mut m, &plan(vec![bad_qp]), &mut src, &BTreeMap::new(), 0).is_err());
    let zero = Stage::new("s", 32, 1, 0, Schedule::cosine(1e-3, 0.0));
    assert!(run_stage_plan(&mut m, &plan(vec![zero]), &mut src, &BTreeMap::new(), 0).is_err());
}

#[test]
fn aux_head_trains_and_leaves_the_model_shape_alone() {
    for name in ["reptcn", "lanczos_pp"] {
        let mut m = model(name, 0);
        let count = m.param_count();
        let side = if name == "lanczos_pp" { 72 } else { 32 };
        let mut src = SyntheticSource::procedural(2, side, 4, 1).unwrap();
        let mut stage = Stage::new("aux", side, 1, 3, Schedule::cosine(1e-3, 0.0));
        stage.loss = LossConfig::from_pairs(&[("l1", 1.0), ("aux_x2", 0.5)]);
        let log = run_stage_plan(&mut m, &plan(vec![stage]), &mut src, &BTreeMap::new(), 2).unwrap();
        assert!(log.records.iter().all(|r| r.loss.is_finite()));
        assert_eq!(m.param_count(), count);
    }
}

#[test]
fn fuse_before_switches_to_deploy_form() {
    let mut m = model("resr", 0);
    let mut src = SyntheticSource::procedural(2, 32, 4, 1).unwrap();
    let first = Stage::new("train", 16, 1, 2, Schedule::cosine(1e-3, 0.0));
    let mut second = Stage::new("finetune", 16, 1, 2, Schedule::multistep(1e-4, vec![1]));
    second.fuse_before = true;
    run_stage_plan(&mut m, &plan(vec![first, second]), &mut src, &BTreeMap::new(), 3).unwrap();
    assert!(m.is_fused());
    assert_eq!(m.mode(), Mode::Deploy);
}

#[test]
fn log_and_plan_serialize() {
    let mut m = model("reptcn", 0);
    let mut src = one_pair(4);
    let text = r#"{"stages": [{"name": "s", "patch": 32, "batch": 1, "iterations": 5,
        "schedule": {"kind": "cosine", "lr_max": 0.001}, "log_every": 2}]}"#;
    let p: StagePlan = serde_json::from_str(text).unwrap();
    assert_eq!(p.stages[0].loss, LossConfig::default());
    let log = run_stage_plan(&mut m, &p, &mut src, &BTreeMap::new(), 0).unwrap();
    assert_eq!(log.records.iter().map(|r| r.iter).collect::<Vec<_>>(), vec![0, 2, 4]);
    let back = TrainLog::from_jsonl(&log.to_jsonl().unwrap()).unwrap();
    assert_eq!(back, log);
}
