//! `rtsr` subcommands. Exit codes: 0 ok, 1 usage, 2 data, 3 codec unavailable.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rtsr_core::metrics::{challenge_score, QpPair, ScoreInputs, DEFAULT_SCORE_C};
use rtsr_train::{run_stage_plan, PairSource, StagePlan};
use rtsr_zoo::{build, Mode, ModelGraph, Registry};

use crate::benchmark::{load_manifest_pairs, run_benchmark, BaselineSource, MonotonicClock, RunConfig};
use crate::dataset::{challenge_specs, prepare_dataset, CodecMode, ExternalCodec, Manifest, DEFAULT_DECODE_CMD, DEFAULT_ENCODE_CMD, DEFAULT_PRESET};
use crate::error::{BenchError, Result};
use crate::fusion::verify_fusion;
use crate::image_io::load_image;
use crate::report::{emit_report, write_report, ReportFormat};
use crate::upscaler::{crop_to, NetworkUpscaler};
use crate::weights::{load_weights, save_weights};

#[derive(Debug, Parser)]
#[command(name = "rtsr", about = "Tiny real-time x4 super-resolution: data, training, fusion, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build LR files and a manifest from a directory of HR images.
    Prepare {
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "31,39,47,55,63")]
        qp: Vec<u32>,
        /// Encode template with {input} {scale} {qp} {preset} {output}.
        #[arg(long, conflicts_with = "no_codec")]
        codec_cmd: Option<String>,
        /// Decode template with {input} {output}.
        #[arg(long, default_value = DEFAULT_DECODE_CMD)]
        decode_cmd: String,
        #[arg(long, default_value_t = DEFAULT_PRESET)]
        preset: u32,
        /// Uncompressed LR from the internal resampler.
        #[arg(long)]
        no_codec: bool,
    },
    /// Train a zoo model with a JSON stage plan on a prepared dataset.
    Train {
        #[arg(long)]
        spec: String,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        plan: PathBuf,
        /// Directory holding manifest.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Distillation teacher as NAME=WEIGHTS; repeatable.
        #[arg(long)]
        teacher: Vec<String>,
        /// Write the per-iteration log as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Start plain conv chains at bilinear upsampling.
        #[arg(long)]
        anchor_bilinear: bool,
    },
    /// Convert train-form weights to deploy form.
    Fuse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that fusing the weights preserves the output.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        tol: f32,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time and score a model over a manifest.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
        /// Baseline PSNR-Y at QP31,QP63; computed on the same data when omitted.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        baseline_psnr: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_SCORE_C)]
        c: f64,
    },
    /// Challenge score from a PSNR gain and a runtime.
    Score {
        #[arg(long, allow_hyphen_values = true)]
        delta: f64,
        #[arg(long)]
        runtime_ms: f64,
        #[arg(long, default_value_t = DEFAULT_SCORE_C)]
        c: f64,
    },
}

/// Parses and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prepare {
            hr,
            out,
            qp,
            codec_cmd,
            decode_cmd,
            preset,
            no_codec,
        } => {
            let mode = if no_codec {
                CodecMode::Internal
            } else {
                CodecMode::External(ExternalCodec {
                    encode: codec_cmd.unwrap_or_else(|| DEFAULT_ENCODE_CMD.into()),
                    decode: decode_cmd,
                    preset,
                })
            };
            let qps: Vec<Option<u32>> = if no_codec { vec![None] } else { qp.into_iter().map(Some).collect() };
            let specs = challenge_specs(&qps).map_err(|e| BenchError::Usage(e.to_string()))?;
            let m = prepare_dataset(&hr, &out, &specs, &mode)?;
            println!("{} pairs written to {}, {} files skipped", m.entries.len(), out.display(), m.failures.len());
            for f in &m.failures {
                eprintln!("skipped {}: {}", f.path.display(), f.reason);
            }
            Ok(())
        }
        Command::Train {
            spec,
            width,
            plan,
            data,
            out,
            seed,
            teacher,
            log,
            anchor_bilinear,
        } => {
            let spec = Registry::builtin().spec(&spec, width).map_err(|e| BenchError::Usage(e.to_string()))?;
            let text = std::fs::read_to_string(&plan).map_err(|e| BenchError::io(&plan, e))?;
            let plan: StagePlan = serde_json::from_str(&text).map_err(|e| BenchError::Usage(format!("plan: {e}")))?;
            let mut teachers = BTreeMap::new();
            for t in &teacher {
                let (name, path) = t
                    .split_once('=')
                    .ok_or_else(|| BenchError::Usage(format!("teacher {t:?} is not NAME=WEIGHTS")))?;
                teachers.insert(name.to_string(), load_weights(Path::new(path))?);
            }
            let mut source = load_training_pairs(&data)?;
            let mut model = build(&spec, Mode::Train, seed)?;
            if anchor_bilinear {
                model.anchor_bilinear().map_err(|e| BenchError::Usage(e.to_string()))?;
            }
            let trained = run_stage_plan(&mut model, &plan, &mut source, &teachers, seed)?;
            if let Some(path) = log {
                std::fs::write(&path, trained.to_jsonl()?).map_err(|e| BenchError::io(&path, e))?;
            }
            save_weights(&model, &out)?;
            if let Some(last) = trained.records.last() {
                println!("trained {}: final loss {:.6}", spec.name, last.loss);
            }
            Ok(())
        }
        Command::Fuse { input, out } => {
            let model = load_weights(&input)?;
            let deploy = model.to_deploy()?;
            save_weights(&deploy, &out)?;
            println!("{}: {} -> {} parameters", model.spec().name, model.param_count(), deploy.param_count());
            Ok(())
        }
        Command::Verify { input, tol, trials, seed } => {
            let model = load_weights(&input)?;
            let check = verify_fusion(&model, trials, 24, tol, seed)?;
            println!("max abs err {:.3e} over {} inputs (tol {:.1e})", check.max_abs_err, check.trials, tol);
            if check.pass() {
                Ok(())
            } else {
                Err(BenchError::Data(format!("fused output differs by {:.3e}", check.max_abs_err)))
            }
        }
        Command::Eval {
            weights,
            manifest,
            runs,
            warmup,
            threads,
            report,
            format,
            baseline_psnr,
            c,
        } => {
            let format: ReportFormat = format.parse()?;
            let model: ModelGraph = load_weights(&weights)?;
            let up = NetworkUpscaler::new(model);
            let pairs = load_manifest_pairs(&manifest)?;
            let cfg = RunConfig {
                runs,
                warmup,
                threads,
                baseline: match baseline_psnr.as_deref() {
                    Some([a, b]) => BaselineSource::Supplied(QpPair { qp31: *a, qp63: *b }),
                    _ => BaselineSource::Compute,
                },
                c,
            };
            let rows = run_benchmark(&up, &pairs, &cfg, &mut MonotonicClock::default())?;
            match report {
                Some(path) => write_report(&rows, format, &path)?,
                None => print!("{}", emit_report(&rows, format)?),
            }
            Ok(())
        }
        Command::Score { delta, runtime_ms, c } => {
            let s = challenge_score(ScoreInputs {
                delta_db: delta,
                runtime_ms,
                c,
            })
            .map_err(|e| BenchError::Usage(e.to_string()))?;
            println!("{s:.4}");
            Ok(())
        }
    }
}

/// Pairs from a prepared dataset, trimmed so every HR is exactly the scale times its LR.
pub fn load_training_pairs(dir: &Path) -> Result<PairSource> {
    let mpath = dir.join(crate::dataset::MANIFEST_NAME);
    let manifest = Manifest::load(&mpath)?;
    let s = manifest.scale;
    let mut pairs = Vec::new();
    for e in &manifest.entries {
        let lr = load_image(&dir.join(&e.lr))?;
        let hr = load_image(&e.hr)?;
        let (h, w) = (hr.shape().h / s, hr.shape().w / s);
        if h == 0 || w == 0 || lr.shape().h < h || lr.shape().w < w {
            return Err(BenchError::Data(format!("{}: LR does not match its HR", e.lr.display())));
        }
        pairs.push((e.qp, crop_to(&lr, h, w), crop_to(&hr, h * s, w * s)));
    }
    Ok(PairSource::new(pairs, s)?)
}
