//! Timed evaluation of one upscaler over a set of LR/HR pairs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rtsr_core::metrics::{challenge_score, delta_psnr, mean_metrics, quality_metrics, QpPair, QualityMetrics, ScoreInputs, DEFAULT_SCORE_C};
use rtsr_core::Tensor;

use crate::dataset::Manifest;
use crate::error::{BenchError, Result};
use crate::image_io::load_image;
use crate::report::ReportRow;
use crate::upscaler::{crop_to, LanczosBaseline, Upscaler};

pub trait Clock: Send {
    fn now(&mut self) -> Duration;
}

pub struct MonotonicClock {
    start: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock { start: Instant::now() }
    }
}

impl Clock for MonotonicClock {
    fn now(&mut self) -> Duration {
        self.start.elapsed()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaselineSource {
    /// Known baseline PSNR-Y at QP31/QP63.
    Supplied(QpPair),
    /// Evaluate the Lanczos baseline on the same pairs (untimed).
    Compute,
    /// No Δ and no score.
    Skip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub runs: usize,
    pub warmup: usize,
    /// Size of the worker pool the convolutions run on.
    pub threads: usize,
    pub baseline: BaselineSource,
    pub c: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            runs: 100,
            warmup: 10,
            threads: 1,
            baseline: BaselineSource::Compute,
            c: DEFAULT_SCORE_C,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(BenchError::Usage("runs must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(BenchError::Usage("threads must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub name: String,
    pub qp: Option<u32>,
    pub lr: Tensor,
    pub hr: Option<Tensor>,
}

/// Reads every pair listed in a manifest; LR paths are relative to its directory.
pub fn load_manifest_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    let manifest = Manifest::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    manifest
        .entries
        .iter()
        .map(|e| {
            let lr_path = dir.join(&e.lr);
            Ok(EvalPair {
                name: e.lr.to_string_lossy().into_owned(),
                qp: e.qp,
                lr: load_image(&lr_path)?,
                hr: if e.hr.exists() { Some(load_image(&e.hr)?) } else { None },
            })
        })
        .collect()
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn checked_metrics(up: &dyn Upscaler, pair: &EvalPair, out: &Tensor) -> Result<Option<QualityMetrics>> {
    let Some(hr) = &pair.hr else { return Ok(None) };
    let (o, h) = (out.shape(), hr.shape());
    // HR sides that are not multiples of the scale round up on the LR side
    let trimmed = o.h >= h.h && o.h - h.h < up.scale() && o.w >= h.w && o.w - h.w < up.scale();
    let out = if trimmed { crop_to(out, h.h, h.w) } else { out.clone() };
    if out.shape() != hr.shape() {
        return Err(BenchError::Data(format!(
            "{}: {} output {} does not match HR {}",
            pair.name,
            up.name(),
            out.shape(),
            hr.shape()
        )));
    }
    Ok(Some(quality_metrics(&out, hr)?))
}

/// Mean metrics per QP, without timing.
pub fn evaluate_quality(up: &dyn Upscaler, pairs: &[EvalPair]) -> Result<BTreeMap<Option<u32>, QualityMetrics>> {
    let mut groups: BTreeMap<Option<u32>, Vec<QualityMetrics>> = BTreeMap::new();
    for p in pairs {
        if let Some(m) = checked_metrics(up, p, &up.upscale(&p.lr)?)? {
            groups.entry(p.qp).or_default().push(m);
        }
    }
    Ok(groups.into_iter().filter_map(|(q, v)| Some((q, mean_metrics(&v)?))).collect())
}

/// PSNR-Y at QP31/QP63, or the uncompressed value twice when no QPs were evaluated.
pub fn psnr_y_pair(per_qp: &BTreeMap<Option<u32>, QualityMetrics>) -> Option<QpPair> {
    match (per_qp.get(&Some(31)), per_qp.get(&Some(63))) {
        (Some(a), Some(b)) => Some(QpPair { qp31: a.psnr_y, qp63: b.psnr_y }),
        _ if per_qp.keys().all(Option::is_none) => per_qp.get(&None).map(|m| QpPair { qp31: m.psnr_y, qp63: m.psnr_y }),
        _ => None,
    }
}

/// One row per QP: mean metrics, runtime statistics over the timed runs, Δ and score.
///
/// Each pair is upscaled `warmup` times untimed, then `runs` times between two clock reads.
pub fn run_benchmark(up: &dyn Upscaler, pairs: &[EvalPair], cfg: &RunConfig, clock: &mut dyn Clock) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| BenchError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(up, pairs, cfg, clock))
}

fn run_in_pool(up: &dyn Upscaler, pairs: &[EvalPair], cfg: &RunConfig, clock: &mut dyn Clock) -> Result<Vec<ReportRow>> {
    if pairs.is_empty() {
        return Err(BenchError::Data("no pairs to evaluate".into()));
    }
    let mut metrics: BTreeMap<Option<u32>, Vec<QualityMetrics>> = BTreeMap::new();
    let mut samples: BTreeMap<Option<u32>, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        for _ in 0..cfg.warmup {
            up.upscale(&p.lr)?;
        }
        let mut last = None;
        let times = samples.entry(p.qp).or_default();
        for _ in 0..cfg.runs {
            let t0 = clock.now();
            let out = up.upscale(&p.lr)?;
            let t1 = clock.now();
            times.push((t1.saturating_sub(t0)).as_secs_f64() * 1e3);
            last = Some(out);
        }
        let out = last.expect("runs >= 1");
        let m = checked_metrics(up, p, &out)?;
        let group = metrics.entry(p.qp).or_default();
        group.extend(m);
    }
    let per_qp: BTreeMap<Option<u32>, QualityMetrics> =
        metrics.iter().filter_map(|(q, v)| Some((*q, mean_metrics(v)?))).collect();

    let all: Vec<f64> = samples.values().flatten().copied().collect();
    let overall_ms = all.iter().sum::<f64>() / all.len() as f64;
    let delta = if up.is_baseline() && cfg.baseline != BaselineSource::Skip {
        Some(0.0)
    } else {
        let model = psnr_y_pair(&per_qp);
        let base = match cfg.baseline {
            BaselineSource::Supplied(p) => Some(p),
            BaselineSource::Compute => psnr_y_pair(&evaluate_quality(&LanczosBaseline { scale: up.scale() }, pairs)?),
            BaselineSource::Skip => None,
        };
        model.zip(base).map(|(m, b)| delta_psnr(m, b))
    };
    let score = match delta {
        Some(d) if !up.is_baseline() => Some(challenge_score(ScoreInputs {
            delta_db: d,
            runtime_ms: overall_ms.max(f64::MIN_POSITIVE),
            c: cfg.c,
        })?),
        _ => None,
    };

    Ok(samples
        .into_iter()
        .map(|(qp, mut times)| {
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            times.sort_by(f64::total_cmp);
            let m = per_qp.get(&qp);
            ReportRow {
                model: up.name().to_string(),
                qp,
                psnr_rgb: m.map(|m| m.psnr_rgb),
                psnr_y: m.map(|m| m.psnr_y),
                ssim_rgb: m.map(|m| m.ssim_rgb),
                ssim_y: m.map(|m| m.ssim_y),
                runtime_ms_mean: mean,
                runtime_ms_p50: percentile(&times, 50.0),
                runtime_ms_p95: percentile(&times, 95.0),
                params_m: up.param_count() as f64 / 1e6,
                delta_db: delta,
                score,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&s, 50.0), 50.0);
        assert_eq!(percentile(&s, 95.0), 95.0);
        assert_eq!(percentile(&[7.0], 95.0), 7.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 50.0), 2.0);
    }

    #[test]
    fn config_checks() {
        assert!(RunConfig { runs: 0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { threads: 0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { threads: 4, ..RunConfig::default() }.validate().is_ok());
    }

    #[test]
    fn uncompressed_pair_fallback() {
        let m = QualityMetrics { psnr_rgb: 30.0, psnr_y: 31.0, ssim_rgb: 0.9, ssim_y: 0.9 };
        let only_none: BTreeMap<_, _> = [(None, m)].into();
        assert_eq!(psnr_y_pair(&only_none), Some(QpPair { qp31: 31.0, qp63: 31.0 }));
        let partial: BTreeMap<_, _> = [(Some(31), m), (None, m)].into();
        assert_eq!(psnr_y_pair(&partial), None);
    }
}
