//! LR dataset preparation with the internal resampler or an external codec command.

use std::path::{Path, PathBuf};
use std::process::Command;

use rtsr_core::resample::{degrade, quantize_8bit, DegradationSpec, CHALLENGE_QPS};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::image_io::{has_image_extension, load_image, save_png};

/// Downscale and encode, as run by the challenge organizers.
pub const DEFAULT_ENCODE_CMD: &str = "ffmpeg -hide_banner -y -loglevel error -i {input} -vf 'scale=ceil(iw/{scale}):ceil(ih/{scale}):flags=lanczos+accurate_rnd+full_chroma_int:sws_dither=none:param0=5' -c:v libsvtav1 -qp {qp} -preset {preset} {output}";
pub const DEFAULT_DECODE_CMD: &str = "ffmpeg -hide_banner -y -loglevel error -i {input} {output}";
pub const DEFAULT_PRESET: u32 = 5;
pub const MANIFEST_NAME: &str = "manifest.json";

/// `{stem}_{scale}x_qp{qp}.png`, or `{stem}_{scale}x.png` without compression.
pub fn lr_file_name(stem: &str, scale: usize, qp: Option<u32>) -> String {
    match qp {
        Some(q) => format!("{stem}_{scale}x_qp{q}.png"),
        None => format!("{stem}_{scale}x.png"),
    }
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.to_string_lossy().replace('\'', r"'\''"))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalCodec {
    pub encode: String,
    pub decode: String,
    pub preset: u32,
}

impl Default for ExternalCodec {
    fn default() -> Self {
        ExternalCodec {
            encode: DEFAULT_ENCODE_CMD.into(),
            decode: DEFAULT_DECODE_CMD.into(),
            preset: DEFAULT_PRESET,
        }
    }
}

fn program_exists(program: &str) -> bool {
    if program.contains('/') {
        return Path::new(program).is_file();
    }
    std::env::var_os("PATH").is_some_and(|paths| std::env::split_paths(&paths).any(|d| d.join(program).is_file()))
}

impl ExternalCodec {
    pub fn with_encode(encode: &str) -> Self {
        ExternalCodec {
            encode: encode.into(),
            ..ExternalCodec::default()
        }
    }

    /// Checks that the programs named by both templates can be found.
    pub fn probe(&self) -> Result<()> {
        for template in [&self.encode, &self.decode] {
            let program = template.split_whitespace().next().unwrap_or_default();
            if program.is_empty() || !program_exists(program) {
                return Err(BenchError::CodecUnavailable {
                    probe: template.clone(),
                    reason: format!("program {program:?} not found"),
                });
            }
        }
        Ok(())
    }

    fn run(&self, template: &str, input: &Path, output: &Path, scale: usize, qp: u32) -> Result<()> {
        let cmd = template
            .replace("{input}", &shell_quote(input))
            .replace("{output}", &shell_quote(output))
            .replace("{scale}", &scale.to_string())
            .replace("{qp}", &qp.to_string())
            .replace("{preset}", &self.preset.to_string());
        log::debug!("running {cmd}");
        let out = Command::new("sh").arg("-c").arg(&cmd).output().map_err(|e| BenchError::CodecFailed {
            input: input.to_path_buf(),
            reason: e.to_string(),
        })?;
        if !out.status.success() {
            return Err(BenchError::CodecFailed {
                input: input.to_path_buf(),
                reason: format!("`{cmd}` exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()),
            });
        }
        Ok(())
    }

    /// Encodes `hr` at `qp` into an intermediate file next to `lr_png`, decodes it to `lr_png`, removes the intermediate.
    pub fn produce(&self, hr: &Path, lr_png: &Path, scale: usize, qp: u32) -> Result<()> {
        let avif = lr_png.with_extension("avif");
        self.run(&self.encode, hr, &avif, scale, qp)?;
        self.run(&self.decode, &avif, lr_png, scale, qp)?;
        std::fs::remove_file(&avif).map_err(|e| BenchError::io(&avif, e))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CodecMode {
    Internal,
    External(ExternalCodec),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub hr: PathBuf,
    /// Relative to the manifest directory.
    pub lr: PathBuf,
    pub qp: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileFailure {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub scale: usize,
    pub codec: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub failures: Vec<FileFailure>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn qps(&self) -> Vec<Option<u32>> {
        let mut q: Vec<Option<u32>> = self.entries.iter().map(|e| e.qp).collect();
        q.sort();
        q.dedup();
        q
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| BenchError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_image_extension(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Writes LR files for every HR image and spec, plus `manifest.json`.
///
/// Internal mode cannot compress, so compressed specs collapse to the
/// uncompressed one. Unreadable or undersized images are recorded as
/// failures and skipped.
pub fn prepare_dataset(hr_dir: &Path, out_dir: &Path, specs: &[DegradationSpec], mode: &CodecMode) -> Result<Manifest> {
    if specs.is_empty() {
        return Err(BenchError::Usage("no degradation specs".into()));
    }
    let scale = specs[0].scale;
    if specs.iter().any(|s| s.scale != scale) {
        return Err(BenchError::Usage("all specs must share one scale".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let mut qps: Vec<Option<u32>> = match mode {
        CodecMode::Internal => {
            if specs.iter().any(|s| s.qp.is_some()) {
                log::warn!("internal mode writes uncompressed LR; QP list ignored");
            }
            vec![None]
        }
        CodecMode::External(codec) => {
            codec.probe()?;
            specs.iter().map(|s| s.qp).collect()
        }
    };
    qps.dedup();
    std::fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
    let mut manifest = Manifest {
        scale,
        codec: match mode {
            CodecMode::Internal => "internal".into(),
            CodecMode::External(_) => "external".into(),
        },
        entries: Vec::new(),
        failures: Vec::new(),
    };
    for path in list_images(hr_dir)? {
        let hr_abs = std::fs::canonicalize(&path).map_err(|e| BenchError::io(&path, e))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        let result = (|| -> Result<Vec<ManifestEntry>> {
            let hr = load_image(&path)?;
            let s = hr.shape();
            if s.h < scale || s.w < scale {
                return Err(BenchError::Data(format!("{}x{} is smaller than one LR pixel", s.w, s.h)));
            }
            let mut entries = Vec::new();
            for &qp in &qps {
                let name = lr_file_name(&stem, scale, qp);
                let target = out_dir.join(&name);
                match (qp, mode) {
                    (Some(q), CodecMode::External(codec)) => codec.produce(&hr_abs, &target, scale, q)?,
                    _ => {
                        let spec = DegradationSpec { qp: None, ..specs[0] };
                        save_png(&quantize_8bit(&degrade(&hr, &spec, None)?), &target)?;
                    }
                }
                entries.push(ManifestEntry {
                    hr: hr_abs.clone(),
                    lr: PathBuf::from(name),
                    qp,
                });
            }
            Ok(entries)
        })();
        match result {
            Ok(e) => manifest.entries.extend(e),
            Err(e @ BenchError::CodecUnavailable { .. }) => return Err(e),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                manifest.failures.push(FileFailure {
                    path: hr_abs,
                    reason: e.to_string(),
                });
            }
        }
    }
    let text = serde_json::to_string_pretty(&manifest)?;
    let mpath = out_dir.join(MANIFEST_NAME);
    std::fs::write(&mpath, text + "\n").map_err(|e| BenchError::io(&mpath, e))?;
    Ok(manifest)
}

/// Challenge specs for a QP list (`None` for uncompressed).
pub fn challenge_specs(qps: &[Option<u32>]) -> Result<Vec<DegradationSpec>> {
    qps.iter().map(|&q| Ok(DegradationSpec::challenge(q)?)).collect()
}

pub fn all_challenge_qps() -> Vec<Option<u32>> {
    CHALLENGE_QPS.iter().map(|&q| Some(q)).collect()
}
