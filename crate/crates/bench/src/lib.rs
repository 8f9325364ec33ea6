//! Dataset preparation, weight files, timed evaluation and reports for tiny
//! real-time ×4 upscalers.

pub mod benchmark;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod image_io;
pub mod report;
pub mod upscaler;
pub mod weights;

pub use benchmark::{load_manifest_pairs, run_benchmark, BaselineSource, Clock, EvalPair, MonotonicClock, RunConfig};
pub use dataset::{prepare_dataset, CodecMode, ExternalCodec, Manifest, ManifestEntry};
pub use error::{BenchError, Result};
pub use fusion::{verify_fusion, FusionCheck};
pub use report::{emit_report, parse_report, write_report, ReportFormat, ReportRow};
pub use upscaler::{LanczosBaseline, NetworkUpscaler, Upscaler, UpscalerRegistry};
pub use weights::{load_weights, save_weights};
