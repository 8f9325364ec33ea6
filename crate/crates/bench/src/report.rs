//! Benchmark rows as CSV, JSON or an aligned text table.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub qp: Option<u32>,
    #[serde(with = "nonfinite")]
    pub psnr_rgb: Option<f64>,
    #[serde(with = "nonfinite")]
    pub psnr_y: Option<f64>,
    pub ssim_rgb: Option<f64>,
    pub ssim_y: Option<f64>,
    pub runtime_ms_mean: f64,
    pub runtime_ms_p50: f64,
    pub runtime_ms_p95: f64,
    pub params_m: f64,
    #[serde(with = "nonfinite")]
    pub delta_db: Option<f64>,
    pub score: Option<f64>,
}

/// JSON has no infinity; identical images give PSNR `"inf"`.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_finite() => s.serialize_some(x),
            Some(x) => s.serialize_some(&x.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => t.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Table,
}

impl FromStr for ReportFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            _ => Err(BenchError::Usage(format!("unknown report format {s:?}; use csv, json or table"))),
        }
    }
}

pub const COLUMNS: [&str; 12] = [
    "model",
    "qp",
    "psnr_rgb",
    "psnr_y",
    "ssim_rgb",
    "ssim_y",
    "runtime_ms_mean",
    "runtime_ms_p50",
    "runtime_ms_p95",
    "params_m",
    "delta_db",
    "score",
];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

impl ReportRow {
    /// Shortest round-tripping text for every column; empty for missing values.
    fn fields(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            opt(&self.qp),
            opt(&self.psnr_rgb),
            opt(&self.psnr_y),
            opt(&self.ssim_rgb),
            opt(&self.ssim_y),
            self.runtime_ms_mean.to_string(),
            self.runtime_ms_p50.to_string(),
            self.runtime_ms_p95.to_string(),
            self.params_m.to_string(),
            opt(&self.delta_db),
            opt(&self.score),
        ]
    }

    fn from_fields(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != COLUMNS.len() {
            return Err(BenchError::Data(format!("expected {} columns, found {}", COLUMNS.len(), rec.len())));
        }
        fn parse<T: FromStr>(col: &str, s: &str) -> Result<T> {
            s.parse().map_err(|_| BenchError::Data(format!("bad {col} value {s:?}")))
        }
        let o = |i: usize| -> Result<Option<f64>> {
            match &rec[i] {
                "" => Ok(None),
                s => parse(COLUMNS[i], s).map(Some),
            }
        };
        Ok(ReportRow {
            model: rec[0].to_string(),
            qp: match &rec[1] {
                "" => None,
                s => Some(parse("qp", s)?),
            },
            psnr_rgb: o(2)?,
            psnr_y: o(3)?,
            ssim_rgb: o(4)?,
            ssim_y: o(5)?,
            runtime_ms_mean: parse(COLUMNS[6], &rec[6])?,
            runtime_ms_p50: parse(COLUMNS[7], &rec[7])?,
            runtime_ms_p95: parse(COLUMNS[8], &rec[8])?,
            params_m: parse(COLUMNS[9], &rec[9])?,
            delta_db: o(10)?,
            score: o(11)?,
        })
    }
}

fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Data(e.to_string()))
}

fn to_table(rows: &[ReportRow]) -> String {
    let f2 = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
    let f4 = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.qp.map(|q| q.to_string()).unwrap_or_else(|| "-".into()),
                f2(r.psnr_rgb),
                f2(r.psnr_y),
                f4(r.ssim_rgb),
                f4(r.ssim_y),
                format!("{:.3}", r.runtime_ms_mean),
                format!("{:.3}", r.runtime_ms_p50),
                format!("{:.3}", r.runtime_ms_p95),
                format!("{:.4}", r.params_m),
                f4(r.delta_db),
                f2(r.score),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|i| cells.iter().map(|c| c[i].len()).chain([COLUMNS[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, items: Vec<&str>| {
        let parts: Vec<String> = items
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, COLUMNS.to_vec());
    for c in &cells {
        line(&mut out, c.iter().map(String::as_str).collect());
    }
    out
}

/// Renders rows; an empty report is an error.
pub fn emit_report(rows: &[ReportRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(BenchError::Data("no rows to report".into()));
    }
    match format {
        ReportFormat::Csv => to_csv(rows),
        ReportFormat::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
        ReportFormat::Table => Ok(to_table(rows)),
    }
}

/// Renders first, so nothing is created when rendering fails.
pub fn write_report(rows: &[ReportRow], format: ReportFormat, path: &Path) -> Result<()> {
    let text = emit_report(rows, format)?;
    std::fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

pub fn parse_report(text: &str, format: ReportFormat) -> Result<Vec<ReportRow>> {
    match format {
        ReportFormat::Json => Ok(serde_json::from_str(text)?),
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            let header = r.headers()?.clone();
            if header.iter().ne(COLUMNS) {
                return Err(BenchError::Data(format!("unexpected CSV header {:?}", header)));
            }
            r.records().map(|rec| ReportRow::from_fields(&rec?)).collect()
        }
        ReportFormat::Table => Err(BenchError::Usage("table reports are for reading, not parsing".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(qp: Option<u32>, psnr: f64) -> ReportRow {
        ReportRow {
            model: "Team, C3".into(),
            qp,
            psnr_rgb: Some(psnr),
            psnr_y: Some(psnr + 0.1),
            ssim_rgb: Some(0.912_345_678_9),
            ssim_y: None,
            runtime_ms_mean: 0.1 + 0.2,
            runtime_ms_p50: 0.3,
            runtime_ms_p95: 1.0 / 3.0,
            params_m: 0.010_243,
            delta_db: Some(-0.07),
            score: None,
        }
    }

    #[test]
    fn csv_and_json_round_trip() {
        let rows = vec![row(Some(31), 33.123_456_789), row(None, f64::INFINITY)];
        for f in [ReportFormat::Csv, ReportFormat::Json] {
            let text = emit_report(&rows, f).unwrap();
            assert_eq!(parse_report(&text, f).unwrap(), rows, "{f:?}");
        }
    }

    #[test]
    fn table_lists_every_row() {
        let text = emit_report(&[row(Some(31), 30.0), row(Some(63), 28.0)], ReportFormat::Table).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().contains("runtime_ms_p95"));
    }

    #[test]
    fn empty_report_creates_nothing() {
        let dir = std::env::temp_dir().join(format!("rtsr-empty-{}", std::process::id()));
        assert!(write_report(&[], ReportFormat::Csv, &dir).is_err());
        assert!(!dir.exists());
    }

    #[test]
    fn format_names() {
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
