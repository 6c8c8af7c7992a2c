//! Report rows and the CSV / JSON emitters.
//!
//! Both formats are byte-stable: fixed field order, floats printed with 17
//! significant digits, LF line endings. Identical rows render to identical
//! bytes, so reports can be diffed across machines and worker counts.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => write!(f, "pass"),
            Verdict::Fail => write!(f, "fail"),
            Verdict::NotApplicable => write!(f, "n/a"),
        }
    }
}

/// One measured quantity. Rows without an expectation carry verdict `n/a`;
/// judged rows compare against `expected` within `tolerance`, and bounded
/// rows treat `value` as a defect that must not exceed `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub quantity: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub expected: Option<f64>,
    pub tolerance: Option<f64>,
    pub verdict: Verdict,
}

impl ReportRow {
    pub fn new(experiment: &str, quantity: impl Into<String>, value: f64) -> Self {
        ReportRow {
            experiment: experiment.to_string(),
            quantity: quantity.into(),
            value,
            stderr: None,
            expected: None,
            tolerance: None,
            verdict: Verdict::NotApplicable,
        }
    }

    pub fn with_stderr(mut self, stderr: f64) -> Self {
        self.stderr = Some(stderr);
        self
    }

    /// Pass iff |value − expected| ≤ tolerance.
    pub fn judged(mut self, expected: f64, tolerance: f64) -> Self {
        self.expected = Some(expected);
        self.tolerance = Some(tolerance);
        self.verdict = if (self.value - expected).abs() <= tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        self
    }

    /// Pass iff value ≤ tolerance; the value is a nonnegative defect.
    pub fn bounded(mut self, tolerance: f64) -> Self {
        self.tolerance = Some(tolerance);
        self.verdict = if self.value <= tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        self
    }
}

/// Grid, scheme, and seed context carried by the JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dimension: usize,
    pub resolution: Vec<usize>,
    pub grid_spacing: Vec<f64>,
    pub schemes: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub provenance: Provenance,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.verdict == Verdict::Fail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputFormat::Csv => write!(f, "csv"),
            OutputFormat::Json => write!(f, "json"),
        }
    }
}

pub const CSV_HEADER: &str = "experiment,quantity,value,stderr,expected,tolerance,verdict";

/// 17 significant digits; round-trips any f64 exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        debug_assert!(
            !r.experiment.contains(',') && !r.quantity.contains(','),
            "row labels must not contain commas"
        );
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.experiment,
            r.quantity,
            fmt_float(r.value),
            fmt_opt(r.stderr),
            fmt_opt(r.expected),
            fmt_opt(r.tolerance),
            r.verdict
        ));
    }
    out
}

pub fn render_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn emit_report(report: &Report, format: OutputFormat, destination: &Path) -> Result<()> {
    assert!(!report.rows.is_empty(), "report must carry at least one row");
    let text = match format {
        OutputFormat::Csv => render_csv(&report.rows),
        OutputFormat::Json => render_json(report),
    };
    fs::write(destination, text).map_err(|source| CliError::Output {
        path: destination.display().to_string(),
        source,
    })
}
