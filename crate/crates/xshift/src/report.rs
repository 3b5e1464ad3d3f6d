//! Experiment reports and their serialized forms.
//!
//! JSON is the canonical format: keys are emitted in a fixed order and
//! every float is written with 17 significant digits, so identical runs
//! produce identical bytes and parsing recovers the exact values. CSV
//! flattens the result rows; markdown renders the comparison table in the
//! shape used throughout the experiment write-ups.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;

/// Schema tag embedded in every report.
pub const REPORT_SCHEMA: &str = "xshift-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
    Markdown,
}

/// Full configuration echo: enough to regenerate any row of the report.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportConfig {
    pub experiment: String,
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
    pub engine: String,
    pub distance: String,
    pub input_mode: String,
    /// Training bootstrap count (quantification only).
    pub bootstraps: usize,
    /// Rows per bootstrap (quantification only).
    pub sample_size: usize,
    pub quick: bool,
}

/// One comparison outcome. The verdict, when present, is "Distinct" or
/// "Not Distinct" and always equals `p_value < alpha` for the alpha echoed
/// in the same report.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportRow {
    pub comparison: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub verdict: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportMetadata {
    /// Crate version that produced the report.
    pub version: String,
    /// Attribution engine actually used, after resolution.
    pub engine: String,
    /// Named seeds derived from the top-level seed, for regenerating any
    /// intermediate sample in isolation.
    pub derived_seeds: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Report {
    pub schema: String,
    pub config: ReportConfig,
    pub rows: Vec<ReportRow>,
    pub metadata: ReportMetadata,
}

/// Verdict string for a p-value under the report's alpha.
pub fn verdict(p_value: Option<f64>, alpha: f64) -> Option<String> {
    p_value.map(|p| {
        if p < alpha {
            "Distinct".to_string()
        } else {
            "Not Distinct".to_string()
        }
    })
}

/// Canonical float form: scientific notation with 17 significant digits,
/// which round-trips every finite f64 exactly.
fn fmt_float(v: f64) -> String {
    debug_assert!(v.is_finite(), "reports must not contain non-finite values");
    format!("{v:.16e}")
}

pub(crate) fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

fn emit_json(report: &Report) -> String {
    let mut s = String::new();
    let c = &report.config;
    let _ = write!(
        s,
        "{{\n  \"schema\": \"{}\",\n  \"config\": {{\n    \"experiment\": \"{}\",\n    \
         \"n\": {},\n    \"seed\": {},\n    \"alpha\": {},\n    \"engine\": \"{}\",\n    \
         \"distance\": \"{}\",\n    \"input_mode\": \"{}\",\n    \"bootstraps\": {},\n    \
         \"sample_size\": {},\n    \"quick\": {}\n  }},\n  \"rows\": [",
        json_escape(&report.schema),
        json_escape(&c.experiment),
        c.n,
        c.seed,
        fmt_float(c.alpha),
        json_escape(&c.engine),
        json_escape(&c.distance),
        json_escape(&c.input_mode),
        c.bootstraps,
        c.sample_size,
        c.quick,
    );
    for (i, row) in report.rows.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let p = match row.p_value {
            Some(p) => fmt_float(p),
            None => "null".to_string(),
        };
        let v = match &row.verdict {
            Some(v) => format!("\"{}\"", json_escape(v)),
            None => "null".to_string(),
        };
        let _ = write!(
            s,
            "\n    {{\n      \"comparison\": \"{}\",\n      \"statistic\": {},\n      \
             \"p_value\": {},\n      \"verdict\": {}\n    }}",
            json_escape(&row.comparison),
            fmt_float(row.statistic),
            p,
            v,
        );
    }
    if !report.rows.is_empty() {
        s.push_str("\n  ");
    }
    let m = &report.metadata;
    let _ = write!(
        s,
        "],\n  \"metadata\": {{\n    \"version\": \"{}\",\n    \"engine\": \"{}\",\n    \
         \"derived_seeds\": {{",
        json_escape(&m.version),
        json_escape(&m.engine),
    );
    for (i, (name, seed)) in m.derived_seeds.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "\n      \"{}\": {}", json_escape(name), seed);
    }
    if !m.derived_seeds.is_empty() {
        s.push_str("\n    ");
    }
    s.push_str("}\n  }\n}\n");
    s
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn emit_csv(report: &Report) -> String {
    let mut s = String::from("comparison,statistic,p_value,verdict\n");
    for row in &report.rows {
        let p = row.p_value.map(fmt_float).unwrap_or_default();
        let v = row.verdict.as_deref().map(csv_quote).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{}",
            csv_quote(&row.comparison),
            fmt_float(row.statistic),
            p,
            v
        );
    }
    s
}

/// Short human-facing number: plain decimals in a readable range,
/// scientific notation outside it.
fn fmt_short(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e-3 && v.abs() < 1e6 {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

fn emit_markdown(report: &Report) -> String {
    let mut s = String::from("| Comparison | Statistic | p-value | Conclusions |\n");
    s.push_str("|---|---|---|---|\n");
    for row in &report.rows {
        let p = row.p_value.map(fmt_short).unwrap_or_else(|| "-".to_string());
        let v = row.verdict.clone().unwrap_or_else(|| "-".to_string());
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            row.comparison,
            fmt_short(row.statistic),
            p,
            v
        );
    }
    s
}

/// Serializes a report. JSON output is byte-stable for equal reports.
pub fn emit(report: &Report, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => emit_json(report),
        OutputFormat::Csv => emit_csv(report),
        OutputFormat::Markdown => emit_markdown(report),
    }
}
