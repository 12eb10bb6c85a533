//! Selection reports on disk.

use std::path::Path;

use lumpkit_core::{HeterogeneityMode, Membership, SelectionOptions, SelectionReport};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::formats::{read_to_string, write_string, Format};

/// Context written next to the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub input_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions_sha256: Option<String>,
    /// `uniform` or `stationary`.
    pub rho: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn mode_name(mode: HeterogeneityMode) -> &'static str {
    match mode {
        HeterogeneityMode::Plain => "plain",
        HeterogeneityMode::Whiten => "whiten",
    }
}

pub fn membership_name(m: Membership) -> &'static str {
    match m {
        Membership::Normalized => "normalized",
        Membership::Raw => "raw",
    }
}

/// 12 decimals in `[1e-4, 1e12)`, 12 significant digits in scientific form
/// elsewhere; `inf`, `-inf` and `nan` for non-finite values.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = v.abs();
    if a == 0.0 || (1e-4..1e12).contains(&a) {
        format!("{v:.12}")
    } else {
        format!("{v:.11e}")
    }
}

pub fn report_to_csv(report: &SelectionReport, meta: &ReportMeta) -> String {
    let mut out = String::new();
    for line in header_lines(report, meta) {
        out.push_str("# ");
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("k,t_bar,nu\n");
    for (i, &k) in report.k_values.iter().enumerate() {
        let nu = report.nu[i].map(format_number).unwrap_or_default();
        out.push_str(&format!("{k},{},{nu}\n", format_number(report.t_bar[i])));
    }
    out
}

fn header_lines(report: &SelectionReport, meta: &ReportMeta) -> Vec<String> {
    let o = &report.options;
    let mut lines = vec![format!("input_sha256: {}", meta.input_sha256)];
    if let Some(h) = &meta.partitions_sha256 {
        lines.push(format!("partitions_sha256: {h}"));
    }
    lines.push(format!("mode: {}", mode_name(o.mode)));
    lines.push(format!("membership: {}", membership_name(o.membership)));
    lines.push(format!("rho: {}", meta.rho));
    lines.push(format!("floor: {:e}", o.floor));
    lines.push(format!("zero_tol: {:e}", o.zero_tol));
    lines.push(format!("k_t: {}", report.k_t));
    lines.push(format!(
        "exact_fit: {}",
        report.exact_fit.map_or("none".to_string(), |k| k.to_string())
    ));
    lines
}

#[derive(Serialize, Deserialize)]
struct OptionsJson {
    mode: String,
    membership: String,
    floor: f64,
    zero_tol: f64,
}

#[derive(Serialize, Deserialize)]
struct RowJson {
    k: usize,
    t_bar: f64,
    nu: Value,
    t_bar_per_superstate: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    k_t: usize,
    exact_fit: Option<usize>,
    #[serde(flatten)]
    meta: ReportMeta,
    options: OptionsJson,
    rows: Vec<RowJson>,
}

/// Finite numbers as JSON numbers, the rest as `"inf"`, `"-inf"`, `"nan"`.
fn number_value(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or_else(|| Value::String(format_number(v)), Value::Number)
}

fn value_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            _ => None,
        },
        _ => None,
    }
}

pub fn report_to_json(report: &SelectionReport, meta: &ReportMeta) -> String {
    let o = &report.options;
    let doc = ReportJson {
        k_t: report.k_t,
        exact_fit: report.exact_fit,
        meta: meta.clone(),
        options: OptionsJson {
            mode: mode_name(o.mode).into(),
            membership: membership_name(o.membership).into(),
            floor: o.floor,
            zero_tol: o.zero_tol,
        },
        rows: report
            .k_values
            .iter()
            .enumerate()
            .map(|(i, &k)| RowJson {
                k,
                t_bar: report.t_bar[i],
                nu: report.nu[i].map_or(Value::Null, number_value),
                t_bar_per_superstate: report.t_bar_per_superstate[i].clone(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn write_report(
    report: &SelectionReport,
    meta: &ReportMeta,
    path: &Path,
    format: Format,
) -> Result<()> {
    let text = match format {
        Format::Csv => report_to_csv(report, meta),
        Format::Json => report_to_json(report, meta),
    };
    write_string(path, &text)
}

pub fn read_report(path: &Path) -> Result<(SelectionReport, ReportMeta)> {
    report_from_json(&read_to_string(path)?)
}

pub fn report_from_json(text: &str) -> Result<(SelectionReport, ReportMeta)> {
    let bad = |message: &str| CliError::Parse {
        line: 0,
        column: 0,
        message: message.into(),
    };
    let doc: ReportJson = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mode = match doc.options.mode.as_str() {
        "plain" => HeterogeneityMode::Plain,
        "whiten" => HeterogeneityMode::Whiten,
        _ => return Err(bad("unknown mode")),
    };
    let membership = match doc.options.membership.as_str() {
        "normalized" => Membership::Normalized,
        "raw" => Membership::Raw,
        _ => return Err(bad("unknown membership")),
    };
    let mut nu = Vec::with_capacity(doc.rows.len());
    for r in &doc.rows {
        nu.push(match &r.nu {
            Value::Null => None,
            v => Some(value_number(v).ok_or_else(|| bad("nu is not a number"))?),
        });
    }
    let report = SelectionReport {
        k_values: doc.rows.iter().map(|r| r.k).collect(),
        t_bar: doc.rows.iter().map(|r| r.t_bar).collect(),
        t_bar_per_superstate: doc.rows.iter().map(|r| r.t_bar_per_superstate.clone()).collect(),
        nu,
        k_t: doc.k_t,
        exact_fit: doc.exact_fit,
        options: SelectionOptions {
            mode,
            membership,
            floor: doc.options.floor,
            zero_tol: doc.options.zero_tol,
        },
    };
    Ok((report, doc.meta))
}
