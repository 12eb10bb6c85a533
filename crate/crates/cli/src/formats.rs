//! Matrix, bigram and partition files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use lumpkit_core::{validate_stochastic, Matrix, Partition, StochasticMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Row-sum tolerance for matrices read from disk.
pub const INPUT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `json` for a `.json` extension, `csv` otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    matrix: Vec<Vec<f64>>,
}

pub fn parse_matrix(path: &Path, format: Format) -> Result<StochasticMatrix> {
    parse_matrix_str(&read_to_string(path)?, format)
}

/// Parses a matrix from text. CSV may start with a header line of labels.
pub fn parse_matrix_str(text: &str, format: Format) -> Result<StochasticMatrix> {
    let (rows, labels) = match format {
        Format::Csv => parse_csv(text)?,
        Format::Json => {
            let m: MatrixJson = serde_json::from_str(text).map_err(|e| CliError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
            if let Some(first) = m.matrix.first() {
                for (i, r) in m.matrix.iter().enumerate() {
                    if r.len() != first.len() {
                        return Err(CliError::RaggedRows {
                            line: i + 1,
                            expected: first.len(),
                            found: r.len(),
                        });
                    }
                }
            }
            (m.matrix, m.labels)
        }
    };
    let cols = rows.first().map_or(0, Vec::len);
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    let pi = validate_stochastic(Matrix::from_vec(rows.len(), cols, data), INPUT_TOL)?;
    match labels {
        Some(l) => {
            check_unique(&l)?;
            Ok(pi.with_labels(l)?)
        }
        None => Ok(pi),
    }
}

fn check_unique(labels: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(CliError::DuplicateLabel(l.clone()));
        }
    }
    Ok(())
}

type CsvRows = (Vec<Vec<f64>>, Option<Vec<String>>);

fn parse_csv(text: &str) -> Result<CsvRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Option<Vec<String>> = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Parse {
            line: e.position().map_or(idx + 1, |p| p.line() as usize),
            column: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        let parsed: Vec<std::result::Result<f64, usize>> = record
            .iter()
            .enumerate()
            .map(|(c, f)| f.parse::<f64>().map_err(|_| c + 1))
            .collect();
        if idx == 0 && parsed.iter().all(|p| p.is_err()) {
            labels = Some(record.iter().map(str::to_owned).collect());
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for p in parsed {
            match p {
                Ok(v) => row.push(v),
                Err(column) => {
                    return Err(CliError::Parse {
                        line,
                        column,
                        message: "not a number".into(),
                    })
                }
            }
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CliError::RaggedRows {
                    line,
                    expected: first.len(),
                    found: row.len(),
                });
            }
        } else if let Some(l) = &labels {
            if row.len() != l.len() {
                return Err(CliError::RaggedRows {
                    line,
                    expected: l.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    Ok((rows, labels))
}

/// Writes a matrix with shortest round-trip decimal representations.
pub fn write_matrix(pi: &StochasticMatrix, path: &Path, format: Format) -> Result<()> {
    write_string(path, &matrix_to_string(pi, format))
}

pub fn matrix_to_string(pi: &StochasticMatrix, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = String::new();
            if let Some(l) = pi.labels() {
                out.push_str(&l.join(","));
                out.push('\n');
            }
            for i in 0..pi.n() {
                let row: Vec<String> = pi.row(i).iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let m = MatrixJson {
                labels: pi.labels().map(<[String]>::to_vec),
                matrix: pi.matrix().to_rows(),
            };
            let mut s = serde_json::to_string_pretty(&m).expect("plain data serializes");
            s.push('\n');
            s
        }
    }
}

/// Letter labels `a`..`z`.
pub fn letter_labels() -> Vec<String> {
    (b'a'..=b'z').map(|c| (c as char).to_string()).collect()
}

pub fn ingest_bigrams(path: &Path, eta: f64) -> Result<StochasticMatrix> {
    ingest_bigrams_str(&read_to_string(path)?, eta)
}

/// 26-state chain from `<two letters> <count>` lines. Every cell receives
/// `eta` extra counts before row normalization. Letters may be upper case.
pub fn ingest_bigrams_str(text: &str, eta: f64) -> Result<StochasticMatrix> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(lumpkit_core::Error::InvalidConfig("smoothing must be non-negative").into());
    }
    let mut counts = Matrix::zeros(26, 26);
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut tokens = raw.split_whitespace();
        let (Some(pair), Some(count)) = (tokens.next(), tokens.next()) else {
            if raw.trim().is_empty() {
                continue;
            }
            return Err(CliError::BadBigram(line));
        };
        if tokens.next().is_some() || pair.chars().count() != 2 {
            return Err(CliError::BadBigram(line));
        }
        let mut letters = [0usize; 2];
        for (slot, ch) in letters.iter_mut().zip(pair.chars()) {
            if !ch.is_ascii_alphabetic() {
                return Err(CliError::NonLetter(line));
            }
            *slot = (ch.to_ascii_lowercase() as u8 - b'a') as usize;
        }
        if count.starts_with('-') {
            return Err(CliError::NegativeCount(line));
        }
        let value: u64 = count.parse().map_err(|_| CliError::BadBigram(line))?;
        counts[(letters[0], letters[1])] += value as f64;
    }
    for i in 0..26 {
        let row = counts.row_mut(i);
        row.iter_mut().for_each(|v| *v += eta);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
    Ok(validate_stochastic(counts, 1e-9)?.with_labels(letter_labels())?)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PartitionSpec {
    Indices(Vec<usize>),
    LabelSets(Vec<Vec<String>>),
}

pub fn parse_partitions(
    path: &Path,
    n: usize,
    labels: Option<&[String]>,
) -> Result<BTreeMap<usize, Partition>> {
    parse_partitions_str(&read_to_string(path)?, n, labels)
}

/// Partitions keyed by k, each given as an index array of length `n` or as
/// label sets that cover `labels` exactly once.
pub fn parse_partitions_str(
    text: &str,
    n: usize,
    labels: Option<&[String]>,
) -> Result<BTreeMap<usize, Partition>> {
    let raw: BTreeMap<String, PartitionSpec> =
        serde_json::from_str(text).map_err(|e| CliError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    let mut out = BTreeMap::new();
    for (key, spec) in raw {
        let k: usize = key.trim().parse().map_err(|_| CliError::Parse {
            line: 0,
            column: 0,
            message: format!("partition key {key:?} is not an integer"),
        })?;
        let partition = match spec {
            PartitionSpec::Indices(assign) => {
                if assign.len() != n {
                    return Err(CliError::BadAssignment(k));
                }
                Partition::new(assign, k).map_err(|_| CliError::BadAssignment(k))?
            }
            PartitionSpec::LabelSets(sets) => from_label_sets(k, &sets, n, labels)?,
        };
        if out.insert(k, partition).is_some() {
            return Err(CliError::BadAssignment(k));
        }
    }
    Ok(out)
}

fn from_label_sets(
    k: usize,
    sets: &[Vec<String>],
    n: usize,
    labels: Option<&[String]>,
) -> Result<Partition> {
    let labels =
        labels.ok_or_else(|| CliError::LabelMismatch("the matrix has no state labels".into()))?;
    let index: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut assign: Vec<Option<usize>> = vec![None; n];
    for (j, set) in sets.iter().enumerate() {
        for label in set {
            let &i = index
                .get(label.as_str())
                .ok_or_else(|| CliError::LabelMismatch(format!("unknown label {label:?}")))?;
            if assign[i].is_some() {
                return Err(CliError::DuplicateLabel(label.clone()));
            }
            assign[i] = Some(j);
        }
    }
    let missing: Vec<&str> = assign
        .iter()
        .zip(labels)
        .filter(|(a, _)| a.is_none())
        .map(|(_, l)| l.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::LabelMismatch(format!(
            "labels not covered for k = {k}: {}",
            missing.join(",")
        )));
    }
    let assign = assign.into_iter().map(|a| a.expect("checked")).collect();
    Partition::new(assign, k).map_err(|_| CliError::BadAssignment(k))
}

/// Index-array form keyed by k, one partition per line in increasing k.
pub fn partitions_to_string(parts: &BTreeMap<usize, Partition>) -> String {
    let lines: Vec<String> = parts
        .iter()
        .map(|(k, p)| {
            let assign = serde_json::to_string(p.assignment()).expect("plain data serializes");
            format!("  \"{k}\": {assign}")
        })
        .collect();
    format!("{{\n{}\n}}\n", lines.join(",\n"))
}
