//! Prediction logs and synthetic datasets.
//!
//! Two on-disk row formats are accepted:
//!
//! - `rows-json`: one JSON object per line with `"probs"` or `"logits"`
//!   (K numbers), `"label"` (integer) and optionally `"eta"` (K numbers).
//! - `rows-csv`: header `p_0,...,p_{K-1},label` or `z_0,...,z_{K-1},label`,
//!   optionally followed by `eta_0,...,eta_{K-1}` columns.

mod synthetic;

use std::fs;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{CalibError, ProbVector, Result};

pub use synthetic::{
    gauss2_posterior, gen_gauss2, gen_moons, read_points_csv, split_indices, write_points_csv, LabeledPoint,
    Split, SyntheticConfig, SyntheticKind,
};

/// Tolerance on total probability mass for rows given as probabilities.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub probs: ProbVector,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<ProbVector>,
    /// Raw scores, kept when the record was ingested from logits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

impl PredictionRecord {
    pub fn new(probs: ProbVector, label: usize) -> Result<Self> {
        if label >= probs.k() {
            return Err(CalibError::invalid(format!("label {label} out of range for K={}", probs.k())));
        }
        Ok(Self { probs, label, eta: None, logits: None })
    }

    pub fn from_logits(logits: Vec<f64>, label: usize) -> Result<Self> {
        let probs = ProbVector::from_logits(&logits)?;
        let mut rec = Self::new(probs, label)?;
        rec.logits = Some(logits);
        Ok(rec)
    }

    pub fn with_eta(mut self, eta: ProbVector) -> Result<Self> {
        if eta.k() != self.probs.k() {
            return Err(CalibError::Dimension { expected: self.probs.k(), got: eta.k() });
        }
        self.eta = Some(eta);
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.probs.k()
    }

    pub fn confidence(&self) -> f64 {
        self.probs.top().1
    }

    pub fn is_correct(&self) -> bool {
        self.probs.argmax() == self.label
    }
}

/// A nonempty collection of records sharing one class count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionSet {
    records: Vec<PredictionRecord>,
    k: usize,
}

impl PredictionSet {
    pub fn new(records: Vec<PredictionRecord>) -> Result<Self> {
        let first = records.first().ok_or_else(|| CalibError::invalid("prediction set is empty"))?;
        let k = first.k();
        for (i, r) in records.iter().enumerate() {
            if r.k() != k {
                return Err(CalibError::Row {
                    row: i + 1,
                    msg: format!("inconsistent class count {} (expected {k})", r.k()),
                });
            }
            if r.label >= k {
                return Err(CalibError::Row {
                    row: i + 1,
                    msg: format!("label {} out of range for K={k}", r.label),
                });
            }
        }
        Ok(Self { records, k })
    }

    /// Convenience constructor from raw probability rows.
    pub fn from_probs(probs: Vec<Vec<f64>>, labels: &[usize]) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(CalibError::Dimension { expected: probs.len(), got: labels.len() });
        }
        let records = probs
            .into_iter()
            .zip(labels)
            .map(|(p, &y)| PredictionRecord::new(ProbVector::new(p)?, y))
            .collect::<Result<Vec<_>>>()?;
        Self::new(records)
    }

    pub fn from_logits(logits: Vec<Vec<f64>>, labels: &[usize]) -> Result<Self> {
        if logits.len() != labels.len() {
            return Err(CalibError::Dimension { expected: logits.len(), got: labels.len() });
        }
        let records = logits
            .into_iter()
            .zip(labels)
            .map(|(z, &y)| PredictionRecord::from_logits(z, y))
            .collect::<Result<Vec<_>>>()?;
        Self::new(records)
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_logits(&self) -> bool {
        self.records.iter().all(|r| r.logits.is_some())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Serializes as `rows-json` with the given payload kind.
    pub fn to_rows_json(&self, kind: InputKind) -> Result<String> {
        let mut out = String::new();
        for (i, r) in self.records.iter().enumerate() {
            let mut obj = serde_json::Map::new();
            match kind {
                InputKind::Probs => {
                    obj.insert("probs".into(), json!(r.probs.as_slice()));
                }
                InputKind::Logits => {
                    let z = r
                        .logits
                        .as_ref()
                        .ok_or_else(|| CalibError::Row { row: i + 1, msg: "record has no logits".into() })?;
                    obj.insert("logits".into(), json!(z));
                }
            }
            obj.insert("label".into(), json!(r.label));
            if let Some(eta) = &r.eta {
                obj.insert("eta".into(), json!(eta.as_slice()));
            }
            out.push_str(&serde_json::to_string(&Value::Object(obj))?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowFormat {
    RowsJson,
    RowsCsv,
}

impl RowFormat {
    /// `.csv` files are read as CSV, anything else as JSON rows.
    pub fn infer(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => RowFormat::RowsCsv,
            _ => RowFormat::RowsJson,
        }
    }
}

impl FromStr for RowFormat {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows-json" | "json" | "jsonl" => Ok(RowFormat::RowsJson),
            "rows-csv" | "csv" => Ok(RowFormat::RowsCsv),
            other => Err(CalibError::invalid(format!("unknown row format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Probs,
    Logits,
}

impl InputKind {
    fn json_key(self) -> &'static str {
        match self {
            InputKind::Probs => "probs",
            InputKind::Logits => "logits",
        }
    }

    fn csv_prefix(self) -> &'static str {
        match self {
            InputKind::Probs => "p_",
            InputKind::Logits => "z_",
        }
    }
}

impl FromStr for InputKind {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probs" => Ok(InputKind::Probs),
            "logits" => Ok(InputKind::Logits),
            other => Err(CalibError::invalid(format!("unknown input kind '{other}'"))),
        }
    }
}

pub fn load_predictions(path: &Path, format: RowFormat, kind: InputKind) -> Result<PredictionSet> {
    let text = fs::read_to_string(path)?;
    parse_predictions(text.as_bytes(), format, kind)
}

/// Parses prediction rows from any reader. Row numbers in errors are 1-based
/// data rows (the CSV header is not counted).
pub fn parse_predictions<R: Read>(
    mut reader: R,
    format: RowFormat,
    kind: InputKind,
) -> Result<PredictionSet> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let records = match format {
        RowFormat::RowsJson => parse_json_rows(&text, kind)?,
        RowFormat::RowsCsv => parse_csv_rows(&text, kind)?,
    };
    PredictionSet::new(records)
}

fn build_record(
    row: usize,
    values: Vec<f64>,
    label: usize,
    eta: Option<Vec<f64>>,
    kind: InputKind,
    k_seen: &mut Option<usize>,
) -> Result<PredictionRecord> {
    let err = |msg: String| CalibError::Row { row, msg };
    let k = values.len();
    match *k_seen {
        None => *k_seen = Some(k),
        Some(expected) if expected != k => {
            return Err(err(format!("inconsistent class count {k} (expected {expected})")))
        }
        _ => {}
    }
    if k < 2 {
        return Err(err(format!("need at least 2 classes, got {k}")));
    }
    if label >= k {
        return Err(err(format!("label {label} out of range for K={k}")));
    }
    let rec = match kind {
        InputKind::Probs => {
            let probs = ProbVector::with_tolerance(values, MASS_TOLERANCE).map_err(|e| err(e.to_string()))?;
            PredictionRecord::new(probs, label)
        }
        InputKind::Logits => PredictionRecord::from_logits(values, label),
    }
    .map_err(|e| err(e.to_string()))?;
    match eta {
        Some(eta) => {
            let eta =
                ProbVector::with_tolerance(eta, MASS_TOLERANCE).map_err(|e| err(format!("eta: {e}")))?;
            rec.with_eta(eta).map_err(|e| err(e.to_string()))
        }
        None => Ok(rec),
    }
}

fn json_numbers(row: usize, v: &Value, key: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| CalibError::Row { row, msg: format!("'{key}' must be an array of numbers") })?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| CalibError::Row { row, msg: format!("'{key}' contains a non-numeric entry") })
        })
        .collect()
}

fn parse_json_rows(text: &str, kind: InputKind) -> Result<Vec<PredictionRecord>> {
    let mut k_seen = None;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line)
            .map_err(|e| CalibError::Row { row, msg: format!("malformed JSON: {e}") })?;
        let key = kind.json_key();
        let values = match v.get(key) {
            Some(x) => json_numbers(row, x, key)?,
            None => return Err(CalibError::Row { row, msg: format!("missing '{key}' array") }),
        };
        let label = v
            .get("label")
            .and_then(Value::as_u64)
            .ok_or_else(|| CalibError::Row { row, msg: "missing or non-integer 'label'".into() })?
            as usize;
        let eta = v.get("eta").map(|e| json_numbers(row, e, "eta")).transpose()?;
        out.push(build_record(row, values, label, eta, kind, &mut k_seen)?);
    }
    Ok(out)
}

fn parse_csv_rows(text: &str, kind: InputKind) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let prefix = kind.csv_prefix();
    let mut value_cols = Vec::new();
    let mut eta_cols = Vec::new();
    let mut label_col = None;
    for (j, name) in header.iter().enumerate() {
        if let Some(idx) = name.strip_prefix(prefix) {
            value_cols.push((parse_col_index(name, idx)?, j));
        } else if let Some(idx) = name.strip_prefix("eta_") {
            eta_cols.push((parse_col_index(name, idx)?, j));
        } else if name == "label" {
            label_col = Some(j);
        } else {
            return Err(CalibError::invalid(format!("unexpected CSV column '{name}'")));
        }
    }
    let label_col = label_col.ok_or_else(|| CalibError::invalid("CSV header lacks 'label'"))?;
    value_cols.sort_unstable();
    eta_cols.sort_unstable();
    check_contiguous(&value_cols, prefix)?;
    check_contiguous(&eta_cols, "eta_")?;

    let mut k_seen = None;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CalibError::Row { row, msg: e.to_string() })?;
        let field = |j: usize| -> Result<&str> {
            rec.get(j).ok_or_else(|| CalibError::Row { row, msg: "missing field".into() })
        };
        let num = |j: usize| -> Result<f64> {
            let s = field(j)?;
            s.parse::<f64>().map_err(|_| CalibError::Row { row, msg: format!("non-numeric field '{s}'") })
        };
        let values = value_cols.iter().map(|&(_, j)| num(j)).collect::<Result<Vec<_>>>()?;
        let label_str = field(label_col)?;
        let label = label_str.parse::<usize>().map_err(|_| CalibError::Row {
            row,
            msg: format!("label '{label_str}' is not a non-negative integer"),
        })?;
        let eta = if eta_cols.is_empty() {
            None
        } else {
            Some(eta_cols.iter().map(|&(_, j)| num(j)).collect::<Result<Vec<_>>>()?)
        };
        out.push(build_record(row, values, label, eta, kind, &mut k_seen)?);
    }
    Ok(out)
}

fn parse_col_index(name: &str, idx: &str) -> Result<usize> {
    idx.parse::<usize>().map_err(|_| CalibError::invalid(format!("bad CSV column name '{name}'")))
}

fn check_contiguous(cols: &[(usize, usize)], prefix: &str) -> Result<()> {
    for (expect, &(idx, _)) in cols.iter().enumerate() {
        if idx != expect {
            return Err(CalibError::invalid(format!(
                "CSV columns {prefix}* must be numbered 0..K-1 without gaps"
            )));
        }
    }
    Ok(())
}
