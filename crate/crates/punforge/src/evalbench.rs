//! Result arithmetic: recognition accuracy, the MLLM × LLM accuracy matrix
//! with column averages, and the ablation ladder with per-step deltas.
//!
//! Aggregation is always full precision; rounding (half away from zero, one
//! decimal) happens only at display time. Column averages are mean-then-round,
//! never round-then-mean.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::{RunMode, RunRecord, RunStatus};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to aggregate")]
    Empty,
    #[error("duplicate idiom {canonical:?} in group {group}")]
    DuplicateIdiom { canonical: String, group: String },
    #[error("groups cover different idiom sets:\n{report}")]
    RaggedGroups { report: String },
    #[error("cell value {value} out of [0, 100] at row {row} col {col}")]
    CellOutOfRange {
        row: String,
        col: String,
        value: f64,
    },
    #[error("matrix shape invalid: {0}")]
    BadShape(String),
    #[error("ablation ladder incomplete: column {column} is missing config {config}")]
    MissingConfig { column: String, config: RunMode },
    #[error("csv error: {0}")]
    Csv(String),
}

/// How PROVIDER_FAILED runs enter accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailedRunPolicy {
    /// Failed runs count as unrecognized (the default).
    #[default]
    CountAsMiss,
    /// Failed runs are dropped from both numerator and denominator.
    Exclude,
}

impl FailedRunPolicy {
    pub fn describe(&self) -> &'static str {
        match self {
            FailedRunPolicy::CountAsMiss => "provider-failed runs counted as misses",
            FailedRunPolicy::Exclude => "provider-failed runs excluded",
        }
    }
}

/// Rounds to one decimal, half away from zero. `-0.0` normalizes to `0.0`.
pub fn round1(x: f64) -> f64 {
    let r = (x * 10.0).round() / 10.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// One-decimal display of a full-precision value.
pub fn fmt1(x: f64) -> String {
    format!("{:.1}", round1(x))
}

/// Percentage of recognized idioms over one record per idiom.
pub fn accuracy(records: &[RunRecord]) -> Result<f64, EvalError> {
    accuracy_with(records, FailedRunPolicy::CountAsMiss)
}

/// Accuracy under an explicit failed-run policy.
pub fn accuracy_with(records: &[RunRecord], policy: FailedRunPolicy) -> Result<f64, EvalError> {
    accuracy_refs(records.iter(), policy)
}

fn accuracy_refs<'a>(
    records: impl Iterator<Item = &'a RunRecord>,
    policy: FailedRunPolicy,
) -> Result<f64, EvalError> {
    let mut seen = BTreeSet::new();
    let mut total = 0usize;
    let mut matched = 0usize;
    for record in records {
        if !seen.insert(record.idiom.canonical.as_str()) {
            return Err(EvalError::DuplicateIdiom {
                canonical: record.idiom.canonical.clone(),
                group: "(all records)".into(),
            });
        }
        if record.status == RunStatus::ProviderFailed && policy == FailedRunPolicy::Exclude {
            continue;
        }
        total += 1;
        if record.matched {
            matched += 1;
        }
    }
    if total == 0 {
        return Err(EvalError::Empty);
    }
    Ok(100.0 * matched as f64 / total as f64)
}

/// Published row/column ordering for reports; unknown ids sort after,
/// alphabetically.
const MLLM_ORDER: [&str; 10] = [
    "gpt", "gemini", "claude", "grok", "doubao", "llama", "glm-4.5v", "qwen2.5", "gemma",
    "mistral",
];
const LLM_ORDER: [&str; 10] = [
    "gpt", "gemini", "claude", "grok", "doubao", "deepseek", "gpt-oss", "llama", "glm-4.5",
    "qwen3",
];

fn order_key(order: &[&str], id: &str) -> (usize, String) {
    let lowered = id.to_lowercase();
    let pos = order.iter().position(|&o| o == lowered).unwrap_or(usize::MAX);
    (pos, lowered)
}

fn sort_ids(order: &[&str], ids: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut ids: Vec<String> = ids.into_iter().collect();
    ids.sort_by_key(|id| order_key(order, id));
    ids.dedup();
    ids
}

/// Recognition accuracy per (MLLM row, LLM column), plus column averages.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// `cells[r][c]` in percent, full precision.
    pub cells: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn from_cells(
        rows: Vec<String>,
        cols: Vec<String>,
        cells: Vec<Vec<f64>>,
    ) -> Result<Self, EvalError> {
        if rows.is_empty() || cols.is_empty() {
            return Err(EvalError::BadShape("matrix must be non-empty".into()));
        }
        if cells.len() != rows.len() {
            return Err(EvalError::BadShape(format!(
                "{} cell rows for {} row labels",
                cells.len(),
                rows.len()
            )));
        }
        for (r, row) in cells.iter().enumerate() {
            if row.len() != cols.len() {
                return Err(EvalError::BadShape(format!(
                    "row {} has {} cells for {} columns",
                    rows[r],
                    row.len(),
                    cols.len()
                )));
            }
            for (c, &value) in row.iter().enumerate() {
                if !(0.0..=100.0).contains(&value) || value.is_nan() {
                    return Err(EvalError::CellOutOfRange {
                        row: rows[r].clone(),
                        col: cols[c].clone(),
                        value,
                    });
                }
            }
        }
        Ok(AccuracyMatrix { rows, cols, cells })
    }

    /// Groups records by (recognizing MLLM, prompting LLM) and computes one
    /// accuracy cell per group. Every group must cover the same idiom set;
    /// ragged coverage is rejected with a per-group diff.
    pub fn from_records(
        records: &[RunRecord],
        policy: FailedRunPolicy,
    ) -> Result<Self, EvalError> {
        if records.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
        for record in records {
            groups
                .entry((
                    record.binding.infer_mllm.clone(),
                    record.binding.prompt_llm.clone(),
                ))
                .or_default()
                .push(record);
        }
        // coverage check over canonical idiom sets
        let mut universe: BTreeSet<String> = BTreeSet::new();
        let mut coverage: BTreeMap<&(String, String), BTreeSet<String>> = BTreeMap::new();
        for (key, group) in &groups {
            let mut set = BTreeSet::new();
            for record in group {
                if !set.insert(record.idiom.canonical.clone()) {
                    return Err(EvalError::DuplicateIdiom {
                        canonical: record.idiom.canonical.clone(),
                        group: format!("mllm={} llm={}", key.0, key.1),
                    });
                }
            }
            universe.extend(set.iter().cloned());
            coverage.insert(key, set);
        }
        let mut report = String::new();
        for (key, set) in &coverage {
            let missing: Vec<&String> = universe.difference(set).collect();
            if !missing.is_empty() {
                let shown: Vec<&str> = missing.iter().take(5).map(|s| s.as_str()).collect();
                let _ = writeln!(
                    report,
                    "  mllm={} llm={}: missing {} idiom(s), e.g. {:?}",
                    key.0,
                    key.1,
                    missing.len(),
                    shown
                );
            }
        }
        if !report.is_empty() {
            return Err(EvalError::RaggedGroups { report });
        }

        let rows = sort_ids(
            &MLLM_ORDER,
            groups.keys().map(|(mllm, _)| mllm.clone()),
        );
        let cols = sort_ids(&LLM_ORDER, groups.keys().map(|(_, llm)| llm.clone()));
        let mut cells = vec![vec![f64::NAN; cols.len()]; rows.len()];
        for ((mllm, llm), group) in &groups {
            let r = rows.iter().position(|x| x == mllm).unwrap();
            let c = cols.iter().position(|x| x == llm).unwrap();
            cells[r][c] = accuracy_refs(group.iter().copied(), policy)?;
        }
        // a missing (row, col) combination is also ragged coverage
        for (r, row) in cells.iter().enumerate() {
            for (c, value) in row.iter().enumerate() {
                if value.is_nan() {
                    return Err(EvalError::RaggedGroups {
                        report: format!("  no records for mllm={} llm={}", rows[r], cols[c]),
                    });
                }
            }
        }
        AccuracyMatrix::from_cells(rows, cols, cells)
    }

    /// Full-precision arithmetic mean of each column.
    pub fn col_averages(&self) -> Vec<f64> {
        (0..self.cols.len())
            .map(|c| {
                let sum: f64 = self.cells.iter().map(|row| row[c]).sum();
                sum / self.rows.len() as f64
            })
            .collect()
    }

    pub fn cell(&self, row: &str, col: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.cols.iter().position(|x| x == col)?;
        Some(self.cells[r][c])
    }

    pub fn column(&self, col: &str) -> Option<Vec<f64>> {
        let c = self.cols.iter().position(|x| x == col)?;
        Some(self.cells.iter().map(|row| row[c]).collect())
    }

    /// Aligned plain-text table, bottom row the column averages.
    pub fn to_text(&self) -> String {
        let label_width = self
            .rows
            .iter()
            .map(|r| r.len())
            .chain(["average".len()])
            .max()
            .unwrap_or(8);
        let col_width = self.cols.iter().map(|c| c.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:label_width$}", "mllm");
        for col in &self.cols {
            let _ = write!(out, "  {col:>col_width$}");
        }
        out.push('\n');
        for (row, cells) in self.rows.iter().zip(&self.cells) {
            let _ = write!(out, "{row:<label_width$}");
            for &cell in cells {
                let _ = write!(out, "  {:>col_width$}", fmt1(cell));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<label_width$}", "average");
        for avg in self.col_averages() {
            let _ = write!(out, "  {:>col_width$}", fmt1(avg));
        }
        out.push('\n');
        out
    }

    /// CSV: header `mllm,<llm...>`, one row per MLLM, final `average` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mllm,{}", self.cols.join(","));
        for (row, cells) in self.rows.iter().zip(&self.cells) {
            let values: Vec<String> = cells.iter().map(|&c| fmt1(c)).collect();
            let _ = writeln!(out, "{row},{}", values.join(","));
        }
        let averages: Vec<String> = self.col_averages().iter().map(|&a| fmt1(a)).collect();
        let _ = writeln!(out, "average,{}", averages.join(","));
        out
    }

    /// Reads a cells CSV (the `to_csv` shape); an `average` row, if present,
    /// is ignored and recomputed.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| EvalError::Csv(e.to_string()))?
            .clone();
        let cols: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        for result in reader.records() {
            let record = result.map_err(|e| EvalError::Csv(e.to_string()))?;
            let label = record.get(0).unwrap_or("").to_string();
            if label.eq_ignore_ascii_case("average") {
                continue;
            }
            let values: Result<Vec<f64>, _> = record
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| EvalError::Csv(e.to_string())))
                .collect();
            rows.push(label);
            cells.push(values?);
        }
        AccuracyMatrix::from_cells(rows, cols, cells)
    }
}

/// The ablation ladder: absolute accuracy per configuration per MLLM, with
/// each row's delta against the previous configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub configs: Vec<RunMode>,
    pub columns: Vec<String>,
    /// `abs[config_index][column_index]`, percent, full precision.
    pub abs: Vec<Vec<f64>>,
}

impl AblationTable {
    pub fn config_label(mode: RunMode) -> String {
        match mode {
            RunMode::T2imOnly => "T2IM-only".into(),
            RunMode::OneShot => "+LLM".into(),
            RunMode::Updates(k) => format!("{k} update{}", if k == 1 { "" } else { "s" }),
            RunMode::Full => "full".into(),
        }
    }

    pub fn from_cells(
        configs: Vec<RunMode>,
        columns: Vec<String>,
        abs: Vec<Vec<f64>>,
    ) -> Result<Self, EvalError> {
        if configs.is_empty() || columns.is_empty() {
            return Err(EvalError::BadShape("ablation table must be non-empty".into()));
        }
        if abs.len() != configs.len() {
            return Err(EvalError::BadShape(format!(
                "{} value rows for {} configs",
                abs.len(),
                configs.len()
            )));
        }
        for (i, row) in abs.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(EvalError::BadShape(format!(
                    "config {} has {} values for {} columns",
                    configs[i],
                    row.len(),
                    columns.len()
                )));
            }
        }
        Ok(AblationTable {
            configs,
            columns,
            abs,
        })
    }

    /// Builds the fixed ladder from run records grouped by (mode, MLLM).
    /// Every column must cover the whole ladder.
    pub fn from_records(
        records: &[RunRecord],
        policy: FailedRunPolicy,
    ) -> Result<Self, EvalError> {
        if records.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut groups: BTreeMap<(String, String), Vec<RunRecord>> = BTreeMap::new();
        for record in records {
            groups
                .entry((record.binding.infer_mllm.clone(), record.mode.to_string()))
                .or_default()
                .push(record.clone());
        }
        let columns = sort_ids(
            &MLLM_ORDER,
            groups.keys().map(|(mllm, _)| mllm.clone()),
        );
        let configs: Vec<RunMode> = RunMode::LADDER.to_vec();
        let mut abs = Vec::with_capacity(configs.len());
        for &config in &configs {
            let mut row = Vec::with_capacity(columns.len());
            for column in &columns {
                let group = groups
                    .get(&(column.clone(), config.to_string()))
                    .ok_or(EvalError::MissingConfig {
                        column: column.clone(),
                        config,
                    })?;
                row.push(accuracy_with(group, policy)?);
            }
            abs.push(row);
        }
        AblationTable::from_cells(configs, columns, abs)
    }

    /// Row-over-row deltas at full precision; the first row has none.
    pub fn deltas(&self) -> Vec<Vec<Option<f64>>> {
        self.abs
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(c, &v)| (i > 0).then(|| v - self.abs[i - 1][c]))
                    .collect()
            })
            .collect()
    }

    /// "67.6 (+15.3)" formatting; the first config row shows no delta.
    pub fn format_cell(&self, config_index: usize, column_index: usize) -> String {
        let value = self.abs[config_index][column_index];
        if config_index == 0 {
            fmt1(value)
        } else {
            let delta = value - self.abs[config_index - 1][column_index];
            format!("{} ({:+.1})", fmt1(value), round1(delta))
        }
    }

    pub fn to_text(&self) -> String {
        let label_width = self
            .configs
            .iter()
            .map(|c| Self::config_label(*c).len())
            .max()
            .unwrap_or(10)
            .max("configuration".len());
        let mut widths = Vec::new();
        for (c, column) in self.columns.iter().enumerate() {
            let w = (0..self.configs.len())
                .map(|i| self.format_cell(i, c).len())
                .max()
                .unwrap_or(4)
                .max(column.len());
            widths.push(w);
        }
        let mut out = String::new();
        let _ = write!(out, "{:<label_width$}", "configuration");
        for (column, w) in self.columns.iter().zip(&widths) {
            let _ = write!(out, "  {column:>w$}");
        }
        out.push('\n');
        for (i, config) in self.configs.iter().enumerate() {
            let _ = write!(out, "{:<label_width$}", Self::config_label(*config));
            for (c, w) in (0..self.columns.len()).zip(&widths) {
                let _ = write!(out, "  {:>w$}", self.format_cell(i, c));
            }
            out.push('\n');
        }
        out
    }

    /// CSV of absolute values only: `config,<mllm...>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config,{}", self.columns.join(","));
        for (config, row) in self.configs.iter().zip(&self.abs) {
            let values: Vec<String> = row.iter().map(|&v| fmt1(v)).collect();
            let _ = writeln!(out, "{config},{}", values.join(","));
        }
        out
    }

    /// Reads an absolute-values CSV (the `to_csv` shape).
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| EvalError::Csv(e.to_string()))?
            .clone();
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut configs = Vec::new();
        let mut abs = Vec::new();
        for result in reader.records() {
            let record = result.map_err(|e| EvalError::Csv(e.to_string()))?;
            let config: RunMode = record
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(EvalError::Csv)?;
            let values: Result<Vec<f64>, _> = record
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| EvalError::Csv(e.to_string())))
                .collect();
            configs.push(config);
            abs.push(values?);
        }
        AblationTable::from_cells(configs, columns, abs)
    }
}
