//! Minimal CSV: a `# schema=NAME` comment line, a header row, then data.
//! Fields never contain commas, quotes or newlines, so no quoting is done.

use std::fmt;

pub const TRAJECTORY_SCHEMA: &str = "gameflow.trajectory.v1";
pub const SWEEP_SCHEMA: &str = "gameflow.sweep.v1";
pub const RUN_SUMMARY_SCHEMA: &str = "gameflow.run-summary.v1";
pub const DAL_SUMMARY_SCHEMA: &str = "gameflow.dal-summary.v1";

pub const SWEEP_COLUMNS: [&str; 8] = [
    "method",
    "params",
    "lambda",
    "eta",
    "terminal_status",
    "iters_to_converge",
    "final_grad_norm",
    "spectral_radius",
];

pub const RUN_SUMMARY_COLUMNS: [&str; 8] = [
    "arm",
    "method",
    "params",
    "eta",
    "terminal_status",
    "iterations",
    "field_evals",
    "final_grad_norm",
];

pub const DAL_SUMMARY_COLUMNS: [&str; 8] = [
    "arm",
    "method",
    "params",
    "eta",
    "terminal_status",
    "iterations",
    "best_target_acc",
    "iters_to_best",
];

/// Trajectory columns for an `n`-player game with extra metric columns.
pub fn trajectory_columns(n_players: usize, metrics: &[String]) -> Vec<String> {
    let mut cols = vec!["iter".to_string(), "grad_norm".to_string()];
    cols.extend((1..=n_players).map(|i| format!("J{i}")));
    cols.extend(metrics.iter().cloned());
    cols
}

/// Shortest round-trip rendering; `NaN` and `inf` parse back via `f64::from_str`.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &str, header: Vec<String>) -> Self {
        Self {
            schema: schema.to_string(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = format!("# schema={}\n{}\n", self.schema, self.header.join(","));
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Column `name` parsed as numbers; blank cells become `None`.
    pub fn numbers(&self, name: &str) -> Result<Vec<Option<f64>>, SchemaError> {
        let c = self.column(name).ok_or_else(|| SchemaError::MissingColumn(name.to_string()))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = &r[c];
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse().map(Some).map_err(|_| SchemaError::BadNumber {
                        line: i + 3,
                        cell: cell.clone(),
                    })
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchemaError {
    MissingSchemaLine,
    SchemaMismatch { expected: String, found: String },
    MissingHeader,
    HeaderMismatch { expected: Vec<String>, found: Vec<String> },
    RaggedRow { line: usize, expected: usize, found: usize },
    MissingColumn(String),
    BadNumber { line: usize, cell: String },
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaError::MissingSchemaLine => write!(f, "first line is not a '# schema=' comment"),
            SchemaError::SchemaMismatch { expected, found } => {
                write!(f, "schema {found:?} does not match expected {expected:?}")
            }
            SchemaError::MissingHeader => write!(f, "missing header row"),
            SchemaError::HeaderMismatch { expected, found } => {
                write!(f, "header {found:?} does not match expected {expected:?}")
            }
            SchemaError::RaggedRow { line, expected, found } => {
                write!(f, "line {line}: {found} fields, expected {expected}")
            }
            SchemaError::MissingColumn(c) => write!(f, "no column {c:?}"),
            SchemaError::BadNumber { line, cell } => write!(f, "line {line}: {cell:?} is not a number"),
        }
    }
}

impl std::error::Error for SchemaError {}

/// Parse a table, rejecting any schema other than `schema`. When
/// `columns` is given the header must match it exactly.
pub fn parse(text: &str, schema: &str, columns: Option<&[String]>) -> Result<Table, SchemaError> {
    let mut lines = text.lines();
    let first = lines.next().ok_or(SchemaError::MissingSchemaLine)?;
    let found = first.strip_prefix("# schema=").ok_or(SchemaError::MissingSchemaLine)?;
    if found != schema {
        return Err(SchemaError::SchemaMismatch {
            expected: schema.to_string(),
            found: found.to_string(),
        });
    }
    let header: Vec<String> = lines
        .next()
        .ok_or(SchemaError::MissingHeader)?
        .split(',')
        .map(str::to_string)
        .collect();
    if let Some(cols) = columns {
        if cols != header.as_slice() {
            return Err(SchemaError::HeaderMismatch {
                expected: cols.to_vec(),
                found: header,
            });
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(SchemaError::RaggedRow {
                line: i + 3,
                expected: header.len(),
                found: row.len(),
            });
        }
        rows.push(row);
    }
    Ok(Table {
        schema: schema.to_string(),
        header,
        rows,
    })
}

pub fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}
