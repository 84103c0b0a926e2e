use std::path::Path;

use serde_json::{Map, Value};

use super::config::OutputFormat;
use crate::error::{Error, Result};

/// One value in an output table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => x.to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) => {
                serde_json::Number::from_f64(*x).map_or_else(|| Value::String(x.to_string()), Value::Number)
            }
            Cell::Int(i) => Value::from(*i),
            Cell::Bool(b) => Value::Bool(*b),
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as u64)
    }
}

impl From<u64> for Cell {
    fn from(i: u64) -> Self {
        Cell::Int(i)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.into())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

/// A named rectangular table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_columns(name: &str, columns: Vec<String>) -> Self {
        Table {
            name: name.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width of {}", self.name);
        self.rows.push(row);
    }

    pub fn file_name(&self, format: OutputFormat) -> String {
        format!("{}.{}", self.name, format.extension())
    }

    pub fn render(&self, format: OutputFormat) -> Result<Vec<u8>> {
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
                w.write_record(&self.columns).map_err(io)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(Cell::render)).map_err(io)?;
                }
                w.into_inner()
                    .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
            }
            OutputFormat::Json => {
                let records: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        Value::Object(
                            self.columns
                                .iter()
                                .cloned()
                                .zip(row.iter().map(Cell::json))
                                .collect::<Map<_, _>>(),
                        )
                    })
                    .collect();
                let mut bytes = serde_json::to_vec_pretty(&records).expect("records serialize");
                bytes.push(b'\n');
                Ok(bytes)
            }
        }
    }
}

/// A table read back from disk, with every value as text.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl LoadedTable {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::MissingOutput(format!("{}: {e}", path.display())))?;
        let bad = |e: String| Error::MissingOutput(format!("{} is unreadable: {e}", path.display()));
        if path.extension().is_some_and(|e| e == "json") {
            let records: Vec<Map<String, Value>> = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
            let columns: Vec<String> = records.first().map(|r| r.keys().cloned().collect()).unwrap_or_default();
            let rows = records
                .iter()
                .map(|r| {
                    columns
                        .iter()
                        .map(|c| match r.get(c) {
                            Some(Value::String(s)) => s.clone(),
                            Some(Value::Null) | None => String::new(),
                            Some(v) => v.to_string(),
                        })
                        .collect()
                })
                .collect();
            Ok(LoadedTable { columns, rows })
        } else {
            let mut r = csv::Reader::from_reader(bytes.as_slice());
            let columns = r
                .headers()
                .map_err(|e| bad(e.to_string()))?
                .iter()
                .map(String::from)
                .collect();
            let rows = r
                .records()
                .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(e.to_string()))?;
            Ok(LoadedTable { columns, rows })
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric value of `column` in `row`; `None` for empty cells.
    pub fn number(&self, row: usize, column: usize) -> Option<f64> {
        self.rows[row][column].parse().ok()
    }
}
