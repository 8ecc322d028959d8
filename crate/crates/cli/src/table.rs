use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::RunError;

/// One grid point: values aligned with the table columns, missing where the
/// point failed before producing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub values: Vec<Option<f64>>,
    pub error: Option<String>,
}

/// Sweep output in grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, mut values: Vec<Option<f64>>) {
        values.resize(self.columns.len(), None);
        self.rows.push(Row { values, error: None });
    }

    pub fn push_error(&mut self, mut values: Vec<Option<f64>>, error: String) {
        values.resize(self.columns.len(), None);
        self.rows.push(Row {
            values,
            error: Some(error),
        });
    }

    /// Values of a named column, empty when the column does not exist.
    pub fn column(&self, name: &str) -> Vec<Option<f64>> {
        match self.columns.iter().position(|c| c == name) {
            Some(i) => self.rows.iter().map(|r| r.values[i]).collect(),
            None => vec![],
        }
    }

    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.error.is_none())
    }
}

/// Write `table` as CSV with a header row and an `error` column. Missing
/// values are empty fields.
pub fn emit_curve(table: &Table, path: &Path) -> Result<(), RunError> {
    let io = |e: csv::Error| RunError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = table.columns.clone();
    header.push("error".into());
    w.write_record(&header).map_err(io)?;
    for row in &table.rows {
        let mut fields: Vec<String> = row.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()).collect();
        fields.push(row.error.clone().unwrap_or_default());
        w.write_record(&fields).map_err(io)?;
    }
    w.flush().map_err(|e| RunError::Io(format!("{}: {e}", path.display())))
}
