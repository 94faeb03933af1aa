//! Tabular experiment reports and their CSV form.
//!
//! Every CSV starts with `#`-prefixed metadata lines (version, seed, full
//! config echo), then a header row, then one row per grid point. Separator
//! `,`, decimal point `.`, LF line endings; absent estimators leave their
//! fields empty. Numeric values use shortest round-trip formatting, so a
//! deterministic experiment re-emits a byte-identical file.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const ESTIMATOR_COUNT: usize = 5;

/// Column block order of the fixed sweep schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Ls = 0,
    Cme = 1,
    DmDet = 2,
    DmResamp = 3,
    DmMismatch = 4,
}

pub const ESTIMATOR_NAMES: [&str; ESTIMATOR_COUNT] =
    ["ls", "cme", "dm_det", "dm_resamp", "dm_mismatch"];

/// NMSE, its standard error, and optionally a wall time for one estimator.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub nmse: f64,
    pub se: f64,
    pub time_ms: Option<f64>,
}

/// One grid point of a sweep report.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub x: f64,
    pub cells: [Option<Cell>; ESTIMATOR_COUNT],
    /// Extra trailing values, matched to the report's `extra_columns`.
    pub extras: Vec<f64>,
}

impl ReportRow {
    pub fn new(x: f64) -> Self {
        Self {
            x,
            cells: [None; ESTIMATOR_COUNT],
            extras: Vec::new(),
        }
    }

    pub fn set(&mut self, which: Estimator, cell: Cell) {
        self.cells[which as usize] = Some(cell);
    }

    pub fn get(&self, which: Estimator) -> Option<Cell> {
        self.cells[which as usize]
    }
}

/// A sweep report: metadata, the fixed estimator schema, optional extra
/// trailing columns, and one row per grid point.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub meta: Vec<String>,
    pub extra_columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn new(meta: Vec<String>) -> Self {
        Self {
            meta,
            extra_columns: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in &self.meta {
            let _ = writeln!(out, "# {line}");
        }
        let mut header = vec!["x".to_string()];
        for prefix in ["nmse", "se", "time_ms"] {
            for name in ESTIMATOR_NAMES {
                header.push(format!("{prefix}_{name}"));
            }
        }
        header.extend(self.extra_columns.iter().cloned());
        let _ = writeln!(out, "{}", header.join(","));
        for row in &self.rows {
            let mut fields = vec![fmt_f64(row.x)];
            for cell in &row.cells {
                fields.push(cell.map(|c| fmt_f64(c.nmse)).unwrap_or_default());
            }
            for cell in &row.cells {
                fields.push(cell.map(|c| fmt_f64(c.se)).unwrap_or_default());
            }
            for cell in &row.cells {
                fields.push(
                    cell.and_then(|c| c.time_ms)
                        .map(fmt_f64)
                        .unwrap_or_default(),
                );
            }
            fields.extend(row.extras.iter().map(|v| fmt_f64(*v)));
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Free-form table for the non-sweep reports (Lipschitz curves, bounds):
/// same metadata conventions, caller-supplied columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub meta: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(meta: Vec<String>, columns: Vec<String>) -> Self {
        Self {
            meta,
            columns,
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in &self.meta {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_and_empty_fields() {
        let mut report = ExperimentReport::new(vec!["seed = 1".into()]);
        let mut row = ReportRow::new(-10.0);
        row.set(
            Estimator::Ls,
            Cell {
                nmse: 1.5,
                se: 0.01,
                time_ms: None,
            },
        );
        row.set(
            Estimator::DmDet,
            Cell {
                nmse: 0.25,
                se: 0.002,
                time_ms: Some(12.5),
            },
        );
        report.rows.push(row);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# seed = 1");
        assert_eq!(
            lines[1],
            "x,nmse_ls,nmse_cme,nmse_dm_det,nmse_dm_resamp,nmse_dm_mismatch,\
             se_ls,se_cme,se_dm_det,se_dm_resamp,se_dm_mismatch,\
             time_ms_ls,time_ms_cme,time_ms_dm_det,time_ms_dm_resamp,time_ms_dm_mismatch"
        );
        assert_eq!(lines[2], "-10,1.5,,0.25,,,0.01,,0.002,,,,,12.5,,");
        // Deterministic re-emission.
        assert_eq!(csv, report.to_csv());
    }

    #[test]
    fn table_csv() {
        let mut t = Table::new(vec!["v".into()], vec!["t".into(), "L_t".into()]);
        t.rows.push(vec![2.0, 0.5]);
        assert_eq!(t.to_csv(), "# v\nt,L_t\n2,0.5\n");
    }
}
