//! Result tables: per-cell CSV and an aligned text summary.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{CellResult, SolutionReport};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Text,
}

/// Render a report. CSV holds one row per cell and parses back to the same
/// cells; text has `Obj.`, `Cons.` and `CPU` rows with one column per budget.
pub fn emit_table(report: &SolutionReport, format: TableFormat) -> Result<String> {
    emit_comparison(&[report], format)
}

/// Several reports over the same budgets, e.g. a method and its baseline.
pub fn emit_comparison(reports: &[&SolutionReport], format: TableFormat) -> Result<String> {
    let Some(first) = reports.first() else {
        return Err(Error::Config("no reports to tabulate".into()));
    };
    for r in reports {
        if r.seeds.is_empty() {
            return Err(Error::Config(format!("report `{}` has an empty seed list", r.name)));
        }
        if r.n_grid != first.n_grid {
            return Err(Error::Config("compared reports must share the budget grid".into()));
        }
    }
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in reports {
                for c in &r.cells {
                    w.serialize(c)?;
                }
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
        }
        TableFormat::Text => Ok(text_table(reports)),
    }
}

pub fn read_csv(text: &str) -> Result<Vec<CellResult>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_csv_file(path: &Path) -> Result<Vec<CellResult>> {
    read_csv(&std::fs::read_to_string(path)?)
}

fn text_table(reports: &[&SolutionReport]) -> String {
    let grid = &reports[0].n_grid;
    let label = |r: &SolutionReport| format!("{:?}", r.algorithm).to_uppercase();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut head = vec![String::new(), String::new()];
    head.extend(grid.iter().map(|n| format!("N={n}")));
    rows.push(head);
    let fmt = |v: Option<f64>, sci: bool| match v {
        None => "-".to_string(),
        Some(v) if sci => format!("{v:.2e}"),
        Some(v) => format!("{v:.4}"),
    };
    for (name, sci) in [("Obj.", false), ("Cons.", true), ("CPU", true)] {
        for r in reports {
            let mut row = vec![name.to_string(), label(r)];
            for n in grid {
                let a = r.aggregate(*n);
                let v = a.and_then(|a| match name {
                    "Obj." => a.objective.map(|s| s.mean),
                    "Cons." => a.constraint.map(|s| s.mean),
                    _ => Some(a.wall_time),
                });
                row.push(fmt(v, sci));
            }
            rows.push(row);
        }
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols).map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| if j < 2 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
