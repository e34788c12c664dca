use std::path::{Path, PathBuf};

use super::run::{RunOutput, Summary, Trace};
use crate::{excitation::PeReport, Error, Result};

/// Plant-side column names, in order.
pub const PLANT_COLUMNS: &[&str] = &[
    "t", "theta", "omega", "omega_ref", "x_norm", "x_a", "x_b", "lambda_a", "lambda_b", "i_a", "i_b",
    "v_a", "v_b", "y", "phi_a", "phi_b", "d_true", "a1_ok", "a2_ok",
];

/// Per-observer column suffixes; each is prefixed with `<observer>_`.
pub const OBSERVER_COLUMNS: &[&str] = &[
    "theta_hat", "theta_err", "x_hat_a", "x_hat_b", "lambda_hat_a", "lambda_hat_b", "lambda_err", "d_hat",
    "innovation",
];

/// A rectangular table of named numeric columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl RunTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Reporting table of a trace: every `stride`-th step.
    pub fn from_trace(trace: &Trace, stride: usize) -> Self {
        let mut columns: Vec<String> = PLANT_COLUMNS.iter().map(|s| s.to_string()).collect();
        for kind in &trace.observers {
            let prefix = kind.label().replace('-', "_");
            columns.extend(OBSERVER_COLUMNS.iter().map(|c| format!("{prefix}_{c}")));
        }
        let rows = (0..trace.len())
            .step_by(stride.max(1))
            .map(|k| {
                let r = &trace.plant[k];
                let mut row = vec![
                    r.t,
                    r.theta,
                    r.omega,
                    r.omega_ref,
                    r.x.norm(),
                    r.x.x,
                    r.x.y,
                    r.lambda.x,
                    r.lambda.y,
                    r.i.x,
                    r.i.y,
                    r.v.x,
                    r.v.y,
                    r.y,
                    r.phi.x,
                    r.phi.y,
                    r.d_true,
                    f64::from(u8::from(r.a1_ok)),
                    f64::from(u8::from(r.a2_ok)),
                ];
                for est in &trace.estimates {
                    let e = &est[k];
                    row.extend([
                        e.theta_hat,
                        e.theta_err,
                        e.x_hat.x,
                        e.x_hat.y,
                        e.lambda_hat.x,
                        e.lambda_hat.y,
                        e.lambda_err,
                        e.d_hat,
                        e.innovation,
                    ]);
                }
                row
            })
            .collect();
        Self { columns, rows }
    }

    pub fn pe(report: &PeReport) -> Self {
        Self {
            columns: vec!["t_start".into(), "delta_min".into(), "delta_max".into()],
            rows: report
                .windows
                .iter()
                .map(|w| vec![w.t_start, w.delta_min, w.delta_max])
                .collect(),
        }
    }
}

/// Nine significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn write_csv(table: &RunTable, path: &Path) -> Result<()> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&table.columns).map_err(csv_err)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|&v| format_value(v))).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<RunTable> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let columns: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    reason: format!("row {}: `{f}` is not a number", line + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(RunTable { columns, rows })
}

pub fn write_summary(summary: &Summary, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `timeseries.csv`, `pe.csv` and `summary.json` into `dir` and
/// returns the written paths.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ts = dir.join("timeseries.csv");
    write_csv(&RunTable::from_trace(&out.trace, out.config.stride_steps()), &ts)?;
    let pe = dir.join("pe.csv");
    write_csv(&RunTable::pe(&out.pe), &pe)?;
    let summary = dir.join("summary.json");
    write_summary(&out.summary, &summary)?;
    Ok(vec![ts, pe, summary])
}
