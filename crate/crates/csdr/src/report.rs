//! Machine-readable outputs.

use std::io::Write;

use csdr_core::Basis;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bench::{CurveRow, ReplicationReport};
use crate::method::{Method, MethodFit};

/// Settings echoed into a fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfigEcho {
    pub input: String,
    pub response: String,
    pub covariates: Vec<String>,
    pub dummy: Vec<String>,
    pub scale_columns: bool,
    pub c0: f64,
    pub omega0: f64,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: Method,
    pub q: usize,
    /// One entry per direction, each of length `p`, in original coordinates.
    pub directions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub config: FitConfigEcho,
}

impl FitReport {
    pub fn new(fit: &MethodFit, echo: FitConfigEcho) -> Self {
        let b = fit.basis.matrix();
        Self {
            method: fit.method,
            q: b.ncols(),
            directions: b.column_iter().map(|c| c.iter().copied().collect()).collect(),
            eigenvalues: fit.eigenvalues.iter().copied().collect(),
            iterations: fit.iterations,
            converged: fit.converged,
            config: echo,
        }
    }

    /// Rebuild the basis from `directions`, checking orthonormality.
    pub fn basis(&self) -> csdr_core::Result<Basis> {
        let p = self.directions.first().map_or(0, Vec::len);
        if self.directions.iter().any(|d| d.len() != p) {
            return Err(csdr_core::SdrError::Shape {
                expected: "directions of equal length",
                found: "ragged directions",
            });
        }
        Basis::new(DMatrix::from_fn(p, self.directions.len(), |r, c| self.directions[c][r]))
    }
}

pub fn write_report_csv<W: Write>(report: &ReplicationReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in report.rows() {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text grid with one line per method.
pub fn format_grid(report: &ReplicationReport) -> String {
    let mut s = format!(
        "model {}  n={}  p={}  q={}  d={}  reps={}  seed={}\n",
        report.model, report.n, report.p, report.q, report.d, report.reps, report.seed
    );
    s.push_str(&format!("{:<8}{:>10}{:>10}{:>10}\n", "method", "mean", "sd", "failures"));
    for m in &report.methods {
        s.push_str(&format!(
            "{:<8}{:>10.4}{:>10.4}{:>10}\n",
            m.method.name(),
            m.mean,
            m.sd,
            m.failures
        ));
    }
    s
}
