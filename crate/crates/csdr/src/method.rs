//! Estimator names and a single entry point that runs any of them.

use core::fmt;
use core::str::FromStr;

use csdr_core::baselines::{choose_slices, phd_fit, rmave_fit_std, save_fit, sir_fit, RmaveConfig};
use csdr_core::dmave::dmave_fit_std;
use csdr_core::dopg::dopg_fit_std;
use csdr_core::{Basis, DmaveConfig, DopgConfig, StandardizedDataset, TrimConfig};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dopg,
    Dmave,
    Rmave,
    Sir,
    Save,
    Phd,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Dopg,
        Method::Dmave,
        Method::Rmave,
        Method::Sir,
        Method::Save,
        Method::Phd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dopg => "dopg",
            Method::Dmave => "dmave",
            Method::Rmave => "rmave",
            Method::Sir => "sir",
            Method::Save => "save",
            Method::Phd => "phd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .ok_or_else(|| format!("unknown method '{s}' (expected one of dopg, dmave, rmave, sir, save, phd)"))
    }
}

/// Tuning shared by the smoothing estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub c0: f64,
    pub omega0: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let d = DopgConfig::default();
        Self {
            c0: d.c0,
            omega0: d.trim.omega0,
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

impl Settings {
    pub fn dopg(&self) -> DopgConfig {
        DopgConfig {
            trim: TrimConfig::new(self.omega0),
            c0: self.c0,
            tol: self.tol,
            max_iter: self.max_iter,
            ..DopgConfig::default()
        }
    }

    pub fn dmave(&self) -> DmaveConfig {
        DmaveConfig {
            trim: TrimConfig::new(self.omega0),
            c0: self.c0,
            tol: self.tol,
            max_iter: self.max_iter,
            init: None,
        }
    }

    pub fn rmave(&self) -> RmaveConfig {
        RmaveConfig {
            trim: TrimConfig::new(self.omega0),
            c0: self.c0,
            tol: self.tol,
            max_iter: self.max_iter,
            init: None,
        }
    }
}

/// Outcome of one estimator run.
#[derive(Debug, Clone)]
pub struct MethodFit {
    pub method: Method,
    /// Basis in original covariate coordinates.
    pub basis: Basis,
    /// Full spectrum for dOPG and the moment methods; the diagonal of `Λ` for
    /// the MAVE variants.
    pub eigenvalues: DVector<f64>,
    /// Zero for the closed-form moment methods.
    pub iterations: usize,
    pub converged: bool,
}

pub fn fit_method(
    std: &StandardizedDataset,
    method: Method,
    q: usize,
    settings: &Settings,
) -> csdr_core::Result<MethodFit> {
    let iterative = |r: csdr_core::FitResult| MethodFit {
        method,
        basis: r.basis,
        eigenvalues: r.eigenvalues,
        iterations: r.iterations,
        converged: r.converged,
    };
    let spectral = |r: csdr_core::baselines::SpectralFit| MethodFit {
        method,
        basis: r.basis,
        eigenvalues: r.eigenvalues,
        iterations: 0,
        converged: true,
    };
    let slices = choose_slices(std.n(), std.p());
    Ok(match method {
        Method::Dopg => iterative(dopg_fit_std(std, q, &settings.dopg())?),
        Method::Dmave => iterative(dmave_fit_std(std, q, &settings.dmave())?),
        Method::Rmave => iterative(rmave_fit_std(std, q, &settings.rmave())?),
        Method::Sir => spectral(sir_fit(std, q, slices)?),
        Method::Save => spectral(save_fit(std, q, slices)?),
        Method::Phd => spectral(phd_fit(std, q)?),
    })
}

/// Parse a comma-separated method list, rejecting empty lists and repeats.
pub fn parse_methods(list: &str) -> Result<Vec<Method>, String> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|s| !s.trim().is_empty()) {
        let m: Method = part.parse()?;
        if out.contains(&m) {
            return Err(format!("method '{m}' listed twice"));
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err("no methods given".into());
    }
    Ok(out)
}
