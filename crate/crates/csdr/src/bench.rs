//! Replicated Monte Carlo runs over the simulation models.

use std::time::Instant;

use csdr_core::simbench::{generate, mean_sd, replication_seed};
use csdr_core::{estimation_error, standardize, SdrError, SimModel, SimModelSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::method::{fit_method, Method, Settings};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BenchOptions {
    pub settings: Settings,
    /// Record wall-clock time per method. Off by default so that reports are
    /// a pure function of their inputs.
    pub record_runtime: bool,
}

/// Summary for one method over all replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub reps: usize,
    /// Mean error over the successful replications (NaN when none succeeded).
    pub mean: f64,
    pub sd: f64,
    pub failures: usize,
    pub runtime_s: f64,
    /// Per-replication error, `None` where the method failed.
    pub errors: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub model: u32,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub d: u32,
    pub seed: u64,
    pub reps: usize,
    pub methods: Vec<MethodSummary>,
}

/// One CSV row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: u32,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub method: Method,
    pub reps: usize,
    pub mean: f64,
    pub sd: f64,
    pub failures: usize,
    pub runtime_s: f64,
}

impl ReplicationReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.methods
            .iter()
            .map(|m| ReportRow {
                model: self.model,
                n: self.n,
                p: self.p,
                q: self.q,
                method: m.method,
                reps: m.reps,
                mean: m.mean,
                sd: m.sd,
                failures: m.failures,
                runtime_s: m.runtime_s,
            })
            .collect()
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

struct RepOutcome {
    errors: Vec<Option<f64>>,
    seconds: Vec<f64>,
}

fn run_replication(spec: &SimModelSpec, methods: &[Method], q: usize, opts: &BenchOptions) -> RepOutcome {
    let failed = || RepOutcome {
        errors: vec![None; methods.len()],
        seconds: vec![0.0; methods.len()],
    };
    let Ok((ds, truth)) = generate(spec) else {
        return failed();
    };
    let Ok(std) = standardize(&ds) else {
        return failed();
    };
    let mut errors = Vec::with_capacity(methods.len());
    let mut seconds = Vec::with_capacity(methods.len());
    for &m in methods {
        let start = Instant::now();
        let err = fit_method(&std, m, q, &opts.settings)
            .and_then(|fit| estimation_error(&truth, &fit.basis))
            .map(|e| e.value())
            .ok();
        seconds.push(start.elapsed().as_secs_f64());
        errors.push(err);
    }
    RepOutcome { errors, seconds }
}

/// Run every method on `reps` replications of `spec`. Replication `r` draws
/// its data from `replication_seed(seed, r)`; `spec.seed` is ignored.
pub fn run_benchmark(
    spec: &SimModelSpec,
    methods: &[Method],
    q: usize,
    reps: usize,
    seed: u64,
    opts: &BenchOptions,
) -> Result<ReplicationReport, SdrError> {
    if reps == 0 {
        return Err(SdrError::InvalidDimension("reps must be at least 1"));
    }
    spec.validate()?;
    if q != spec.model.default_q() {
        return Err(SdrError::InvalidDimension("q must equal the dimension of the model's true subspace"));
    }

    let outcomes: Vec<RepOutcome> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let rep_spec = SimModelSpec {
                seed: replication_seed(seed, r),
                ..*spec
            };
            run_replication(&rep_spec, methods, q, opts)
        })
        .collect();

    let summaries = methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let errors: Vec<Option<f64>> = outcomes.iter().map(|o| o.errors[k]).collect();
            let ok: Vec<f64> = errors.iter().flatten().copied().collect();
            let (mean, sd) = mean_sd(&ok);
            let runtime_s = if opts.record_runtime {
                outcomes.iter().map(|o| o.seconds[k]).sum()
            } else {
                0.0
            };
            MethodSummary {
                method,
                reps,
                mean,
                sd,
                failures: reps - ok.len(),
                runtime_s,
                errors,
            }
        })
        .collect();

    Ok(ReplicationReport {
        model: spec.model.id(),
        n: spec.n,
        p: spec.p,
        q,
        d: spec.d,
        seed,
        reps,
        methods: summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    pub method: Method,
    pub mean_error: f64,
    pub sqrt_n_scaled_error: f64,
}

/// Mean errors over a grid of sample sizes, raw and multiplied by `√n`.
/// Rows come out grouped by `n`, methods in the given order.
#[allow(clippy::too_many_arguments)]
pub fn consistency_curve(
    model: SimModel,
    p: usize,
    q: usize,
    d: u32,
    ns: &[usize],
    methods: &[Method],
    reps: usize,
    seed: u64,
    opts: &BenchOptions,
) -> Result<Vec<CurveRow>, SdrError> {
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SdrError::InvalidDimension("sample sizes must be strictly ascending"));
    }
    let mut rows = Vec::with_capacity(ns.len() * methods.len());
    for &n in ns {
        let spec = SimModelSpec::new(model, n, p, seed).with_d(d);
        let report = run_benchmark(&spec, methods, q, reps, seed, opts)?;
        for s in &report.methods {
            rows.push(CurveRow {
                n,
                method: s.method,
                mean_error: s.mean,
                sqrt_n_scaled_error: s.mean * (n as f64).sqrt(),
            });
        }
    }
    Ok(rows)
}
