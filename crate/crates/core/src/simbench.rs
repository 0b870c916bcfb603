//! Synthetic regression models used to benchmark the estimators, with their
//! true central subspaces, and summary statistics for replicated runs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Result, SdrError};
use crate::preprocess::{Basis, Dataset};

/// Proposals allowed per accepted draw when rejection sampling model 4.
pub const MAX_PROPOSALS_PER_DRAW: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SimModel {
    /// Sign times log-modulus model with two directions in the first four coordinates.
    SignLog,
    /// Index in the mean (power `d`) and a second index in the conditional variance.
    MeanVariance,
    /// Rational plus quadratic mean in four coordinates.
    RootN,
    /// Constrained circular structure drawn by rejection.
    Circle,
}

impl SimModel {
    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Self::SignLog),
            2 => Ok(Self::MeanVariance),
            3 => Ok(Self::RootN),
            4 => Ok(Self::Circle),
            _ => Err(SdrError::InvalidModel("model id must be 1, 2, 3 or 4")),
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Self::SignLog => 1,
            Self::MeanVariance => 2,
            Self::RootN => 3,
            Self::Circle => 4,
        }
    }

    /// Dimension of the true central subspace.
    pub fn default_q(self) -> usize {
        match self {
            Self::RootN => 4,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimModelSpec {
    pub model: SimModel,
    pub n: usize,
    pub p: usize,
    /// Power of the mean index; only model 2 reads it.
    pub d: u32,
    pub seed: u64,
}

impl SimModelSpec {
    pub fn new(model: SimModel, n: usize, p: usize, seed: u64) -> Self {
        Self { model, n, p, d: 1, seed }
    }

    pub fn with_d(mut self, d: u32) -> Self {
        self.d = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.model {
            SimModel::SignLog if self.p < 4 => Err(SdrError::InvalidModel("model 1 needs p >= 4")),
            SimModel::SignLog => Ok(()),
            _ if self.p != 10 => Err(SdrError::InvalidModel("models 2, 3 and 4 are defined for p = 10")),
            SimModel::MeanVariance if self.d == 0 => Err(SdrError::InvalidModel("model 2 needs d >= 1")),
            _ => Ok(()),
        }?;
        if self.n < self.p + 2 {
            return Err(SdrError::TooFewObservations { n: self.n, p: self.p });
        }
        Ok(())
    }
}

/// Seed for replication `rep`: the first word of ChaCha8 stream `rep` keyed by
/// `master`. Each replication can be regenerated on its own.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep);
    rng.next_u64()
}

fn sign_log_betas(p: usize) -> (DVector<f64>, DVector<f64>) {
    let mut b1 = DVector::zeros(p);
    let mut b2 = DVector::zeros(p);
    for k in 0..4 {
        b1[k] = 0.5;
        b2[k] = if k % 2 == 0 { 0.5 } else { -0.5 };
    }
    (b1, b2)
}

fn mean_variance_betas() -> (DVector<f64>, DVector<f64>) {
    let mut b1 = DVector::zeros(10);
    b1[0] = 1.0 / 3.0;
    b1[1] = 2.0 / 3.0;
    b1[9] = 2.0 / 3.0;
    let mut b2 = DVector::zeros(10);
    b2[2] = 0.6;
    b2[3] = 0.8;
    (b1, b2)
}

/// True basis of the central subspace for `spec`.
pub fn true_basis(spec: &SimModelSpec) -> Result<Basis> {
    spec.validate()?;
    let p = spec.p;
    let cols = match spec.model {
        SimModel::SignLog | SimModel::Circle => {
            let (b1, b2) = sign_log_betas(p);
            DMatrix::from_columns(&[b1, b2])
        }
        SimModel::MeanVariance => {
            let (b1, b2) = mean_variance_betas();
            DMatrix::from_columns(&[b1, b2])
        }
        SimModel::RootN => {
            let mut m = DMatrix::zeros(p, 4);
            for k in 0..4 {
                m[(k, k)] = 1.0;
            }
            m
        }
    };
    Basis::from_columns(&cols)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn dot_row(x: &DMatrix<f64>, i: usize, beta: &DVector<f64>) -> f64 {
    (0..beta.len()).map(|k| x[(i, k)] * beta[k]).sum()
}

/// Draw a dataset from `spec` together with its true basis.
pub fn generate(spec: &SimModelSpec) -> Result<(Dataset, Basis)> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    match spec.model {
        SimModel::SignLog => {
            let (b1, b2) = sign_log_betas(p);
            for i in 0..n {
                for k in 0..p {
                    x[(i, k)] = normal(&mut rng);
                }
                let (e1, e2) = (normal(&mut rng), normal(&mut rng));
                let s = 2.0 * dot_row(&x, i, &b1) + e1;
                let sign = if s > 0.0 {
                    1.0
                } else if s < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                y[i] = sign * libm::log(libm::fabs(2.0 * dot_row(&x, i, &b2) + 4.0 + e2));
            }
        }
        SimModel::MeanVariance => {
            let (b1, b2) = mean_variance_betas();
            let r3 = libm::sqrt(3.0);
            let unif = Uniform::new(-r3, r3).map_err(|_| SdrError::InvalidModel("uniform range"))?;
            for i in 0..n {
                for k in 0..p {
                    x[(i, k)] = unif.sample(&mut rng);
                }
                let e = normal(&mut rng);
                let idx = dot_row(&x, i, &b1);
                y[i] = 2.0 * libm::pow(idx, spec.d as f64) + 2.0 * libm::exp(dot_row(&x, i, &b2)) * e;
            }
        }
        SimModel::RootN => {
            for i in 0..n {
                for k in 0..p {
                    x[(i, k)] = normal(&mut rng);
                }
                let e = normal(&mut rng);
                let (x1, x2, x3, x4) = (x[(i, 0)], x[(i, 1)], x[(i, 2)], x[(i, 3)]);
                let shift = 1.5 + x2;
                y[i] = x1 / (0.5 + shift * shift) + x3 * (x3 + x4 + 1.0) + 0.1 * e;
            }
        }
        SimModel::Circle => {
            let (b1, b2) = sign_log_betas(p);
            let mut row = DVector::zeros(p);
            for i in 0..n {
                let mut tries = 0u64;
                loop {
                    if tries == MAX_PROPOSALS_PER_DRAW {
                        return Err(SdrError::SamplingStall(tries));
                    }
                    tries += 1;
                    for k in 0..p {
                        row[k] = normal(&mut rng);
                    }
                    let e = normal(&mut rng);
                    let (u1, u2) = (row.dot(&b1), row.dot(&b2));
                    if circle_accepts(u1, u2, e) {
                        x.set_row(i, &row.transpose());
                        y[i] = u1 / 2.0 + e * libm::sqrt(1.0 - u1 * u1);
                        break;
                    }
                }
            }
        }
    }
    Ok((Dataset::new(x, y)?, true_basis(spec)?))
}

/// Acceptance region for model 4 in terms of `β₁ᵀX`, `β₂ᵀX` and the noise.
pub fn circle_accepts(u1: f64, u2: f64, e: f64) -> bool {
    let r = u1 * u1 * (1.0 - e * e) + e * e;
    libm::fabs(u1) <= 1.0 && libm::fabs(u2) <= 1.0 && r > 0.5 && r <= 1.0
}

/// Mean and sample standard deviation (divisor `len - 1`; zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}

/// Draw a `p × p` orthogonal matrix (QR of a Gaussian matrix), handy for
/// rotation checks.
pub fn random_rotation<R: Rng>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..p {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}
