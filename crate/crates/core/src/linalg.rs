//! Small dense helpers on top of nalgebra: sorted symmetric eigendecompositions,
//! symmetric matrix powers, and a ridge-guarded SPD solver.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdrError};

/// Symmetric tolerance used when validating inputs to [`sym_power`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues below `-PSD_TOL` make a matrix "not PSD".
pub const PSD_TOL: f64 = 1e-8;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted descending
/// and eigenvectors in matching column order.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(m: &DMatrix<f64>) -> SortedEigen {
    let p = m.nrows();
    // Symmetrize first so the decomposition sees an exactly symmetric input.
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(p, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        canonical_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    SortedEigen { values, vectors }
}

/// Flip a vector so its largest-magnitude entry is positive. Makes eigenvector
/// output reproducible regardless of the solver's sign convention.
pub fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric PSD matrix power `m^exponent` through the eigendecomposition,
/// with eigenvalues clamped below at `floor` before the power is taken.
pub fn sym_power(m: &DMatrix<f64>, exponent: f64, floor: f64) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(SdrError::Shape {
            expected: "square matrix",
            found: "rectangular matrix",
        });
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(SdrError::NotSymmetric(asym));
    }
    let eig = sym_eigen(m);
    let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL {
        return Err(SdrError::NotPsd(min));
    }
    Ok(apply_spectrum(&eig, |lambda| {
        libm::pow(lambda.max(floor), exponent)
    }))
}

/// Symmetric inverse square root `m^{-1/2}` with eigenvalue floor.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    sym_power(m, -0.5, floor)
}

/// Symmetric square root `m^{1/2}` with eigenvalue floor.
pub fn sym_sqrt(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    sym_power(m, 0.5, floor)
}

pub(crate) fn apply_spectrum(eig: &SortedEigen, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let p = eig.values.len();
    let mut scaled = eig.vectors.clone();
    for k in 0..p {
        let s = f(eig.values[k]);
        scaled.column_mut(k).scale_mut(s);
    }
    let out = scaled * eig.vectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Largest singular value of a symmetric matrix (its spectral radius).
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    let eig = sym_eigen(m);
    eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Reciprocal-free condition estimate of a symmetric PSD matrix: ratio of its
/// largest to smallest eigenvalue (infinite when the smallest is not positive).
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Gram matrices above this condition number get a ridge on their slope block.
pub const RIDGE_CONDITION: f64 = 1e10;

/// Relative ridge used when the caller does not supply one.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-8;

/// Cholesky factor of a symmetric positive definite matrix after the
/// condition-guarded ridge described on [`factor_with_ridge`].
#[derive(Debug, Clone)]
pub struct GuardedFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    pub condition: f64,
    pub ridge_applied: f64,
}

impl GuardedFactor {
    pub(crate) fn from_matrix(m: DMatrix<f64>, ridge_applied: f64) -> Option<Self> {
        m.cholesky().map(|chol| Self {
            chol,
            condition: f64::NAN,
            ridge_applied,
        })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_in_place(&self, rhs: &mut DVector<f64>) {
        self.chol.solve_mut(rhs);
    }
}

/// Factor a symmetric PSD matrix, adding `ridge * I` to the trailing block
/// (rows/cols `skip..`) when its condition number exceeds [`RIDGE_CONDITION`].
///
/// `ridge <= 0` selects the default `1e-8 * trace / dim`. If Cholesky still
/// fails, the ridge is escalated by factors of ten a few times before giving up.
pub fn factor_with_ridge(gram: &DMatrix<f64>, skip: usize, ridge: f64) -> Result<GuardedFactor> {
    let dim = gram.nrows();
    let trace = gram.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(SdrError::SingularGram);
    }
    let condition = sym_condition(gram);
    let base = if ridge > 0.0 {
        ridge
    } else {
        DEFAULT_RIDGE_SCALE * trace / dim as f64
    };
    let mut applied = if condition > RIDGE_CONDITION { base } else { 0.0 };
    for _ in 0..8 {
        let mut m = gram.clone();
        for d in skip..dim {
            m[(d, d)] += applied;
        }
        if let Some(chol) = m.cholesky() {
            return Ok(GuardedFactor {
                chol,
                condition,
                ridge_applied: applied,
            });
        }
        applied = if applied == 0.0 { base } else { applied * 10.0 };
    }
    Err(SdrError::SingularGram)
}

/// Orthonormalize the columns of `m` by modified Gram-Schmidt (twice, for
/// stability). Returns `None` when a column is numerically dependent.
pub fn orthonormalize_columns(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (p, q) = m.shape();
    let mut out = m.clone();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for k in 0..q {
        for _pass in 0..2 {
            for l in 0..k {
                let dot = out.column(l).dot(&out.column(k));
                for i in 0..p {
                    out[(i, k)] -= dot * out[(i, l)];
                }
            }
        }
        let norm = out.column(k).norm();
        if norm <= 1e-12 * scale {
            return None;
        }
        out.column_mut(k).scale_mut(1.0 / norm);
    }
    Some(out)
}

/// Deviation of `bᵀb` from the identity (max absolute entry).
pub fn orthonormality_error(b: &DMatrix<f64>) -> f64 {
    let gram = b.transpose() * b;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for r in 0..br {
                for c in 0..bc {
                    out[(i * br + r, j * bc + c)] = s * b[(r, c)];
                }
            }
        }
    }
    out
}
