//! Datasets, whitening, and orthonormal bases.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdrError};
use crate::linalg;

/// Eigenvalue floor for the whitening transform.
pub const DEFAULT_SQRT_FLOOR: f64 = 1e-12;

/// Covariance eigenvalues at or below this multiple of the largest one count
/// as rank deficient.
const RANK_TOL: f64 = 1e-12;

/// Raw covariates (rows are observations) and response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(SdrError::Shape {
                expected: "response length equal to covariate rows",
                found: "different lengths",
            });
        }
        if p < 1 {
            return Err(SdrError::InvalidDimension("need at least one covariate"));
        }
        if n < p + 2 {
            return Err(SdrError::TooFewObservations { n, p });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SdrError::NonFinite("covariates"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SdrError::NonFinite("response"));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Whitened covariates `z_i = S_X^{-1/2}(x_i - x̄)` and standardized response,
/// together with the transforms needed to map directions back.
#[derive(Debug, Clone)]
pub struct StandardizedDataset {
    pub z: DMatrix<f64>,
    pub y_std: DVector<f64>,
    pub x_mean: DVector<f64>,
    pub s_inv_sqrt: DMatrix<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

impl StandardizedDataset {
    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    /// Row-major copy of `z`, the layout the smoothing loops use.
    pub fn z_rows(&self) -> Vec<f64> {
        let (n, p) = self.z.shape();
        let mut out = Vec::with_capacity(n * p);
        for i in 0..n {
            for k in 0..p {
                out.push(self.z[(i, k)]);
            }
        }
        out
    }

    /// Build directly from already-whitened data with identity transforms.
    /// Used when the caller controls the coordinates (tests, rotations).
    pub fn from_whitened(z: DMatrix<f64>, y_std: DVector<f64>) -> Self {
        let p = z.ncols();
        Self {
            z,
            y_std,
            x_mean: DVector::zeros(p),
            s_inv_sqrt: DMatrix::identity(p, p),
            y_mean: 0.0,
            y_sd: 1.0,
        }
    }
}

/// Whiten covariates and standardize the response (divisor `n` throughout).
pub fn standardize(ds: &Dataset) -> Result<StandardizedDataset> {
    let (n, p) = ds.x.shape();
    let nf = n as f64;
    let x_mean = DVector::from_iterator(p, (0..p).map(|k| ds.x.column(k).sum() / nf));
    let mut centered = ds.x.clone();
    for k in 0..p {
        let m = x_mean[k];
        centered.column_mut(k).add_scalar_mut(-m);
    }
    let cov = (centered.transpose() * &centered) / nf;
    let cov = (&cov + cov.transpose()) * 0.5;

    let eig = linalg::sym_eigen(&cov);
    let top = eig.values[0].max(0.0);
    for (index, &ev) in eig.values.iter().enumerate() {
        if !(ev > RANK_TOL * top) || top == 0.0 {
            return Err(SdrError::RankDeficient { eigenvalue: ev, index });
        }
    }
    let s_inv_sqrt = linalg::apply_spectrum(&eig, |l| 1.0 / libm::sqrt(l.max(DEFAULT_SQRT_FLOOR)));
    let z = centered * &s_inv_sqrt;

    let y_mean = ds.y.sum() / nf;
    let var = ds.y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / nf;
    let scale = ds.y.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if !(var > 1e-24 * scale * scale) {
        return Err(SdrError::DegenerateResponse);
    }
    let y_sd = libm::sqrt(var);
    let y_std = ds.y.map(|v| (v - y_mean) / y_sd);

    Ok(StandardizedDataset {
        z,
        y_std,
        x_mean,
        s_inv_sqrt,
        y_mean,
        y_sd,
    })
}

/// Column-orthonormal `p × q` matrix with `1 ≤ q < p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    b: DMatrix<f64>,
}

/// Tolerance on `bᵀb = I` for [`Basis::new`].
pub const BASIS_TOL: f64 = 1e-10;

impl Basis {
    /// Wrap a matrix that is already column orthonormal.
    pub fn new(b: DMatrix<f64>) -> Result<Self> {
        let (p, q) = b.shape();
        check_dims(p, q)?;
        if b.iter().any(|v| !v.is_finite()) {
            return Err(SdrError::NonFinite("basis"));
        }
        let dev = linalg::orthonormality_error(&b);
        if dev > BASIS_TOL {
            return Err(SdrError::NotOrthonormal(dev));
        }
        Ok(Self { b })
    }

    /// Orthonormalize arbitrary full-rank columns (Gram-Schmidt).
    pub fn from_columns(m: &DMatrix<f64>) -> Result<Self> {
        let (p, q) = m.shape();
        check_dims(p, q)?;
        let b = linalg::orthonormalize_columns(m).ok_or(SdrError::RankCollapse(q))?;
        Self::new(b)
    }

    /// First `q` columns of a square orthogonal matrix.
    pub fn leading_columns(vectors: &DMatrix<f64>, q: usize) -> Result<Self> {
        let p = vectors.nrows();
        check_dims(p, q)?;
        Self::from_columns(&vectors.columns(0, q).into_owned())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.b
    }

    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn q(&self) -> usize {
        self.b.ncols()
    }

    /// Projection matrix `b bᵀ`.
    pub fn projection(&self) -> DMatrix<f64> {
        &self.b * self.b.transpose()
    }
}

pub(crate) fn check_dims(p: usize, q: usize) -> Result<()> {
    if q < 1 {
        return Err(SdrError::InvalidDimension("q must be at least 1"));
    }
    if q >= p {
        return Err(SdrError::InvalidDimension("q must be smaller than p"));
    }
    Ok(())
}

/// Map a basis estimated in whitened coordinates back to the original
/// covariate scale: the span of `S_X^{-1/2} B`, re-orthonormalized.
pub fn backtransform_basis(basis_in_z: &Basis, std: &StandardizedDataset) -> Result<Basis> {
    if basis_in_z.p() != std.s_inv_sqrt.nrows() {
        return Err(SdrError::Shape {
            expected: "basis rows equal to covariate count",
            found: "different dimension",
        });
    }
    let mapped = &std.s_inv_sqrt * basis_in_z.matrix();
    let mut b = Basis::from_columns(&mapped)?.into_matrix();
    // Fix the sign of each column so outputs are reproducible.
    for k in 0..b.ncols() {
        let mut col = b.column(k).into_owned();
        linalg::canonical_sign(&mut col);
        b.set_column(k, &col);
    }
    Basis::new(b)
}
