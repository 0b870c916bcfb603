//! Minimum average (conditional) variance estimation on the double-kernel
//! responses (dMAVE).
//!
//! Each iteration alternates two weighted least-squares problems. With `B`
//! fixed, every anchor pair `(X_j, Y_k)` gets a `q`-dimensional local-linear
//! fit `(a_jk, d_jk)` of `H_b(Y_i - Y_k)` on `Bᵀ(X_i - X_j)`. With those fits
//! fixed, `vec(B)` solves one `pq × pq` system, and the result is rescaled to
//! an orthonormal basis before the next pass.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::bandwidth::{BandwidthSchedule, DEFAULT_C0};
use crate::dopg::{dopg_first_sigma_std, DopgConfig, FitResult, IterationRecord};
use crate::error::{Result, SdrError};
use crate::linalg::{self, factor_with_ridge};
use crate::local::{map_anchors, project_rows, ResponseFamily};
use crate::metrics::projection_distance;
use crate::preprocess::{backtransform_basis, check_dims, standardize, Basis, Dataset, StandardizedDataset};
use crate::smoothing::{radial_window, trim_rho, LocalGram, TrimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DmaveConfig {
    pub trim: TrimConfig,
    pub c0: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Starting basis in original covariate coordinates. `None` starts from
    /// the leading eigenvectors of the first dOPG step.
    pub init: Option<Basis>,
}

impl Default for DmaveConfig {
    fn default() -> Self {
        Self {
            trim: TrimConfig::default(),
            c0: DEFAULT_C0,
            tol: 1e-6,
            max_iter: 25,
            init: None,
        }
    }
}

/// Current basis (whitened coordinates) and the bandwidths for the next pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DmaveState {
    pub b_mat: DMatrix<f64>,
    pub t: usize,
    pub h_t: f64,
    pub b_t: f64,
}

/// Column stacking `ℓ(B) = (β₁ᵀ, …, β_qᵀ)ᵀ`.
pub fn vectorize_basis(b: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(b.as_slice())
}

/// Inverse of [`vectorize_basis`].
pub fn unvectorize(v: &DVector<f64>, p: usize, q: usize) -> Result<DMatrix<f64>> {
    if v.len() != p * q {
        return Err(SdrError::Shape {
            expected: "vector of length p * q",
            found: "different length",
        });
    }
    Ok(DMatrix::from_column_slice(p, q, v.as_slice()))
}

/// Local fits for every anchor pair. Row-major layout: entry
/// `j * cols + k` belongs to covariate anchor `j` and response anchor `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerFits {
    /// Number of response anchors `k`.
    pub cols: usize,
    pub q: usize,
    pub a: Vec<f64>,
    /// `d[(j * cols + k) * q .. +q]` is `d_jk`.
    pub d: Vec<f64>,
    pub rho: Vec<f64>,
}

impl InnerFits {
    pub fn a(&self, j: usize, k: usize) -> f64 {
        self.a[j * self.cols + k]
    }

    pub fn d(&self, j: usize, k: usize) -> &[f64] {
        let at = (j * self.cols + k) * self.q;
        &self.d[at..at + self.q]
    }

    pub fn rho(&self, j: usize, k: usize) -> f64 {
        self.rho[j * self.cols + k]
    }
}

/// Per-anchor output of one pass.
struct AnchorPass {
    a: Vec<f64>,
    d: Vec<f64>,
    rho: Vec<f64>,
    /// `Σ_k ρ_jk d_jk d_jkᵀ ⊗ Σ_i w_ij X_ij X_ijᵀ`, `pq × pq` column-major.
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

/// Shared inputs of one alternation.
pub(crate) struct MavePass<'a> {
    pub z: &'a [f64],
    pub p: usize,
    pub family: &'a ResponseFamily,
    /// Basis defining the kernel weights and trimming.
    pub weight_basis: &'a DMatrix<f64>,
    /// Basis defining the local design `Bᵀ X_ij`.
    pub model_basis: &'a DMatrix<f64>,
    pub h: f64,
    pub trim: &'a TrimConfig,
}

impl MavePass<'_> {
    fn n(&self) -> usize {
        self.z.len() / self.p
    }

    fn run(&self, want_outer: bool) -> Result<Vec<Option<AnchorPass>>> {
        let (n, p) = (self.n(), self.p);
        let q = self.model_basis.ncols();
        let qw = self.weight_basis.ncols();
        let u = project_rows(self.z, p, self.weight_basis);
        let v = project_rows(self.z, p, self.model_basis);
        let dens = libm::pow(self.h, -(qw as f64)) / n as f64;
        let cols = self.family.columns();
        let m = p + 1;
        let pq = p * q;

        let out = map_anchors(n, |j| -> Result<Option<AnchorPass>> {
            let (mut idx, mut w) = (Vec::new(), Vec::new());
            radial_window(&u, qw, j, self.h, &mut idx, &mut w);
            let rho_x = trim_rho(w.iter().sum::<f64>() * dens, self.trim);
            if rho_x == 0.0 {
                return Ok(None);
            }
            let zj = &self.z[j * p..(j + 1) * p];
            let vj = &v[j * q..(j + 1) * q];
            let mut local = Vec::with_capacity(idx.len() * q);
            for &i in &idx {
                for l in 0..q {
                    local.push(v[i * q + l] - vj[l]);
                }
            }
            let gram = LocalGram::new(&local, q, &w, 0.0)?;
            // Weighted mean of X_ij; Bᵀ of it is the design center.
            let total: f64 = w.iter().sum();
            let mut mx = vec![0.0; p];
            for (&i, &wi) in idx.iter().zip(&w) {
                for r in 0..p {
                    mx[r] += wi * (self.z[i * p + r] - zj[r]);
                }
            }
            mx.iter_mut().for_each(|x| *x /= total);
            let mut c = vec![0.0; n * m];
            for (&i, &wi) in idx.iter().zip(&w) {
                c[i * m] = wi;
                for r in 0..p {
                    c[i * m + 1 + r] = wi * (self.z[i * p + r] - zj[r] - mx[r]);
                }
            }
            let (mut sums, mut scratch) = (Vec::new(), Vec::new());
            self.family.apply(&c, m, &mut sums, &mut scratch);

            let mut a = vec![0.0; cols];
            let mut d = vec![0.0; cols * q];
            let mut rho = vec![0.0; cols];
            let mut rhs = DVector::zeros(q + 1);
            let mut dd = DMatrix::<f64>::zeros(q, q);
            let mut rhs_out = vec![0.0; if want_outer { pq } else { 0 }];
            for k in 0..cols {
                let weight = rho_x * self.family.rho(k);
                if weight == 0.0 {
                    continue;
                }
                let s = &sums[k * m..(k + 1) * m];
                rhs[0] = s[0];
                for l in 0..q {
                    let mut acc = 0.0;
                    for r in 0..p {
                        acc += self.model_basis[(r, l)] * s[1 + r];
                    }
                    rhs[1 + l] = acc;
                }
                gram.solve_centered(&mut rhs);
                let ak = rhs[0];
                let dk = &rhs.as_slice()[1..];
                a[k] = ak;
                d[k * q..(k + 1) * q].copy_from_slice(dk);
                rho[k] = weight;
                if want_outer {
                    for l1 in 0..q {
                        for l2 in 0..q {
                            dd[(l1, l2)] += weight * dk[l1] * dk[l2];
                        }
                    }
                    // Σ_i w (X_ij)(r_ik - a) = centered sums + mx (Σ w r - a W).
                    let shift = s[0] - ak * total;
                    for l in 0..q {
                        let f = weight * dk[l];
                        for r in 0..p {
                            rhs_out[l * p + r] += f * (s[1 + r] + mx[r] * shift);
                        }
                    }
                }
            }
            let mut gram_out = Vec::new();
            if want_outer {
                let mut g = DMatrix::<f64>::zeros(p, p);
                for (&i, &wi) in idx.iter().zip(&w) {
                    let zi = &self.z[i * p..(i + 1) * p];
                    for r in 0..p {
                        let f = wi * (zi[r] - zj[r]);
                        for c2 in r..p {
                            g[(r, c2)] += f * (zi[c2] - zj[c2]);
                        }
                    }
                }
                for r in 0..p {
                    for c2 in 0..r {
                        g[(r, c2)] = g[(c2, r)];
                    }
                }
                gram_out = linalg::kron(&dd, &g).as_slice().to_vec();
            }
            Ok(Some(AnchorPass {
                a,
                d,
                rho,
                gram: gram_out,
                rhs: rhs_out,
            }))
        });
        out.into_iter().collect()
    }

    pub(crate) fn inner(&self) -> Result<InnerFits> {
        let (n, q) = (self.n(), self.model_basis.ncols());
        let cols = self.family.columns();
        let mut fits = InnerFits {
            cols,
            q,
            a: vec![0.0; n * cols],
            d: vec![0.0; n * cols * q],
            rho: vec![0.0; n * cols],
        };
        for (j, anchor) in self.run(false)?.into_iter().enumerate() {
            if let Some(pass) = anchor {
                fits.a[j * cols..(j + 1) * cols].copy_from_slice(&pass.a);
                fits.d[j * cols * q..(j + 1) * cols * q].copy_from_slice(&pass.d);
                fits.rho[j * cols..(j + 1) * cols].copy_from_slice(&pass.rho);
            }
        }
        if fits.rho.iter().all(|&r| r == 0.0) {
            return Err(SdrError::FullyTrimmed);
        }
        Ok(fits)
    }

    /// Inner fits followed by the outer normal equations `(G, c)` for `vec(B)`.
    pub(crate) fn outer_system(&self) -> Result<(InnerFits, DMatrix<f64>, DVector<f64>)> {
        let (n, p, q) = (self.n(), self.p, self.model_basis.ncols());
        let cols = self.family.columns();
        let pq = p * q;
        let mut gram = DMatrix::zeros(pq, pq);
        let mut rhs = DVector::zeros(pq);
        let mut fits = InnerFits {
            cols,
            q,
            a: vec![0.0; n * cols],
            d: vec![0.0; n * cols * q],
            rho: vec![0.0; n * cols],
        };
        let mut any = false;
        for (j, anchor) in self.run(true)?.into_iter().enumerate() {
            if let Some(pass) = anchor {
                any |= pass.rho.iter().any(|&r| r > 0.0);
                for (g, x) in gram.as_mut_slice().iter_mut().zip(&pass.gram) {
                    *g += x;
                }
                for (g, x) in rhs.as_mut_slice().iter_mut().zip(&pass.rhs) {
                    *g += x;
                }
                fits.a[j * cols..(j + 1) * cols].copy_from_slice(&pass.a);
                fits.d[j * cols * q..(j + 1) * cols * q].copy_from_slice(&pass.d);
                fits.rho[j * cols..(j + 1) * cols].copy_from_slice(&pass.rho);
            }
        }
        if !any {
            return Err(SdrError::FullyTrimmed);
        }
        Ok((fits, gram, rhs))
    }

    /// Weighted residual sum of squares
    /// `Σ_{j,k} ρ_jk Σ_i w_ij (R_ik - a_jk - d_jkᵀ Bᵀ X_ij)²` for a candidate `B`.
    #[cfg(test)]
    pub(crate) fn objective(&self, fits: &InnerFits, b: &DMatrix<f64>) -> f64 {
        let (n, p) = (self.n(), self.p);
        let q = b.ncols();
        let qw = self.weight_basis.ncols();
        let u = project_rows(self.z, p, self.weight_basis);
        let v = project_rows(self.z, p, b);
        let cols = self.family.columns();
        let mut total = 0.0;
        let (mut idx, mut w) = (Vec::new(), Vec::new());
        for j in 0..n {
            radial_window(&u, qw, j, self.h, &mut idx, &mut w);
            for k in 0..cols {
                let rho = fits.rho(j, k);
                if rho == 0.0 {
                    continue;
                }
                let (a, d) = (fits.a(j, k), fits.d(j, k));
                for (&i, &wi) in idx.iter().zip(&w) {
                    let mut fit = a;
                    for l in 0..q {
                        fit += d[l] * (v[i * q + l] - v[j * q + l]);
                    }
                    let r = self.family.value(i, k) - fit;
                    total += rho * wi * r * r;
                }
            }
        }
        total
    }
}

/// Solve the outer normal equations for `vec(B)`.
pub(crate) fn solve_outer(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let factor = factor_with_ridge(gram, 0, 0.0).map_err(|_| SdrError::IllPosedStep)?;
    let sol = factor.solve(rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(SdrError::IllPosedStep);
    }
    Ok(sol)
}

/// `B = M (MᵀM)^{-1/2}` with `M = 𝓜(bvec)`; also returns the spectrum of
/// `Λ = MᵀM`, descending.
pub fn dmave_orthonormalize(bvec: &DVector<f64>, p: usize, q: usize) -> Result<(Basis, DVector<f64>)> {
    let m = unvectorize(bvec, p, q)?;
    let lambda = m.transpose() * &m;
    let eig = linalg::sym_eigen(&lambda);
    let top = eig.values[0];
    let bottom = eig.values[q - 1];
    if !(top > 0.0) || !top.is_finite() || bottom <= 1e-12 * top {
        return Err(SdrError::RankCollapse(q));
    }
    let inv_sqrt = linalg::apply_spectrum(&eig, |l| 1.0 / libm::sqrt(l));
    Ok((Basis::new(m * inv_sqrt)?, eig.values))
}

fn check_state(std: &StandardizedDataset, state: &DmaveState) -> Result<()> {
    if state.b_mat.nrows() != std.p() {
        return Err(SdrError::Shape {
            expected: "p x q basis",
            found: "different row count",
        });
    }
    check_dims(std.p(), state.b_mat.ncols())
}

/// Inner local-linear fits for every `(j, k)` at the state's basis and bandwidths.
pub fn dmave_inner_fits(std: &StandardizedDataset, state: &DmaveState, trim: &TrimConfig) -> Result<InnerFits> {
    check_state(std, state)?;
    let family = ResponseFamily::double_kernel(std.y_std.as_slice(), state.b_t, trim)?;
    let z = std.z_rows();
    MavePass {
        z: &z,
        p: std.p(),
        family: &family,
        weight_basis: &state.b_mat,
        model_basis: &state.b_mat,
        h: state.h_t,
        trim,
    }
    .inner()
}

/// Outer least-squares step: the `pq`-vector `vec(B)` minimizing the average
/// local approximation error with the inner fits at `state` held fixed.
pub fn dmave_outer_solve(std: &StandardizedDataset, state: &DmaveState, trim: &TrimConfig) -> Result<DVector<f64>> {
    check_state(std, state)?;
    let family = ResponseFamily::double_kernel(std.y_std.as_slice(), state.b_t, trim)?;
    let z = std.z_rows();
    let pass = MavePass {
        z: &z,
        p: std.p(),
        family: &family,
        weight_basis: &state.b_mat,
        model_basis: &state.b_mat,
        h: state.h_t,
        trim,
    };
    let (_, gram, rhs) = pass.outer_system()?;
    solve_outer(&gram, &rhs)
}

/// Which response family a MAVE run smooths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MaveKind {
    Density,
    Mean,
}

/// Shared alternation loop for dMAVE and the mean-regression variant.
pub(crate) fn mave_iterate(
    std: &StandardizedDataset,
    kind: MaveKind,
    init: DmaveState,
    sched: &BandwidthSchedule,
    trim: &TrimConfig,
    tol: f64,
    max_iter: usize,
) -> Result<FitResult> {
    let (p, q) = (std.p(), init.b_mat.ncols());
    let z = std.z_rows();
    let y = std.y_std.as_slice();
    let mean_family = ResponseFamily::mean(y);
    let mut state = init;
    let mut history = Vec::new();
    let mut converged = false;
    let mut spectrum = DVector::from_element(q, 1.0);
    let (mut used_h, mut used_b) = (state.h_t, state.b_t);
    for _ in 0..max_iter {
        used_h = state.h_t;
        used_b = state.b_t;
        let dens_family;
        let family = match kind {
            MaveKind::Density => {
                dens_family = ResponseFamily::double_kernel(y, state.b_t, trim)?;
                if !dens_family.any_rho() {
                    return Err(SdrError::FullyTrimmed);
                }
                &dens_family
            }
            MaveKind::Mean => &mean_family,
        };
        let pass = MavePass {
            z: &z,
            p,
            family,
            weight_basis: &state.b_mat,
            model_basis: &state.b_mat,
            h: state.h_t,
            trim,
        };
        let (_, gram, rhs) = pass.outer_system()?;
        let bvec = solve_outer(&gram, &rhs)?;
        let (basis, lambda) = dmave_orthonormalize(&bvec, p, q)?;
        spectrum = lambda;
        let change = projection_distance(&state.b_mat, basis.matrix());
        history.push(IterationRecord {
            h: used_h,
            b: used_b,
            change,
        });
        let (h_next, b_next) = sched.next(state.h_t, state.b_t);
        state = DmaveState {
            b_mat: basis.into_matrix(),
            t: state.t + 1,
            h_t: h_next,
            b_t: if kind == MaveKind::Mean { 0.0 } else { b_next },
        };
        if change < tol {
            converged = true;
            break;
        }
    }
    let basis_std = Basis::new(state.b_mat)?;
    let basis = backtransform_basis(&basis_std, std)?;
    Ok(FitResult {
        basis,
        basis_std,
        eigenvalues: spectrum,
        iterations: history.len(),
        converged,
        final_h: used_h,
        final_b: used_b,
        history,
    })
}

/// Map a basis in original coordinates to whitened coordinates:
/// `z = S^{-1/2}(x - x̄)`, so `βᵀx` depends on `z` through `S^{1/2}β`.
pub(crate) fn to_whitened(basis: &Basis, std: &StandardizedDataset) -> Result<DMatrix<f64>> {
    if basis.p() != std.p() {
        return Err(SdrError::Shape {
            expected: "initial basis with p rows",
            found: "different row count",
        });
    }
    let s_sqrt = std
        .s_inv_sqrt
        .clone()
        .try_inverse()
        .ok_or(SdrError::RankDeficient {
            eigenvalue: 0.0,
            index: 0,
        })?;
    let m = s_sqrt * basis.matrix();
    Ok(Basis::from_columns(&m)?.into_matrix())
}

/// Full dMAVE fit on raw data.
pub fn dmave_fit(ds: &Dataset, q: usize, cfg: &DmaveConfig) -> Result<FitResult> {
    check_dims(ds.p(), q)?;
    let std = standardize(ds)?;
    dmave_fit_std(&std, q, cfg)
}

/// Full dMAVE fit on standardized data. `cfg.init`, if given, is read in the
/// original coordinates of `std`.
pub fn dmave_fit_std(std: &StandardizedDataset, q: usize, cfg: &DmaveConfig) -> Result<FitResult> {
    let p = std.p();
    check_dims(p, q)?;
    let sched = BandwidthSchedule::new(std.n(), p, q, cfg.c0);
    let init = match &cfg.init {
        Some(b) => {
            if b.q() != q {
                return Err(SdrError::Shape {
                    expected: "initial basis with q columns",
                    found: "different column count",
                });
            }
            let (h0, b0) = sched.initial();
            let (h1, b1) = sched.next(h0, b0);
            DmaveState {
                b_mat: to_whitened(b, std)?,
                t: 0,
                h_t: h1,
                b_t: b1,
            }
        }
        None => {
            let dcfg = DopgConfig {
                trim: cfg.trim,
                c0: cfg.c0,
                tol: cfg.tol,
                max_iter: cfg.max_iter,
                ..DopgConfig::default()
            };
            let first = dopg_first_sigma_std(std, q, &dcfg)?;
            DmaveState {
                b_mat: Basis::leading_columns(&first.eigvecs, q)?.into_matrix(),
                t: 0,
                h_t: first.h_t,
                b_t: first.b_t,
            }
        }
    };
    mave_iterate(std, MaveKind::Density, init, &sched, &cfg.trim, cfg.tol, cfg.max_iter)
}
