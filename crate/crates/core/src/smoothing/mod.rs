//! Local-linear smoothing machinery shared by the density-based estimators:
//! trimming weights, kernel density estimates, and the weighted least-squares
//! solver for local fits.

mod ysum;

pub use ysum::YKernelSums;

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdrError};
use crate::kernels::{ball_kernel_mass, check_bandwidth, h_scaled, k0, K0_AT_ZERO};
use crate::linalg::{factor_with_ridge, sym_condition, GuardedFactor, DEFAULT_RIDGE_SCALE, RIDGE_CONDITION};
use crate::preprocess::Basis;

/// Trimming threshold and ramp.
///
/// `ρ(v) = 0` for `v ≤ omega0`, rises along a quintic smoothstep over
/// `(omega0, omega0 + ramp_width)`, and saturates at 1 above it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimConfig {
    pub omega0: f64,
    pub ramp_width: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self::new(0.01)
    }
}

impl TrimConfig {
    /// Threshold `omega0` with a ramp of the same width.
    pub fn new(omega0: f64) -> Self {
        Self {
            omega0,
            ramp_width: omega0,
        }
    }
}

/// Smooth trimming weight in `[0, 1]`.
pub fn trim_rho(v: f64, cfg: &TrimConfig) -> f64 {
    if !(v > cfg.omega0) {
        return 0.0;
    }
    let t = (v - cfg.omega0) / cfg.ramp_width;
    if t >= 1.0 {
        return 1.0;
    }
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

/// Kernel density estimate `n^{-1} Σ_i H_b(y_i - eval_at)`.
pub fn density_y(y_points: &[f64], eval_at: f64, b: f64) -> Result<f64> {
    check_bandwidth(b)?;
    if y_points.is_empty() {
        return Err(SdrError::InvalidDimension("density needs at least one point"));
    }
    let sum: f64 = y_points.iter().map(|&y| h_scaled(y - eval_at, b).unwrap_or(0.0)).sum();
    Ok(sum / y_points.len() as f64)
}

/// q-dimensional kernel density of `Bᵀx` at `Bᵀ eval_at`,
/// `n^{-1} Σ_i K_h(Bᵀ(z_i - eval_at))`.
pub fn density_x_reduced(z: &DMatrix<f64>, basis: &Basis, eval_at: &DVector<f64>, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    let (n, p) = z.shape();
    if basis.p() != p || eval_at.len() != p {
        return Err(SdrError::Shape {
            expected: "basis and point of the covariate dimension",
            found: "different dimension",
        });
    }
    let b = basis.matrix();
    let q = basis.q();
    let center = b.transpose() * eval_at;
    let proj = z * b;
    let mut sum = 0.0;
    for i in 0..n {
        let mut d2 = 0.0;
        for l in 0..q {
            let d = proj[(i, l)] - center[l];
            d2 += d * d;
        }
        sum += k0(d2 / (h * h));
    }
    Ok(sum * libm::pow(h, -(q as f64)) / n as f64)
}

/// Normalizing mass for the eigenvalue-corrected covariate density: the
/// `m`-dimensional kernel mass, and `K₀(0)` when no direction survives.
pub(crate) fn dopg_mass(m: usize) -> f64 {
    if m == 0 {
        K0_AT_ZERO
    } else {
        ball_kernel_mass(m).expect("m >= 1")
    }
}

/// Multiplier turning a raw window sum `Σ_i K₀(‖S(z_i - x)‖² / h²)` into the
/// eigenvalue-corrected density estimate used for trimming in dOPG.
pub(crate) fn dopg_density_factor(eigvals: &[f64], h: f64, n: usize) -> f64 {
    let mut prod = 1.0;
    let mut m = 0usize;
    for &l in eigvals {
        if l > h {
            prod *= l / h;
            m += 1;
        }
    }
    prod / (n as f64 * dopg_mass(m))
}

/// Eigenvalue-corrected covariate density under the metric `sigma_sqrt`:
///
/// `(n μ̃)^{-1} h^p Π_{λ_k > h}(λ_k / h) Σ_i K_h(S (z_i - x))`
///
/// where `μ̃` is the kernel mass over the `m = #{λ_k > h}` retained directions.
/// When `m = 0` the empty product is 1 and `μ̃ = K₀(0)`, so the estimate is the
/// kernel-weighted fraction of the sample inside the window.
pub fn density_x_dopg(
    z: &DMatrix<f64>,
    sigma_sqrt: &DMatrix<f64>,
    eigvals: &[f64],
    eval_at: &DVector<f64>,
    h: f64,
) -> Result<f64> {
    check_bandwidth(h)?;
    let (n, p) = z.shape();
    if sigma_sqrt.shape() != (p, p) || eigvals.len() != p || eval_at.len() != p {
        return Err(SdrError::Shape {
            expected: "p x p metric with p eigenvalues",
            found: "different dimension",
        });
    }
    let mut sum = 0.0;
    let mut diff = DVector::zeros(p);
    for i in 0..n {
        for k in 0..p {
            diff[k] = z[(i, k)] - eval_at[k];
        }
        let u = sigma_sqrt * &diff;
        sum += k0(u.norm_squared() / (h * h));
    }
    Ok(sum * dopg_density_factor(eigvals, h, n))
}

/// Intercept and slope of a weighted local-linear fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub a: f64,
    pub grad: DVector<f64>,
    /// Condition number of the weighted Gram matrix before any ridge.
    pub gram_condition: f64,
}

/// Weighted Gram matrix of the design `(1, x̃_i)`, factored once so many
/// right-hand sides can be solved against it.
///
/// The intercept is profiled out: the slope block is factored in weighted-mean
/// centered form, which is algebraically the same solution but keeps the
/// factorization well conditioned when windows are narrow.
#[derive(Debug, Clone)]
pub struct LocalGram {
    factor: GuardedFactor,
    total_weight: f64,
    center: Vec<f64>,
    condition: f64,
}

impl LocalGram {
    /// `anchors` is row-major `n × d`.
    pub fn new(anchors: &[f64], d: usize, weights: &[f64], ridge: f64) -> Result<Self> {
        let n = weights.len();
        if anchors.len() != n * d {
            return Err(SdrError::Shape {
                expected: "one anchor row per weight",
                found: "different lengths",
            });
        }
        let mut total = 0.0;
        let mut center = vec![0.0; d];
        for (i, &w) in weights.iter().enumerate() {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(SdrError::NegativeWeight);
            }
            total += w;
            for r in 0..d {
                center[r] += w * anchors[i * d + r];
            }
        }
        if !(total > 0.0) {
            return Err(SdrError::EmptyWindow);
        }
        center.iter_mut().for_each(|c| *c /= total);
        let mut centered = DMatrix::zeros(d, d);
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = &anchors[i * d..(i + 1) * d];
            for r in 0..d {
                let wr = w * (row[r] - center[r]);
                for c in r..d {
                    centered[(r, c)] += wr * (row[c] - center[c]);
                }
            }
        }
        for r in 0..d {
            for c in 0..r {
                centered[(r, c)] = centered[(c, r)];
            }
        }
        // Condition of the full (d + 1) × (d + 1) Gram matrix decides the ridge.
        let mut full = DMatrix::zeros(d + 1, d + 1);
        full[(0, 0)] = total;
        for r in 0..d {
            full[(0, r + 1)] = total * center[r];
            full[(r + 1, 0)] = total * center[r];
            for c in 0..d {
                full[(r + 1, c + 1)] = centered[(r, c)] + total * center[r] * center[c];
            }
        }
        let condition = sym_condition(&full);
        let base = if ridge > 0.0 {
            ridge
        } else {
            DEFAULT_RIDGE_SCALE * full.trace() / (d + 1) as f64
        };
        let applied = if condition > RIDGE_CONDITION { base } else { 0.0 };
        let factor = if d == 0 {
            factor_with_ridge(&DMatrix::identity(0, 0), 0, 0.0).map_err(|_| SdrError::SingularGram)?
        } else {
            factor_with_ridge_exact(&centered, applied, base)?
        };
        Ok(Self {
            factor,
            total_weight: total,
            center,
            condition,
        })
    }

    /// Condition number of the Gram matrix before any ridge.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn ridge_applied(&self) -> f64 {
        self.factor.ridge_applied
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Weighted mean of the anchors.
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Solve in place. On entry `rhs = (Σ w_i r_i, Σ w_i (x̃_i - x̄_w) r_i)`
    /// with `x̄_w` = [`LocalGram::center`]; on exit `rhs = (a, slope)`.
    pub fn solve_centered(&self, rhs: &mut DVector<f64>) {
        let d = self.dim();
        let mean_r = rhs[0] / self.total_weight;
        if d > 0 {
            let mut slope = rhs.rows(1, d).into_owned();
            self.factor.solve_in_place(&mut slope);
            let mut a = mean_r;
            for r in 0..d {
                a -= self.center[r] * slope[r];
                rhs[r + 1] = slope[r];
            }
            rhs[0] = a;
        } else {
            rhs[0] = mean_r;
        }
    }
}

/// Factor `m + ridge·I`, escalating the ridge (starting from `base`) if the
/// Cholesky factorization fails.
fn factor_with_ridge_exact(m: &DMatrix<f64>, ridge: f64, base: f64) -> Result<GuardedFactor> {
    let mut applied = ridge;
    for _ in 0..12 {
        let mut shifted = m.clone();
        for d in 0..m.nrows() {
            shifted[(d, d)] += applied;
        }
        if let Some(f) = GuardedFactor::from_matrix(shifted, applied) {
            return Ok(f);
        }
        applied = if applied == 0.0 { base.max(f64::MIN_POSITIVE) } else { applied * 10.0 };
    }
    Err(SdrError::SingularGram)
}

/// Minimize `Σ_i w_i (r_i - a - bᵀx̃_i)²` over `(a, b)`.
///
/// `anchors` is an `n × d` matrix of local coordinates `x̃_i`. A ridge of size
/// `ridge` (or `1e-8 · trace / (d + 1)` when `ridge` is zero) is added to the
/// slope block only when the Gram matrix has condition number above `1e10`.
pub fn wls_linear_fit(anchors: &DMatrix<f64>, responses: &[f64], weights: &[f64], ridge: f64) -> Result<LocalFit> {
    let (n, d) = anchors.shape();
    if responses.len() != n || weights.len() != n {
        return Err(SdrError::Shape {
            expected: "one response and weight per anchor",
            found: "different lengths",
        });
    }
    let mut rows = Vec::with_capacity(n * d);
    for i in 0..n {
        for k in 0..d {
            rows.push(anchors[(i, k)]);
        }
    }
    let gram = LocalGram::new(&rows, d, weights, ridge)?;
    let center = gram.center().to_vec();
    let mut rhs = DVector::zeros(d + 1);
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let wr = w * responses[i];
        rhs[0] += wr;
        for k in 0..d {
            rhs[k + 1] += wr * (rows[i * d + k] - center[k]);
        }
    }
    gram.solve_centered(&mut rhs);
    Ok(LocalFit {
        a: rhs[0],
        grad: rhs.rows(1, d).into_owned(),
        gram_condition: gram.condition(),
    })
}

/// Indices and unscaled kernel values `K₀(‖u_i - u_j‖² / h²)` of the points
/// inside the window around row `j` of the row-major `n × d` matrix `u`.
pub(crate) fn radial_window(u: &[f64], d: usize, j: usize, h: f64, idx: &mut Vec<usize>, w: &mut Vec<f64>) {
    idx.clear();
    w.clear();
    let n = u.len() / d;
    let center = &u[j * d..(j + 1) * d];
    let inv_h2 = 1.0 / (h * h);
    for i in 0..n {
        let row = &u[i * d..(i + 1) * d];
        let mut d2 = 0.0;
        for k in 0..d {
            let diff = row[k] - center[k];
            d2 += diff * diff;
        }
        let kv = k0(d2 * inv_h2);
        if kv > 0.0 {
            idx.push(i);
            w.push(kv);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn trim_examples() {
        let cfg = TrimConfig::default();
        assert_eq!(trim_rho(0.005, &cfg), 0.0);
        assert_eq!(trim_rho(0.01, &cfg), 0.0);
        assert_eq!(trim_rho(0.5, &cfg), 1.0);
        let mid = trim_rho(0.015, &cfg);
        assert!(mid > 0.0 && mid < 1.0);
        assert_relative_eq!(mid, 0.5, epsilon = 1e-12);
        assert!(trim_rho(0.014, &cfg) < mid && mid < trim_rho(0.016, &cfg));
    }

    #[test]
    fn trim_is_c2_across_the_ramp() {
        let cfg = TrimConfig::default();
        let step = 1e-5;
        let second = |v: f64| (trim_rho(v + step, &cfg) - 2.0 * trim_rho(v, &cfg) + trim_rho(v - step, &cfg)) / (step * step);
        let first = |v: f64| (trim_rho(v + step, &cfg) - trim_rho(v - step, &cfg)) / (2.0 * step);
        for &edge in &[0.01, 0.02] {
            assert!(first(edge).abs() < 1e-2, "first derivative at {edge}");
            // Second derivative of the quintic smoothstep vanishes at both ends.
            assert!(second(edge).abs() < 2e2, "second derivative at {edge}: {}", second(edge));
        }
    }

    #[test]
    fn density_y_examples() {
        assert_eq!(density_y(&[0.0], 0.0, 1.0).unwrap(), 0.9375);
        assert_eq!(density_y(&[0.0, 0.1, -0.2], 50.0, 1.0).unwrap(), 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let ys: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f0 = density_y(&ys, 0.0, 0.3).unwrap();
        assert!((f0 - 0.3989).abs() < 0.05, "{f0}");
    }

    #[test]
    fn density_y_integrates_to_one() {
        let ys = [-1.0, 0.2, 0.3, 2.5];
        let b = 0.4;
        let (lo, hi, m) = (-2.0, 3.5, 55_000);
        let step = (hi - lo) / m as f64;
        let total: f64 = (0..m).map(|i| density_y(&ys, lo + (i as f64 + 0.5) * step, b).unwrap() * step).sum();
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn density_x_reduced_examples() {
        let basis = Basis::new(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let z = DMatrix::from_row_slice(1, 3, &[0.25, 1.0, -1.0]);
        let at = DVector::from_vec(vec![0.25, 5.0, 5.0]);
        assert_relative_eq!(density_x_reduced(&z, &basis, &at, 0.5).unwrap(), 0.9375 / 0.5, epsilon = 1e-14);
        let far = DVector::from_vec(vec![0.75, 0.0, 0.0]);
        assert_eq!(density_x_reduced(&z, &basis, &far, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn density_x_reduced_uniform_box() {
        // Uniform on [-1, 1]² has density 1/4; project a 3-d sample on the first two axes.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let n = 2000;
        let z = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let basis = Basis::new(DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        let f = density_x_reduced(&z, &basis, &DVector::zeros(3), 0.5).unwrap();
        assert!((f - 0.25).abs() < 0.1, "{f}");
    }

    #[test]
    fn density_x_dopg_identity_metric_is_plain_kde() {
        let z = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.1, 0.2, -0.3, 0.1]);
        let at = DVector::from_vec(vec![0.05, 0.0]);
        let h = 0.5;
        let got = density_x_dopg(&z, &DMatrix::identity(2, 2), &[1.0, 1.0], &at, h).unwrap();
        let mut kde = 0.0;
        for i in 0..3 {
            kde += k_multi_ref(&[z[(i, 0)] - at[0], z[(i, 1)] - at[1]], h);
        }
        kde /= 3.0 * ball_kernel_mass(2).unwrap();
        assert_relative_eq!(got, kde, epsilon = 1e-14);
    }

    fn k_multi_ref(u: &[f64], h: f64) -> f64 {
        crate::kernels::k_multi(u, h).unwrap()
    }

    #[test]
    fn density_x_dopg_drops_small_eigenvalues() {
        // Metric diag(1, h/2): only the first direction survives, μ̃ = mass(1) = 1.
        let h = 0.8;
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, h / 2.0]));
        let z = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.3, 0.5, -0.2, 1.0]);
        let at = DVector::from_vec(vec![0.1, 0.2]);
        let got = density_x_dopg(&z, &s, &[1.0, h / 2.0], &at, h).unwrap();
        // Hand expansion: (n μ̃)^{-1} h^p (λ₁/h) Σ h^{-p} K₀(‖S(z_i - x)‖² / h²).
        let mut sum = 0.0;
        for i in 0..3 {
            let u0 = z[(i, 0)] - at[0];
            let u1 = (z[(i, 1)] - at[1]) * h / 2.0;
            sum += k0((u0 * u0 + u1 * u1) / (h * h));
        }
        let expected = (1.0 / h) * sum / 3.0;
        assert_relative_eq!(got, expected, epsilon = 1e-14);
    }

    #[test]
    fn density_x_dopg_single_point() {
        let h = 0.5;
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.1]));
        let z = DMatrix::from_row_slice(1, 3, &[0.3, -0.2, 0.9]);
        let at = DVector::from_vec(vec![0.3, -0.2, 0.9]);
        let got = density_x_dopg(&z, &s, &[2.0, 1.0, 0.1], &at, h).unwrap();
        let expected = (2.0 / h) * (1.0 / h) * K0_AT_ZERO / ball_kernel_mass(2).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-14);
    }

    #[test]
    fn density_x_dopg_without_retained_directions_is_window_fraction() {
        let z = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.1, 5.0, 5.0, -5.0, 5.0]);
        let got = density_x_dopg(&z, &DMatrix::identity(2, 2), &[1.0, 1.0], &DVector::zeros(2), 2.0).unwrap();
        let expected = (1.0 + k0(0.01 / 4.0) / K0_AT_ZERO) / 4.0;
        assert_relative_eq!(got, expected, epsilon = 1e-14);
    }

    #[test]
    fn wls_recovers_affine_responses() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let anchors = DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
        let r: Vec<f64> = (0..30).map(|i| 0.7 + 1.5 * anchors[(i, 0)] - 2.0 * anchors[(i, 2)]).collect();
        let w: Vec<f64> = (0..30).map(|_| rng.random_range(0.1..1.0)).collect();
        let fit = wls_linear_fit(&anchors, &r, &w, 0.0).unwrap();
        assert_relative_eq!(fit.a, 0.7, epsilon = 1e-8);
        assert_relative_eq!(fit.grad[0], 1.5, epsilon = 1e-8);
        assert_relative_eq!(fit.grad[1], 0.0, epsilon = 1e-8);
        assert_relative_eq!(fit.grad[2], -2.0, epsilon = 1e-8);
        assert!(fit.gram_condition.is_finite());
    }

    #[test]
    fn wls_single_positive_weight() {
        let anchors = DMatrix::from_row_slice(3, 2, &[0.5, -0.2, 1.0, 1.0, 0.3, 0.3]);
        let fit = wls_linear_fit(&anchors, &[4.0, 9.0, -1.0], &[2.0, 0.0, 0.0], 0.0).unwrap();
        assert_relative_eq!(fit.a, 4.0, epsilon = 1e-10);
        assert!(fit.grad.norm() < 1e-8);
        assert!(fit.gram_condition.is_infinite() || fit.gram_condition > 1e10);
    }

    #[test]
    fn wls_rejects_empty_window() {
        let anchors = DMatrix::zeros(3, 2);
        assert_eq!(
            wls_linear_fit(&anchors, &[1.0, 2.0, 3.0], &[0.0; 3], 0.0).unwrap_err(),
            SdrError::EmptyWindow
        );
        assert_eq!(
            wls_linear_fit(&anchors, &[1.0, 2.0, 3.0], &[1.0, -1.0, 0.0], 0.0).unwrap_err(),
            SdrError::NegativeWeight
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn wls_weight_scale_invariance(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let anchors = DMatrix::from_fn(25, 2, |_, _| rng.random_range(-1.0..1.0));
            let r: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
            let ws: Vec<f64> = w.iter().map(|v| v * scale).collect();
            let f1 = wls_linear_fit(&anchors, &r, &w, 0.0).unwrap();
            let f2 = wls_linear_fit(&anchors, &r, &ws, 0.0).unwrap();
            prop_assert!((f1.a - f2.a).abs() < 1e-8);
            prop_assert!((f1.grad.clone() - f2.grad.clone()).amax() < 1e-8);
        }

        #[test]
        fn wls_response_shift(seed in 0u64..1000, shift in -10.0f64..10.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let anchors = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
            let w: Vec<f64> = (0..30)
                .map(|i| crate::kernels::k_multi(&[anchors[(i, 0)], anchors[(i, 1)]], 1.2).unwrap())
                .collect();
            let r: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rs: Vec<f64> = r.iter().map(|v| v + shift).collect();
            let f1 = wls_linear_fit(&anchors, &r, &w, 0.0).unwrap();
            let f2 = wls_linear_fit(&anchors, &rs, &w, 0.0).unwrap();
            prop_assert!((f2.a - f1.a - shift).abs() < 1e-10);
            prop_assert!((f1.grad.clone() - f2.grad.clone()).amax() < 1e-10);
        }
    }
}
