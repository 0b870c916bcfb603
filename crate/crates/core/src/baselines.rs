//! Comparison estimators: SIR, SAVE, PHD and MAVE on the regression mean (rMAVE).
//!
//! The three moment methods work on whitened covariates and return a basis in
//! the original coordinates. Slicing is by sample quantiles of `Y`; tied
//! responses always share a slice and slices with fewer than two points are
//! merged into a neighbor.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::bandwidth::{BandwidthSchedule, DEFAULT_C0};
use crate::dmave::{mave_iterate, to_whitened, DmaveState, MaveKind};
use crate::dopg::{median_pair_distance, opg_pass, FitResult};
use crate::error::{Result, SdrError};
use crate::linalg::{self, sym_eigen};
use crate::local::ResponseFamily;
use crate::preprocess::{backtransform_basis, check_dims, standardize, Basis, Dataset, StandardizedDataset};
use crate::smoothing::TrimConfig;

pub const MIN_SLICES: usize = 5;
pub const MAX_SLICES: usize = 30;

/// Number of slices for SIR and SAVE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceSpec {
    n_slices: usize,
}

impl SliceSpec {
    pub fn new(n_slices: usize) -> Result<Self> {
        if !(MIN_SLICES..=MAX_SLICES).contains(&n_slices) {
            return Err(SdrError::InvalidDimension("slice count must lie in [5, 30]"));
        }
        Ok(Self { n_slices })
    }

    pub fn n_slices(self) -> usize {
        self.n_slices
    }
}

/// The slice count closest to `n / (2p)`, clamped to `[5, 30]`.
pub fn choose_slices(n: usize, p: usize) -> SliceSpec {
    let raw = libm::round(n as f64 / (2.0 * p.max(1) as f64)) as usize;
    SliceSpec {
        n_slices: raw.clamp(MIN_SLICES, MAX_SLICES),
    }
}

/// Partition of the observations into response slices, in increasing `Y`.
pub fn slice_response(y: &[f64], slices: SliceSpec) -> Vec<Vec<usize>> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));

    let h = slices.n_slices;
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(h);
    let mut start = 0;
    for s in 1..=h {
        let mut end = if s == h { n } else { (s * n / h).max(start) };
        while end > 0 && end < n && y[order[end]] == y[order[end - 1]] {
            end += 1;
        }
        if end > start {
            groups.push(order[start..end].to_vec());
            start = end;
        }
    }
    while groups.len() > 1 {
        let Some(thin) = groups.iter().position(|g| g.len() < 2) else {
            break;
        };
        let g = groups.remove(thin);
        let target = if thin > 0 { thin - 1 } else { 0 };
        groups[target].extend(g);
    }
    groups
}

/// Basis from a moment method together with the spectrum it was read from.
#[derive(Debug, Clone)]
pub struct SpectralFit {
    pub basis: Basis,
    pub basis_std: Basis,
    /// Eigenvalues in the order the directions were selected.
    pub eigenvalues: DVector<f64>,
}

/// Per slice: share of observations, mean of Z, member indices.
type SliceStat = (f64, DVector<f64>, Vec<usize>);

fn slice_stats(std: &StandardizedDataset, slices: SliceSpec) -> Result<Vec<SliceStat>> {
    let (n, p) = std.z.shape();
    if n < 2 {
        return Err(SdrError::TooFewObservations { n, p });
    }
    let groups = slice_response(std.y_std.as_slice(), slices);
    Ok(groups
        .into_iter()
        .map(|g| {
            let mut mean = DVector::zeros(p);
            for &i in &g {
                mean += std.z.row(i).transpose();
            }
            mean /= g.len() as f64;
            (g.len() as f64 / n as f64, mean, g)
        })
        .collect())
}

/// `Σ_h p_h m_h m_hᵀ` over slice means `m_h` of `z`.
pub fn sir_matrix(std: &StandardizedDataset, slices: SliceSpec) -> Result<DMatrix<f64>> {
    let p = std.p();
    let mut m = DMatrix::zeros(p, p);
    for (share, mean, _) in slice_stats(std, slices)? {
        m += &mean * mean.transpose() * share;
    }
    Ok(m)
}

/// `Σ_h p_h (I - V_h)²` over within-slice covariances `V_h` of `z`.
pub fn save_matrix(std: &StandardizedDataset, slices: SliceSpec) -> Result<DMatrix<f64>> {
    let p = std.p();
    let mut m = DMatrix::zeros(p, p);
    for (share, mean, g) in slice_stats(std, slices)? {
        let mut v = DMatrix::zeros(p, p);
        for &i in &g {
            let d = std.z.row(i).transpose() - &mean;
            v += &d * d.transpose();
        }
        v /= g.len() as f64;
        let a = DMatrix::identity(p, p) - v;
        m += &a * &a * share;
    }
    Ok(m)
}

/// `n⁻¹ Σ_i (Y_i - Ȳ) z_i z_iᵀ`.
pub fn phd_matrix(std: &StandardizedDataset) -> DMatrix<f64> {
    let (n, p) = std.z.shape();
    let y = &std.y_std;
    let ybar = y.mean();
    let mut m = DMatrix::zeros(p, p);
    for i in 0..n {
        let z = std.z.row(i).transpose();
        m += &z * z.transpose() * (y[i] - ybar);
    }
    m / n as f64
}

fn spectral_fit(std: &StandardizedDataset, m: &DMatrix<f64>, q: usize, by_magnitude: bool) -> Result<SpectralFit> {
    let p = std.p();
    check_dims(p, q)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SdrError::NonFinite("candidate matrix"));
    }
    let eig = sym_eigen(m);
    let mut order: Vec<usize> = (0..p).collect();
    if by_magnitude {
        order.sort_by(|&a, &b| eig.values[b].abs().total_cmp(&eig.values[a].abs()).then(a.cmp(&b)));
    }
    let mut cols = DMatrix::zeros(p, q);
    for (dst, &src) in order.iter().take(q).enumerate() {
        cols.set_column(dst, &eig.vectors.column(src));
    }
    let basis_std = Basis::from_columns(&cols)?;
    let basis = backtransform_basis(&basis_std, std)?;
    let eigenvalues = DVector::from_iterator(p, order.iter().map(|&k| eig.values[k]));
    Ok(SpectralFit {
        basis,
        basis_std,
        eigenvalues,
    })
}

pub fn sir_fit(std: &StandardizedDataset, q: usize, slices: SliceSpec) -> Result<SpectralFit> {
    spectral_fit(std, &sir_matrix(std, slices)?, q, false)
}

pub fn save_fit(std: &StandardizedDataset, q: usize, slices: SliceSpec) -> Result<SpectralFit> {
    spectral_fit(std, &save_matrix(std, slices)?, q, false)
}

/// Directions are taken by decreasing absolute eigenvalue.
pub fn phd_fit(std: &StandardizedDataset, q: usize) -> Result<SpectralFit> {
    spectral_fit(std, &phd_matrix(std), q, true)
}

/// Sliced inverse regression.
pub fn sir(std: &StandardizedDataset, q: usize, slices: SliceSpec) -> Result<Basis> {
    Ok(sir_fit(std, q, slices)?.basis)
}

/// Sliced average variance estimation.
pub fn save(std: &StandardizedDataset, q: usize, slices: SliceSpec) -> Result<Basis> {
    Ok(save_fit(std, q, slices)?.basis)
}

/// Principal Hessian directions (response-centered form).
pub fn phd(std: &StandardizedDataset, q: usize) -> Result<Basis> {
    Ok(phd_fit(std, q)?.basis)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmaveConfig {
    pub trim: TrimConfig,
    pub c0: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Starting basis in original covariate coordinates. `None` starts from
    /// one outer-product-of-gradients pass on the regression mean.
    pub init: Option<Basis>,
}

impl Default for RmaveConfig {
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

/// MAVE on the regression mean.
pub fn rmave(ds: &Dataset, q: usize, cfg: &RmaveConfig) -> Result<FitResult> {
    check_dims(ds.p(), q)?;
    let std = standardize(ds)?;
    rmave_fit_std(&std, q, cfg)
}

/// MAVE on the regression mean for standardized data. Only the covariate
/// bandwidth of the schedule is used.
pub fn rmave_fit_std(std: &StandardizedDataset, q: usize, cfg: &RmaveConfig) -> Result<FitResult> {
    let p = std.p();
    check_dims(p, q)?;
    let sched = BandwidthSchedule::new(std.n(), p, q, cfg.c0);
    let (h0, b0) = sched.initial();
    let (h1, _) = sched.next(h0, b0);
    let b_mat = match &cfg.init {
        Some(b) => {
            if b.q() != q {
                return Err(SdrError::Shape {
                    expected: "initial basis with q columns",
                    found: "different column count",
                });
            }
            to_whitened(b, std)?
        }
        None => {
            let z = std.z_rows();
            let family = ResponseFamily::mean(std.y_std.as_slice());
            let h = h0.max(median_pair_distance(&z, p));
            let sigma = opg_pass(&z, p, &family, &DMatrix::identity(p, p), &vec![1.0; p], h, &cfg.trim, false)?;
            let eig = linalg::sym_eigen(&sigma);
            Basis::leading_columns(&eig.vectors, q)?.into_matrix()
        }
    };
    let init = DmaveState {
        b_mat,
        t: 0,
        h_t: h1,
        b_t: 0.0,
    };
    mave_iterate(std, MaveKind::Mean, init, &sched, &cfg.trim, cfg.tol, cfg.max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_error;
    use crate::metrics::estimation_error;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, rand_chacha::ChaCha8Rng) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        (x, rng)
    }

    fn e(p: usize, k: usize) -> Basis {
        let mut m = DMatrix::zeros(p, 1);
        m[(k, 0)] = 1.0;
        Basis::new(m).unwrap()
    }

    #[test]
    fn slice_count_rule() {
        assert_eq!(choose_slices(200, 10).n_slices(), 10);
        assert_eq!(choose_slices(100, 20).n_slices(), 5);
        assert_eq!(choose_slices(10000, 10).n_slices(), 30);
        assert!(SliceSpec::new(4).is_err());
        assert!(SliceSpec::new(31).is_err());
        assert_eq!(SliceSpec::new(12).unwrap().n_slices(), 12);
    }

    #[test]
    fn slices_cover_sample_in_order() {
        let y: Vec<f64> = (0..23).map(|i| libm::sin(i as f64 * 1.7)).collect();
        let groups = slice_response(&y, SliceSpec::new(5).unwrap());
        assert_eq!(groups.len(), 5);
        let mut all: Vec<usize> = groups.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        for w in groups.windows(2) {
            let hi = w[0].iter().map(|&i| y[i]).fold(f64::MIN, f64::max);
            let lo = w[1].iter().map(|&i| y[i]).fold(f64::MAX, f64::min);
            assert!(hi <= lo);
        }
    }

    #[test]
    fn ties_share_a_slice_and_thin_slices_merge() {
        // Binary response: two groups regardless of the requested count.
        let y: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let groups = slice_response(&y, SliceSpec::new(5).unwrap());
        assert_eq!(groups.len(), 2);
        for g in &groups {
            assert!(g.iter().all(|&i| y[i] == y[g[0]]));
        }
        // One isolated top value is folded into the slice below it.
        let mut y = vec![0.0; 9];
        y.push(1.0);
        let groups = slice_response(&y, SliceSpec::new(5).unwrap());
        assert_eq!(groups.len(), 1);
        assert!(groups.iter().all(|g| g.len() >= 2));
    }

    #[test]
    fn sir_finds_monotone_single_index() {
        let (x, _) = gaussian(2000, 5, 3);
        let y = DVector::from_fn(2000, |i, _| libm::exp(x[(i, 0)] + 0.5 * x[(i, 1)]));
        let std = standardize(&Dataset::new(x, y).unwrap()).unwrap();
        let b = sir(&std, 1, choose_slices(2000, 5)).unwrap();
        let v = libm::sqrt(1.25);
        let truth = Basis::new(DMatrix::from_column_slice(5, 1, &[1.0 / v, 0.5 / v, 0.0, 0.0, 0.0])).unwrap();
        assert!(estimation_error(&truth, &b).unwrap().value() < 0.1);
    }

    #[test]
    fn save_finds_symmetric_direction_sir_misses() {
        let (x, mut rng) = gaussian(2000, 4, 5);
        let y = DVector::from_fn(2000, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, 1)] * x[(i, 1)] + 0.1 * e
        });
        let std = standardize(&Dataset::new(x, y).unwrap()).unwrap();
        let slices = choose_slices(2000, 4);
        let truth = e(4, 1);
        assert!(estimation_error(&truth, &save(&std, 1, slices).unwrap()).unwrap().value() < 0.1);
        assert!(estimation_error(&truth, &sir(&std, 1, slices).unwrap()).unwrap().value() > 0.5);
    }

    #[test]
    fn save_on_pure_noise_has_no_gap() {
        let (x, mut rng) = gaussian(3000, 4, 9);
        let y = DVector::from_fn(3000, |_, _| StandardNormal.sample(&mut rng));
        let std = standardize(&Dataset::new(x, y).unwrap()).unwrap();
        let fit = save_fit(&std, 1, choose_slices(3000, 4)).unwrap();
        let ev = fit.eigenvalues.as_slice();
        assert!(ev[0] - ev[3] < 0.05, "{ev:?}");
    }

    #[test]
    fn phd_recovers_quadratic_direction() {
        let (x, _) = gaussian(3000, 5, 11);
        let y = DVector::from_fn(3000, |i, _| x[(i, 2)] * x[(i, 2)] - 1.0);
        let std = standardize(&Dataset::new(x, y).unwrap()).unwrap();
        assert!(estimation_error(&e(5, 2), &phd(&std, 1).unwrap()).unwrap().value() < 0.1);
    }

    #[test]
    fn phd_is_blind_to_linear_trend() {
        let (x, _) = gaussian(5000, 4, 13);
        let y = DVector::from_fn(5000, |i, _| x[(i, 0)] - x[(i, 3)]);
        let std = standardize(&Dataset::new(x, y).unwrap()).unwrap();
        let fit = phd_fit(&std, 1).unwrap();
        assert!(fit.eigenvalues[0].abs() < 0.1, "{}", fit.eigenvalues[0]);
    }

    #[test]
    fn phd_ignores_response_shift() {
        let (x, mut rng) = gaussian(300, 4, 15);
        let y = DVector::from_fn(300, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, 0)] * x[(i, 1)] + e
        });
        let a = StandardizedDataset::from_whitened(x.clone(), y.clone());
        let b = StandardizedDataset::from_whitened(x, y.add_scalar(123.0));
        assert_relative_eq!(phd_matrix(&a), phd_matrix(&b), epsilon = 1e-12);
    }

    #[test]
    fn slicing_methods_ignore_monotone_response_maps() {
        let (x, mut rng) = gaussian(150, 4, 17);
        let y = DVector::from_fn(150, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, 0)] + 0.3 * e
        });
        let a = StandardizedDataset::from_whitened(x.clone(), y.clone());
        let b = StandardizedDataset::from_whitened(x, y.map(|v| libm::exp(3.0 * v) - 2.0));
        let s = choose_slices(150, 4);
        assert_eq!(sir(&a, 2, s).unwrap(), sir(&b, 2, s).unwrap());
        assert_eq!(save(&a, 2, s).unwrap(), save(&b, 2, s).unwrap());
    }

    #[test]
    fn baseline_outputs_are_orthonormal() {
        let (x, mut rng) = gaussian(120, 6, 19);
        let y = DVector::from_fn(120, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, 0)] * x[(i, 1)] + e
        });
        let std = standardize(&Dataset::new(x, y).unwrap()).unwrap();
        let s = choose_slices(120, 6);
        for b in [sir(&std, 3, s).unwrap(), save(&std, 3, s).unwrap(), phd(&std, 3).unwrap()] {
            assert!(orthonormality_error(b.matrix()) < 1e-10);
            assert_eq!(b.q(), 3);
        }
        assert!(sir(&std, 6, s).is_err());
    }

    #[test]
    fn rmave_finds_mean_directions() {
        let (x, mut rng) = gaussian(200, 5, 23);
        let y = DVector::from_fn(200, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let u = x[(i, 0)] + x[(i, 1)];
            u + libm::sin(2.0 * x[(i, 3)]) + 0.2 * e
        });
        let ds = Dataset::new(x, y).unwrap();
        let fit = rmave(&ds, 2, &RmaveConfig::default()).unwrap();
        let r = libm::sqrt(0.5);
        let truth =
            Basis::new(DMatrix::from_column_slice(5, 2, &[r, r, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        let err = estimation_error(&truth, &fit.basis).unwrap().value();
        assert!(err < 0.2, "error {err}");
        assert!(orthonormality_error(fit.basis_std.matrix()) < 1e-10);
        assert!(fit.history.iter().all(|r| r.b == 0.0));
    }

    #[test]
    fn rmave_is_deterministic_and_accepts_init() {
        let (x, mut rng) = gaussian(80, 4, 29);
        let y = DVector::from_fn(80, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, 2)] + 0.1 * e
        });
        let ds = Dataset::new(x, y).unwrap();
        let cfg = RmaveConfig {
            max_iter: 5,
            ..RmaveConfig::default()
        };
        let a = rmave(&ds, 1, &cfg).unwrap();
        let b = rmave(&ds, 1, &cfg).unwrap();
        assert_eq!(a.basis, b.basis);
        let seeded = rmave(
            &ds,
            1,
            &RmaveConfig {
                init: Some(e(4, 2)),
                ..cfg
            },
        )
        .unwrap();
        assert!(estimation_error(&e(4, 2), &seeded.basis).unwrap().value() < 0.1);
        let wrong = RmaveConfig {
            init: Some(e(5, 2)),
            ..RmaveConfig::default()
        };
        assert!(rmave(&ds, 1, &wrong).is_err());
    }
}
