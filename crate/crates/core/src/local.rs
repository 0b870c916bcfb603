//! Shared per-anchor machinery for the gradient-based estimators.
//!
//! Both density-based estimators regress a family of responses on local
//! coordinates around every anchor `X_j`. For the conditional-density variants
//! the family is `{H_b(Y_i - Y_k)}_k` (one column per observed response); for
//! the mean-regression variant it is the single column `Y_i`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::smoothing::{trim_rho, TrimConfig, YKernelSums};

#[derive(Debug, Clone)]
pub(crate) enum ResponseFamily {
    DoubleKernel { sums: YKernelSums, rho_y: Vec<f64> },
    Mean { y: Vec<f64> },
}

impl ResponseFamily {
    pub fn double_kernel(y: &[f64], b: f64, trim: &TrimConfig) -> Result<Self> {
        let sums = YKernelSums::new(y, b)?;
        let rho_y = sums.densities().into_iter().map(|f| trim_rho(f, trim)).collect();
        Ok(ResponseFamily::DoubleKernel { sums, rho_y })
    }

    pub fn mean(y: &[f64]) -> Self {
        ResponseFamily::Mean { y: y.to_vec() }
    }

    /// Number of response columns (anchors `k`).
    pub fn columns(&self) -> usize {
        match self {
            ResponseFamily::DoubleKernel { sums, .. } => sums.len(),
            ResponseFamily::Mean { .. } => 1,
        }
    }

    /// Trimming weight attached to response column `k`.
    pub fn rho(&self, k: usize) -> f64 {
        match self {
            ResponseFamily::DoubleKernel { rho_y, .. } => rho_y[k],
            ResponseFamily::Mean { .. } => 1.0,
        }
    }

    pub fn any_rho(&self) -> bool {
        (0..self.columns()).any(|k| self.rho(k) > 0.0)
    }

    /// Response value `R_{ik}`.
    #[cfg(test)]
    pub fn value(&self, i: usize, k: usize) -> f64 {
        match self {
            ResponseFamily::DoubleKernel { sums, .. } => sums.value(i, k),
            ResponseFamily::Mean { y } => y[i],
        }
    }

    /// `out[k * m + l] = Σ_i c[i * m + l] R_{ik}` for every column `k`.
    pub fn apply(&self, c: &[f64], m: usize, out: &mut Vec<f64>, scratch: &mut Vec<f64>) {
        out.clear();
        out.resize(self.columns() * m, 0.0);
        match self {
            ResponseFamily::DoubleKernel { sums, .. } => sums.apply(c, m, out, scratch),
            ResponseFamily::Mean { y } => {
                for (i, &yi) in y.iter().enumerate() {
                    for l in 0..m {
                        out[l] += c[i * m + l] * yi;
                    }
                }
            }
        }
    }
}

/// Map `f` over anchors `0..n` and return the results in index order.
/// Runs on the rayon pool when the `parallel` feature is enabled; the output
/// order (and therefore any later reduction) does not depend on scheduling.
pub(crate) fn map_anchors<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Row-major product of an `n × p` row-major matrix and a `p × d` nalgebra matrix.
pub(crate) fn project_rows(z: &[f64], p: usize, m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let n = z.len() / p;
    let d = m.ncols();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let row = &z[i * p..(i + 1) * p];
        for c in 0..d {
            let mut acc = 0.0;
            for r in 0..p {
                acc += row[r] * m[(r, c)];
            }
            out[i * d + c] = acc;
        }
    }
    out
}
