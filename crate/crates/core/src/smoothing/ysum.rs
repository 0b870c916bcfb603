//! Batched response-kernel sums `Σ_i c_i H_b(Y_i - Y_k)` for every `k`.
//!
//! Inside its support the quadratic kernel is a quartic polynomial in the
//! scaled response `s_i = Y_i / b`. Sorted responses are grouped into unit
//! cells `[g, g + 1)`; within a cell we keep running sums of `c_i tʳ` with the
//! local offset `t = s_i - g ∈ [0, 1)`. A window `|s_i - s_k| < 1` covers at
//! most three cells, and on each piece
//!
//! ```text
//! (1 - (t - δ)²)² = Σ_{r=0..4} α_r(δ) tʳ,   δ = s_k - g,  |δ| ≤ 2
//! ```
//!
//! so a full pass costs `O(n · m)` for `m` coefficient columns instead of
//! `O(n² · m)`, and every partial sum stays on the scale of the coefficients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::kernels::{check_bandwidth, h_scaled, K0_AT_ZERO};

const MOMENTS: usize = 5;

#[derive(Debug, Clone)]
pub struct YKernelSums {
    b: f64,
    /// `order[pos]` is the observation at sorted position `pos`.
    order: Vec<usize>,
    /// Offset of each sorted response inside its unit cell.
    offset: Vec<f64>,
    /// Cell reference `g` for each sorted position.
    cell_ref: Vec<f64>,
    /// First and one-past-last sorted position of the cell holding `pos`.
    cell_start: Vec<usize>,
    cell_end: Vec<usize>,
    /// Per evaluation point `k`: scaled response and sorted window `[lo, hi)`.
    centers: Vec<f64>,
    windows: Vec<(usize, usize)>,
    y: Vec<f64>,
}

#[inline]
fn poly_coef(delta: f64) -> [f64; MOMENTS] {
    let d2 = delta * delta;
    [
        1.0 - 2.0 * d2 + d2 * d2,
        4.0 * delta - 4.0 * delta * d2,
        -2.0 + 6.0 * d2,
        -4.0 * delta,
        1.0,
    ]
}

impl YKernelSums {
    /// Prepare window sums over the sample `y`, evaluated at each `y_k`.
    pub fn new(y: &[f64], b: f64) -> Result<Self> {
        check_bandwidth(b)?;
        let n = y.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &c| y[a].partial_cmp(&y[c]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&c)));
        let s_sorted: Vec<f64> = order.iter().map(|&i| y[i] / b).collect();
        let cell_ref: Vec<f64> = s_sorted.iter().map(|&s| libm::floor(s)).collect();
        let offset: Vec<f64> = s_sorted.iter().zip(&cell_ref).map(|(s, g)| s - g).collect();
        let mut cell_start = vec![0usize; n];
        let mut cell_end = vec![n; n];
        for pos in 1..n {
            cell_start[pos] = if cell_ref[pos] == cell_ref[pos - 1] { cell_start[pos - 1] } else { pos };
        }
        for pos in (0..n.saturating_sub(1)).rev() {
            cell_end[pos] = if cell_ref[pos] == cell_ref[pos + 1] { cell_end[pos + 1] } else { pos + 1 };
        }
        let mut centers = Vec::with_capacity(n);
        let mut windows = Vec::with_capacity(n);
        for &yk in y {
            let v = yk / b;
            let lo = s_sorted.partition_point(|&s| s <= v - 1.0);
            let hi = s_sorted.partition_point(|&s| s < v + 1.0);
            centers.push(v);
            windows.push((lo, hi.max(lo)));
        }
        Ok(Self {
            b,
            order,
            offset,
            cell_ref,
            cell_start,
            cell_end,
            centers,
            windows,
            y: y.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn bandwidth(&self) -> f64 {
        self.b
    }

    /// Single kernel value `H_b(Y_i - Y_k)`.
    pub fn value(&self, i: usize, k: usize) -> f64 {
        h_scaled(self.y[i] - self.y[k], self.b).unwrap_or(0.0)
    }

    /// `out[k * m + l] = Σ_i c[i * m + l] · H_b(Y_i - Y_k)` for all `k`.
    ///
    /// `c` is row-major `n × m` in observation order; `scratch` is reused
    /// between calls to avoid reallocating the running-sum table.
    pub fn apply(&self, c: &[f64], m: usize, out: &mut [f64], scratch: &mut Vec<f64>) {
        let n = self.len();
        debug_assert_eq!(c.len(), n * m);
        debug_assert_eq!(out.len(), n * m);
        let width = MOMENTS * m;
        scratch.clear();
        scratch.resize((n + 1) * width, 0.0);
        // Row `pos + 1` holds the within-cell running sums through `pos`.
        for pos in 0..n {
            let i = self.order[pos];
            let t = self.offset[pos];
            let mut powers = [1.0; MOMENTS];
            for r in 1..MOMENTS {
                powers[r] = powers[r - 1] * t;
            }
            let row_c = &c[i * m..(i + 1) * m];
            let restart = self.cell_start[pos] == pos;
            let (prev, next) = scratch.split_at_mut((pos + 1) * width);
            let prev = &prev[pos * width..];
            let next = &mut next[..width];
            for r in 0..MOMENTS {
                for l in 0..m {
                    let base = if restart { 0.0 } else { prev[r * m + l] };
                    next[r * m + l] = base + row_c[l] * powers[r];
                }
            }
        }
        let scale = K0_AT_ZERO / self.b;
        for k in 0..n {
            let dst = &mut out[k * m..(k + 1) * m];
            dst.iter_mut().for_each(|v| *v = 0.0);
            let (lo, hi) = self.windows[k];
            let v = self.centers[k];
            let mut pos = lo;
            while pos < hi {
                let end = self.cell_end[pos].min(hi);
                let alpha = poly_coef(v - self.cell_ref[pos]);
                let top = &scratch[end * width..(end + 1) * width];
                let from_start = self.cell_start[pos] == pos;
                for l in 0..m {
                    let mut acc = 0.0;
                    for r in 0..MOMENTS {
                        let below = if from_start { 0.0 } else { scratch[pos * width + r * m + l] };
                        acc += alpha[r] * (top[r * m + l] - below);
                    }
                    dst[l] += acc;
                }
                pos = end;
            }
            for v in dst.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// Kernel density of the responses at each observed response,
    /// `f_Y(Y_k) = n^{-1} Σ_i H_b(Y_i - Y_k)`.
    pub fn densities(&self) -> Vec<f64> {
        let n = self.len();
        let ones = vec![1.0 / n as f64; n];
        let mut out = vec![0.0; n];
        let mut scratch = Vec::new();
        self.apply(&ones, 1, &mut out, &mut scratch);
        out
    }
}
