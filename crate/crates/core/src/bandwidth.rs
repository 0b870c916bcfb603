//! Deterministic bandwidth schedule.
//!
//! Initial values `h₀ = c₀ n^{-1/(p₀+6)}`, `b₀ = c₀ n^{-1/(p₀+5)}` with
//! `p₀ = max(p, 3)`, shrunk by `r_n = n^{-1/(2(p₀+6))}` per iteration down to
//! floors tied to the target dimension `q`.

/// Silverman's constant for the rule-of-thumb bandwidth.
pub const DEFAULT_C0: f64 = 2.34;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthSchedule {
    pub c0: f64,
    pub n: usize,
    pub p0: usize,
    pub q: usize,
    pub r_n: f64,
    pub h_floor: f64,
    pub b_floor: f64,
}

fn npow(n: usize, exponent: f64) -> f64 {
    libm::pow(n as f64, exponent)
}

impl BandwidthSchedule {
    pub fn new(n: usize, p: usize, q: usize, c0: f64) -> Self {
        let p0 = p.max(3);
        let r_n = npow(n, -1.0 / (2.0 * (p0 as f64 + 6.0)));
        let h_floor = c0 * npow(n, -1.0 / (q as f64 + 4.0));
        let b_floor = (c0 * npow(n, -1.0 / (q as f64 + 3.0))).max(c0 * npow(n, -0.2));
        Self {
            c0,
            n,
            p0,
            q,
            r_n,
            h_floor,
            b_floor,
        }
    }

    /// `(h₀, b₀)` for this schedule.
    pub fn initial(&self) -> (f64, f64) {
        let p0 = self.p0 as f64;
        (
            self.c0 * npow(self.n, -1.0 / (p0 + 6.0)),
            self.c0 * npow(self.n, -1.0 / (p0 + 5.0)),
        )
    }

    /// One shrink step.
    pub fn next(&self, h_t: f64, b_t: f64) -> (f64, f64) {
        next_bandwidths(h_t, b_t, self)
    }
}

/// `(h₀, b₀)` from the sample size, covariate count, and `c₀`.
pub fn initial_bandwidths(n: usize, p: usize, c0: f64) -> (f64, f64) {
    // q does not enter the initial values.
    BandwidthSchedule::new(n, p, 1, c0).initial()
}

/// `h_{t+1} = max(r_n h_t, h_floor)`, `b_{t+1} = max(r_n b_t, b_floor)`.
pub fn next_bandwidths(h_t: f64, b_t: f64, sched: &BandwidthSchedule) -> (f64, f64) {
    (
        (sched.r_n * h_t).max(sched.h_floor),
        (sched.r_n * b_t).max(sched.b_floor),
    )
}
