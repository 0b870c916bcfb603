//! Estimation of the central subspace of a regression through double-kernel
//! local-linear smoothing of the conditional density.
//!
//! The crate is `no_std` (with `alloc`). Enable `parallel` to spread the
//! per-anchor work over a rayon pool; results are identical either way.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bandwidth;
pub mod baselines;
pub mod dmave;
pub mod dopg;
pub mod error;
pub mod kernels;
pub mod linalg;
mod local;
pub mod metrics;
pub mod preprocess;
pub mod simbench;
pub mod smoothing;

pub use bandwidth::{initial_bandwidths, next_bandwidths, BandwidthSchedule};
pub use baselines::{choose_slices, phd, rmave, save, sir, RmaveConfig, SliceSpec};
pub use dmave::{dmave_fit, DmaveConfig, DmaveState};
pub use dopg::{dopg_first_sigma, dopg_fit, DopgConfig, DopgState, FitResult, IterationRecord};
pub use error::{Result, SdrError};
pub use metrics::{estimation_error, ErrorScore};
pub use preprocess::{backtransform_basis, standardize, Basis, Dataset, StandardizedDataset};
pub use simbench::{generate, SimModel, SimModelSpec};
pub use smoothing::TrimConfig;
