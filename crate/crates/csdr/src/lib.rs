//! File formats, benchmark harness and command-line front end for `csdr-core`.

pub mod bench;
pub mod cli;
pub mod io;
pub mod method;
pub mod report;

pub use bench::{consistency_curve, run_benchmark, BenchOptions, CurveRow, MethodSummary, ReplicationReport};
pub use method::{fit_method, Method, MethodFit, Settings};
