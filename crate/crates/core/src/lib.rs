//! Discrete experiments on sparse domination of maximally modulated singular
//! integrals on the periodic unit interval.
//!
//! * [`dyadic`]: exact cube arithmetic, shifted grids and packing checks.
//! * [`signal`]: sampled signals, averages, Orlicz norms, rearrangements,
//!   medians, local oscillations and maximal functions.
//! * [`operators`]: kernels, truncated and modulated singular integrals, the
//!   grand sharp maximal function, Hörmander constants, weak-norm estimates.
//! * [`sparse`]: sparse operators, the local-oscillation decomposition and
//!   the recursive sparse domination algorithm.
//! * [`harness`]: experiment configs, decay fits, self-test and reports.

pub mod dyadic;
pub mod harness;
pub mod operators;
pub mod signal;
pub mod sparse;

pub use dyadic::{DyadicCube, Interval, Rational, SparseFamily};
pub use signal::{Signal, YoungFunction};
