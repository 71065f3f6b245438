//! Numerical toolkit for optimal transport on null hypersurfaces of
//! Lorentzian manifolds.
//!
//! The crate is organized around a pipeline:
//!
//! * [`spacetime`] — a catalog of Lorentzian metric models with curvature
//!   evaluators and scalar weight fields,
//! * [`nullgeo`] — null geodesics, parallel-transported adapted frames and
//!   Jacobi-matrix propagation along generators,
//! * [`hypersurface`] — null hypersurface patches over a global spacelike
//!   cross-section, the flow map, rigged volume densities and graph-surface
//!   transfer,
//! * [`transport`] — one-dimensional density calculus per generator,
//!   monotone rearrangement, dynamical interpolation and entropy,
//! * [`nec`] — the synthetic null energy condition checkers NC1(N) and
//!   NCe(N), plus raw Riccati diagnostics,
//! * [`apps`] — light-cone comparison, the weighted Hawking area theorem,
//!   rigidity diagnostics and a metric-perturbation stability experiment.
//!
//! Everything is deterministic: all sampling is seeded via
//! [`numerics::SplitMix64`], reductions run in a fixed node order and
//! per-generator work is embarrassingly parallel.

pub mod apps;
pub mod error;
pub mod hypersurface;
pub mod nec;
pub mod nullgeo;
pub mod numerics;
pub mod spacetime;
pub mod transport;

pub use error::{Error, Result};
