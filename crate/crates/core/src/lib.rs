//! Spectral-Galerkin numerics for semilinear evolution equations
//! `du = Au dt + G(u) dω` driven by Hölder paths of exponent in (1/3, 1/2].
//!
//! The crate is organised bottom-up:
//!
//! * [`hilbert`]: diagonal generators, fractional power norms, grid paths,
//!   area fields and Hölder-type seminorms.
//! * [`noise`]: trace-class fractional Brownian motion, dyadic piecewise-linear
//!   approximations and the Wiener shift.
//! * [`fracint`]: fractional derivatives and the Young and compensated rough
//!   integrals built from them.
//! * [`area`]: the semigroup-twisted area of a piecewise-linear path and the
//!   related second-order objects.
//! * [`diffusion`]: the kernel nonlinearity on the Dirichlet Laplacian.
//! * [`solver`]: the path-area fixed-point map, the step schedule and the
//!   global solver.
//! * [`rds`]: cocycle and shift-stationarity residuals.
//! * [`study`]: reference integrators for smooth noise and the dyadic
//!   convergence study.

pub mod area;
pub mod diffusion;
pub mod error;
pub mod fracint;
pub mod hilbert;
pub mod noise;
pub mod quad;
pub mod rds;
pub mod solver;
pub mod study;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
