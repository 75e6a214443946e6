//! Data-driven predictive control for unknown discrete-time LTI systems.
//!
//! Everything is built from a single measured input-output trajectory: Hankel
//! matrices of the recorded data span the space of system trajectories
//! (provided the input is persistently exciting), so the predictive controller
//! optimizes directly over linear combinations of recorded data columns
//! instead of over a state-space model.
//!
//! The crate provides:
//!
//! - [`traj`]: sequences, stacked windows, Hankel matrices, and
//!   persistence-of-excitation checks;
//! - [`lti`]: ground-truth plants for simulation and benchmarking, bounded
//!   measurement noise, and data collection (including the four-tank plant);
//! - [`qp`]: a self-contained dense convex QP solver (operator splitting with
//!   a direct KKT fast path for equality-constrained problems);
//! - [`mpc`]: condensed assembly and solution of the nominal
//!   (terminal-equality-constrained) and robust (slack-regularized)
//!   data-driven MPC problems;
//! - [`closedloop`]: receding-horizon execution in 1-step through n-step
//!   fashion with full logging;
//! - [`diagnostics`]: data-driven simulation, excitation-to-noise constants,
//!   and prediction-error bounds (model-based, intended for test harnesses);
//! - [`io`]: the CSV and plain-text file formats used by the CLI.
//!
//! Core numerics are generic over the scalar type via [`scalar::Scalar`]
//! (any `nalgebra::RealField` + `num-traits` float works; `f32` and `f64` are
//! provided). The `*64` aliases at the crate root are what the CLI
//! and most tests use.

pub mod closedloop;
pub mod diagnostics;
pub mod error;
pub mod io;
mod linalg;
pub mod lti;
pub mod mpc;
pub mod qp;
pub mod scalar;
pub mod traj;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations of the main types.
pub type Sequence64 = traj::Sequence<f64>;
pub type Trajectory64 = traj::Trajectory<f64>;
pub type HankelMatrix64 = traj::HankelMatrix<f64>;
pub type LtiSystem64 = lti::LtiSystem<f64>;
pub type Equilibrium64 = lti::Equilibrium<f64>;
pub type NoiseSpec64 = lti::NoiseSpec<f64>;
pub type QpProblem64 = qp::QpProblem<f64>;
pub type QpSettings64 = qp::QpSettings<f64>;
pub type QpSolution64 = qp::QpSolution<f64>;
pub type MpcConfig64 = mpc::MpcConfig<f64>;
pub type DataMatrices64 = mpc::DataMatrices<f64>;
pub type MpcSolution64 = mpc::MpcSolution<f64>;
pub type RunConfig64 = closedloop::RunConfig<f64>;
pub type ClosedLoopLog64 = closedloop::ClosedLoopLog<f64>;
