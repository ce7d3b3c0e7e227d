//! chainlab: a numerical laboratory for slow energy dissipation in
//! anharmonic oscillator chains with boundary Langevin thermostats.
//!
//! The chain couples N+1 oscillators with harmonic springs, pins each site
//! with |q|^{2k}/(2k) for k > 1, and attaches Ornstein-Uhlenbeck thermostats
//! to the two boundary momenta. At high energy a breather on the middle site
//! blocks transport; this crate measures the resulting slow dissipation and
//! the averaging machinery that predicts it:
//!
//! - [`freeosc`]: shell coordinates of the free oscillator, the unit-energy
//!   orbit, and the decay constants kappa_{k,n};
//! - [`profile`] / [`corrector`]: theta-profiles, Poisson solves along the
//!   free flow, and the correctors Phi, Phi2, Psi;
//! - [`chain`]: the model, its generator, and weighted-space conjugations;
//! - [`integrate`]: the Strang-split Langevin integrator;
//! - [`decay`]: breather decay runs against the parameter-free law;
//! - [`spectral`]: approximate eigenfunctions and Monte-Carlo norm scalings;
//! - [`effective`]: the decoupling change of variables and its error bounds;
//! - [`lyapunov`]: dissipation inequalities for the Lyapunov functions.
//!
//! Start with the runnable examples (`cargo run --release --example ...`):
//! each major capability has one. The `chainlab` binary exposes the same
//! experiments as subcommands with CSV/JSON output.

pub mod chain;
pub mod cli;
pub mod corrector;
pub mod decay;
pub mod effective;
pub mod error;
pub mod fit;
pub mod freeosc;
pub mod integrate;
pub mod lyapunov;
pub mod profile;
pub mod rng;
pub mod spectral;
pub mod timeseries;

pub use chain::{ChainParams, ChainState};
pub use corrector::CorrectorSet;
pub use error::{Error, Result};
