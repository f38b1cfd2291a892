//! Staggered finite-volume solver for the one-dimensional compressible Euler
//! equations in internal-energy form.
//!
//! Densities, internal energies and pressures live on cells; velocities live
//! on faces. Two time-stepping schemes are provided (a semi-implicit
//! pressure-correction scheme and a fully explicit segregated scheme), both
//! carrying a nonnegative corrective source in the internal energy balance so
//! that shocks travel at the right speed. The [`entropy`] module evaluates
//! discrete entropy balances and remainder bounds, and [`oracle`] supplies an
//! exact Riemann solver plus brute-force identity checks.
//!
//! Every numerical routine is generic over [`Real`]; the aliases at the crate
//! root fix the scalar to `f64`.

pub mod cli;
pub mod entropy;
pub mod error;
pub mod flux;
pub mod grid;
mod kinetic;
pub mod oracle;
pub mod real;
pub mod scheme_exp;
pub mod scheme_pc;
pub mod state;
mod tridiag;

pub use error::{Error, Result};
pub use real::Real;
pub use state::{Reconstruction, SchemeKind};

pub type Grid = grid::Grid<f64>;
pub type MeshMetrics = grid::MeshMetrics<f64>;
pub type State = state::State<f64>;
pub type Primitive = state::Primitive<f64>;
pub type SchemeConfig = state::SchemeConfig<f64>;
pub type Stabilization = state::Stabilization<f64>;
pub type FluxSet = flux::FluxSet<f64>;
pub type PcStepRecord = scheme_pc::PcStepRecord<f64>;
pub type PcHistory = scheme_pc::PcHistory<f64>;
pub type ExpStepRecord = scheme_exp::ExpStepRecord<f64>;
pub type EntropyWeights = entropy::EntropyWeights<f64>;
pub type DiagnosticsReport = entropy::DiagnosticsReport<f64>;
pub type RiemannSolution = oracle::RiemannSolution<f64>;
