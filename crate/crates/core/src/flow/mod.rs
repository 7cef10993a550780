//! Variational dense flow with a robust data term, edge-aware smoothness
//! and a guidance term from sparse matches.

mod deriv;
mod field;
mod matchterm;
mod params;
mod penalizer;
mod solver;
pub mod viz;

pub use field::FlowField;
pub use matchterm::{rasterize_matches, MatchTermField};
pub use params::FlowParams;
pub use penalizer::{psi, psi_deriv};
pub use solver::{energy, solve_flow, solve_flow_traced, EnergyBreakdown, LevelTrace, SolverTrace};
