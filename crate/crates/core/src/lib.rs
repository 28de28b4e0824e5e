//! Minimax robust hypothesis testing with Wasserstein uncertainty sets.
//!
//! Two empirical samples define Wasserstein balls of candidate
//! distributions for each hypothesis. [`lfd`] finds the least favorable
//! pair inside the balls, [`detector`] turns it into a robust detector, and
//! [`sequential`] runs that detector as a CUSUM change monitor next to a
//! Hotelling T² chart.

pub mod detector;
mod dual;
pub mod distributions;
pub mod error;
pub mod lfd;
pub mod psi;
pub mod sequential;

pub use distributions::{
    cost_matrix, merge_supports, wasserstein_distance, CostMatrix, EmpiricalDistribution, NormKind, Side, SupportPool,
};
pub use detector::{risk_bound, risk_phi, DetectorModel};
pub use error::{Result, WrhtError};
pub use lfd::{brute_force, lmo, objective_and_gradient, solve, solve_warm, LfdProblem, LfdSolution, SolverConfig, TransportPlan};
pub use psi::{PsiFamily, PsiKind};
pub use sequential::{
    calibrate_radius, cusum_run, evaluate_runs, robust_scores, simulate, synth_stream, threshold_by_type1,
    threshold_from_maxima, CalibrationConfig, CalibrationResult, ChangeReport, HotellingModel, Method, RunSummary,
    SimulationConfig, SimulationReport, StreamSpec,
};
