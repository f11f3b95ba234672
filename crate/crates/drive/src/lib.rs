//! Scenario files, the Clarabel solver backend, output writers and the
//! discretization oracle for the `scvx-drive-core` planner.

pub mod oracle;
pub mod output;
pub mod scenario_file;
pub mod solver;

pub use scenario_file::{load_scenario, ScenarioFile, ScenarioFileError, PRESETS};
pub use solver::ClarabelSolver;
