//! Plan outputs: `trajectory.csv`, `history.csv` and `diagnostics.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use scvx_drive_core::model::{control, state};
use scvx_drive_core::scenario::Scenario;
use scvx_drive_core::scvx::ConvergedPlan;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub s_m: f64,
    pub t_s: f64,
    pub e_y_m: f64,
    pub e_psi_rad: f64,
    pub psi_rad: f64,
    pub v_mps: f64,
    pub delta_rad: f64,
    pub u0_mps2: f64,
    pub u1_radps: f64,
    pub a_y_mps2: f64,
    pub a_norm_mps2: f64,
    pub kappa_1pm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub cost: f64,
    pub predicted: f64,
    pub ratio: f64,
    pub rho_tr: f64,
    pub nu_norm: f64,
    pub accepted: bool,
    pub status: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxViolations {
    pub speed: f64,
    pub steering: f64,
    pub accel: f64,
    pub steer_rate: f64,
    pub corridor: f64,
    pub friction: f64,
    pub pins: f64,
    pub trigger: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub scenario: String,
    pub converged: bool,
    pub reason: &'static str,
    pub iterations: usize,
    pub trigger_active: bool,
    pub nu_norm: f64,
    /// Sum of the constraint buffers of the final subproblem.
    pub buffer_norm: f64,
    pub step: f64,
    pub defect_norm: f64,
    pub terminal_speed_mps: f64,
    pub total_time_s: f64,
    pub max_accel_norm_mps2: f64,
    pub max_violations: MaxViolations,
}

pub fn trajectory_rows(plan: &ConvergedPlan) -> Vec<TrajectoryRow> {
    let traj = &plan.trajectory;
    (0..traj.len())
        .map(|k| {
            let (x, u, d) = (&traj.states[k], &traj.controls[k], &plan.diagnostics[k]);
            TrajectoryRow {
                k,
                s_m: traj.arc_position(k),
                t_s: plan.time.time[k],
                e_y_m: x[state::E_Y],
                e_psi_rad: x[state::E_PSI],
                psi_rad: x[state::PSI],
                v_mps: x[state::V],
                delta_rad: x[state::DELTA],
                u0_mps2: u[control::ACCEL],
                u1_radps: u[control::STEER_RATE],
                a_y_mps2: d.a_y,
                a_norm_mps2: d.a_norm,
                kappa_1pm: traj.kappa[k],
            }
        })
        .collect()
}

pub fn history_rows(plan: &ConvergedPlan) -> Vec<HistoryRow> {
    plan.history
        .iter()
        .map(|r| HistoryRow {
            iter: r.index,
            cost: r.nonlinear_cost,
            predicted: r.predicted_cost,
            ratio: r.ratio,
            rho_tr: r.rho_tr,
            nu_norm: r.nu_norm,
            accepted: r.accepted,
            status: r.status.as_str(),
        })
        .collect()
}

pub fn diagnostics(plan: &ConvergedPlan, scenario: &Scenario) -> Diagnostics {
    let v = &plan.violations;
    let last = plan.trajectory.len() - 1;
    Diagnostics {
        scenario: scenario.name.clone(),
        converged: plan.converged(),
        reason: plan.termination.as_str(),
        iterations: plan.iterations(),
        trigger_active: plan.trigger_active,
        nu_norm: plan.nu_norm,
        buffer_norm: plan.buffer_norm,
        step: plan.step,
        defect_norm: plan.defect_norm,
        terminal_speed_mps: plan.trajectory.states[last][state::V],
        total_time_s: plan.time.time[last] - plan.time.time[0],
        max_accel_norm_mps2: plan.diagnostics.iter().fold(0.0, |m, d| m.max(d.a_norm)),
        max_violations: MaxViolations {
            speed: v.speed,
            steering: v.steering,
            accel: v.accel,
            steer_rate: v.steer_rate,
            corridor: v.corridor,
            friction: v.friction,
            pins: v.pins,
            trigger: v.trigger,
        },
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv { path: path.to_owned(), source };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| OutputError::Io { path: path.to_owned(), source })
}

/// Write all three output files into `dir`, creating it if needed. Returns
/// the written paths.
pub fn write_outputs(plan: &ConvergedPlan, scenario: &Scenario, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.to_owned(), source })?;
    let trajectory = dir.join("trajectory.csv");
    let history = dir.join("history.csv");
    let diag = dir.join("diagnostics.json");
    write_csv(&trajectory, &trajectory_rows(plan))?;
    write_csv(&history, &history_rows(plan))?;
    let json = serde_json::to_string_pretty(&diagnostics(plan, scenario))?;
    fs::write(&diag, json + "\n").map_err(|source| OutputError::Io { path: diag.clone(), source })?;
    Ok(vec![trajectory, history, diag])
}
