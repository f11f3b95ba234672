//! The successive-convexification outer loop.
//!
//! Each iteration linearizes and discretizes the dynamics about the current
//! reference, solves the convex subproblem inside a trust region, and compares
//! the decrease of the nonlinear cost with the decrease predicted by the
//! subproblem. The ratio of the two decides whether the candidate replaces
//! the reference and how the trust radius changes.

use alloc::vec::Vec;

use crate::math::{atan, hypot};
use crate::model::{
    control, lateral_accel, s_rate, state, ArcState, Control, ModelError, SpeedGuard, StateVector,
};
use crate::program::{ConicSolver, SolveSettings, SolveStatus};
use crate::scenario::{Scenario, ScenarioError};
use crate::subproblem::{
    assemble, extract, trigger_rows, violations, AssembleError, ExtractError, SoftCosts, SubproblemSpec, TriggerRow,
    Violations,
};
use crate::transcription::{
    foh_discretize, shoot_all_guarded, LinearizationPath, ReferenceTrajectory, ScalingError, ScalingMap, TranscriptionError,
};

/// Predicted decreases below this end the loop as stalled.
pub const STALL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScvxConfig {
    /// Ratio thresholds `rho0 < rho1 < rho2`.
    pub rho0: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Trust radius divisor on poor agreement.
    pub shrink_factor: f64,
    /// Trust radius multiplier on good agreement.
    pub grow_factor: f64,
    pub rho_tr_init: f64,
    pub rho_tr_min: f64,
    pub rho_tr_max: f64,
    pub max_iterations: usize,
    /// Largest scaled state or control change accepted as converged.
    pub eps_dx: f64,
    /// Largest total virtual control, and largest total constraint buffer,
    /// accepted as converged.
    pub eps_nu: f64,
    pub solve: SolveSettings,
}

impl Default for ScvxConfig {
    fn default() -> Self {
        Self {
            rho0: 0.0,
            rho1: 0.25,
            rho2: 0.7,
            shrink_factor: 2.0,
            grow_factor: 3.2,
            rho_tr_init: 1.0,
            rho_tr_min: 1e-4,
            rho_tr_max: 10.0,
            max_iterations: 30,
            eps_dx: 1e-4,
            eps_nu: 1e-6,
            solve: SolveSettings::default(),
        }
    }
}

impl ScvxConfig {
    pub fn validate(&self) -> Result<(), ScvxError> {
        if !(0.0 <= self.rho0 && self.rho0 < self.rho1 && self.rho1 < self.rho2 && self.rho2 < 1.0) {
            return Err(ScvxError::Config("ratio thresholds must satisfy 0 <= rho0 < rho1 < rho2 < 1"));
        }
        if !(self.shrink_factor > 1.0 && self.grow_factor > 1.0) {
            return Err(ScvxError::Config("trust radius factors must exceed 1"));
        }
        if !(0.0 < self.rho_tr_min && self.rho_tr_min < self.rho_tr_init && self.rho_tr_init <= self.rho_tr_max) {
            return Err(ScvxError::Config("trust radii must satisfy 0 < min < init <= max"));
        }
        if !(self.eps_dx > 0.0 && self.eps_nu > 0.0) {
            return Err(ScvxError::Config("convergence tolerances must be positive"));
        }
        if !(self.solve.abs_tol > 0.0 && self.solve.rel_tol > 0.0) {
            return Err(ScvxError::Config("solver tolerances must be positive"));
        }
        Ok(())
    }

    fn clamp_radius(&self, rho: f64) -> f64 {
        rho.clamp(self.rho_tr_min, self.rho_tr_max)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScvxError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("internal error: subproblem of iteration {iteration} is primal infeasible")]
    Infeasible { iteration: usize },
}

/// Outcome of the trust-region ratio test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioOutcome {
    Step { accept: bool, rho_tr: f64, ratio: f64 },
    /// The predicted decrease vanished.
    Stall,
}

/// Trust-region acceptance and radius update.
///
/// A non-finite previous cost marks a reference whose dynamics could not be
/// propagated; any finite candidate is then accepted at the same radius.
pub fn ratio_step(prev_cost: f64, new_cost: f64, predicted_cost: f64, rho_tr: f64, config: &ScvxConfig) -> RatioOutcome {
    if !new_cost.is_finite() {
        return RatioOutcome::Step {
            accept: false,
            rho_tr: config.clamp_radius(rho_tr / config.shrink_factor),
            ratio: f64::NEG_INFINITY,
        };
    }
    if !prev_cost.is_finite() {
        return RatioOutcome::Step { accept: true, rho_tr: config.clamp_radius(rho_tr), ratio: f64::NAN };
    }
    let predicted_decrease = prev_cost - predicted_cost;
    if predicted_decrease < STALL_TOLERANCE {
        return RatioOutcome::Stall;
    }
    let ratio = (prev_cost - new_cost) / predicted_decrease;
    let (accept, rho) = if ratio < config.rho0 {
        (false, rho_tr / config.shrink_factor)
    } else if ratio < config.rho1 {
        (true, rho_tr / config.shrink_factor)
    } else if ratio < config.rho2 {
        (true, rho_tr)
    } else {
        (true, rho_tr * config.grow_factor)
    };
    RatioOutcome::Step { accept, rho_tr: config.clamp_radius(rho), ratio }
}

/// Nonlinear cost split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NonlinearCost {
    /// Weighted 2-norm cost terms.
    pub soft: f64,
    /// `w_nu` times the scaled l1 norm of the multiple-shooting defects.
    pub defect: f64,
}

impl NonlinearCost {
    pub fn total(&self) -> f64 {
        self.soft + self.defect
    }
}

/// Scaled l1 norm of the multiple-shooting defects `x_k+1 - shoot(x_k)`,
/// shooting with the progress rate floored below the guard.
pub fn shooting_defect(
    traj: &ReferenceTrajectory,
    scenario: &Scenario,
    scaling: &ScalingMap,
    substeps: usize,
) -> Result<f64, ScvxError> {
    shooting_defect_guarded(traj, scenario, scaling, substeps, SpeedGuard::Floor)
}

/// [`shooting_defect`] with a selectable guard. Infinite when an interval
/// cannot be propagated.
pub fn shooting_defect_guarded(
    traj: &ReferenceTrajectory,
    scenario: &Scenario,
    scaling: &ScalingMap,
    substeps: usize,
    guard: SpeedGuard,
) -> Result<f64, ScvxError> {
    let shots = shoot_all_guarded(traj, &scenario.params, scenario.variant, substeps, guard)?;
    let scale = scaling.state.scale();
    Ok(shots
        .iter()
        .enumerate()
        .map(|(k, shot)| match shot {
            Some(x) => (traj.states[k + 1] - x).component_div(scale).lp_norm(1),
            None => f64::INFINITY,
        })
        .sum())
}

/// Cost of a trajectory under the true dynamics: soft costs plus the
/// shooting defects weighted by `w_nu`.
pub fn nonlinear_cost(
    traj: &ReferenceTrajectory,
    scenario: &Scenario,
    scaling: &ScalingMap,
    substeps: usize,
) -> Result<NonlinearCost, ScvxError> {
    let defect = shooting_defect(traj, scenario, scaling, substeps)?;
    Ok(NonlinearCost {
        soft: SoftCosts::evaluate(traj, scenario.v_final).weighted(&scenario.weights),
        defect: scenario.weights.virtual_control * defect,
    })
}

/// Interpolated starting trajectory.
///
/// Speed falls linearly over the nodes with the constant-deceleration
/// acceleration that joins the boundary speeds, heading follows the path,
/// steering follows the Ackermann angle of the node curvature and the
/// steering rate is its finite difference over the estimated travel time.
/// Values are then clamped to the box bounds and the pinned channels of the
/// first and last node take their pinned values.
pub fn initial_guess(scenario: &Scenario) -> Result<ReferenceTrajectory, ScvxError> {
    let nodes = scenario.nodes;
    let kappa = scenario.node_curvature()?;
    let wheelbase = scenario.params.wheelbase();
    let accel = (scenario.v_final * scenario.v_final - scenario.v0 * scenario.v0) / (2.0 * scenario.s_span);
    let last = (nodes - 1) as f64;

    let mut states: Vec<StateVector> = Vec::with_capacity(nodes);
    let mut time = 0.0;
    for (k, &kappa_k) in kappa.iter().enumerate() {
        let v = scenario.v0 + (scenario.v_final - scenario.v0) * k as f64 / last;
        if let Some(prev) = states.last() {
            time += 2.0 * (scenario.arc_position(k) - scenario.arc_position(k - 1)) / (v + prev[state::V]);
        }
        let psi = scenario.curvature.integral(scenario.s_start, scenario.arc_position(k))?;
        let delta = atan(wheelbase * kappa_k);
        states.push(ArcState { e_y: 0.0, e_psi: 0.0, psi, v, delta, t: time }.to_vector());
    }

    let steer_rate = |k: usize| {
        let (a, b) = (&states[k], &states[k + 1]);
        (b[state::DELTA] - a[state::DELTA]) / (b[state::T] - a[state::T])
    };
    let mut controls: Vec<_> =
        (0..nodes).map(|k| Control::new(accel, steer_rate(k.min(nodes - 2))).to_vector()).collect();

    // Start inside the boxes and on the boundary pins, so that the first
    // trust region intersects the feasible set.
    let c = &scenario.constraints;
    for (x, u) in states.iter_mut().zip(&mut controls) {
        x[state::V] = x[state::V].clamp(c.v_min, c.v_max);
        x[state::DELTA] = x[state::DELTA].clamp(-c.delta_max, c.delta_max);
        u[control::ACCEL] = u[control::ACCEL].clamp(c.accel_min, c.accel_max);
        u[control::STEER_RATE] = u[control::STEER_RATE].clamp(-c.steer_rate_max, c.steer_rate_max);
    }
    let pins = &c.pins;
    for (k, state_pins, control_pins) in
        [(0, &pins.initial_state, &pins.initial_control), (nodes - 1, &pins.final_state, &pins.final_control)]
    {
        for (i, value) in state_pins.iter().enumerate() {
            if let Some(v) = value {
                states[k][i] = *v;
            }
        }
        for (j, value) in control_pins.iter().enumerate() {
            if let Some(v) = value {
                controls[k][j] = *v;
            }
        }
    }
    Ok(ReferenceTrajectory::new(states, controls, kappa, scenario.s_start, scenario.s_end())?)
}

/// Variable scaling for a scenario: each channel's expected range maps onto
/// `[-1, 1]`.
pub fn default_scaling(scenario: &Scenario, guess: &ReferenceTrajectory) -> Result<ScalingMap, ScvxError> {
    let c = &scenario.constraints;
    let e_y = c.corridor.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(l, h)| (lo.min(l), hi.max(h)));
    let psi = guess
        .states
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[state::PSI]), hi.max(x[state::PSI])));
    let t_end = guess.states[guess.len() - 1][state::T];
    let states = [
        e_y,
        (-0.5, 0.5),
        (psi.0 - 0.5, psi.1 + 0.5),
        (0.0, c.v_max),
        (-c.delta_max, c.delta_max),
        (0.0, 2.0 * t_end),
    ];
    let controls = [(c.accel_min, c.accel_max), (-c.steer_rate_max, c.steer_rate_max)];
    Ok(ScalingMap::build(&states, &controls)?)
}

/// Why the loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    /// Step and virtual control both below tolerance.
    Converged,
    /// The subproblem predicted no further decrease.
    Stalled,
    IterationLimit,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::Stalled => "stalled",
            Self::IterationLimit => "iteration_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub index: usize,
    /// Reference the subproblem was built about.
    pub reference: ReferenceTrajectory,
    /// Extracted candidate, when the solver returned a solution.
    pub candidate: Option<ReferenceTrajectory>,
    /// Nonlinear cost of the reference.
    pub prev_cost: f64,
    /// Nonlinear cost of the candidate.
    pub nonlinear_cost: f64,
    /// Subproblem objective.
    pub predicted_cost: f64,
    pub ratio: f64,
    /// Trust radius of this subproblem.
    pub rho_tr: f64,
    /// Trust radius for the next iteration.
    pub next_rho_tr: f64,
    pub nu_norm: f64,
    /// Sum of the constraint buffers of the subproblem solution.
    pub buffer_norm: f64,
    pub step: f64,
    pub accepted: bool,
    pub status: SolveStatus,
    /// Whether trigger rows were part of this subproblem.
    pub trigger_active: bool,
    /// Intervals linearized along the straight line between nodes.
    pub interpolated_intervals: usize,
}

/// Per-node quantities of a finished plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeDiagnostics {
    pub a_x: f64,
    pub a_y: f64,
    pub a_norm: f64,
    pub s_rate: f64,
}

/// Time stamps of the nodes and the control schedule in time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeProfile {
    pub time: Vec<f64>,
    pub s_rate: Vec<f64>,
    pub controls: Vec<Control>,
}

impl TimeProfile {
    /// Control at time `t`, linear between nodes and held beyond them.
    pub fn control_at(&self, t: f64) -> Control {
        let last = self.time.len() - 1;
        if t <= self.time[0] {
            return self.controls[0];
        }
        if t >= self.time[last] {
            return self.controls[last];
        }
        let k = self.time.partition_point(|&tk| tk <= t) - 1;
        let frac = (t - self.time[k]) / (self.time[k + 1] - self.time[k]);
        let (a, b) = (self.controls[k], self.controls[k + 1]);
        Control::new(a.accel + frac * (b.accel - a.accel), a.steer_rate + frac * (b.steer_rate - a.steer_rate))
    }
}

/// Node times from the integrated time channel.
pub fn recover_time(traj: &ReferenceTrajectory, scenario: &Scenario) -> Result<TimeProfile, ModelError> {
    let s_rate = (0..traj.len())
        .map(|k| s_rate(&traj.state(k), traj.kappa[k], &scenario.params, scenario.variant))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TimeProfile {
        time: traj.states.iter().map(|x| x[state::T]).collect(),
        s_rate,
        controls: (0..traj.len()).map(|k| traj.control(k)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergedPlan {
    pub trajectory: ReferenceTrajectory,
    pub time: TimeProfile,
    pub diagnostics: Vec<NodeDiagnostics>,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    /// Whether the trigger gate was open in any iteration.
    pub trigger_active: bool,
    /// Violations against the constraints of the final subproblem.
    pub violations: Violations,
    /// Scaled l1 shooting defect of the final trajectory.
    pub defect_norm: f64,
    pub nu_norm: f64,
    pub buffer_norm: f64,
    pub step: f64,
    pub scaling: ScalingMap,
}

impl ConvergedPlan {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

fn node_diagnostics(traj: &ReferenceTrajectory, scenario: &Scenario, time: &TimeProfile) -> Result<Vec<NodeDiagnostics>, ModelError> {
    (0..traj.len())
        .map(|k| {
            let x = &traj.states[k];
            let a_x = traj.controls[k][control::ACCEL];
            let a_y = lateral_accel(x[state::V], x[state::DELTA], &scenario.params, scenario.variant)?;
            Ok(NodeDiagnostics { a_x, a_y, a_norm: hypot(a_x, a_y), s_rate: time.s_rate[k] })
        })
        .collect()
}

/// Run SCvx on `scenario` with the scenario's own substep count.
pub fn run<S: ConicSolver + ?Sized>(
    scenario: &Scenario,
    config: &ScvxConfig,
    solver: &S,
) -> Result<ConvergedPlan, ScvxError> {
    scenario.validate()?;
    config.validate()?;
    let substeps = scenario.substeps;
    let (params, variant) = (scenario.params, scenario.variant);

    let mut reference = initial_guess(scenario)?;
    let scaling = default_scaling(scenario, &reference)?;
    let spec = SubproblemSpec {
        params,
        variant,
        weights: &scenario.weights,
        constraints: &scenario.constraints,
        trigger: scenario.trigger.as_ref(),
        v_target: scenario.v_final,
        scaling: &scaling,
    };
    let cost_of = |traj: &ReferenceTrajectory| {
        nonlinear_cost(traj, scenario, &scaling, substeps).map(|c| c.total()).unwrap_or(f64::INFINITY)
    };

    let mut rho = config.rho_tr_init;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut termination = Termination::IterationLimit;
    let mut trigger_was_active = false;
    let mut final_rows: Option<Vec<TriggerRow>> = None;
    let (mut nu_norm, mut buffer_norm, mut step) = (f64::NAN, f64::NAN, f64::NAN);

    for index in 0..config.max_iterations {
        let ltv = foh_discretize(&reference, &params, variant, substeps)?;
        let interpolated_intervals =
            ltv.intervals.iter().filter(|iv| iv.path == LinearizationPath::Interpolated).count();

        // Newly triggered rows can sit far from the reference; restore the
        // initial radius so the subproblem can reach them.
        let gate_open = scenario.trigger.as_ref().is_some_and(|t| trigger_rows(&reference, t).is_some());
        if gate_open && !history.iter().any(|r| r.trigger_active) {
            rho = rho.max(config.rho_tr_init);
        }

        let sub = assemble(&ltv, &reference, &spec, rho)?;
        let rows = sub.trigger_rows.as_deref();
        let trigger_active = rows.is_some();
        trigger_was_active |= trigger_active;
        let prev_cost = cost_of(&reference);
        let result = solver.solve(&sub.program, &config.solve);

        let mut record = IterationRecord {
            index,
            reference: reference.clone(),
            candidate: None,
            prev_cost,
            nonlinear_cost: f64::NAN,
            predicted_cost: result.objective,
            ratio: f64::NAN,
            rho_tr: rho,
            next_rho_tr: rho,
            nu_norm: f64::NAN,
            buffer_norm: f64::NAN,
            step: f64::NAN,
            accepted: false,
            status: result.status,
            trigger_active,
            interpolated_intervals,
        };

        if result.status == SolveStatus::PrimalInfeasible {
            return Err(ScvxError::Infeasible { iteration: index });
        }
        if !result.status.has_solution() {
            log::warn!("iteration {index}: solver returned {}", result.status);
            rho = config.clamp_radius(rho / config.shrink_factor);
            record.next_rho_tr = rho;
            history.push(record);
            continue;
        }

        let candidate = extract(&result, &sub, &reference, &scaling)?;
        let new_cost = cost_of(&candidate.trajectory);
        record.nonlinear_cost = new_cost;
        record.predicted_cost = candidate.linear_cost;
        record.nu_norm = candidate.nu_norm;
        record.buffer_norm = candidate.buffer_norm;
        record.step = candidate.step;
        (nu_norm, buffer_norm, step) = (candidate.nu_norm, candidate.buffer_norm, candidate.step);
        final_rows = sub.trigger_rows.clone();

        let predicted_decrease = prev_cost - candidate.linear_cost;
        if predicted_decrease.abs() >= STALL_TOLERANCE {
            record.ratio = (prev_cost - new_cost) / predicted_decrease;
        }

        log::debug!(
            "iteration {index}: cost {prev_cost:.6e} -> {new_cost:.6e} (predicted {:.6e}), rho {rho:.3e}, nu {:.3e}, buffer {:.3e}, step {:.3e}",
            candidate.linear_cost,
            candidate.nu_norm,
            candidate.buffer_norm,
            candidate.step
        );

        if candidate.step <= config.eps_dx && candidate.nu_norm <= config.eps_nu && candidate.buffer_norm <= config.eps_nu
        {
            record.accepted = new_cost <= prev_cost;
            record.candidate = Some(candidate.trajectory.clone());
            if record.accepted {
                reference = candidate.trajectory;
            }
            history.push(record);
            termination = Termination::Converged;
            break;
        }

        record.candidate = Some(candidate.trajectory.clone());
        match ratio_step(prev_cost, new_cost, candidate.linear_cost, rho, config) {
            RatioOutcome::Stall => {
                history.push(record);
                termination = Termination::Stalled;
                break;
            }
            RatioOutcome::Step { accept, rho_tr, ratio } => {
                record.ratio = ratio;
                record.accepted = accept;
                record.next_rho_tr = rho_tr;
                rho = rho_tr;
                if accept {
                    reference = candidate.trajectory;
                }
                history.push(record);
            }
        }
    }

    let time = recover_time(&reference, scenario)?;
    let diagnostics = node_diagnostics(&reference, scenario, &time)?;
    let violations = violations(&reference, &scenario.constraints, final_rows.as_deref(), &params, variant)?;
    let defect_norm = shooting_defect_guarded(&reference, scenario, &scaling, substeps, SpeedGuard::Strict)?;
    log::info!("{} after {} iterations", termination.as_str(), history.len());
    Ok(ConvergedPlan {
        trajectory: reference,
        time,
        diagnostics,
        history,
        termination,
        trigger_active: trigger_was_active,
        violations,
        defect_norm,
        nu_norm,
        buffer_norm,
        step,
        scaling,
    })
}
