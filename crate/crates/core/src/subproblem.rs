//! Assembly of the convex SCvx subproblem.
//!
//! Decision variables are the scaled node states `x_hat_k` and controls
//! `u_hat_k`, the split virtual control `nu_k = nu_plus_k - nu_minus_k` (in
//! scaled state units), one auxiliary variable per node channel for the l1
//! trust region, and one epigraph variable per 2-norm cost term.
//!
//! Cost (physical units inside the norms):
//!
//! ```text
//! w_ey ||e_y|| + w_epsi ||e_psi|| + w_jerk ||diff(u0)|| + w_u0 ||u0|| + w_u1 ||u1||
//!   + w_N |V_K - V_target| + w_nu sum_k ||nu_k||_1
//! ```
//!
//! Constraints: FOH dynamics with virtual control, box bounds on speed,
//! steering angle and both controls, a linearized friction circle per node, a
//! lateral corridor per node, boundary pins, the trust region
//! `||dx_k||_1 + ||du_k||_1 <= rho` in scaled units, and the state-triggered
//! rows when the trigger's gate is active on the reference.

use alloc::vec::Vec;

use crate::math::{abs, hypot, norm2};
use crate::model::{
    control, lateral_accel, lateral_accel_gradient, state, ControlVector, ModelError, ModelVariant, StateVector,
    VehicleParams, NU, NX,
};
use crate::program::{AffineRow, ConeKind, ConicProgram, ProgramError, SolveResult, SolveStatus};
use crate::transcription::{ReferenceTrajectory, ScalingMap, TranscriptionError, VehicleLtv};

/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub e_y: f64,
    pub e_psi: f64,
    pub jerk: f64,
    pub accel: f64,
    pub steer_rate: f64,
    pub terminal: f64,
    pub virtual_control: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { e_y: 1.0, e_psi: 1.0, jerk: 1.0, accel: 1.0, steer_rate: 1.0, terminal: 1.0, virtual_control: 1e5 }
    }
}

impl CostWeights {
    pub fn is_valid(&self) -> bool {
        [self.e_y, self.e_psi, self.jerk, self.accel, self.steer_rate, self.terminal, self.virtual_control]
            .iter()
            .all(|w| *w >= 0.0 && w.is_finite())
    }
}

/// Values pinned at the first and last node. `None` leaves a channel free.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryPins {
    pub initial_state: [Option<f64>; NX],
    pub initial_control: [Option<f64>; NU],
    pub final_state: [Option<f64>; NX],
    pub final_control: [Option<f64>; NU],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub v_min: f64,
    pub v_max: f64,
    pub delta_max: f64,
    pub steer_rate_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    /// Tire-road friction coefficient in `[0, 1]`.
    pub mu: f64,
    pub gravity: f64,
    /// Per-node `(lower, upper)` bounds on `e_y`, m.
    pub corridor: Vec<(f64, f64)>,
    pub pins: BoundaryPins,
}

impl ConstraintSpec {
    /// Radius of the friction circle, m/s^2.
    pub fn friction_radius(&self) -> f64 {
        self.mu * self.gravity
    }

    pub fn validate(&self, nodes: usize) -> Result<(), AssembleError> {
        let ordered = |lo: f64, hi: f64| lo < hi && lo.is_finite() && hi.is_finite();
        if !ordered(self.v_min, self.v_max)
            || !ordered(-self.delta_max, self.delta_max)
            || !ordered(-self.steer_rate_max, self.steer_rate_max)
            || !ordered(self.accel_min, self.accel_max)
            || !(0.0..=1.0).contains(&self.mu)
            || !(self.gravity > 0.0)
        {
            return Err(AssembleError::InvalidBounds);
        }
        if self.corridor.len() != nodes {
            return Err(AssembleError::Dimension { expected: nodes, got: self.corridor.len() });
        }
        if let Some(node) = self.corridor.iter().position(|&(lo, hi)| !ordered(lo, hi)) {
            return Err(AssembleError::EmptyCorridor { node });
        }
        Ok(())
    }
}

/// A trajectory channel at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    State(usize),
    Control(usize),
}

impl Channel {
    fn value(self, states: &StateVector, controls: &ControlVector) -> f64 {
        match self {
            Channel::State(i) => states[i],
            Channel::Control(j) => controls[j],
        }
    }
}

/// Affine function of entries anywhere on the trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryExpr {
    pub terms: Vec<(usize, Channel, f64)>,
    pub constant: f64,
}

impl TrajectoryExpr {
    pub fn eval(&self, traj: &ReferenceTrajectory) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(k, ch, c)| acc + c * ch.value(&traj.states[k], &traj.controls[k]))
    }
}

/// Affine function of the channels of a single node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeExpr {
    pub terms: Vec<(Channel, f64)>,
    pub constant: f64,
}

impl NodeExpr {
    pub fn eval(&self, states: &StateVector, controls: &ControlVector) -> f64 {
        self.terms.iter().fold(self.constant, |acc, &(ch, c)| acc + c * ch.value(states, controls))
    }
}

/// Constraint `constraint(z_k) <= 0` at every `k` in `nodes`, enforced while
/// the gate `g(z)` is negative.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pub gate: TrajectoryExpr,
    pub constraint: NodeExpr,
    pub nodes: Vec<usize>,
}

impl TriggerSpec {
    /// Gate `g = threshold - V_last`: active while the terminal speed exceeds
    /// `threshold`. The rows keep `e_y >= min_offset` at `nodes`.
    pub fn terminal_speed_evasion(nodes_total: usize, threshold: f64, min_offset: f64, nodes: Vec<usize>) -> Self {
        Self {
            gate: TrajectoryExpr {
                terms: alloc::vec![(nodes_total - 1, Channel::State(state::V), -1.0)],
                constant: threshold,
            },
            constraint: NodeExpr { terms: alloc::vec![(Channel::State(state::E_Y), -1.0)], constant: min_offset },
            nodes,
        }
    }

    pub fn validate(&self, nodes: usize) -> Result<(), AssembleError> {
        let channel_ok = |ch: Channel| match ch {
            Channel::State(i) => i < NX,
            Channel::Control(j) => j < NU,
        };
        let gate_ok = self.gate.terms.iter().all(|&(k, ch, _)| k < nodes && channel_ok(ch));
        let rows_ok = self.constraint.terms.iter().all(|&(ch, _)| channel_ok(ch));
        if !gate_ok || !rows_ok || self.nodes.iter().any(|&k| k >= nodes) {
            return Err(AssembleError::InvalidTrigger);
        }
        Ok(())
    }
}

/// Closed-form slack of the continuous state-triggered formulation:
/// `sigma* = -min(g, 0)`.
pub fn sigma_star(gate: f64) -> f64 {
    if gate < 0.0 {
        -gate
    } else {
        0.0
    }
}

/// One triggered row `expr(z_node) <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerRow {
    pub node: usize,
    pub expr: NodeExpr,
}

/// Rows to enforce for this iteration, decided on the previous trajectory.
/// `None` when the gate is inactive.
pub fn trigger_rows(reference: &ReferenceTrajectory, trigger: &TriggerSpec) -> Option<Vec<TriggerRow>> {
    if sigma_star(trigger.gate.eval(reference)) > 0.0 {
        Some(trigger.nodes.iter().map(|&node| TriggerRow { node, expr: trigger.constraint.clone() }).collect())
    } else {
        None
    }
}

/// Friction-circle row at one node: `||(u0, a_y_lin)||_2 <= radius` with
/// `a_y_lin` the first-order expansion of `V psi_dot` in `(V, delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionRow {
    pub node: usize,
    pub radius: f64,
    pub v_ref: f64,
    pub delta_ref: f64,
    pub a_y_ref: f64,
    pub d_v: f64,
    pub d_delta: f64,
}

impl FrictionRow {
    pub fn lateral(&self, v: f64, delta: f64) -> f64 {
        self.a_y_ref + self.d_v * (v - self.v_ref) + self.d_delta * (delta - self.delta_ref)
    }
}

pub fn friction_rows(
    reference: &ReferenceTrajectory,
    constraints: &ConstraintSpec,
    params: &VehicleParams,
    variant: ModelVariant,
) -> Result<Vec<FrictionRow>, ModelError> {
    (0..reference.len())
        .map(|node| {
            let x = &reference.states[node];
            let (v, delta) = (x[state::V], x[state::DELTA]);
            let (d_v, d_delta) = lateral_accel_gradient(v, delta, params, variant)?;
            Ok(FrictionRow {
                node,
                radius: constraints.friction_radius(),
                v_ref: v,
                delta_ref: delta,
                a_y_ref: lateral_accel(v, delta, params, variant)?,
                d_v,
                d_delta,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssembleError {
    #[error("expected {expected} nodes, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty corridor at node {node}")]
    EmptyCorridor { node: usize },
    #[error("inconsistent bounds or friction parameters")]
    InvalidBounds,
    #[error("cost weights must be finite and nonnegative")]
    InvalidWeights,
    #[error("trigger references an invalid node or channel")]
    InvalidTrigger,
    #[error("trust radius must be positive, got {0}")]
    InvalidTrustRadius(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

/// Variable offsets inside the assembled program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub nodes: usize,
    states: usize,
    controls: usize,
    nu_plus: usize,
    nu_minus: usize,
    trust: usize,
    epigraph: usize,
    buffers: usize,
    trigger_buffers: usize,
}

/// Epigraph variable order.
pub mod epigraph {
    pub const E_Y: usize = 0;
    pub const E_PSI: usize = 1;
    pub const JERK: usize = 2;
    pub const ACCEL: usize = 3;
    pub const STEER_RATE: usize = 4;
    pub const TERMINAL: usize = 5;
    pub const COUNT: usize = 6;
}

impl VarLayout {
    pub fn state(&self, k: usize, i: usize) -> usize {
        self.states + k * NX + i
    }

    pub fn control(&self, k: usize, j: usize) -> usize {
        self.controls + k * NU + j
    }

    pub fn nu_plus(&self, k: usize, i: usize) -> usize {
        self.nu_plus + k * NX + i
    }

    pub fn nu_minus(&self, k: usize, i: usize) -> usize {
        self.nu_minus + k * NX + i
    }

    /// Trust-region bound for channel `c` of node `k`; states first, then
    /// controls.
    pub fn trust(&self, k: usize, c: usize) -> usize {
        self.trust + k * (NX + NU) + c
    }

    pub fn epigraph(&self, term: usize) -> usize {
        self.epigraph + term
    }

    /// Friction-circle buffer of node `k`, m/s².
    pub fn friction_buffer(&self, k: usize) -> usize {
        self.buffers + k
    }

    /// Corridor buffers of node `k`, lower side then upper side, m.
    pub fn corridor_buffer(&self, k: usize, upper: bool) -> usize {
        self.buffers + self.nodes + 2 * k + usize::from(upper)
    }

    /// Buffer of trigger row `r`.
    pub fn trigger_buffer(&self, r: usize) -> usize {
        self.buffers + 3 * self.nodes + r
    }

    /// All buffer variables.
    pub fn buffer_range(&self) -> core::ops::Range<usize> {
        self.buffers..self.buffers + 3 * self.nodes + self.trigger_buffers
    }
}

/// Everything besides the discrete model needed to build a subproblem.
#[derive(Debug, Clone, Copy)]
pub struct SubproblemSpec<'a> {
    pub params: VehicleParams,
    pub variant: ModelVariant,
    pub weights: &'a CostWeights,
    pub constraints: &'a ConstraintSpec,
    pub trigger: Option<&'a TriggerSpec>,
    /// Desired terminal speed, m/s.
    pub v_target: f64,
    pub scaling: &'a ScalingMap,
}

/// An assembled subproblem together with what is needed to read it back.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub program: ConicProgram,
    pub layout: VarLayout,
    pub friction: Vec<FrictionRow>,
    /// Rows added by the state trigger, if its gate was active.
    pub trigger_rows: Option<Vec<TriggerRow>>,
    pub trust_radius: f64,
}

struct RowBuilder<'a> {
    layout: VarLayout,
    scaling: &'a ScalingMap,
}

impl RowBuilder<'_> {
    /// Physical value of state `i` at node `k`.
    fn state(&self, k: usize, i: usize) -> AffineRow {
        AffineRow::new()
            .term(self.layout.state(k, i), self.scaling.state.scale()[i])
            .plus(self.scaling.state.offset()[i])
    }

    fn control(&self, k: usize, j: usize) -> AffineRow {
        AffineRow::new()
            .term(self.layout.control(k, j), self.scaling.control.scale()[j])
            .plus(self.scaling.control.offset()[j])
    }

    fn channel(&self, k: usize, ch: Channel) -> AffineRow {
        match ch {
            Channel::State(i) => self.state(k, i),
            Channel::Control(j) => self.control(k, j),
        }
    }

    fn node_expr(&self, k: usize, expr: &NodeExpr) -> AffineRow {
        let mut row = AffineRow::constant(expr.constant);
        for &(ch, c) in &expr.terms {
            let part = self.channel(k, ch);
            for (var, coeff) in part.terms {
                row.add_term(var, c * coeff);
            }
            row.constant += c * part.constant;
        }
        row
    }

    /// Scaled pin row `x_hat - (value - C) / D = 0`.
    fn pin(&self, var: usize, value: f64, scale: f64, offset: f64) -> AffineRow {
        AffineRow::new().term(var, 1.0).plus(-(value - offset) / scale)
    }
}

fn push_bounds(
    rows: &mut Vec<AffineRow>,
    expr: AffineRow,
    lower: f64,
    upper: f64,
) {
    rows.push(expr.clone().plus(-lower));
    rows.push(expr.negated().plus(upper));
}

/// Build the convex subproblem about `reference`.
pub fn assemble(
    ltv: &VehicleLtv,
    reference: &ReferenceTrajectory,
    spec: &SubproblemSpec<'_>,
    trust_radius: f64,
) -> Result<Subproblem, AssembleError> {
    let nodes = reference.len();
    if ltv.nodes() != nodes {
        return Err(AssembleError::Dimension { expected: nodes, got: ltv.nodes() });
    }
    if !(trust_radius > 0.0) {
        return Err(AssembleError::InvalidTrustRadius(trust_radius));
    }
    if !spec.weights.is_valid() {
        return Err(AssembleError::InvalidWeights);
    }
    let cons = spec.constraints;
    cons.validate(nodes)?;
    if let Some(trigger) = spec.trigger {
        trigger.validate(nodes)?;
    }

    // State-triggered rows, gated on the reference.
    let triggered = spec.trigger.and_then(|t| trigger_rows(reference, t));
    let trigger_count = triggered.as_ref().map_or(0, Vec::len);

    let mut program = ConicProgram::new();
    let states = program.add_variables("x_hat", nodes * NX).start;
    let controls = program.add_variables("u_hat", nodes * NU).start;
    let nu_plus = program.add_variables("nu_plus", (nodes - 1) * NX).start;
    let nu_minus = program.add_variables("nu_minus", (nodes - 1) * NX).start;
    let trust = program.add_variables("trust", nodes * (NX + NU)).start;
    let epi = program.add_variables("epigraph", epigraph::COUNT).start;
    let buffers = program.add_variables("buffer", 3 * nodes + trigger_count).start;
    let layout = VarLayout {
        nodes,
        states,
        controls,
        nu_plus,
        nu_minus,
        trust,
        epigraph: epi,
        buffers,
        trigger_buffers: trigger_count,
    };
    let rb = RowBuilder { layout, scaling: spec.scaling };
    let (dx, cx) = (spec.scaling.state.scale(), spec.scaling.state.offset());
    let (du, cu) = (spec.scaling.control.scale(), spec.scaling.control.offset());

    // Dynamics with virtual control, one scaled row per interval and state.
    let mut eq = Vec::with_capacity((nodes - 1) * NX);
    for (k, iv) in ltv.intervals.iter().enumerate() {
        let affine = cx - iv.a * cx - iv.b_minus * cu - iv.b_plus * cu - iv.f - iv.w;
        for i in 0..NX {
            let inv = 1.0 / dx[i];
            let mut row = AffineRow::new().term(layout.state(k + 1, i), 1.0);
            for j in 0..NX {
                row.add_term(layout.state(k, j), -iv.a[(i, j)] * dx[j] * inv);
            }
            for j in 0..NU {
                row.add_term(layout.control(k, j), -iv.b_minus[(i, j)] * du[j] * inv);
                row.add_term(layout.control(k + 1, j), -iv.b_plus[(i, j)] * du[j] * inv);
            }
            row.add_term(layout.nu_plus(k, i), -1.0);
            row.add_term(layout.nu_minus(k, i), 1.0);
            eq.push(row.plus(affine[i] * inv));
        }
    }

    // Boundary pins.
    let pins = &cons.pins;
    let last = nodes - 1;
    for (k, state_pins, control_pins) in
        [(0, &pins.initial_state, &pins.initial_control), (last, &pins.final_state, &pins.final_control)]
    {
        for (i, value) in state_pins.iter().enumerate() {
            if let Some(v) = value {
                eq.push(rb.pin(layout.state(k, i), *v, dx[i], cx[i]));
            }
        }
        for (j, value) in control_pins.iter().enumerate() {
            if let Some(v) = value {
                eq.push(rb.pin(layout.control(k, j), *v, du[j], cu[j]));
            }
        }
    }
    program.push_cone(ConeKind::Zero, eq)?;

    // Virtual control and buffer costs and sign constraints.
    let w_nu = spec.weights.virtual_control;
    let mut nonneg = Vec::new();
    for var in (nu_plus..trust).chain(layout.buffer_range()) {
        program.add_cost(var, w_nu);
        nonneg.push(AffineRow::new().term(var, 1.0));
    }

    // Box bounds, and the corridor with its buffers.
    for k in 0..nodes {
        push_bounds(&mut nonneg, rb.state(k, state::V), cons.v_min, cons.v_max);
        push_bounds(&mut nonneg, rb.state(k, state::DELTA), -cons.delta_max, cons.delta_max);
        push_bounds(&mut nonneg, rb.control(k, control::ACCEL), cons.accel_min, cons.accel_max);
        push_bounds(&mut nonneg, rb.control(k, control::STEER_RATE), -cons.steer_rate_max, cons.steer_rate_max);
        let (lo, hi) = cons.corridor[k];
        let e_y = rb.state(k, state::E_Y);
        nonneg.push(e_y.clone().plus(-lo).term(layout.corridor_buffer(k, false), 1.0));
        nonneg.push(e_y.negated().plus(hi).term(layout.corridor_buffer(k, true), 1.0));
    }

    // l1 trust region about the reference, in scaled units.
    for k in 0..nodes {
        let x_ref = spec.scaling.apply_state(&reference.states[k]);
        let u_ref = spec.scaling.apply_control(&reference.controls[k]);
        let mut budget = AffineRow::constant(trust_radius);
        for c in 0..NX + NU {
            let (var, center) =
                if c < NX { (layout.state(k, c), x_ref[c]) } else { (layout.control(k, c - NX), u_ref[c - NX]) };
            let bound = layout.trust(k, c);
            nonneg.push(AffineRow::new().term(bound, 1.0).term(var, -1.0).plus(center));
            nonneg.push(AffineRow::new().term(bound, 1.0).term(var, 1.0).plus(-center));
            budget.add_term(bound, -1.0);
        }
        nonneg.push(budget);
    }

    if let Some(rows) = &triggered {
        for (r, row) in rows.iter().enumerate() {
            nonneg.push(rb.node_expr(row.node, &row.expr).negated().term(layout.trigger_buffer(r), 1.0));
        }
    }
    program.push_cone(ConeKind::Nonnegative, nonneg)?;

    // Friction circle.
    let friction = friction_rows(reference, cons, &spec.params, spec.variant)?;
    for row in &friction {
        let k = row.node;
        let mut lateral = rb.state(k, state::V).scaled(row.d_v);
        let delta = rb.state(k, state::DELTA).scaled(row.d_delta);
        for (var, coeff) in delta.terms {
            lateral.add_term(var, coeff);
        }
        lateral.constant += delta.constant + row.a_y_ref - row.d_v * row.v_ref - row.d_delta * row.delta_ref;
        program.push_cone(
            ConeKind::SecondOrder,
            alloc::vec![
                AffineRow::constant(row.radius).term(layout.friction_buffer(k), 1.0),
                rb.control(k, control::ACCEL),
                lateral
            ],
        )?;
    }

    // 2-norm cost epigraphs.
    let w = spec.weights;
    let epigraph_cone = |program: &mut ConicProgram, term: usize, weight: f64, entries: Vec<AffineRow>| {
        let var = layout.epigraph(term);
        program.add_cost(var, weight);
        let mut rows = Vec::with_capacity(entries.len() + 1);
        rows.push(AffineRow::new().term(var, 1.0));
        rows.extend(entries);
        program.push_cone(ConeKind::SecondOrder, rows)
    };
    epigraph_cone(&mut program, epigraph::E_Y, w.e_y, (0..nodes).map(|k| rb.state(k, state::E_Y)).collect())?;
    epigraph_cone(&mut program, epigraph::E_PSI, w.e_psi, (0..nodes).map(|k| rb.state(k, state::E_PSI)).collect())?;
    let jerk = (0..nodes - 1)
        .map(|k| {
            AffineRow::new()
                .term(layout.control(k + 1, control::ACCEL), du[control::ACCEL])
                .term(layout.control(k, control::ACCEL), -du[control::ACCEL])
        })
        .collect();
    epigraph_cone(&mut program, epigraph::JERK, w.jerk, jerk)?;
    epigraph_cone(&mut program, epigraph::ACCEL, w.accel, (0..nodes).map(|k| rb.control(k, control::ACCEL)).collect())?;
    epigraph_cone(
        &mut program,
        epigraph::STEER_RATE,
        w.steer_rate,
        (0..nodes).map(|k| rb.control(k, control::STEER_RATE)).collect(),
    )?;
    epigraph_cone(
        &mut program,
        epigraph::TERMINAL,
        w.terminal,
        alloc::vec![rb.state(last, state::V).plus(-spec.v_target)],
    )?;

    Ok(Subproblem { program, layout, friction, trigger_rows: triggered, trust_radius })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractError {
    #[error("solver returned {0} without a solution")]
    SolverFailed(SolveStatus),
    #[error("solution has {got} entries, program has {expected} variables")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Reference(#[from] TranscriptionError),
}

/// Candidate trajectory read back from a subproblem solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub trajectory: ReferenceTrajectory,
    /// `sum_k ||nu_k||_1`, scaled units.
    pub nu_norm: f64,
    /// Sum of the constraint buffers, physical units.
    pub buffer_norm: f64,
    /// Subproblem objective at the solution: the predicted cost.
    pub linear_cost: f64,
    /// Largest scaled change of any state or control from the reference.
    pub step: f64,
}

pub fn extract(
    solution: &SolveResult,
    subproblem: &Subproblem,
    reference: &ReferenceTrajectory,
    scaling: &ScalingMap,
) -> Result<Extracted, ExtractError> {
    let x = match (&solution.primal, solution.status.has_solution()) {
        (Some(x), true) => x,
        _ => return Err(ExtractError::SolverFailed(solution.status)),
    };
    let program = &subproblem.program;
    if x.len() != program.num_vars() {
        return Err(ExtractError::Dimension { expected: program.num_vars(), got: x.len() });
    }
    let layout = &subproblem.layout;
    let mut states = Vec::with_capacity(layout.nodes);
    let mut controls = Vec::with_capacity(layout.nodes);
    let mut step: f64 = 0.0;
    for k in 0..layout.nodes {
        let x_hat = StateVector::from_fn(|i, _| x[layout.state(k, i)]);
        let u_hat = ControlVector::from_fn(|j, _| x[layout.control(k, j)]);
        let dx = x_hat - scaling.apply_state(&reference.states[k]);
        let du = u_hat - scaling.apply_control(&reference.controls[k]);
        step = step.max(dx.amax()).max(du.amax());
        states.push(scaling.unapply_state(&x_hat));
        controls.push(scaling.unapply_control(&u_hat));
    }
    let nu_norm = (0..layout.nodes - 1)
        .flat_map(|k| (0..NX).map(move |i| (k, i)))
        .map(|(k, i)| abs(x[layout.nu_plus(k, i)] - x[layout.nu_minus(k, i)]))
        .sum();
    let buffer_norm = layout.buffer_range().map(|var| x[var].max(0.0)).sum();
    Ok(Extracted {
        trajectory: reference.with_nodes(states, controls)?,
        nu_norm,
        buffer_norm,
        linear_cost: program.objective(x),
        step,
    })
}

/// The 2-norm cost terms evaluated on a trajectory, physical units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SoftCosts {
    pub e_y: f64,
    pub e_psi: f64,
    pub jerk: f64,
    pub accel: f64,
    pub steer_rate: f64,
    pub terminal: f64,
}

impl SoftCosts {
    pub fn evaluate(traj: &ReferenceTrajectory, v_target: f64) -> Self {
        let s = |i: usize| traj.states.iter().map(move |x| x[i]);
        let u = |j: usize| traj.controls.iter().map(move |c| c[j]);
        let accel: Vec<f64> = u(control::ACCEL).collect();
        Self {
            e_y: norm2(s(state::E_Y)),
            e_psi: norm2(s(state::E_PSI)),
            jerk: norm2(accel.windows(2).map(|w| w[1] - w[0])),
            accel: norm2(accel.iter().copied()),
            steer_rate: norm2(u(control::STEER_RATE)),
            terminal: abs(traj.states[traj.len() - 1][state::V] - v_target),
        }
    }

    pub fn weighted(&self, w: &CostWeights) -> f64 {
        w.e_y * self.e_y
            + w.e_psi * self.e_psi
            + w.jerk * self.jerk
            + w.accel * self.accel
            + w.steer_rate * self.steer_rate
            + w.terminal * self.terminal
    }
}

/// Worst violation of each hard constraint family on a trajectory, in
/// physical units, with the exact (not linearized) friction circle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Violations {
    pub speed: f64,
    pub steering: f64,
    pub accel: f64,
    pub steer_rate: f64,
    pub corridor: f64,
    pub friction: f64,
    pub pins: f64,
    pub trigger: f64,
    /// Sum of all individual violations.
    pub total: f64,
}

impl Violations {
    pub fn max(&self) -> f64 {
        [self.speed, self.steering, self.accel, self.steer_rate, self.corridor, self.friction, self.pins, self.trigger]
            .iter()
            .fold(0.0, |m, v| m.max(*v))
    }
}

pub fn violations(
    traj: &ReferenceTrajectory,
    cons: &ConstraintSpec,
    triggered: Option<&[TriggerRow]>,
    params: &VehicleParams,
    variant: ModelVariant,
) -> Result<Violations, ModelError> {
    let mut out = Violations::default();
    let excess = |value: f64, lo: f64, hi: f64| (lo - value).max(value - hi).max(0.0);
    let record = |slot: &mut f64, total: &mut f64, v: f64| {
        *slot = slot.max(v);
        *total += v;
    };
    let mut total = 0.0;
    let radius = cons.friction_radius();
    for k in 0..traj.len() {
        let (x, u) = (&traj.states[k], &traj.controls[k]);
        record(&mut out.speed, &mut total, excess(x[state::V], cons.v_min, cons.v_max));
        record(&mut out.steering, &mut total, excess(x[state::DELTA], -cons.delta_max, cons.delta_max));
        record(&mut out.accel, &mut total, excess(u[control::ACCEL], cons.accel_min, cons.accel_max));
        record(&mut out.steer_rate, &mut total, excess(u[control::STEER_RATE], -cons.steer_rate_max, cons.steer_rate_max));
        let (lo, hi) = cons.corridor[k];
        record(&mut out.corridor, &mut total, excess(x[state::E_Y], lo, hi));
        let a_y = lateral_accel(x[state::V], x[state::DELTA], params, variant)?;
        record(&mut out.friction, &mut total, (hypot(u[control::ACCEL], a_y) - radius).max(0.0));
    }
    let last = traj.len() - 1;
    let pins = &cons.pins;
    for (k, sp, cp) in [(0, &pins.initial_state, &pins.initial_control), (last, &pins.final_state, &pins.final_control)]
    {
        for (i, v) in sp.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))) {
            record(&mut out.pins, &mut total, abs(traj.states[k][i] - v));
        }
        for (j, v) in cp.iter().enumerate().filter_map(|(j, v)| v.map(|v| (j, v))) {
            record(&mut out.pins, &mut total, abs(traj.controls[k][j] - v));
        }
    }
    for row in triggered.unwrap_or(&[]) {
        let value = row.expr.eval(&traj.states[row.node], &traj.controls[row.node]);
        record(&mut out.trigger, &mut total, value.max(0.0));
    }
    out.total = total;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn straight_reference(nodes: usize, v: f64) -> ReferenceTrajectory {
        let x = StateVector::new(0.0, 0.0, 0.0, v, 0.0, 0.0);
        ReferenceTrajectory::new(vec![x; nodes], vec![ControlVector::zeros(); nodes], vec![0.0; nodes], 0.0, 10.0)
            .unwrap()
    }

    #[test]
    fn sigma_star_definition() {
        assert_eq!(sigma_star(-0.3), 0.3);
        assert_eq!(sigma_star(0.0), 0.0);
        assert_eq!(sigma_star(0.5), 0.0);
        for g in [-1.0, -0.3, 0.0, 0.5] {
            let s = sigma_star(g);
            assert!(s >= 0.0 && g + s >= 0.0 && s * g <= 0.0);
        }
    }

    #[test]
    fn evasion_gate() {
        let trigger = TriggerSpec::terminal_speed_evasion(5, 1.0, 1.0, vec![3, 4]);
        let fast = straight_reference(5, 2.0);
        assert_eq!(trigger.gate.eval(&fast), -1.0);
        let rows = trigger_rows(&fast, &trigger).expect("gate active");
        assert_eq!(rows.iter().map(|r| r.node).collect::<Vec<_>>(), vec![3, 4]);
        // e_y = 0 violates e_y >= 1 by one meter.
        assert_eq!(rows[0].expr.eval(&fast.states[3], &fast.controls[3]), 1.0);

        let slow = straight_reference(5, 0.5);
        assert_eq!(trigger.gate.eval(&slow), 0.5);
        assert!(trigger_rows(&slow, &trigger).is_none());
    }

    #[test]
    fn friction_radius_and_straight_rows() {
        let cons = ConstraintSpec {
            v_min: 0.5,
            v_max: 30.0,
            delta_max: 0.4712,
            steer_rate_max: 1.25,
            accel_min: -6.0,
            accel_max: 6.0,
            mu: 0.6,
            gravity: GRAVITY,
            corridor: vec![(-3.0, 3.0); 4],
            pins: BoundaryPins::default(),
        };
        assert!((cons.friction_radius() - 5.886).abs() < 1e-12);
        let rows = friction_rows(&straight_reference(4, 15.0), &cons, &VehicleParams::default(), ModelVariant::RobotCar)
            .unwrap();
        for r in rows {
            assert_eq!(r.a_y_ref, 0.0);
            assert_eq!(r.lateral(15.0, 0.0), 0.0);
        }
    }

    #[test]
    fn friction_linearization_is_second_order() {
        let p = VehicleParams::default();
        for variant in [ModelVariant::RobotCar, ModelVariant::SideSlip] {
            let (v0, d0) = (14.0, 0.05);
            let (a, (dv, dd)) =
                (lateral_accel(v0, d0, &p, variant).unwrap(), lateral_accel_gradient(v0, d0, &p, variant).unwrap());
            let err = |h: f64| {
                let (v, d) = (v0 + 3.0 * h, d0 + 0.05 * h);
                (lateral_accel(v, d, &p, variant).unwrap() - (a + dv * (v - v0) + dd * (d - d0))).abs()
            };
            let (e1, e2) = (err(0.1), err(0.05));
            let ratio = e1 / e2;
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn soft_costs_jerk_term() {
        let mut r = straight_reference(4, 10.0);
        for (k, a) in [1.0, -1.0, 2.0, 2.0].iter().enumerate() {
            r.controls[k][control::ACCEL] = *a;
        }
        let c = SoftCosts::evaluate(&r, 9.0);
        assert!((c.jerk - (4.0f64 + 9.0).sqrt()).abs() < 1e-14);
        assert_eq!(c.terminal, 1.0);
        assert!((c.accel - 10.0f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn corridor_validation() {
        let mut cons = ConstraintSpec {
            v_min: 0.5,
            v_max: 30.0,
            delta_max: 0.4712,
            steer_rate_max: 1.0,
            accel_min: -6.0,
            accel_max: 6.0,
            mu: 0.6,
            gravity: GRAVITY,
            corridor: vec![(-3.0, 3.0); 3],
            pins: BoundaryPins::default(),
        };
        assert!(cons.validate(3).is_ok());
        cons.corridor[1] = (0.5, 0.5);
        assert_eq!(cons.validate(3), Err(AssembleError::EmptyCorridor { node: 1 }));
        assert!(matches!(cons.validate(4), Err(AssembleError::Dimension { .. })));
        cons.corridor[1] = (-1.0, 1.0);
        cons.mu = 1.5;
        assert_eq!(cons.validate(3), Err(AssembleError::InvalidBounds));
    }
}
