//! A fully resolved planning problem: horizon, road, vehicle, bounds, cost
//! weights and the optional state trigger.

use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{steady_steering_angle, CurvatureProfile, ModelError, ModelVariant, VehicleParams};
use crate::subproblem::{AssembleError, ConstraintSpec, CostWeights, TriggerSpec};
use crate::transcription::node_position;

/// Smallest node count accepted for a scenario.
pub const MIN_NODES: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("need at least {MIN_NODES} nodes, got {0}")]
    TooFewNodes(usize),
    #[error("speeds must satisfy v0 > v_final > 0 (v0 = {v0}, v_final = {v_final})")]
    Speeds { v0: f64, v_final: f64 },
    #[error("arc-length span must be positive and finite, got {0}")]
    Span(f64),
    #[error("curvature profile covers [{first}, {last}] but the horizon is [{start}, {end}]")]
    CurvatureCoverage { first: f64, last: f64, start: f64, end: f64 },
    #[error("substeps must be positive")]
    Substeps,
    #[error("pinned {what} value {value} lies outside its bounds")]
    PinOutOfBounds { what: &'static str, value: f64 },
    #[error(transparent)]
    Constraints(#[from] AssembleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Arc position of the first node, m.
    pub s_start: f64,
    /// Planning horizon length, m.
    pub s_span: f64,
    pub nodes: usize,
    pub curvature: CurvatureProfile,
    pub v0: f64,
    pub v_final: f64,
    pub params: VehicleParams,
    pub variant: ModelVariant,
    pub constraints: ConstraintSpec,
    pub weights: CostWeights,
    pub trigger: Option<TriggerSpec>,
    /// RK4 sub-steps per discretization interval.
    pub substeps: usize,
}

impl Scenario {
    pub fn s_end(&self) -> f64 {
        self.s_start + self.s_span
    }

    /// Physical arc position of node `k`, m.
    pub fn arc_position(&self, k: usize) -> f64 {
        self.s_start + node_position(k, self.nodes) * self.s_span
    }

    /// Road curvature at every node.
    pub fn node_curvature(&self) -> Result<Vec<f64>, ModelError> {
        (0..self.nodes).map(|k| self.curvature.eval(self.arc_position(k))).collect()
    }

    /// Steering angle that holds the vehicle on the path at node curvature
    /// `kappa` with zero tracking error.
    pub fn steady_steering(&self, kappa: f64) -> f64 {
        steady_steering_angle(kappa, &self.params, self.variant)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.nodes < MIN_NODES {
            return Err(ScenarioError::TooFewNodes(self.nodes));
        }
        if !(self.v0 > self.v_final && self.v_final > 0.0) || !self.v0.is_finite() {
            return Err(ScenarioError::Speeds { v0: self.v0, v_final: self.v_final });
        }
        if !(self.s_span > 0.0) || !self.s_span.is_finite() || !self.s_start.is_finite() {
            return Err(ScenarioError::Span(self.s_span));
        }
        let (first, last) = (self.curvature.s_first(), self.curvature.s_last());
        if first > self.s_start || last < self.s_end() {
            return Err(ScenarioError::CurvatureCoverage { first, last, start: self.s_start, end: self.s_end() });
        }
        if self.substeps == 0 {
            return Err(ScenarioError::Substeps);
        }
        self.constraints.validate(self.nodes)?;
        if let Some(trigger) = &self.trigger {
            trigger.validate(self.nodes)?;
        }
        if !self.weights.is_valid() {
            return Err(AssembleError::InvalidWeights.into());
        }
        self.check_pins()
    }

    fn check_pins(&self) -> Result<(), ScenarioError> {
        use crate::model::{control, state};
        let c = &self.constraints;
        let pins = &c.pins;
        let last = self.nodes - 1;
        let check = |what: &'static str, value: Option<f64>, lo: f64, hi: f64| match value {
            Some(v) if !(lo..=hi).contains(&v) => Err(ScenarioError::PinOutOfBounds { what, value: v }),
            _ => Ok(()),
        };
        for (node, states, controls) in
            [(0, &pins.initial_state, &pins.initial_control), (last, &pins.final_state, &pins.final_control)]
        {
            let (lo, hi) = c.corridor[node];
            check("e_y", states[state::E_Y], lo, hi)?;
            check("speed", states[state::V], c.v_min, c.v_max)?;
            check("steering", states[state::DELTA], -c.delta_max, c.delta_max)?;
            check("acceleration", controls[control::ACCEL], c.accel_min, c.accel_max)?;
            check("steering rate", controls[control::STEER_RATE], -c.steer_rate_max, c.steer_rate_max)?;
        }
        Ok(())
    }
}
