//! Linearization, FOH discretization and scaling of the arc-length vehicle
//! dynamics about a reference trajectory.
//!
//! The real arc length `[s_start, s_final]` is rescaled onto `[0, 1]` with a
//! uniform node grid `s_k = k / (K - 1)`, so derivatives with respect to the
//! normalized coordinate are the per-meter derivatives times the span.

pub mod foh;
pub mod scaling;

use alloc::vec::Vec;

use crate::model::{
    arc_dynamics, arc_dynamics_guarded, dynamics_jacobians, dynamics_jacobians_guarded, s_rate, ArcState, Control, ControlVector, InputMatrix, ModelError,
    ModelVariant, SpeedGuard, StateMatrix, StateVector, VehicleParams, NU, NX,
};

pub use foh::{
    discretize, foh_weights, node_position, propagate, shoot, DiscreteInterval, DiscreteLtv, DiscretizeError,
    Dynamics, Linearization, LinearizationPath,
};
pub use scaling::{AffineScaling, ScalingError, ScalingMap};

/// Default number of RK4 sub-steps per discretization interval.
pub const DEFAULT_SUBSTEPS: usize = 8;

/// Discrete model of the vehicle.
pub type VehicleLtv = DiscreteLtv<NX, NU>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TranscriptionError {
    #[error("reference needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("reference has {states} states, {controls} controls and {kappa} curvature values")]
    ShapeMismatch { states: usize, controls: usize, kappa: usize },
    #[error("invalid arc-length span [{0}, {1}]")]
    InvalidSpan(f64, f64),
    #[error("reference node {node} is singular: {source}")]
    SingularReference { node: usize, source: ModelError },
    #[error(transparent)]
    Discretize(#[from] DiscretizeError<ModelError>),
}

/// States, controls and curvature at the `K` nodes of the normalized grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub states: Vec<StateVector>,
    pub controls: Vec<ControlVector>,
    pub kappa: Vec<f64>,
    s_start: f64,
    s_final: f64,
}

impl ReferenceTrajectory {
    pub fn new(
        states: Vec<StateVector>,
        controls: Vec<ControlVector>,
        kappa: Vec<f64>,
        s_start: f64,
        s_final: f64,
    ) -> Result<Self, TranscriptionError> {
        if states.len() != controls.len() || states.len() != kappa.len() {
            return Err(TranscriptionError::ShapeMismatch {
                states: states.len(),
                controls: controls.len(),
                kappa: kappa.len(),
            });
        }
        if states.len() < 2 {
            return Err(TranscriptionError::TooFewNodes(states.len()));
        }
        if !(s_final > s_start) || !s_start.is_finite() || !s_final.is_finite() {
            return Err(TranscriptionError::InvalidSpan(s_start, s_final));
        }
        Ok(Self { states, controls, kappa, s_start, s_final })
    }

    /// Same nodes and curvature, new states and controls.
    pub fn with_nodes(&self, states: Vec<StateVector>, controls: Vec<ControlVector>) -> Result<Self, TranscriptionError> {
        Self::new(states, controls, self.kappa.clone(), self.s_start, self.s_final)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn s_span(&self) -> (f64, f64) {
        (self.s_start, self.s_final)
    }

    /// Physical length of the planning horizon, m.
    pub fn length(&self) -> f64 {
        self.s_final - self.s_start
    }

    /// Normalized position of node `k`.
    pub fn sigma(&self, k: usize) -> f64 {
        node_position(k, self.len())
    }

    /// Physical arc position of node `k`, m.
    pub fn arc_position(&self, k: usize) -> f64 {
        self.s_start + self.sigma(k) * self.length()
    }

    pub fn state(&self, k: usize) -> ArcState {
        ArcState::from_vector(&self.states[k])
    }

    pub fn control(&self, k: usize) -> Control {
        Control::from_vector(&self.controls[k])
    }

    /// Check every node against the `s_rate` guard.
    pub fn validate_nodes(&self, params: &VehicleParams, variant: ModelVariant) -> Result<(), TranscriptionError> {
        for k in 0..self.len() {
            s_rate(&self.state(k), self.kappa[k], params, variant)
                .map_err(|source| TranscriptionError::SingularReference { node: k, source })?;
        }
        Ok(())
    }
}

/// The arc-length vehicle dynamics on the normalized grid, with curvature
/// interpolated between node values by first-order hold.
#[derive(Debug, Clone, Copy)]
pub struct ArcSystem<'a> {
    pub params: VehicleParams,
    pub variant: ModelVariant,
    pub kappa: &'a [f64],
    /// Physical length of the normalized interval `[0, 1]`, m.
    pub length: f64,
    pub guard: SpeedGuard,
}

impl<'a> ArcSystem<'a> {
    /// The system with the progress rate floored below the guard, as used for
    /// discretization and shooting.
    pub fn new(reference: &'a ReferenceTrajectory, params: VehicleParams, variant: ModelVariant) -> Self {
        Self { params, variant, kappa: &reference.kappa, length: reference.length(), guard: SpeedGuard::Floor }
    }

    pub fn with_guard(self, guard: SpeedGuard) -> Self {
        Self { guard, ..self }
    }

    /// Curvature at normalized position `s`.
    pub fn kappa_at(&self, s: f64) -> f64 {
        let last = self.kappa.len() - 1;
        let k = ((s * last as f64) as usize).min(last - 1);
        let (minus, plus) = foh_weights(s, node_position(k, self.kappa.len()), node_position(k + 1, self.kappa.len()));
        minus * self.kappa[k] + plus * self.kappa[k + 1]
    }
}

impl Dynamics<NX, NU> for ArcSystem<'_> {
    type Error = ModelError;

    fn linearize(&self, x: &StateVector, u: &ControlVector, s: f64) -> Result<Linearization<NX, NU>, ModelError> {
        let (state, control, kappa) = (ArcState::from_vector(x), Control::from_vector(u), self.kappa_at(s));
        let f = arc_dynamics_guarded(&state, &control, kappa, &self.params, self.variant, self.guard)?.to_vector();
        let (a, b) = dynamics_jacobians_guarded(&state, &control, kappa, &self.params, self.variant, self.guard)?;
        Ok(Linearization { f: f * self.length, a: a * self.length, b: b * self.length })
    }

    fn derivative(&self, x: &StateVector, u: &ControlVector, s: f64) -> Result<StateVector, ModelError> {
        let kappa = self.kappa_at(s);
        let f = arc_dynamics_guarded(
            &ArcState::from_vector(x),
            &Control::from_vector(u),
            kappa,
            &self.params,
            self.variant,
            self.guard,
        )?;
        Ok(f.to_vector() * self.length)
    }
}

/// Continuous linearization at one node, per meter of arc length:
/// `x' ~ A x + B u + F + w` with `w = -A x_ref - B u_ref`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeLinearization {
    pub a: StateMatrix,
    pub b: InputMatrix,
    pub f: StateVector,
    pub w: StateVector,
}

impl NodeLinearization {
    /// Affine model evaluated at `(x, u)`.
    pub fn eval(&self, x: &StateVector, u: &ControlVector) -> StateVector {
        self.a * x + self.b * u + self.f + self.w
    }
}

/// Linearize the dynamics at every reference node.
pub fn linearize_at(
    reference: &ReferenceTrajectory,
    params: &VehicleParams,
    variant: ModelVariant,
) -> Result<Vec<NodeLinearization>, TranscriptionError> {
    (0..reference.len())
        .map(|k| {
            let (state, control, kappa) = (reference.state(k), reference.control(k), reference.kappa[k]);
            let singular = |source| TranscriptionError::SingularReference { node: k, source };
            let f = arc_dynamics(&state, &control, kappa, params, variant).map_err(singular)?.to_vector();
            let (a, b) = dynamics_jacobians(&state, &control, kappa, params, variant).map_err(singular)?;
            let w = -(a * reference.states[k]) - b * reference.controls[k];
            Ok(NodeLinearization { a, b, f, w })
        })
        .collect()
}

/// FOH multiple-shooting discretization of the vehicle about `reference`.
pub fn foh_discretize(
    reference: &ReferenceTrajectory,
    params: &VehicleParams,
    variant: ModelVariant,
    substeps: usize,
) -> Result<VehicleLtv, TranscriptionError> {
    reference.validate_nodes(params, variant)?;
    let system = ArcSystem::new(reference, *params, variant);
    Ok(discretize(&system, &reference.states, &reference.controls, substeps)?)
}

/// Nonlinear RK4 propagation of every interval from its reference node,
/// with the progress rate floored below the guard. The defect of interval `k`
/// is `x_k+1 - shots[k]`. `None` marks intervals whose propagation failed.
pub fn shoot_all(
    reference: &ReferenceTrajectory,
    params: &VehicleParams,
    variant: ModelVariant,
    substeps: usize,
) -> Result<Vec<Option<StateVector>>, TranscriptionError> {
    shoot_all_guarded(reference, params, variant, substeps, SpeedGuard::Floor)
}

/// [`shoot_all`] with a selectable guard. With [`SpeedGuard::Strict`] an
/// interval that drops below the guard is `None`.
pub fn shoot_all_guarded(
    reference: &ReferenceTrajectory,
    params: &VehicleParams,
    variant: ModelVariant,
    substeps: usize,
    guard: SpeedGuard,
) -> Result<Vec<Option<StateVector>>, TranscriptionError> {
    reference.validate_nodes(params, variant)?;
    let system = ArcSystem::new(reference, *params, variant).with_guard(guard);
    let nodes = reference.len();
    (0..nodes - 1)
        .map(|k| {
            match shoot(
                &system,
                k,
                nodes,
                &reference.states[k],
                &reference.controls[k],
                &reference.controls[k + 1],
                substeps,
            ) {
                Ok(x) => Ok(Some(x)),
                Err(DiscretizeError::Dynamics { .. } | DiscretizeError::Blowup { .. }) => Ok(None),
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}
