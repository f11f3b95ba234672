//! Independent check of the FOH discretization: the discrete model propagated
//! with reference controls against a fine-step RK4 integration of the
//! continuous linearized system.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scvx_drive_core::model::{state, ArcState, Control, ControlVector, StateVector};
use scvx_drive_core::scenario::Scenario;
use scvx_drive_core::scvx::{default_scaling, initial_guess, ScvxError};
use scvx_drive_core::transcription::{
    foh_discretize, foh_weights, node_position, propagate, ArcSystem, Dynamics, LinearizationPath,
    ReferenceTrajectory, ScalingMap, TranscriptionError,
};

/// RK4 steps per interval of the reference integration.
pub const FINE_STEPS: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Scvx(#[from] ScvxError),
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error("interval {0} of the reference cannot be propagated")]
    Unpropagatable(usize),
    #[error("dynamics failed in interval {interval}: {message}")]
    Dynamics { interval: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub substeps: usize,
    /// Largest scaled node error with `substeps`.
    pub max_error: f64,
    /// Largest scaled node error with `substeps / 2`.
    pub max_error_half: f64,
}

impl OracleReport {
    /// Error growth when the substep count is halved.
    pub fn order_ratio(&self) -> f64 {
        self.max_error_half / self.max_error
    }
}

/// A random reference well inside the bounds of `scenario`, following its
/// road heading.
pub fn random_reference(scenario: &Scenario, seed: u64) -> Result<ReferenceTrajectory, OracleError> {
    let guess = initial_guess(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v_hi = scenario.v0.max(6.0);
    let states = guess
        .states
        .iter()
        .map(|x| {
            ArcState {
                e_y: rng.gen_range(-0.5..0.5),
                e_psi: rng.gen_range(-0.05..0.05),
                psi: x[state::PSI] + rng.gen_range(-0.05..0.05),
                v: rng.gen_range(5.0..v_hi),
                delta: rng.gen_range(-0.1..0.1),
                t: x[state::T],
            }
            .to_vector()
        })
        .collect();
    let controls =
        (0..guess.len()).map(|_| Control::new(rng.gen_range(-4.0..2.0), rng.gen_range(-0.3..0.3)).to_vector()).collect();
    Ok(guess.with_nodes(states, controls)?)
}

fn rk4<const N: usize, E>(
    y: &nalgebra::SVector<f64, N>,
    s: f64,
    h: f64,
    f: impl Fn(&nalgebra::SVector<f64, N>, f64) -> Result<nalgebra::SVector<f64, N>, E>,
) -> Result<nalgebra::SVector<f64, N>, E> {
    let k1 = f(y, s)?;
    let k2 = f(&(y + k1 * (h / 2.0)), s + h / 2.0)?;
    let k3 = f(&(y + k2 * (h / 2.0)), s + h / 2.0)?;
    let k4 = f(&(y + k3 * h), s + h)?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Integrate the continuous linearized system over every interval with
/// [`FINE_STEPS`] RK4 steps, starting each interval from the previous
/// result. The linearization runs along the nonlinear path from each
/// reference node, as in the discretization.
pub fn integrate_continuous(
    scenario: &Scenario,
    reference: &ReferenceTrajectory,
    fine_steps: usize,
) -> Result<Vec<StateVector>, OracleError> {
    let system = ArcSystem::new(reference, scenario.params, scenario.variant);
    let nodes = reference.len();
    let mut out = vec![reference.states[0]];
    for k in 0..nodes - 1 {
        let (s0, s1) = (node_position(k, nodes), node_position(k + 1, nodes));
        let (u0, u1) = (reference.controls[k], reference.controls[k + 1]);
        let control = |s: f64| -> ControlVector {
            let (minus, plus) = foh_weights(s, s0, s1);
            u0 * minus + u1 * plus
        };
        // Joint state: nonlinear path then linearized state.
        let mut joint = nalgebra::SVector::<f64, 12>::zeros();
        joint.fixed_rows_mut::<6>(0).copy_from(&reference.states[k]);
        joint.fixed_rows_mut::<6>(6).copy_from(&out[k]);
        let rhs = |z: &nalgebra::SVector<f64, 12>, s: f64| {
            let path: StateVector = z.fixed_rows::<6>(0).into();
            let y: StateVector = z.fixed_rows::<6>(6).into();
            let lin = system.linearize(&path, &control(s), s)?;
            let mut dz = nalgebra::SVector::<f64, 12>::zeros();
            dz.fixed_rows_mut::<6>(0).copy_from(&lin.f);
            dz.fixed_rows_mut::<6>(6).copy_from(&(lin.a * (y - path) + lin.f));
            Ok::<_, scvx_drive_core::model::ModelError>(dz)
        };
        let h = (s1 - s0) / fine_steps as f64;
        for step in 0..fine_steps {
            joint = rk4(&joint, s0 + step as f64 * h, h, rhs)
                .map_err(|e| OracleError::Dynamics { interval: k, message: e.to_string() })?;
        }
        out.push(joint.fixed_rows::<6>(6).into());
    }
    Ok(out)
}

/// Largest scaled difference between the discrete propagation with
/// `substeps` and the fine continuous integration.
pub fn discretization_error(
    scenario: &Scenario,
    reference: &ReferenceTrajectory,
    scaling: &ScalingMap,
    substeps: usize,
    continuous: &[StateVector],
) -> Result<f64, OracleError> {
    let ltv = foh_discretize(reference, &scenario.params, scenario.variant, substeps)?;
    if let Some(k) = ltv.intervals.iter().position(|iv| iv.path != LinearizationPath::Shooting) {
        return Err(OracleError::Unpropagatable(k));
    }
    let discrete = propagate(&ltv, &reference.states[0], &reference.controls)
        .map_err(|e| OracleError::Dynamics { interval: 0, message: e.to_string() })?;
    let scale = scaling.state.scale();
    Ok(discrete
        .iter()
        .zip(continuous)
        .map(|(d, c)| (d - c).component_div(scale).amax())
        .fold(0.0, f64::max))
}

/// Run the oracle on a random reference for `scenario`.
pub fn check_discretization(scenario: &Scenario, seed: u64, substeps: usize) -> Result<OracleReport, OracleError> {
    let reference = random_reference(scenario, seed)?;
    let scaling = default_scaling(scenario, &initial_guess(scenario)?)?;
    let continuous = integrate_continuous(scenario, &reference, FINE_STEPS)?;
    Ok(OracleReport {
        substeps,
        max_error: discretization_error(scenario, &reference, &scaling, substeps, &continuous)?,
        max_error_half: discretization_error(scenario, &reference, &scaling, (substeps / 2).max(1), &continuous)?,
    })
}
