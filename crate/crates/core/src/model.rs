//! Kinematic single-track vehicle models in road-aligned error coordinates.
//!
//! Two variants are provided. [`ModelVariant::RobotCar`] tracks the rear-axle
//! center and ignores side slip; [`ModelVariant::SideSlip`] adds the kinematic
//! side-slip angle `beta = atan(l_r / (l_r + l_f) * tan(delta))`.
//!
//! The planner integrates along arc length `s` rather than time. With
//! `s_rate = V cos(e_psi + beta) / (1 - kappa e_y)` every time derivative is
//! divided by `s_rate`, and elapsed time is carried as a sixth state with
//! `t' = 1 / s_rate`.

use alloc::vec::Vec;

use nalgebra::{SMatrix, SVector};

use crate::math::{abs, atan, cos, sin, tan};

/// Number of arc-length states: `e_y, e_psi, psi, v, delta, t`.
pub const NX: usize = 6;
/// Number of controls: acceleration and steering rate.
pub const NU: usize = 2;

pub type StateVector = SVector<f64, NX>;
pub type ControlVector = SVector<f64, NU>;
pub type StateMatrix = SMatrix<f64, NX, NX>;
pub type InputMatrix = SMatrix<f64, NX, NU>;

/// Index of each arc-length state in a [`StateVector`].
pub mod state {
    pub const E_Y: usize = 0;
    pub const E_PSI: usize = 1;
    pub const PSI: usize = 2;
    pub const V: usize = 3;
    pub const DELTA: usize = 4;
    pub const T: usize = 5;
}

/// Index of each control in a [`ControlVector`].
pub mod control {
    pub const ACCEL: usize = 0;
    pub const STEER_RATE: usize = 1;
}

/// Smallest admissible `s_rate` in m/s. Keeps `1 / s_rate` bounded.
pub const S_RATE_MIN: f64 = 0.1;

/// Smallest admissible `|1 - kappa e_y|`.
pub const CURVATURE_DENOMINATOR_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid vehicle parameters: l_r = {l_r}, l_f = {l_f}")]
    InvalidParams { l_r: f64, l_f: f64 },
    #[error("steering angle {0} rad outside (-pi/2, pi/2)")]
    SteeringDomain(f64),
    #[error("arc-length singularity: 1 - kappa*e_y = {denominator}, s_rate = {s_rate}")]
    Singular { denominator: f64, s_rate: f64 },
    #[error("invalid curvature profile: {0}")]
    Profile(&'static str),
    #[error("arc position {s} m outside curvature profile [{first}, {last}]")]
    OutOfRange { s: f64, first: f64, last: f64 },
}

/// Position of the center of gravity relative to both axles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    l_r: f64,
    l_f: f64,
}

impl VehicleParams {
    pub fn new(l_r: f64, l_f: f64) -> Result<Self, ModelError> {
        if !(l_r > 0.0 && l_f > 0.0 && l_r.is_finite() && l_f.is_finite()) {
            return Err(ModelError::InvalidParams { l_r, l_f });
        }
        Ok(Self { l_r, l_f })
    }

    /// Distance from the center of gravity to the rear axle.
    pub fn l_r(&self) -> f64 {
        self.l_r
    }

    /// Distance from the center of gravity to the front axle.
    pub fn l_f(&self) -> f64 {
        self.l_f
    }

    pub fn wheelbase(&self) -> f64 {
        self.l_r + self.l_f
    }
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { l_r: 1.4, l_f: 1.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ModelVariant {
    /// Rear-axle tracking model without side slip.
    #[default]
    RobotCar,
    /// Single-track model with the kinematic side-slip angle.
    SideSlip,
}

/// Vehicle state in road-aligned error coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArcState {
    /// Lateral error, positive to the left of the path, m.
    pub e_y: f64,
    /// Heading error relative to the path tangent, rad.
    pub e_psi: f64,
    /// Global heading, rad.
    pub psi: f64,
    /// Speed, m/s.
    pub v: f64,
    /// Front steering angle, rad.
    pub delta: f64,
    /// Elapsed time, s.
    pub t: f64,
}

impl ArcState {
    pub fn to_vector(&self) -> StateVector {
        StateVector::new(self.e_y, self.e_psi, self.psi, self.v, self.delta, self.t)
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            e_y: x[state::E_Y],
            e_psi: x[state::E_PSI],
            psi: x[state::PSI],
            v: x[state::V],
            delta: x[state::DELTA],
            t: x[state::T],
        }
    }
}

/// Acceleration `u0 = dV/dt` and steering rate `u1 = d(delta)/dt`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Control {
    pub accel: f64,
    pub steer_rate: f64,
}

impl Control {
    pub fn new(accel: f64, steer_rate: f64) -> Self {
        Self { accel, steer_rate }
    }

    pub fn to_vector(&self) -> ControlVector {
        ControlVector::new(self.accel, self.steer_rate)
    }

    pub fn from_vector(u: &ControlVector) -> Self {
        Self::new(u[control::ACCEL], u[control::STEER_RATE])
    }
}

/// Global-frame state used by the time-domain model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimeState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub delta: f64,
}

/// Road curvature as a function of arc length, piecewise linear between
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureProfile {
    samples: Vec<(f64, f64)>,
}

impl CurvatureProfile {
    /// Samples are `(s, kappa)` pairs with strictly increasing `s`.
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        if samples.len() < 2 {
            return Err(ModelError::Profile("at least two samples are required"));
        }
        if samples.iter().any(|(s, k)| !s.is_finite() || !k.is_finite()) {
            return Err(ModelError::Profile("samples must be finite"));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ModelError::Profile("arc positions must be strictly increasing"));
        }
        Ok(Self { samples })
    }

    pub fn constant(kappa: f64, s_first: f64, s_last: f64) -> Result<Self, ModelError> {
        Self::new(alloc::vec![(s_first, kappa), (s_last, kappa)])
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn s_first(&self) -> f64 {
        self.samples[0].0
    }

    pub fn s_last(&self) -> f64 {
        self.samples[self.samples.len() - 1].0
    }

    fn check_range(&self, s: f64) -> Result<(), ModelError> {
        let tol = 1e-9 * (1.0 + abs(self.s_last()));
        if s < self.s_first() - tol || s > self.s_last() + tol || !s.is_finite() {
            return Err(ModelError::OutOfRange { s, first: self.s_first(), last: self.s_last() });
        }
        Ok(())
    }

    /// Index of the segment containing `s` (clamped to the valid range).
    fn segment(&self, s: f64) -> usize {
        let upper = self.samples.partition_point(|&(si, _)| si <= s);
        upper.clamp(1, self.samples.len() - 1) - 1
    }

    fn eval_unchecked(&self, s: f64) -> f64 {
        let i = self.segment(s);
        let (s0, k0) = self.samples[i];
        let (s1, k1) = self.samples[i + 1];
        let lambda = ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
        k0 + lambda * (k1 - k0)
    }

    pub fn eval(&self, s: f64) -> Result<f64, ModelError> {
        self.check_range(s)?;
        Ok(self.eval_unchecked(s))
    }

    /// Exact integral of the piecewise-linear curvature over `[a, b]`, i.e.
    /// the heading change of a vehicle that follows the path.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64, ModelError> {
        self.check_range(a)?;
        self.check_range(b)?;
        if b < a {
            return self.integral(b, a).map(|v| -v);
        }
        let last = self.samples.len() - 2;
        let total = self
            .samples
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                // The outer segments extend to cover the range tolerance.
                let lo = if i == 0 { a } else { a.max(w[0].0) };
                let hi = if i == last { b } else { b.min(w[1].0) };
                if hi <= lo {
                    0.0
                } else {
                    0.5 * (self.eval_unchecked(lo) + self.eval_unchecked(hi)) * (hi - lo)
                }
            })
            .sum();
        Ok(total)
    }
}

/// Kinematic side-slip angle for a front steering angle.
pub fn side_slip(delta: f64, params: &VehicleParams) -> Result<f64, ModelError> {
    if !(abs(delta) < core::f64::consts::FRAC_PI_2) {
        return Err(ModelError::SteeringDomain(delta));
    }
    Ok(atan(params.l_r / params.wheelbase() * tan(delta)))
}

/// Steering angle whose yaw rate matches the path heading rate `V kappa`.
pub fn steady_steering_angle(kappa: f64, params: &VehicleParams, variant: ModelVariant) -> f64 {
    match variant {
        ModelVariant::RobotCar => atan(params.l_r * kappa),
        ModelVariant::SideSlip => atan(params.wheelbase() * kappa),
    }
}

/// Steering-dependent terms shared by the dynamics and their Jacobians.
#[derive(Debug, Clone, Copy)]
struct SteeringTerms {
    /// Side slip and its derivative with respect to `delta`.
    beta: f64,
    dbeta: f64,
    /// Yaw factor `g(delta)` with `psi_dot = V g / l_r`, and `g'(delta)`.
    yaw: f64,
    dyaw: f64,
}

impl SteeringTerms {
    fn new(delta: f64, params: &VehicleParams, variant: ModelVariant) -> Result<Self, ModelError> {
        if !(abs(delta) < core::f64::consts::FRAC_PI_2) {
            return Err(ModelError::SteeringDomain(delta));
        }
        let tan_d = tan(delta);
        let sec2 = 1.0 + tan_d * tan_d;
        Ok(match variant {
            ModelVariant::RobotCar => Self { beta: 0.0, dbeta: 0.0, yaw: tan_d, dyaw: sec2 },
            ModelVariant::SideSlip => {
                let c = params.l_r / params.wheelbase();
                let beta = atan(c * tan_d);
                let dbeta = c * sec2 / (1.0 + c * c * tan_d * tan_d);
                Self { beta, dbeta, yaw: sin(beta), dyaw: cos(beta) * dbeta }
            }
        })
    }
}

/// Treatment of states below the progress-rate guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpeedGuard {
    /// Reject them with [`ModelError::Singular`].
    #[default]
    Strict,
    /// Hold `ds/dt` at [`S_RATE_MIN`]. The dynamics stay finite and
    /// continuous below the guard, so propagation never stops part way
    /// through an interval.
    Floor,
}

/// `(1 - kappa e_y, ds/dt)`, and whether the floor replaced the rate.
fn s_rate_parts(
    e_y: f64,
    e_psi: f64,
    v: f64,
    beta: f64,
    kappa: f64,
    guard: SpeedGuard,
) -> Result<(f64, f64, bool), ModelError> {
    let denominator = 1.0 - kappa * e_y;
    let s_rate = v * cos(e_psi + beta) / denominator;
    if !(abs(denominator) >= CURVATURE_DENOMINATOR_MIN && s_rate.is_finite()) {
        return Err(ModelError::Singular { denominator, s_rate });
    }
    match (s_rate >= S_RATE_MIN, guard) {
        (true, _) => Ok((denominator, s_rate, false)),
        (false, SpeedGuard::Floor) => Ok((denominator, S_RATE_MIN, true)),
        (false, SpeedGuard::Strict) => Err(ModelError::Singular { denominator, s_rate }),
    }
}

/// Progress rate along the path, `ds/dt`.
pub fn s_rate(
    state: &ArcState,
    kappa: f64,
    params: &VehicleParams,
    variant: ModelVariant,
) -> Result<f64, ModelError> {
    let terms = SteeringTerms::new(state.delta, params, variant)?;
    s_rate_parts(state.e_y, state.e_psi, state.v, terms.beta, kappa, SpeedGuard::Strict).map(|(_, rate, _)| rate)
}

/// Time derivative of the global-frame model.
pub fn time_dynamics(
    state: &TimeState,
    control: &Control,
    params: &VehicleParams,
    variant: ModelVariant,
) -> Result<TimeState, ModelError> {
    let terms = SteeringTerms::new(state.delta, params, variant)?;
    let heading = state.psi + terms.beta;
    Ok(TimeState {
        x: state.v * cos(heading),
        y: state.v * sin(heading),
        psi: state.v / params.l_r * terms.yaw,
        v: control.accel,
        delta: control.steer_rate,
    })
}

/// Lateral acceleration `a_y = V psi_dot` of the selected model.
pub fn lateral_accel(v: f64, delta: f64, params: &VehicleParams, variant: ModelVariant) -> Result<f64, ModelError> {
    let terms = SteeringTerms::new(delta, params, variant)?;
    Ok(v * v * terms.yaw / params.l_r)
}

/// Partial derivatives of [`lateral_accel`] with respect to `(v, delta)`.
pub fn lateral_accel_gradient(
    v: f64,
    delta: f64,
    params: &VehicleParams,
    variant: ModelVariant,
) -> Result<(f64, f64), ModelError> {
    let terms = SteeringTerms::new(delta, params, variant)?;
    Ok((2.0 * v * terms.yaw / params.l_r, v * v * terms.dyaw / params.l_r))
}

/// Arc-length derivative of the state, per meter of path.
pub fn arc_dynamics(
    state: &ArcState,
    control: &Control,
    kappa: f64,
    params: &VehicleParams,
    variant: ModelVariant,
) -> Result<ArcState, ModelError> {
    arc_dynamics_guarded(state, control, kappa, params, variant, SpeedGuard::Strict)
}

/// [`arc_dynamics`] with a selectable treatment of the progress-rate guard.
pub fn arc_dynamics_guarded(
    state: &ArcState,
    control: &Control,
    kappa: f64,
    params: &VehicleParams,
    variant: ModelVariant,
    guard: SpeedGuard,
) -> Result<ArcState, ModelError> {
    let terms = SteeringTerms::new(state.delta, params, variant)?;
    let (q, s_rate, _) = s_rate_parts(state.e_y, state.e_psi, state.v, terms.beta, kappa, guard)?;
    let theta = state.e_psi + terms.beta;
    let inv_rate = 1.0 / s_rate;
    let psi_prime = q * terms.yaw / (params.l_r * cos(theta));
    Ok(ArcState {
        e_y: q * tan(theta),
        e_psi: psi_prime - kappa,
        psi: psi_prime,
        v: control.accel * inv_rate,
        delta: control.steer_rate * inv_rate,
        t: inv_rate,
    })
}

/// Exact Jacobians of [`arc_dynamics`] with respect to state and control.
pub fn dynamics_jacobians(
    state: &ArcState,
    control: &Control,
    kappa: f64,
    params: &VehicleParams,
    variant: ModelVariant,
) -> Result<(StateMatrix, InputMatrix), ModelError> {
    dynamics_jacobians_guarded(state, control, kappa, params, variant, SpeedGuard::Strict)
}

/// Jacobians of [`arc_dynamics_guarded`]. Below the guard the floored rate
/// is constant, so its partials vanish.
pub fn dynamics_jacobians_guarded(
    state: &ArcState,
    control: &Control,
    kappa: f64,
    params: &VehicleParams,
    variant: ModelVariant,
    guard: SpeedGuard,
) -> Result<(StateMatrix, InputMatrix), ModelError> {
    use state::{DELTA, E_PSI, E_Y, PSI, T, V};

    let terms = SteeringTerms::new(state.delta, params, variant)?;
    let (q, s_rate, floored) = s_rate_parts(state.e_y, state.e_psi, state.v, terms.beta, kappa, guard)?;
    let theta = state.e_psi + terms.beta;
    let (cos_t, tan_t) = (cos(theta), tan(theta));
    let sec2_t = 1.0 + tan_t * tan_t;
    let inv_rate = 1.0 / s_rate;

    // Partials of 1/s_rate.
    let (r_ey, r_epsi, r_v, r_delta) = if floored {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        (-kappa / (state.v * cos_t), inv_rate * tan_t, -inv_rate / state.v, inv_rate * tan_t * terms.dbeta)
    };

    let psi_prime = q * terms.yaw / (params.l_r * cos_t);
    let psi_ey = -kappa * terms.yaw / (params.l_r * cos_t);
    let psi_epsi = psi_prime * tan_t;
    let psi_delta = q / (params.l_r * cos_t) * (terms.dyaw + terms.yaw * tan_t * terms.dbeta);

    let mut a = StateMatrix::zeros();
    a[(E_Y, E_Y)] = -kappa * tan_t;
    a[(E_Y, E_PSI)] = q * sec2_t;
    a[(E_Y, DELTA)] = q * sec2_t * terms.dbeta;

    for row in [E_PSI, PSI] {
        a[(row, E_Y)] = psi_ey;
        a[(row, E_PSI)] = psi_epsi;
        a[(row, DELTA)] = psi_delta;
    }

    for (row, gain) in [(V, control.accel), (DELTA, control.steer_rate), (T, 1.0)] {
        a[(row, E_Y)] = gain * r_ey;
        a[(row, E_PSI)] = gain * r_epsi;
        a[(row, V)] = gain * r_v;
        a[(row, DELTA)] = gain * r_delta;
    }

    let mut b = InputMatrix::zeros();
    b[(V, control::ACCEL)] = inv_rate;
    b[(DELTA, control::STEER_RATE)] = inv_rate;
    Ok((a, b))
}
