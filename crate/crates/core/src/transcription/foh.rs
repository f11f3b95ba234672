//! First-order-hold multiple-shooting discretization of a linearized system.
//!
//! On each interval `[s_k, s_k+1]` the controls (and any scheduled parameter)
//! are interpolated linearly,
//! `u(s) = lambda_minus(s) u_k + lambda_plus(s) u_k+1`, and the system is
//! linearized along the nonlinear trajectory that starts at the reference node
//! `x_k`. The discrete model
//!
//! ```text
//! x_k+1 = A_k x_k + B_minus_k u_k + B_plus_k u_k+1 + F_k + w_k
//! ```
//!
//! is built from the state-transition matrix `A_k = Phi(s_k+1, s_k)` and the
//! weighted convolution integrals `A_k * int Phi^-1(xi) M(xi) dxi`. Instead of
//! inverting `Phi`, the integrals are propagated in forward form
//! (`S' = A S + M`, `S(s_k) = 0`), which has the same solution. The nonlinear
//! state, `Phi` and the four integrals are advanced together by one
//! fixed-step RK4 pass, so the discrete model reproduces the RK4 shooting map
//! exactly at the reference and its matrices are the exact derivatives of
//! that map.
//!
//! If the nonlinear trajectory leaves the domain of the dynamics inside an
//! interval (e.g. the speed collapses on a poor initial guess), that interval
//! is linearized along the straight line between its two reference nodes
//! instead and flagged as [`LinearizationPath::Interpolated`].

use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Mul};

use nalgebra::{SMatrix, SVector};

/// Entries larger than this abort the integration.
pub const BLOWUP_LIMIT: f64 = 1e12;

/// Value and Jacobians of `dx/ds` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization<const NX: usize, const NU: usize> {
    pub f: SVector<f64, NX>,
    pub a: SMatrix<f64, NX, NX>,
    pub b: SMatrix<f64, NX, NU>,
}

impl<const NX: usize, const NU: usize> Linearization<NX, NU> {
    /// `w = -A x - B u`, the offset that makes the affine model exact at the
    /// linearization point.
    pub fn offset(&self, x: &SVector<f64, NX>, u: &SVector<f64, NU>) -> SVector<f64, NX> {
        -(self.a * x) - self.b * u
    }
}

/// A continuous system `x' = f(x, u, s)` on the normalized grid `s in [0, 1]`.
pub trait Dynamics<const NX: usize, const NU: usize> {
    type Error: fmt::Debug + fmt::Display;

    fn linearize(
        &self,
        x: &SVector<f64, NX>,
        u: &SVector<f64, NU>,
        s: f64,
    ) -> Result<Linearization<NX, NU>, Self::Error>;

    fn derivative(&self, x: &SVector<f64, NX>, u: &SVector<f64, NU>, s: f64) -> Result<SVector<f64, NX>, Self::Error> {
        self.linearize(x, u, s).map(|lin| lin.f)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiscretizeError<E: fmt::Display> {
    #[error("at least two nodes are required, got {0}")]
    TooFewNodes(usize),
    #[error("{states} states but {controls} controls")]
    ShapeMismatch { states: usize, controls: usize },
    #[error("substep count must be at least 1")]
    ZeroSubsteps,
    #[error("dynamics evaluation failed on interval {interval}: {source}")]
    Dynamics { interval: usize, source: E },
    #[error("integration blew up on interval {interval}")]
    Blowup { interval: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("expected {expected} controls for {intervals} intervals, got {got}")]
pub struct DimensionError {
    pub intervals: usize,
    pub expected: usize,
    pub got: usize,
}

/// Trajectory used to evaluate the Jacobians inside an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearizationPath {
    /// Nonlinear propagation from the reference node.
    Shooting,
    /// Straight line between the two reference nodes.
    Interpolated,
}

/// Discrete model of one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteInterval<const NX: usize, const NU: usize> {
    pub a: SMatrix<f64, NX, NX>,
    pub b_minus: SMatrix<f64, NX, NU>,
    pub b_plus: SMatrix<f64, NX, NU>,
    pub f: SVector<f64, NX>,
    pub w: SVector<f64, NX>,
    pub path: LinearizationPath,
}

impl<const NX: usize, const NU: usize> DiscreteInterval<NX, NU> {
    pub fn predict(&self, x: &SVector<f64, NX>, u_k: &SVector<f64, NU>, u_next: &SVector<f64, NU>) -> SVector<f64, NX> {
        self.a * x + self.b_minus * u_k + self.b_plus * u_next + self.f + self.w
    }
}

/// Per-interval FOH discrete model.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLtv<const NX: usize, const NU: usize> {
    pub intervals: Vec<DiscreteInterval<NX, NU>>,
}

impl<const NX: usize, const NU: usize> DiscreteLtv<NX, NU> {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Number of nodes the model spans.
    pub fn nodes(&self) -> usize {
        self.intervals.len() + 1
    }
}

/// Normalized position of node `k` on a uniform grid of `nodes` points.
pub fn node_position(k: usize, nodes: usize) -> f64 {
    k as f64 / (nodes - 1) as f64
}

/// FOH interpolation weights `(lambda_minus, lambda_plus)` at `s` in `[s0, s1]`.
pub fn foh_weights(s: f64, s0: f64, s1: f64) -> (f64, f64) {
    let plus = (s - s0) / (s1 - s0);
    (1.0 - plus, plus)
}

/// State advanced by the RK4 integrator.
trait OdeState: Copy + Add<Output = Self> + Mul<f64, Output = Self> {
    fn max_abs(&self) -> f64;
}

impl<const NX: usize> OdeState for SVector<f64, NX> {
    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY })
    }
}

fn rk4_step<S: OdeState, E>(
    y: S,
    s: f64,
    h: f64,
    mut deriv: impl FnMut(f64, &S) -> Result<S, E>,
) -> Result<S, E> {
    let k1 = deriv(s, &y)?;
    let k2 = deriv(s + 0.5 * h, &(y + k1 * (0.5 * h)))?;
    let k3 = deriv(s + 0.5 * h, &(y + k2 * (0.5 * h)))?;
    let k4 = deriv(s + h, &(y + k3 * h))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// State, transition matrix and the four FOH integrals of one interval.
#[derive(Debug, Clone, Copy)]
struct Augmented<const NX: usize, const NU: usize> {
    x: SVector<f64, NX>,
    phi: SMatrix<f64, NX, NX>,
    b_minus: SMatrix<f64, NX, NU>,
    b_plus: SMatrix<f64, NX, NU>,
    f: SVector<f64, NX>,
    w: SVector<f64, NX>,
}

impl<const NX: usize, const NU: usize> Add for Augmented<NX, NU> {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            x: self.x + o.x,
            phi: self.phi + o.phi,
            b_minus: self.b_minus + o.b_minus,
            b_plus: self.b_plus + o.b_plus,
            f: self.f + o.f,
            w: self.w + o.w,
        }
    }
}

impl<const NX: usize, const NU: usize> Mul<f64> for Augmented<NX, NU> {
    type Output = Self;

    fn mul(self, h: f64) -> Self {
        Self {
            x: self.x * h,
            phi: self.phi * h,
            b_minus: self.b_minus * h,
            b_plus: self.b_plus * h,
            f: self.f * h,
            w: self.w * h,
        }
    }
}

impl<const NX: usize, const NU: usize> OdeState for Augmented<NX, NU> {
    fn max_abs(&self) -> f64 {
        let parts = [
            self.x.as_slice(),
            self.phi.as_slice(),
            self.b_minus.as_slice(),
            self.b_plus.as_slice(),
            self.f.as_slice(),
            self.w.as_slice(),
        ];
        parts
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY })
    }
}

/// Endpoints of one interval.
#[derive(Debug, Clone, Copy)]
struct IntervalData<'a, const NX: usize, const NU: usize> {
    x_k: &'a SVector<f64, NX>,
    x_next: &'a SVector<f64, NX>,
    u_k: &'a SVector<f64, NU>,
    u_next: &'a SVector<f64, NU>,
    s0: f64,
    s1: f64,
}

impl<const NX: usize, const NU: usize> IntervalData<'_, NX, NU> {
    fn control(&self, s: f64) -> (SVector<f64, NU>, f64, f64) {
        let (minus, plus) = foh_weights(s, self.s0, self.s1);
        (self.u_k * minus + self.u_next * plus, minus, plus)
    }
}

enum IntervalFailure<E> {
    Dynamics(E),
    Blowup,
}

fn integrate_interval<D, const NX: usize, const NU: usize>(
    dynamics: &D,
    data: &IntervalData<'_, NX, NU>,
    substeps: usize,
    path: LinearizationPath,
) -> Result<DiscreteInterval<NX, NU>, IntervalFailure<D::Error>>
where
    D: Dynamics<NX, NU>,
{
    let deriv = |s: f64, y: &Augmented<NX, NU>| -> Result<Augmented<NX, NU>, D::Error> {
        let (u, minus, plus) = data.control(s);
        let x = match path {
            LinearizationPath::Shooting => y.x,
            LinearizationPath::Interpolated => {
                let (m, p) = foh_weights(s, data.s0, data.s1);
                data.x_k * m + data.x_next * p
            }
        };
        let lin = dynamics.linearize(&x, &u, s)?;
        let w = lin.offset(&x, &u);
        Ok(Augmented {
            x: lin.f,
            phi: lin.a * y.phi,
            b_minus: lin.a * y.b_minus + lin.b * minus,
            b_plus: lin.a * y.b_plus + lin.b * plus,
            f: lin.a * y.f + lin.f,
            w: lin.a * y.w + w,
        })
    };

    let mut y = Augmented {
        x: *data.x_k,
        phi: SMatrix::identity(),
        b_minus: SMatrix::zeros(),
        b_plus: SMatrix::zeros(),
        f: SVector::zeros(),
        w: SVector::zeros(),
    };
    let h = (data.s1 - data.s0) / substeps as f64;
    for step in 0..substeps {
        let s = data.s0 + step as f64 * h;
        y = rk4_step(y, s, h, deriv).map_err(IntervalFailure::Dynamics)?;
        if y.max_abs() > BLOWUP_LIMIT {
            return Err(IntervalFailure::Blowup);
        }
    }
    Ok(DiscreteInterval { a: y.phi, b_minus: y.b_minus, b_plus: y.b_plus, f: y.f, w: y.w, path })
}

fn check_shapes<E: fmt::Display, const NX: usize, const NU: usize>(
    states: &[SVector<f64, NX>],
    controls: &[SVector<f64, NU>],
    substeps: usize,
) -> Result<(), DiscretizeError<E>> {
    if states.len() != controls.len() {
        return Err(DiscretizeError::ShapeMismatch { states: states.len(), controls: controls.len() });
    }
    if states.len() < 2 {
        return Err(DiscretizeError::TooFewNodes(states.len()));
    }
    if substeps == 0 {
        return Err(DiscretizeError::ZeroSubsteps);
    }
    Ok(())
}

/// Discretize `dynamics` about the reference `(states, controls)` on the
/// uniform normalized grid, using `substeps` RK4 steps per interval.
pub fn discretize<D, const NX: usize, const NU: usize>(
    dynamics: &D,
    states: &[SVector<f64, NX>],
    controls: &[SVector<f64, NU>],
    substeps: usize,
) -> Result<DiscreteLtv<NX, NU>, DiscretizeError<D::Error>>
where
    D: Dynamics<NX, NU>,
{
    check_shapes(states, controls, substeps)?;
    let nodes = states.len();
    let mut intervals = Vec::with_capacity(nodes - 1);
    for k in 0..nodes - 1 {
        let data = IntervalData {
            x_k: &states[k],
            x_next: &states[k + 1],
            u_k: &controls[k],
            u_next: &controls[k + 1],
            s0: node_position(k, nodes),
            s1: node_position(k + 1, nodes),
        };
        let interval = match integrate_interval(dynamics, &data, substeps, LinearizationPath::Shooting) {
            Ok(interval) => interval,
            Err(_) => integrate_interval(dynamics, &data, substeps, LinearizationPath::Interpolated).map_err(
                |failure| match failure {
                    IntervalFailure::Dynamics(source) => DiscretizeError::Dynamics { interval: k, source },
                    IntervalFailure::Blowup => DiscretizeError::Blowup { interval: k },
                },
            )?,
        };
        intervals.push(interval);
    }
    Ok(DiscreteLtv { intervals })
}

/// RK4 propagation of the nonlinear system over interval `k`, starting at
/// `x_k`, with the same step sequence [`discretize`] uses.
pub fn shoot<D, const NX: usize, const NU: usize>(
    dynamics: &D,
    k: usize,
    nodes: usize,
    x_k: &SVector<f64, NX>,
    u_k: &SVector<f64, NU>,
    u_next: &SVector<f64, NU>,
    substeps: usize,
) -> Result<SVector<f64, NX>, DiscretizeError<D::Error>>
where
    D: Dynamics<NX, NU>,
{
    if substeps == 0 {
        return Err(DiscretizeError::ZeroSubsteps);
    }
    let data = IntervalData {
        x_k,
        x_next: x_k,
        u_k,
        u_next,
        s0: node_position(k, nodes),
        s1: node_position(k + 1, nodes),
    };
    let h = (data.s1 - data.s0) / substeps as f64;
    let mut x = *x_k;
    for step in 0..substeps {
        let s = data.s0 + step as f64 * h;
        x = rk4_step(x, s, h, |s, x: &SVector<f64, NX>| {
            let (u, _, _) = data.control(s);
            dynamics.derivative(x, &u, s)
        })
        .map_err(|source| DiscretizeError::Dynamics { interval: k, source })?;
        if x.max_abs() > BLOWUP_LIMIT {
            return Err(DiscretizeError::Blowup { interval: k });
        }
    }
    Ok(x)
}

/// Apply the discrete recurrence from `x0` with node controls `controls`.
pub fn propagate<const NX: usize, const NU: usize>(
    ltv: &DiscreteLtv<NX, NU>,
    x0: &SVector<f64, NX>,
    controls: &[SVector<f64, NU>],
) -> Result<Vec<SVector<f64, NX>>, DimensionError> {
    if controls.len() != ltv.nodes() {
        return Err(DimensionError { intervals: ltv.len(), expected: ltv.nodes(), got: controls.len() });
    }
    let mut out = Vec::with_capacity(ltv.nodes());
    out.push(*x0);
    for (k, interval) in ltv.intervals.iter().enumerate() {
        let next = interval.predict(&out[k], &controls[k], &controls[k + 1]);
        out.push(next);
    }
    Ok(out)
}
