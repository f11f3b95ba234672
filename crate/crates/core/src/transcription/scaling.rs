//! Affine variable scaling `x = D x_hat + C` computed from channel bounds, so
//! that each channel's `[min, max]` maps onto `[-1, 1]`.

use nalgebra::SVector;

use crate::model::{ControlVector, StateVector, NU, NX};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ScalingError {
    #[error("degenerate range for channel {channel}: min = {min}, max = {max}")]
    DegenerateRange { channel: usize, min: f64, max: f64 },
}

/// Diagonal affine map for one vector space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineScaling<const N: usize> {
    scale: SVector<f64, N>,
    offset: SVector<f64, N>,
}

impl<const N: usize> AffineScaling<N> {
    pub fn from_bounds(bounds: &[(f64, f64); N]) -> Result<Self, ScalingError> {
        let mut scale = SVector::<f64, N>::zeros();
        let mut offset = SVector::<f64, N>::zeros();
        for (channel, &(min, max)) in bounds.iter().enumerate() {
            if !(max > min) || !min.is_finite() || !max.is_finite() {
                return Err(ScalingError::DegenerateRange { channel, min, max });
            }
            scale[channel] = 0.5 * (max - min);
            offset[channel] = 0.5 * (max + min);
        }
        Ok(Self { scale, offset })
    }

    pub fn identity() -> Self {
        Self { scale: SVector::repeat(1.0), offset: SVector::zeros() }
    }

    /// Diagonal of `D`.
    pub fn scale(&self) -> &SVector<f64, N> {
        &self.scale
    }

    /// Centering vector `C`.
    pub fn offset(&self) -> &SVector<f64, N> {
        &self.offset
    }

    /// Physical to normalized.
    pub fn apply(&self, x: &SVector<f64, N>) -> SVector<f64, N> {
        (x - self.offset).component_div(&self.scale)
    }

    /// Normalized to physical.
    pub fn unapply(&self, x_hat: &SVector<f64, N>) -> SVector<f64, N> {
        self.scale.component_mul(x_hat) + self.offset
    }
}

/// Scaling for states and controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingMap {
    pub state: AffineScaling<NX>,
    pub control: AffineScaling<NU>,
}

impl ScalingMap {
    pub fn build(state_bounds: &[(f64, f64); NX], control_bounds: &[(f64, f64); NU]) -> Result<Self, ScalingError> {
        Ok(Self {
            state: AffineScaling::from_bounds(state_bounds)?,
            control: AffineScaling::from_bounds(control_bounds)?,
        })
    }

    pub fn identity() -> Self {
        Self { state: AffineScaling::identity(), control: AffineScaling::identity() }
    }

    pub fn apply_state(&self, x: &StateVector) -> StateVector {
        self.state.apply(x)
    }

    pub fn unapply_state(&self, x_hat: &StateVector) -> StateVector {
        self.state.unapply(x_hat)
    }

    pub fn apply_control(&self, u: &ControlVector) -> ControlVector {
        self.control.apply(u)
    }

    pub fn unapply_control(&self, u_hat: &ControlVector) -> ControlVector {
        self.control.unapply(u_hat)
    }
}
