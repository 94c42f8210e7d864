//! Weighted per-step objective terms and the potential function.
//!
//! Feature order for the HDV objective is fixed as
//! `[a₂², (v₂' − v_max)², −ln(γ(p₁'² + p₂'²))]`; IRL weight vectors are only
//! meaningful relative to this ordering.

use std::ops::{Add, Div, Index, Sub};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleState};
use crate::error::{Error, Result};
use crate::irl::TrajectorySegment;

pub const FEATURE_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndividualWeights {
    /// Weight on squared acceleration.
    pub w_accel: f64,
    /// Weight on squared deviation from the speed limit.
    pub w_speed_dev: f64,
}

impl IndividualWeights {
    pub const fn new(w_accel: f64, w_speed_dev: f64) -> Self {
        Self { w_accel, w_speed_dev }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self::new(self.w_accel * c, self.w_speed_dev * c)
    }

    pub fn log10(self) -> [f64; 2] {
        [self.w_accel.log10(), self.w_speed_dev.log10()]
    }

    pub fn from_log10(x: [f64; 2]) -> Self {
        Self::new(10f64.powf(x[0]), 10f64.powf(x[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedWeight {
    pub w_shared: f64,
    pub gamma: f64,
}

impl SharedWeight {
    pub const fn new(w_shared: f64, gamma: f64) -> Self {
        Self { w_shared, gamma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightTuple {
    pub cav: IndividualWeights,
    pub hdv: IndividualWeights,
    pub shared: SharedWeight,
}

impl WeightTuple {
    pub fn scaled(self, c: f64) -> Self {
        Self {
            cav: self.cav.scaled(c),
            hdv: self.hdv.scaled(c),
            shared: SharedWeight::new(self.shared.w_shared * c, self.shared.gamma),
        }
    }

    pub fn swapped(self) -> Self {
        Self { cav: self.hdv, hdv: self.cav, shared: self.shared }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.cav.w_accel,
            self.cav.w_speed_dev,
            self.hdv.w_accel,
            self.hdv.w_speed_dev,
        ];
        if vals.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("individual weights must be finite and non-negative".into()));
        }
        if !(self.shared.w_shared > 0.0 && self.shared.w_shared.is_finite()) {
            return Err(Error::InvalidArgument("shared weight must be positive".into()));
        }
        if !(self.shared.gamma > 0.0 && self.shared.gamma.is_finite()) {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub const ZERO: Self = Self([0.0; FEATURE_DIM]);

    pub fn dot(&self, theta: &[f64; FEATURE_DIM]) -> f64 {
        self.0.iter().zip(theta).map(|(f, t)| f * t).sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn as_array(&self) -> [f64; FEATURE_DIM] {
        self.0
    }
}

impl Index<usize> for FeatureVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for FeatureVector {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
    }
}

impl Sub for FeatureVector {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(std::array::from_fn(|i| self.0[i] - rhs.0[i]))
    }
}

impl Div<f64> for FeatureVector {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        Self(self.0.map(|x| x / rhs))
    }
}

/// `w_accel·a² + w_speed_dev·(v' − v_max)²`
pub fn individual_cost(w: &IndividualWeights, next_state: &VehicleState, input: &ControlInput, v_max: f64) -> f64 {
    let a = input.acceleration;
    let dv = next_state.speed - v_max;
    w.w_accel * a * a + w.w_speed_dev * dv * dv
}

/// Natural-log collision penalty feature `−ln(γ(p₁² + p₂²))`.
pub fn collision_feature(gamma: f64, p1: f64, p2: f64) -> Result<f64> {
    let arg = gamma * (p1 * p1 + p2 * p2);
    if arg > 0.0 {
        Ok(-arg.ln())
    } else {
        Err(Error::SingularConfiguration)
    }
}

/// `−w_shared · ln(γ(p₁² + p₂²))`
pub fn shared_cost(w: &SharedWeight, cav_next: &VehicleState, hdv_next: &VehicleState) -> Result<f64> {
    Ok(w.w_shared * collision_feature(w.gamma, cav_next.position, hdv_next.position)?)
}

/// One-step potential `l₁ + l₂ + l₁₂`.
pub fn potential_cost(
    w: &WeightTuple,
    joint_next: (&VehicleState, &VehicleState),
    joint_input: (&ControlInput, &ControlInput),
    v_max: f64,
) -> Result<f64> {
    let (cav_next, hdv_next) = joint_next;
    Ok(individual_cost(&w.cav, cav_next, joint_input.0, v_max)
        + individual_cost(&w.hdv, hdv_next, joint_input.1, v_max)
        + shared_cost(&w.shared, cav_next, hdv_next)?)
}

/// HDV-relevant features of one segment; `θ·f = l₂ + l₁₂` for `θ = [ω₂, ω₁₂]`.
pub fn feature_vector(segment: &TrajectorySegment, v_max: f64, gamma: f64) -> Result<FeatureVector> {
    let a = segment.hdv_input.acceleration;
    let dv = segment.hdv_next.speed - v_max;
    let log_term = collision_feature(gamma, segment.cav_next.position, segment.hdv_next.position)?;
    Ok(FeatureVector([a * a, dv * dv, log_term]))
}
