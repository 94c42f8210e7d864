//! Longitudinal double-integrator kinematics for the two-vehicle crossing.
//!
//! Both vehicles move along their own axis and the conflict point is the
//! origin of each axis. Negative positions are upstream of the conflict point.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Signed distance to the conflict point (m).
    pub position: f64,
    /// Speed (m/s).
    pub speed: f64,
}

impl VehicleState {
    pub const fn new(position: f64, speed: f64) -> Self {
        Self { position, speed }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.speed.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal acceleration (m/s²).
    pub acceleration: f64,
}

impl ControlInput {
    pub const fn new(acceleration: f64) -> Self {
        Self { acceleration }
    }
}

/// States of the CAV (index 0) and the HDV (index 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub cav: VehicleState,
    pub hdv: VehicleState,
}

impl JointState {
    pub const fn new(cav: VehicleState, hdv: VehicleState) -> Self {
        Self { cav, hdv }
    }

    pub fn distance(&self) -> f64 {
        pairwise_distance(&self.cav, &self.hdv)
    }

    pub fn swapped(&self) -> Self {
        Self { cav: self.hdv, hdv: self.cav }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Sampling time ΔT (s).
    pub dt: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Minimum admissible separation r (m).
    pub safety_radius: f64,
    /// Scale of the logarithmic collision penalty.
    pub gamma: f64,
    /// Position past the conflict point at which a vehicle has left the control zone (m).
    pub control_zone_exit: f64,
    pub max_sim_time: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            v_min: 0.0,
            v_max: 12.0,
            u_min: -5.0,
            u_max: 3.0,
            safety_radius: 10.0,
            gamma: 1.0,
            control_zone_exit: 20.0,
            max_sim_time: 30.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("dt", self.dt),
            ("v_min", self.v_min),
            ("v_max", self.v_max),
            ("u_min", self.u_min),
            ("u_max", self.u_max),
            ("safety_radius", self.safety_radius),
            ("gamma", self.gamma),
            ("control_zone_exit", self.control_zone_exit),
            ("max_sim_time", self.max_sim_time),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::Config(format!("scenario.{name} must be finite")));
            }
        }
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("scenario: {msg}")))
            }
        };
        check(self.dt > 0.0, "dt must be positive")?;
        check(self.v_min < self.v_max, "v_min must be below v_max")?;
        check(self.u_min < self.u_max, "u_min must be below u_max")?;
        check(self.safety_radius > 0.0, "safety_radius must be positive")?;
        check(self.gamma > 0.0, "gamma must be positive")?;
        check(self.control_zone_exit > 0.0, "control_zone_exit must be positive")?;
        check(self.max_sim_time > 0.0, "max_sim_time must be positive")
    }
}

/// Propagates one vehicle over `dt` under constant acceleration.
pub fn step(state: VehicleState, input: ControlInput, dt: f64) -> Result<VehicleState> {
    ensure_finite("position", state.position)?;
    ensure_finite("speed", state.speed)?;
    ensure_finite("acceleration", input.acceleration)?;
    ensure_finite("dt", dt)?;
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    Ok(step_unchecked(state, input.acceleration, dt))
}

#[inline]
pub(crate) fn step_unchecked(state: VehicleState, accel: f64, dt: f64) -> VehicleState {
    VehicleState {
        position: state.position + dt * state.speed + 0.5 * dt * dt * accel,
        speed: state.speed + dt * accel,
    }
}

/// Euclidean separation of two vehicles on perpendicular approaches.
pub fn pairwise_distance(a: &VehicleState, b: &VehicleState) -> f64 {
    a.position.hypot(b.position)
}

/// Time within `[0, dt]` at which a vehicle starting at `state` with constant
/// `accel` first reaches `target`, if it does.
pub fn crossing_time(state: VehicleState, accel: f64, dt: f64, target: f64) -> Option<f64> {
    let gap = target - state.position;
    if gap <= 0.0 {
        return Some(0.0);
    }
    // ½aτ² + vτ − gap = 0
    let tau = if accel.abs() < 1e-12 {
        if state.speed <= 0.0 {
            return None;
        }
        gap / state.speed
    } else {
        let disc = state.speed * state.speed + 2.0 * accel * gap;
        if disc < 0.0 {
            return None;
        }
        // numerically stable smaller positive root
        let q = state.speed + disc.sqrt();
        if q <= 0.0 {
            return None;
        }
        2.0 * gap / q
    };
    (tau >= 0.0 && tau <= dt * (1.0 + 1e-12)).then_some(tau.min(dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn step_examples() {
        let s = step(VehicleState::new(0.0, 10.0), ControlInput::new(2.0), 0.2).unwrap();
        assert_abs_diff_eq!(s.position, 2.04, epsilon = 1e-12);
        assert_abs_diff_eq!(s.speed, 10.4, epsilon = 1e-12);

        let s = step(VehicleState::new(-50.0, 0.0), ControlInput::new(0.0), 0.2).unwrap();
        assert_eq!(s, VehicleState::new(-50.0, 0.0));

        let s = step(VehicleState::new(0.0, 12.0), ControlInput::new(-5.0), 0.2).unwrap();
        assert_abs_diff_eq!(s.position, 2.3, epsilon = 1e-12);
        assert_abs_diff_eq!(s.speed, 11.0, epsilon = 1e-12);
    }

    #[test]
    fn step_rejects_bad_input() {
        let s = VehicleState::new(0.0, 1.0);
        assert!(matches!(step(s, ControlInput::new(f64::NAN), 0.2), Err(Error::InvalidArgument(_))));
        assert!(step(VehicleState::new(f64::INFINITY, 0.0), ControlInput::new(0.0), 0.2).is_err());
        assert!(step(s, ControlInput::new(0.0), 0.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let d = |a: f64, b: f64| pairwise_distance(&VehicleState::new(a, 0.0), &VehicleState::new(b, 0.0));
        assert_abs_diff_eq!(d(3.0, 4.0), 5.0, epsilon = 1e-12);
        assert_eq!(d(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(d(-10.0, 10.0), 14.142135623730951, epsilon = 1e-12);
    }

    #[test]
    fn crossing_time_cases() {
        let t = crossing_time(VehicleState::new(19.0, 10.0), 0.0, 0.2, 20.0).unwrap();
        assert_abs_diff_eq!(t, 0.1, epsilon = 1e-12);
        assert!(crossing_time(VehicleState::new(0.0, 10.0), 0.0, 0.2, 20.0).is_none());
        let t = crossing_time(VehicleState::new(19.0, 0.0), 2.0, 1.0, 20.0).unwrap();
        assert_abs_diff_eq!(t, 1.0, epsilon = 1e-12);
        assert!(crossing_time(VehicleState::new(19.0, 1.0), -10.0, 1.0, 20.0).is_none());
    }

    #[test]
    fn scenario_defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
        let bad = ScenarioConfig { v_min: 13.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn half_steps_compose(p in -100.0..100.0f64, v in -5.0..15.0f64, a in -5.0..3.0f64, dt in 0.01..1.0f64) {
            let s = VehicleState::new(p, v);
            let full = step(s, ControlInput::new(a), dt).unwrap();
            let half = step(step(s, ControlInput::new(a), dt / 2.0).unwrap(), ControlInput::new(a), dt / 2.0).unwrap();
            prop_assert!((full.position - half.position).abs() <= 1e-12 * (1.0 + p.abs()));
            prop_assert!((full.speed - half.speed).abs() <= 1e-12 * (1.0 + v.abs()));
        }

        #[test]
        fn distance_symmetric_and_sign_invariant(p1 in -100.0..100.0f64, p2 in -100.0..100.0f64) {
            let a = VehicleState::new(p1, 1.0);
            let b = VehicleState::new(p2, 2.0);
            let d = pairwise_distance(&a, &b);
            prop_assert_eq!(d, pairwise_distance(&b, &a));
            prop_assert_eq!(d, pairwise_distance(&VehicleState::new(-p1, 0.0), &b));
            prop_assert_eq!(d, pairwise_distance(&a, &VehicleState::new(-p2, 0.0)));
        }
    }
}
