//! Moving-horizon maximum-entropy IRL for the HDV's objective weights
//! `θ = [ω₂,₁, ω₂,₂, ω₁₂]`.
//!
//! The expectation over trajectories is replaced by the features of the most
//! likely segment: for each stored segment the CAV motion and the HDV's start
//! state are frozen and the HDV's one-step acceleration is re-optimized under
//! `θ`. Because `θ` weights a cost, the log-likelihood increases along
//! `expected − observed`; [`update_estimate`] therefore steps against
//! [`irl_gradient`], which returns `observed − expected`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_unchecked, ControlInput, JointState, ScenarioConfig, VehicleState};
use crate::error::{Error, Result};
use crate::objectives::{feature_vector, FeatureVector, IndividualWeights, SharedWeight, FEATURE_DIM};
use crate::trajopt::{self, AgentRole, AgentSpec, HorizonProblem, SolverOptions};

pub type Theta = [f64; FEATURE_DIM];

/// One observed step of both vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub cav: VehicleState,
    pub hdv: VehicleState,
    pub cav_next: VehicleState,
    pub hdv_next: VehicleState,
    pub cav_input: ControlInput,
    pub hdv_input: ControlInput,
}

impl TrajectorySegment {
    /// Builds a segment by propagating `joint` under the two inputs.
    pub fn from_step(joint: &JointState, cav_input: ControlInput, hdv_input: ControlInput, dt: f64) -> Result<Self> {
        Ok(Self {
            cav: joint.cav,
            hdv: joint.hdv,
            cav_next: crate::dynamics::step(joint.cav, cav_input, dt)?,
            hdv_next: crate::dynamics::step(joint.hdv, hdv_input, dt)?,
            cav_input,
            hdv_input,
        })
    }

    /// Whether the successor states follow from the inputs within `tol`.
    pub fn is_consistent(&self, dt: f64, tol: f64) -> bool {
        let c = step_unchecked(self.cav, self.cav_input.acceleration, dt);
        let h = step_unchecked(self.hdv, self.hdv_input.acceleration, dt);
        (c.position - self.cav_next.position).abs() <= tol
            && (c.speed - self.cav_next.speed).abs() <= tol
            && (h.position - self.hdv_next.position).abs() <= tol
            && (h.speed - self.hdv_next.speed).abs() <= tol
    }

    /// Same segment with a different HDV acceleration.
    pub fn with_hdv_input(&self, accel: f64, dt: f64) -> Self {
        Self {
            hdv_input: ControlInput::new(accel),
            hdv_next: step_unchecked(self.hdv, accel, dt),
            ..*self
        }
    }
}

/// The `L` most recent segments, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBuffer {
    capacity: usize,
    segments: VecDeque<TrajectorySegment>,
}

impl SegmentBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "segment buffer capacity must be positive");
        Self { capacity, segments: VecDeque::with_capacity(capacity) }
    }

    /// Appends a segment; returns the evicted oldest one when full.
    pub fn push(&mut self, segment: TrajectorySegment) -> Option<TrajectorySegment> {
        let evicted = if self.segments.len() == self.capacity { self.segments.pop_front() } else { None };
        self.segments.push_back(segment);
        evicted
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrajectorySegment> {
        self.segments.iter()
    }
}

impl FromIterator<TrajectorySegment> for SegmentBuffer {
    /// Buffer sized to hold exactly the collected segments.
    fn from_iter<I: IntoIterator<Item = TrajectorySegment>>(iter: I) -> Self {
        let segments: VecDeque<_> = iter.into_iter().collect();
        Self { capacity: segments.len().max(1), segments }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: Theta,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl ThetaEstimate {
    pub fn hdv_weights(&self) -> IndividualWeights {
        IndividualWeights::new(self.theta[0], self.theta[1])
    }

    /// HDV weights rescaled so that the shared weight equals `w_shared`.
    ///
    /// Minimizers are invariant to a common positive scaling, so only the
    /// ratios carry information.
    pub fn hdv_weights_normalized(&self, w_shared: f64) -> IndividualWeights {
        self.hdv_weights().scaled(w_shared / self.theta[2])
    }
}

/// Componentwise box `Ω` for `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaBounds {
    pub lower: Theta,
    pub upper: Theta,
}

impl Default for ThetaBounds {
    fn default() -> Self {
        Self { lower: [1e-2, 1e-2, 1.0], upper: [1e2, 1e2, 1e4] }
    }
}

impl ThetaBounds {
    pub fn project(&self, theta: &Theta) -> Theta {
        std::array::from_fn(|i| theta[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn contains(&self, theta: &Theta) -> bool {
        (0..FEATURE_DIM).all(|i| theta[i] >= self.lower[i] && theta[i] <= self.upper[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrlConfig {
    /// Estimation horizon `L`.
    pub horizon: usize,
    /// Learning rate `η`.
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub bounds: ThetaBounds,
    pub initial: Theta,
    pub solver: SolverOptions,
}

impl Default for IrlConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            learning_rate: 0.01,
            max_iters: 50,
            grad_tol: 1e-4,
            bounds: ThetaBounds::default(),
            initial: [1.0, 1.0, 1e3],
            solver: SolverOptions::default(),
        }
    }
}

impl IrlConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        let bounds_ok = (0..FEATURE_DIM).all(|i| b.lower[i] > 0.0 && b.lower[i] <= b.upper[i] && b.upper[i].is_finite());
        if self.horizon == 0 || !(self.learning_rate > 0.0) || self.max_iters == 0 || !(self.grad_tol > 0.0) || !bounds_ok
        {
            return Err(Error::Config(format!("invalid irl parameters: {self:?}")));
        }
        self.solver.validate()
    }
}

/// Mean feature vector of the stored segments.
pub fn observed_features(buffer: &SegmentBuffer, scenario: &ScenarioConfig) -> Result<FeatureVector> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut sum = FeatureVector::ZERO;
    for seg in buffer.iter() {
        sum = sum + feature_vector(seg, scenario.v_max, scenario.gamma)?;
    }
    Ok(sum / buffer.len() as f64)
}

/// HDV acceleration minimizing `θᵀf` for one segment, CAV motion frozen.
///
/// The solve starts from the observed HDV acceleration, so a segment that is
/// already optimal under `θ` is returned unchanged.
pub fn optimal_hdv_input(
    segment: &TrajectorySegment,
    theta: &Theta,
    scenario: &ScenarioConfig,
    solver: &SolverOptions,
) -> Result<f64> {
    let problem = HorizonProblem {
        horizon: 1,
        dt: scenario.dt,
        v_ref: scenario.v_max,
        agents: vec![
            AgentSpec { initial: segment.cav, weights: None, role: AgentRole::Fixed(vec![segment.cav_input.acceleration]) },
            AgentSpec {
                initial: segment.hdv,
                weights: Some(IndividualWeights::new(theta[0], theta[1])),
                role: AgentRole::Decision { bounds: None },
            },
        ],
        shared: Some(SharedWeight::new(theta[2], scenario.gamma)),
        constraints: Vec::new(),
    };
    let report = trajopt::solve(&problem, &[segment.hdv_input.acceleration], solver)?;
    if report.converged {
        Ok(report.controls[0])
    } else {
        Err(Error::Numeric(format!("inner HDV solve did not converge (stationarity {:e})", report.stationarity)))
    }
}

/// Paired observed/expected feature means over segments whose inner solve succeeded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMatch {
    pub observed: FeatureVector,
    pub expected: FeatureVector,
    pub used: usize,
    pub skipped: usize,
}

pub fn match_features(
    buffer: &SegmentBuffer,
    theta: &Theta,
    scenario: &ScenarioConfig,
    solver: &SolverOptions,
) -> Result<FeatureMatch> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut observed = FeatureVector::ZERO;
    let mut expected = FeatureVector::ZERO;
    let mut used = 0;
    let mut skipped = 0;
    for seg in buffer.iter() {
        let fo = feature_vector(seg, scenario.v_max, scenario.gamma)?;
        let fe = optimal_hdv_input(seg, theta, scenario, solver)
            .and_then(|a| feature_vector(&seg.with_hdv_input(a, scenario.dt), scenario.v_max, scenario.gamma));
        match fe {
            Ok(fe) => {
                observed = observed + fo;
                expected = expected + fe;
                used += 1;
            }
            Err(e) => {
                log::debug!("skipping IRL segment: {e}");
                skipped += 1;
            }
        }
    }
    if used == 0 {
        return Err(Error::AllSegmentsSkipped { skipped });
    }
    let n = used as f64;
    Ok(FeatureMatch { observed: observed / n, expected: expected / n, used, skipped })
}

/// Mean features of the per-segment most likely HDV responses under `θ`.
pub fn expected_features(
    buffer: &SegmentBuffer,
    theta: &Theta,
    scenario: &ScenarioConfig,
    solver: &SolverOptions,
) -> Result<FeatureVector> {
    Ok(match_features(buffer, theta, scenario, solver)?.expected)
}

/// `observed − expected` feature means.
pub fn irl_gradient(
    buffer: &SegmentBuffer,
    theta: &Theta,
    scenario: &ScenarioConfig,
    solver: &SolverOptions,
) -> Result<FeatureVector> {
    let m = match_features(buffer, theta, scenario, solver)?;
    Ok(m.observed - m.expected)
}

/// Projected gradient iterations from `theta_init`.
pub fn update_estimate(
    buffer: &SegmentBuffer,
    theta_init: &Theta,
    config: &IrlConfig,
    scenario: &ScenarioConfig,
) -> Result<ThetaEstimate> {
    let mut theta = config.bounds.project(theta_init);
    let mut gradient_norm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iters {
        let grad = irl_gradient(buffer, &theta, scenario, &config.solver)?;
        iterations += 1;
        gradient_norm = grad.norm();
        if gradient_norm <= config.grad_tol {
            break;
        }
        let stepped: Theta = std::array::from_fn(|i| theta[i] - config.learning_rate * grad[i]);
        theta = config.bounds.project(&stepped);
    }
    Ok(ThetaEstimate { theta, iterations, gradient_norm })
}

/// Online estimator: segment buffer plus the estimate carried across steps.
#[derive(Debug, Clone)]
pub struct OnlineIrl {
    config: IrlConfig,
    buffer: SegmentBuffer,
    estimate: ThetaEstimate,
}

impl OnlineIrl {
    pub fn new(config: IrlConfig) -> Self {
        let theta = config.bounds.project(&config.initial);
        Self {
            buffer: SegmentBuffer::new(config.horizon),
            estimate: ThetaEstimate { theta, iterations: 0, gradient_norm: f64::NAN },
            config,
        }
    }

    pub fn observe(&mut self, segment: TrajectorySegment) {
        self.buffer.push(segment);
    }

    pub fn buffer(&self) -> &SegmentBuffer {
        &self.buffer
    }

    pub fn estimate(&self) -> &ThetaEstimate {
        &self.estimate
    }

    /// Refines the estimate on the current buffer, seeded with the previous one.
    pub fn update(&mut self, scenario: &ScenarioConfig) -> Result<&ThetaEstimate> {
        if self.buffer.is_empty() {
            return Ok(&self.estimate);
        }
        self.estimate = update_estimate(&self.buffer, &self.estimate.theta, &self.config, scenario)?;
        Ok(&self.estimate)
    }
}
