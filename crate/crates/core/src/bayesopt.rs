//! Expected-improvement Bayesian optimization over the log₁₀ CAV weight box.
//!
//! All bookkeeping is in log₁₀ coordinates; the objective receives log₁₀
//! points and converts them itself.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpModel, HyperPolicy, Point, INPUT_DIM};

const SQRT_2PI: f64 = 2.5066282746310002;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below the incumbent `f_best` for a minimization.
pub fn expected_improvement(mean: f64, stddev: f64, f_best: f64) -> f64 {
    let delta = f_best - mean;
    if stddev > 0.0 {
        let z = delta / stddev;
        (stddev * normal_pdf(z) + delta * normal_cdf(z)).max(0.0)
    } else {
        delta.max(0.0)
    }
}

/// Axis-aligned search box in log₁₀ space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Point,
    pub upper: Point,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { lower: [-2.0; INPUT_DIM], upper: [2.0; INPUT_DIM] }
    }
}

impl Bounds {
    pub fn project(&self, x: &Point) -> Point {
        std::array::from_fn(|d| x[d].clamp(self.lower[d], self.upper[d]))
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..INPUT_DIM).all(|d| x[d] >= self.lower[d] && x[d] <= self.upper[d])
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point {
        std::array::from_fn(|d| self.lower[d] + (self.upper[d] - self.lower[d]) * rng.random::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub j_init: usize,
    pub j_max: usize,
    pub bounds: Bounds,
    /// Quasi-random acquisition candidates per proposal.
    pub candidates: usize,
    /// Best candidates refined by projected gradient ascent.
    pub refine: usize,
    pub refine_iters: usize,
    /// Cost recorded when an evaluation fails twice.
    pub failure_penalty: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            j_init: 5,
            j_max: 25,
            bounds: Bounds::default(),
            candidates: 512,
            refine: 8,
            refine_iters: 40,
            failure_penalty: 1e3,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        let ok = self.j_init >= 1
            && self.candidates >= 1
            && (0..INPUT_DIM).all(|d| b.lower[d].is_finite() && b.upper[d].is_finite() && b.lower[d] < b.upper[d])
            && self.failure_penalty.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid bayesopt parameters: {self:?}")))
        }
    }
}

/// One evaluated candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    pub iteration: usize,
    pub candidate: Point,
    pub cost: f64,
    /// Best cost after this evaluation.
    pub incumbent: f64,
    /// Set when both evaluation attempts failed and the penalty was recorded.
    pub failed: bool,
}

/// Dataset and incumbent of a run; serializable for resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoState {
    pub seed: u64,
    pub records: Vec<BoRecord>,
}

impl BoState {
    pub fn new(seed: u64) -> Self {
        Self { seed, records: Vec::new() }
    }

    /// Best evaluated candidate; the first one wins ties.
    pub fn incumbent(&self) -> Option<&BoRecord> {
        self.records.iter().fold(None, |best: Option<&BoRecord>, r| match best {
            Some(b) if b.cost <= r.cost => Some(b),
            _ => Some(r),
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "log10_w_accel", "log10_w_speed_dev", "cost", "incumbent", "failed"])?;
        for r in &self.records {
            out.write_record([
                r.iteration.to_string(),
                r.candidate[0].to_string(),
                r.candidate[1].to_string(),
                r.cost.to_string(),
                r.incumbent.to_string(),
                r.failed.to_string(),
            ])?;
        }
        out.flush()
    }
}

/// Result of [`optimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoResult {
    pub best: Point,
    pub best_cost: f64,
    pub state: BoState,
    /// Evaluations performed in this call (excludes replayed records).
    pub new_evaluations: usize,
}

/// Radical-inverse Halton point `index` in the unit square.
fn halton(index: usize) -> Point {
    let radical = |mut i: usize, base: usize| {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    };
    [radical(index + 1, 2), radical(index + 1, 3)]
}

fn ei_at(model: &GpModel, x: &Point, f_best: f64) -> (f64, Point) {
    let p = model.predict_full(x);
    let ei = expected_improvement(p.mean, p.stddev, f_best);
    if p.stddev <= 0.0 {
        return (ei, [0.0; INPUT_DIM]);
    }
    let z = (f_best - p.mean) / p.stddev;
    let (dmu, dsd) = (-normal_cdf(z), normal_pdf(z));
    (ei, std::array::from_fn(|d| dmu * p.d_mean[d] + dsd * p.d_stddev[d]))
}

/// Approximate maximizer of EI over `config.bounds`.
///
/// Scores a Cranley-Patterson shifted Halton set, then refines the best few
/// by projected gradient ascent with backtracking.
pub fn propose_next(model: &GpModel, f_best: f64, config: &BoConfig, rng: &mut ChaCha8Rng) -> Point {
    let b = &config.bounds;
    let shift: Point = [rng.random(), rng.random()];
    let mut scored: Vec<(f64, Point)> = (0..config.candidates)
        .map(|i| {
            let u = halton(i);
            let x: Point = std::array::from_fn(|d| b.lower[d] + (b.upper[d] - b.lower[d]) * (u[d] + shift[d]).fract());
            (ei_at(model, &x, f_best).0, x)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let width = (0..INPUT_DIM).map(|d| b.upper[d] - b.lower[d]).fold(0.0, f64::max);
    let mut best = scored[0];
    for &(ei0, x0) in scored.iter().take(config.refine.max(1)) {
        let (mut x, mut ei) = (x0, ei0);
        let mut step = 0.05 * width;
        for _ in 0..config.refine_iters {
            let g = ei_at(model, &x, f_best).1;
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn == 0.0 {
                break;
            }
            let mut moved = false;
            while step > 1e-6 * width {
                let y = b.project(&std::array::from_fn(|d| x[d] + step * g[d] / gn));
                let ey = ei_at(model, &y, f_best).0;
                if ey > ei {
                    x = y;
                    ei = ey;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if ei > best.0 {
            best = (ei, x);
        }
    }
    if best.0 > 0.0 {
        best.1
    } else {
        log::info!("expected improvement vanishes everywhere; proposing a random point");
        b.sample(rng)
    }
}

/// Runs `j_init` random evaluations followed by `j_max` EI-driven ones.
pub fn optimize<F>(objective: F, config: &BoConfig, seed: u64) -> Result<BoResult>
where
    F: FnMut(&Point) -> Result<f64>,
{
    resume(objective, config, BoState::new(seed))
}

/// Continues a run from `state`, replaying recorded evaluations instead of
/// calling `objective` for them.
pub fn resume<F>(mut objective: F, config: &BoConfig, state: BoState) -> Result<BoResult>
where
    F: FnMut(&Point) -> Result<f64>,
{
    config.validate()?;
    let replay = state.records;
    let total = config.j_init + config.j_max;
    if replay.len() > total {
        return Err(Error::InvalidArgument(format!("state holds {} records, budget is {total}", replay.len())));
    }
    let mut state = BoState { seed: state.seed, records: Vec::with_capacity(total) };
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
    let mut new_evaluations = 0;
    for j in 0..total {
        let candidate = if j < config.j_init {
            config.bounds.sample(&mut rng)
        } else {
            let x: Vec<Point> = state.records.iter().map(|r| r.candidate).collect();
            let y: Vec<f64> = state.records.iter().map(|r| r.cost).collect();
            let model = GpModel::fit(&x, &y, HyperPolicy::MaxLikelihood)?;
            let f_best = state.incumbent().map_or(f64::INFINITY, |r| r.cost);
            propose_next(&model, f_best, config, &mut rng)
        };
        let (cost, failed) = match replay.get(j) {
            Some(r) if r.candidate == candidate => (r.cost, r.failed),
            Some(_) => return Err(Error::InvalidArgument(format!("resumed state diverges at iteration {j}"))),
            None => {
                new_evaluations += 1;
                evaluate(&mut objective, &candidate, config.failure_penalty)
            }
        };
        let incumbent = state.incumbent().map_or(cost, |r| r.cost.min(cost));
        state.records.push(BoRecord { iteration: j, candidate, cost, incumbent, failed });
    }
    let best = *state.incumbent().expect("j_init ≥ 1");
    Ok(BoResult { best: best.candidate, best_cost: best.cost, state, new_evaluations })
}

fn evaluate<F>(objective: &mut F, x: &Point, penalty: f64) -> (f64, bool)
where
    F: FnMut(&Point) -> Result<f64>,
{
    for attempt in 0..2 {
        match objective(x) {
            Ok(c) if c.is_finite() => return (c, false),
            Ok(c) => log::warn!("objective returned {c} at {x:?} (attempt {})", attempt + 1),
            Err(e) => log::warn!("objective failed at {x:?} (attempt {}): {e}", attempt + 1),
        }
    }
    (penalty, true)
}
