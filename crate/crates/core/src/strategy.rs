//! Offline adaptation map from HDV weights to BO-optimized CAV weights, and
//! its bicubic online lookup.
//!
//! The map lives on a square grid over `log₁₀ ω₂ ∈ [lo, hi]²`. Node `k` sits at
//! column `k % n` (the `ω₂,₁` axis) and row `k / n` (the `ω₂,₂` axis).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bayesopt::{self, BoConfig, BoState};
use crate::error::{Error, Result};
use crate::evaluation::{expected_true_cost, CavWeightPolicy, FixedWeights, HdvProfile, SimulationConfig};
use crate::gp::Point;
use crate::objectives::IndividualWeights;
use crate::rng::derive_seed;

/// Uniformly spaced log₁₀ axis shared by both grid dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridAxis {
    fn default() -> Self {
        Self { lo: -2.0, hi: 2.0, points: 9 }
    }
}

impl GridAxis {
    pub fn validate(&self) -> Result<()> {
        if self.points >= 2 && self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid grid axis {self:?}")))
        }
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.value(i)).collect()
    }

    pub fn node_count(&self) -> usize {
        self.points * self.points
    }

    /// `log₁₀ ω₂` of node `index`.
    pub fn node(&self, index: usize) -> Point {
        [self.value(index % self.points), self.value(index / self.points)]
    }
}

/// BO outcome at one grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResult {
    pub index: usize,
    pub log_w2: Point,
    /// Best evaluated `log₁₀ ω₁`.
    pub log_w1: Point,
    pub best_cost: f64,
    pub evaluations: usize,
    pub bo_seed: u64,
    /// Seed of the Monte Carlo batch shared by every candidate at this node.
    pub mc_seed: u64,
}

/// Settings that identify a sweep; stored with the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: GridAxis,
    pub bo: BoConfig,
    /// Monte Carlo runs per objective evaluation.
    pub n_s: usize,
    /// Shared weight of the simulated HDV.
    pub hdv_shared: f64,
    pub hdv_horizon: usize,
    pub simulation: SimulationConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: GridAxis::default(),
            bo: BoConfig::default(),
            n_s: 100,
            hdv_shared: 1e3,
            hdv_horizon: 10,
            simulation: SimulationConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.axis.validate()?;
        self.bo.validate()?;
        self.simulation.validate()?;
        if self.n_s == 0 || self.hdv_horizon == 0 || !(self.hdv_shared > 0.0) {
            return Err(Error::Config("sweep: n_s, hdv_horizon and hdv_shared must be positive".into()));
        }
        Ok(())
    }

    pub fn hdv_profile(&self, log_w2: Point) -> HdvProfile {
        HdvProfile { weights: IndividualWeights::from_log10(log_w2), w_shared: self.hdv_shared, horizon: self.hdv_horizon }
    }

    /// Mean sigmoid-smoothed true cost of fixed CAV weights at node `index`.
    pub fn node_objective(&self, index: usize, seed: u64, log_w1: &Point) -> Result<f64> {
        let hdv = self.hdv_profile(self.axis.node(index));
        let policy = FixedWeights(IndividualWeights::from_log10(*log_w1));
        Ok(expected_true_cost(&hdv, &policy, &self.simulation, self.n_s, node_mc_seed(seed, index))?.mean_smoothed)
    }
}

pub fn node_bo_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, 2 * index as u64)
}

pub fn node_mc_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, 2 * index as u64 + 1)
}

/// Provenance stored alongside the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub config_hash: String,
    pub seed: u64,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyGrid {
    pub meta: GridMeta,
    /// Row-major nodes; `None` marks a node that has not completed.
    pub nodes: Vec<Option<NodeResult>>,
}

impl StrategyGrid {
    pub fn empty(meta: GridMeta) -> Self {
        let n = meta.sweep.axis.node_count();
        Self { meta, nodes: vec![None; n] }
    }

    pub fn axis(&self) -> &GridAxis {
        &self.meta.sweep.axis
    }

    pub fn missing(&self) -> Vec<usize> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_none()).map(|(i, _)| i).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.nodes.iter().all(Option::is_some)
    }

    fn require_complete(&self) -> Result<()> {
        let missing = self.missing();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::IncompleteGrid { missing })
        }
    }

    fn knot(&self, ix: usize, iy: usize, component: usize) -> f64 {
        let n = self.axis().points;
        self.nodes[iy * n + ix].as_ref().expect("grid checked complete").log_w1[component]
    }

    /// Bicubic Catmull-Rom interpolation of `log₁₀ ω₁` at `log₁₀ ω₂ = query`.
    ///
    /// The query is clamped to the grid and the result to the BO box.
    pub fn lookup_log(&self, query: &Point) -> Result<Point> {
        self.require_complete()?;
        let axis = self.axis();
        let n = axis.points;
        let locate = |x: f64| -> (usize, f64) {
            let u = (x.clamp(axis.lo, axis.hi) - axis.lo) / axis.spacing();
            let r = u.round();
            if (u - r).abs() < 1e-9 {
                return (r as usize, 0.0);
            }
            let i = (u.floor() as usize).min(n - 1);
            (i, u - i as f64)
        };
        let (ix, tx) = locate(query[0]);
        let (iy, ty) = locate(query[1]);
        let clampi = |i: isize| i.clamp(0, n as isize - 1) as usize;
        let bounds = &self.meta.sweep.bo.bounds;
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            let mut col = [0.0; 4];
            for (r, v) in col.iter_mut().enumerate() {
                let y = clampi(iy as isize + r as isize - 1);
                let p: [f64; 4] = std::array::from_fn(|k| self.knot(clampi(ix as isize + k as isize - 1), y, c));
                *v = catmull_rom(&p, tx);
            }
            *o = catmull_rom(&col, ty).clamp(bounds.lower[c], bounds.upper[c]);
        }
        Ok(out)
    }

    /// CAV weights for normalized HDV weights.
    pub fn lookup(&self, hdv: &IndividualWeights) -> Result<IndividualWeights> {
        let q = [hdv.w_accel.max(f64::MIN_POSITIVE).log10(), hdv.w_speed_dev.max(f64::MIN_POSITIVE).log10()];
        Ok(IndividualWeights::from_log10(self.lookup_log(&q)?))
    }

    /// Two heat-map tables (`log₁₀ ω₁,₁` then `log₁₀ ω₁,₂`). Rows run over
    /// `log₁₀ ω₂,₂`, columns over `log₁₀ ω₂,₁`; `corner` fills the top-left cell.
    pub fn export_heatmaps(&self, corner: &str) -> Result<[String; 2]> {
        self.require_complete()?;
        let axis = self.axis();
        let values = axis.values();
        let table = |c: usize| -> Result<String> {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec![corner.to_string()];
            header.extend(values.iter().map(|v| v.to_string()));
            w.write_record(&header).map_err(csv_err)?;
            for (iy, y) in values.iter().enumerate() {
                let mut row = vec![y.to_string()];
                row.extend((0..axis.points).map(|ix| self.knot(ix, iy, c).to_string()));
                w.write_record(&row).map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        };
        Ok([table(0)?, table(1)?])
    }

    /// Range of stored `log₁₀ ω₁` values over both components.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self.nodes.iter().flatten().flat_map(|n| n.log_w1).collect();
        let lo = vals.iter().copied().reduce(f64::min)?;
        let hi = vals.iter().copied().reduce(f64::max)?;
        Some((lo, hi))
    }
}

impl CavWeightPolicy for StrategyGrid {
    fn cav_weights(&self, hdv_estimate: &IndividualWeights) -> Result<IndividualWeights> {
        self.lookup(hdv_estimate)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numeric(format!("csv: {e}"))
}

/// Uniform Catmull-Rom segment between `p[1]` (t = 0) and `p[2]` (t = 1).
fn catmull_rom(p: &[f64; 4], t: f64) -> f64 {
    let a = -p[0] + p[2];
    let b = 2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3];
    let c = -p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3];
    0.5 * (2.0 * p[1] + t * (a + t * (b + t * c)))
}

/// Per-node checkpoint: result plus the full BO dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCheckpoint {
    pub config_hash: String,
    pub seed: u64,
    pub result: NodeResult,
    pub bo: BoState,
}

pub fn checkpoint_path(dir: &Path, index: usize, seed: u64) -> PathBuf {
    dir.join(format!("node-{index:03}-seed-{seed}.json"))
}

/// Runs BO at one node; returns the node result and its BO dataset.
pub fn optimize_node(config: &SweepConfig, seed: u64, index: usize) -> Result<(NodeResult, BoState)> {
    let bo_seed = node_bo_seed(seed, index);
    let r = bayesopt::optimize(|x| config.node_objective(index, seed, x), &config.bo, bo_seed)?;
    let result = NodeResult {
        index,
        log_w2: config.axis.node(index),
        log_w1: r.best,
        best_cost: r.best_cost,
        evaluations: r.state.records.len(),
        bo_seed,
        mc_seed: node_mc_seed(seed, index),
    };
    Ok((result, r.state))
}

/// Outcome of [`sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub grid: StrategyGrid,
    /// Nodes computed in this call (not loaded from checkpoints).
    pub computed: Vec<usize>,
    pub failed: Vec<(usize, Error)>,
}

/// Runs the sweep over `nodes` (all when `None`).
///
/// With a checkpoint directory, finished nodes are loaded instead of
/// recomputed and every newly finished node is written immediately.
pub fn sweep(
    config: &SweepConfig,
    seed: u64,
    config_hash: &str,
    nodes: Option<&[usize]>,
    checkpoint_dir: Option<&Path>,
) -> Result<SweepOutcome> {
    config.validate()?;
    let total = config.axis.node_count();
    let selected: Vec<usize> = match nodes {
        Some(n) => n.to_vec(),
        None => (0..total).collect(),
    };
    if let Some(bad) = selected.iter().find(|i| **i >= total) {
        return Err(Error::InvalidArgument(format!("node {bad} outside a grid of {total} nodes")));
    }
    let mut grid =
        StrategyGrid::empty(GridMeta { config_hash: config_hash.to_string(), seed, sweep: config.clone() });
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir).map_err(io_err)?;
        for index in 0..total {
            if let Some(cp) = load_checkpoint(dir, index, seed, config_hash)? {
                grid.nodes[index] = Some(cp.result);
            }
        }
    }
    let mut computed = Vec::new();
    let mut failed = Vec::new();
    for &index in &selected {
        if grid.nodes[index].is_some() {
            continue;
        }
        match optimize_node(config, seed, index) {
            Ok((result, bo)) => {
                if let Some(dir) = checkpoint_dir {
                    let cp = NodeCheckpoint { config_hash: config_hash.to_string(), seed, result: result.clone(), bo };
                    write_json_atomic(&checkpoint_path(dir, index, seed), &cp)?;
                }
                log::info!("node {index}: log10 w1 = {:?}, cost {:.4}", result.log_w1, result.best_cost);
                grid.nodes[index] = Some(result);
                computed.push(index);
            }
            Err(e) => {
                log::error!("node {index} failed: {e}");
                failed.push((index, e));
            }
        }
    }
    Ok(SweepOutcome { grid, computed, failed })
}

/// Loads a checkpoint written by the same configuration, if present.
pub fn load_checkpoint(dir: &Path, index: usize, seed: u64, config_hash: &str) -> Result<Option<NodeCheckpoint>> {
    let path = checkpoint_path(dir, index, seed);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(io_err)?;
    let cp: NodeCheckpoint =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if cp.config_hash != config_hash {
        log::warn!("ignoring {}: written by config {}", path.display(), cp.config_hash);
        return Ok(None);
    }
    Ok(Some(cp))
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Config(e.to_string()))?;
    f.write_all(b"\n").map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}
