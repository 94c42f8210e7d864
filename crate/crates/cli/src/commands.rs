//! Subcommand implementations. Each writes its artifacts below `ctx.out`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use gtmpc_core::dynamics::JointState;
use gtmpc_core::evaluation::{run_simulation, true_cost, FixedWeights, HdvProfile, SimTrace, TrueCostReport};
use gtmpc_core::objectives::IndividualWeights;
use gtmpc_core::rng::{derive_seed, stream_rng};
use gtmpc_core::strategy::{self, write_json_atomic, StrategyGrid, SweepOutcome};
use serde::Serialize;

use crate::compare::{compare, ComparisonReport};
use crate::config::RunConfig;

/// Resolved configuration and output location shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub hash: String,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Provenance<'a> {
    config_hash: &'a str,
    seed: u64,
    config: &'a RunConfig,
}

impl Context {
    /// Applies the seed override, validates and creates the output directory.
    pub fn new(mut config: RunConfig, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        if let Some(s) = seed {
            config.seed = s;
        }
        config.validate()?;
        let hash = config.hash();
        let out = config.output_dir(out);
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let ctx = Self { seed: config.seed, config, hash, out };
        let prov = Provenance { config_hash: &ctx.hash, seed: ctx.seed, config: &ctx.config };
        write_json_atomic(&ctx.out.join("config.json"), &prov)?;
        Ok(ctx)
    }

    /// `<stem>-<hash>-seed-<seed>.<ext>` inside `dir` (relative to the output).
    fn artifact(&self, dir: &str, stem: &str, ext: &str) -> Result<PathBuf> {
        let d = self.out.join(dir);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d.join(format!("{stem}-{}-seed-{}.{ext}", self.hash, self.seed)))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn load_grid(path: &Path) -> Result<StrategyGrid> {
    let text = fs::read_to_string(path).with_context(|| format!("reading strategy file {}", path.display()))?;
    let grid: StrategyGrid =
        serde_json::from_str(&text).with_context(|| format!("parsing strategy file {}", path.display()))?;
    if !grid.is_complete() {
        bail!("strategy file {} is incomplete; missing nodes {:?}", path.display(), grid.missing());
    }
    Ok(grid)
}

/// Runs the sweep, writing checkpoints, BO logs and (once complete) the grid
/// and heat maps.
pub fn cmd_sweep(ctx: &Context, nodes: Option<&[usize]>) -> Result<SweepOutcome> {
    let sweep_cfg = ctx.config.sweep_config();
    let checkpoints = ctx.out.join("checkpoints");
    let outcome = strategy::sweep(&sweep_cfg, ctx.seed, &ctx.hash, nodes, Some(&checkpoints))?;
    for (index, e) in &outcome.failed {
        log::error!("node {index} failed: {e}");
    }
    for index in 0..sweep_cfg.axis.node_count() {
        if let Some(cp) = strategy::load_checkpoint(&checkpoints, index, ctx.seed, &ctx.hash)? {
            let path = ctx.artifact("bo", &format!("node-{index:03}"), "csv")?;
            cp.bo.write_csv(create(&path)?).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let grid = &outcome.grid;
    if grid.is_complete() {
        write_json_atomic(&ctx.out.join("grid.json"), grid)?;
        write_heatmaps(ctx, grid)?;
    } else {
        log::warn!("grid incomplete: {} of {} nodes missing", grid.missing().len(), grid.nodes.len());
    }
    Ok(outcome)
}

/// Writes both heat-map tables and returns the range of stored values.
pub fn write_heatmaps(ctx: &Context, grid: &StrategyGrid) -> Result<(f64, f64)> {
    let tables = grid.export_heatmaps("log10_w2_speed\\log10_w2_accel")?;
    for (name, table) in ["heatmap-log10-w1-accel", "heatmap-log10-w1-speed"].iter().zip(&tables) {
        let path = ctx.artifact(".", name, "csv")?;
        fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?;
    }
    let range = grid.value_range().expect("complete grid has values");
    log::info!("heat-map value range [{:.3}, {:.3}]", range.0, range.1);
    Ok(range)
}

pub fn cmd_heatmap(ctx: &Context, strategy_file: &Path) -> Result<(f64, f64)> {
    write_heatmaps(ctx, &load_grid(strategy_file)?)
}

/// Summary of a single closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub config_hash: String,
    pub seed: u64,
    pub hdv: HdvProfile,
    pub initial: JointState,
    /// `strategy` or `baseline`.
    pub policy: String,
    pub cav_exit_time: f64,
    pub hdv_exit_time: Option<f64>,
    pub min_distance: f64,
    pub degraded_steps: usize,
    pub cost: TrueCostReport,
}

/// One closed-loop run with online IRL; the CAV weights come from the
/// strategy grid when given and from `baseline` otherwise.
pub fn cmd_simulate(
    ctx: &Context,
    hdv: &HdvProfile,
    strategy_file: Option<&Path>,
    baseline: IndividualWeights,
) -> Result<(SimTrace, SimulationReport)> {
    let cfg = &ctx.config;
    let initial = match cfg.simulate.initial {
        Some(s) => s,
        None => {
            let mut rng = stream_rng(derive_seed(ctx.seed, 3), 0);
            cfg.simulation.prior.sample(&mut rng, cfg.simulation.scenario.safety_radius)
        }
    };
    let (trace, policy) = match strategy_file {
        Some(path) => (run_simulation(&initial, hdv, &load_grid(path)?, &cfg.simulation)?, "strategy"),
        None => (run_simulation(&initial, hdv, &FixedWeights(baseline), &cfg.simulation)?, "baseline"),
    };
    let cost = true_cost(&trace, &cfg.simulation.cost, &cfg.simulation.fuel);
    let report = SimulationReport {
        config_hash: ctx.hash.clone(),
        seed: ctx.seed,
        hdv: *hdv,
        initial,
        policy: policy.into(),
        cav_exit_time: trace.cav_exit_time,
        hdv_exit_time: trace.hdv_exit_time,
        min_distance: trace.min_distance,
        degraded_steps: trace.degraded_steps,
        cost,
    };
    let path = ctx.artifact("traces", "trace", "csv")?;
    trace.write_csv(create(&path)?).with_context(|| format!("writing {}", path.display()))?;
    let path = ctx.artifact("traces", "estimates", "csv")?;
    trace.write_estimates_csv(create(&path)?).with_context(|| format!("writing {}", path.display()))?;
    write_json_atomic(&ctx.out.join("simulation.json"), &report)?;
    Ok((trace, report))
}

/// Paired adaptive-vs-baseline runs; writes `report.csv`, `summary.csv`
/// and `histogram.csv`.
pub fn cmd_compare(ctx: &Context, strategy_file: &Path, baseline: IndividualWeights) -> Result<ComparisonReport> {
    let grid = load_grid(strategy_file)?;
    let report = compare(&ctx.config, ctx.seed, &grid, &FixedWeights(baseline))?;
    if report.failed > 0 {
        log::warn!("{} pairs excluded after failed runs", report.failed);
    }
    let write = |name: &str, f: &dyn Fn(BufWriter<File>) -> csv::Result<()>| -> Result<()> {
        let path = ctx.out.join(name);
        f(create(&path)?).with_context(|| format!("writing {}", path.display()))
    };
    write("report.csv", &|w| report.write_pairs_csv(w))?;
    write("summary.csv", &|w| report.write_summary_csv(w))?;
    write("histogram.csv", &|w| report.write_histogram_csv(w))?;
    Ok(report)
}
