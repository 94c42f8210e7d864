use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};
use gtmpc::commands::{cmd_compare, cmd_heatmap, cmd_simulate, cmd_sweep};
use gtmpc::config::{parse_baseline, parse_hdv_profile, parse_nodes};
use gtmpc::{Context, RunConfig};

/// Intersection crossing with game-theoretic MPC, online IRL and
/// Bayesian-optimized weight adaptation.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; a fresh `runs/<timestamp>-<hash>` otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the weight adaptation grid (resumable with the same --out).
    Sweep {
        /// Node subset: indices or inclusive ranges, e.g. `0..8,40`.
        #[arg(long)]
        nodes: Option<String>,
    },
    /// One closed-loop run with a given driver.
    Simulate {
        /// altruistic | neutral | egoistic | HdvProfile JSON.
        #[arg(long, default_value = "neutral")]
        hdv_profile: String,
        /// Strategy grid (grid.json); the baseline weights are used without it.
        #[arg(long)]
        strategy_file: Option<PathBuf>,
        /// fixed | fixed:LOG10_W_ACCEL,LOG10_W_SPEED
        #[arg(long, default_value = "fixed")]
        baseline: String,
    },
    /// Paired adaptive-vs-baseline runs over random drivers and initial states.
    Compare {
        #[arg(long)]
        strategy_file: PathBuf,
        #[arg(long, default_value = "fixed")]
        baseline: String,
        /// Overrides compare.runs.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Export heat maps of a strategy grid.
    Heatmap {
        #[arg(long)]
        strategy_file: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring worker pool")?;
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Command::Compare { runs: Some(n), .. } = &cli.command {
        config.compare.runs = *n;
    }
    let ctx = Context::new(config, cli.seed, cli.out.as_deref())?;
    log::info!("output {} (config {}, seed {})", ctx.out.display(), ctx.hash, ctx.seed);

    match &cli.command {
        Command::Sweep { nodes } => {
            let nodes = nodes.as_deref().map(parse_nodes).transpose()?;
            let o = cmd_sweep(&ctx, nodes.as_deref())?;
            println!(
                "computed {} nodes, {} failed, {} missing",
                o.computed.len(),
                o.failed.len(),
                o.grid.missing().len()
            );
            if !o.failed.is_empty() {
                anyhow::bail!("{} nodes failed", o.failed.len());
            }
        }
        Command::Simulate { hdv_profile, strategy_file, baseline } => {
            let hdv = parse_hdv_profile(hdv_profile)?;
            let (_, r) = cmd_simulate(&ctx, &hdv, strategy_file.as_deref(), parse_baseline(baseline)?)?;
            let hdv_exit = r.hdv_exit_time.map_or("none".into(), |t| format!("{t:.2} s"));
            println!(
                "CAV exit {:.2} s, HDV exit {hdv_exit}, min distance {:.2} m, true cost {:.3}",
                r.cav_exit_time, r.min_distance, r.cost.total
            );
        }
        Command::Compare { strategy_file, baseline, .. } => {
            let r = cmd_compare(&ctx, strategy_file, parse_baseline(baseline)?)?;
            let c = r.counts;
            println!(
                "safe both {}, adaptive only {}, baseline only {}, unsafe both {} ({} failed)",
                c.safe_both, c.safe_adaptive_only, c.safe_baseline_only, c.unsafe_both, r.failed
            );
            let pct = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{x:.2}%"));
            println!(
                "improvement over {} safe pairs: mean {}, median {}",
                r.improvements.len(),
                pct(r.mean_improvement),
                pct(r.median_improvement)
            );
        }
        Command::Heatmap { strategy_file } => {
            let (lo, hi) = cmd_heatmap(&ctx, strategy_file)?;
            println!("log10 w1 range [{lo:.3}, {hi:.3}]");
        }
    }
    Ok(())
}
