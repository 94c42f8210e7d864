//! Paired comparison of an adaptive weight policy against a fixed baseline.

use std::io::Write;

use anyhow::Result;
use gtmpc_core::dynamics::JointState;
use gtmpc_core::evaluation::{monte_carlo_run, true_cost, CavWeightPolicy, HdvProfile, TrueCostReport};
use gtmpc_core::rng::{derive_seed, stream_rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// One paired configuration: both arms share the HDV and the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub run: usize,
    pub hdv: HdvProfile,
    pub initial: JointState,
    pub adaptive: TrueCostReport,
    pub baseline: TrueCostReport,
}

impl PairRecord {
    /// Relative time-energy saving of the adaptive arm in percent; only
    /// defined when both arms stayed safe.
    pub fn improvement(&self) -> Option<f64> {
        if self.adaptive.unsafe_flag || self.baseline.unsafe_flag {
            return None;
        }
        let b = self.baseline.time_energy();
        Some(100.0 * (b - self.adaptive.time_energy()) / b)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyCounts {
    pub safe_both: usize,
    pub safe_adaptive_only: usize,
    pub safe_baseline_only: usize,
    pub unsafe_both: usize,
}

impl SafetyCounts {
    pub fn total(&self) -> usize {
        self.safe_both + self.safe_adaptive_only + self.safe_baseline_only + self.unsafe_both
    }

    pub fn adaptive_safe(&self) -> usize {
        self.safe_both + self.safe_adaptive_only
    }

    pub fn baseline_safe(&self) -> usize {
        self.safe_both + self.safe_baseline_only
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub seed: u64,
    pub pairs: Vec<PairRecord>,
    /// Pairs dropped because a run failed in either arm.
    pub failed: usize,
    pub counts: SafetyCounts,
    /// Improvements (percent) over pairs safe in both arms, in run order.
    pub improvements: Vec<f64>,
    pub mean_improvement: Option<f64>,
    pub median_improvement: Option<f64>,
    /// Share of safe-both pairs where the adaptive arm is cheaper.
    pub improved_share: Option<f64>,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

/// Bins of `width` aligned to multiples of `width` covering all values.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    let Some(lo) = values.iter().copied().reduce(f64::min) else {
        return Vec::new();
    };
    let hi = values.iter().copied().fold(lo, f64::max);
    let first = (lo / width).floor() as i64;
    let last = ((hi / width).floor() as i64).max(first);
    let mut bins: Vec<HistogramBin> = (first..=last)
        .map(|k| HistogramBin { lo: k as f64 * width, hi: (k + 1) as f64 * width, count: 0 })
        .collect();
    for v in values {
        let k = ((v / width).floor() as i64 - first).clamp(0, bins.len() as i64 - 1);
        bins[k as usize].count += 1;
    }
    bins
}

/// HDV profile of run `index`, drawn from its own stream.
fn run_profile(config: &RunConfig, seed: u64, index: usize) -> HdvProfile {
    let c = &config.compare;
    let mut rng = stream_rng(derive_seed(seed, 1), index as u64);
    HdvProfile::sample_log_uniform(&mut rng, c.hdv_log10_range.0, c.hdv_log10_range.1, c.hdv_shared, c.hdv_horizon)
}

/// Runs `config.compare.runs` paired simulations in parallel.
///
/// Pairs are reduced in run order, so the report depends only on the seed
/// and configuration, not on the number of worker threads.
pub fn compare(
    config: &RunConfig,
    seed: u64,
    adaptive: &dyn CavWeightPolicy,
    baseline: &dyn CavWeightPolicy,
) -> Result<ComparisonReport> {
    let mut sim = config.simulation.clone();
    // Costs only depend on the run up to the CAV's exit.
    if sim.scenario.control_zone_exit >= sim.cost.safety_radius {
        sim.stop_at_cav_exit = true;
    }
    let init_seed = derive_seed(seed, 2);
    let results: Vec<Option<PairRecord>> = (0..config.compare.runs)
        .into_par_iter()
        .map(|run| {
            let hdv = run_profile(config, seed, run);
            let arm = |policy: &dyn CavWeightPolicy| -> gtmpc_core::Result<(JointState, TrueCostReport)> {
                let (init, trace) = monte_carlo_run(&hdv, policy, &sim, init_seed, run as u64)?;
                Ok((init, true_cost(&trace, &sim.cost, &sim.fuel)))
            };
            match (arm(adaptive), arm(baseline)) {
                (Ok((initial, a)), Ok((init_b, b))) => {
                    debug_assert_eq!(initial, init_b);
                    Some(PairRecord { run, hdv, initial, adaptive: a, baseline: b })
                }
                (a, b) => {
                    for e in [a.err(), b.err()].into_iter().flatten() {
                        log::warn!("comparison run {run} failed: {e}");
                    }
                    None
                }
            }
        })
        .collect();

    let failed = results.iter().filter(|r| r.is_none()).count();
    let pairs: Vec<PairRecord> = results.into_iter().flatten().collect();
    let mut counts = SafetyCounts::default();
    for p in &pairs {
        match (p.adaptive.unsafe_flag, p.baseline.unsafe_flag) {
            (false, false) => counts.safe_both += 1,
            (false, true) => counts.safe_adaptive_only += 1,
            (true, false) => counts.safe_baseline_only += 1,
            (true, true) => counts.unsafe_both += 1,
        }
    }
    let improvements: Vec<f64> = pairs.iter().filter_map(PairRecord::improvement).collect();
    let n = improvements.len();
    let mean_improvement = (n > 0).then(|| improvements.iter().sum::<f64>() / n as f64);
    let mut sorted = improvements.clone();
    sorted.sort_by(f64::total_cmp);
    let improved_share = (n > 0).then(|| improvements.iter().filter(|v| **v > 0.0).count() as f64 / n as f64);
    Ok(ComparisonReport {
        config_hash: config.hash(),
        seed,
        histogram: histogram(&improvements, config.compare.histogram_width),
        median_improvement: median(&sorted),
        pairs,
        failed,
        counts,
        improvements,
        mean_improvement,
        improved_share,
    })
}

impl ComparisonReport {
    /// Safety rate of the adaptive arm over completed pairs.
    pub fn adaptive_safety_rate(&self) -> f64 {
        self.counts.adaptive_safe() as f64 / self.counts.total().max(1) as f64
    }

    pub fn baseline_safety_rate(&self) -> f64 {
        self.counts.baseline_safe() as f64 / self.counts.total().max(1) as f64
    }

    /// Per-pair table.
    pub fn write_pairs_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "config_hash",
            "seed",
            "run",
            "log10_w2_accel",
            "log10_w2_speed",
            "p1_0",
            "v1_0",
            "p2_0",
            "v2_0",
            "adaptive_total",
            "adaptive_time_energy",
            "adaptive_exit_time",
            "adaptive_min_distance",
            "adaptive_unsafe",
            "baseline_total",
            "baseline_time_energy",
            "baseline_exit_time",
            "baseline_min_distance",
            "baseline_unsafe",
            "improvement_pct",
        ])?;
        for p in &self.pairs {
            let (a, b) = (&p.adaptive, &p.baseline);
            out.write_record([
                self.config_hash.clone(),
                self.seed.to_string(),
                p.run.to_string(),
                p.hdv.weights.w_accel.log10().to_string(),
                p.hdv.weights.w_speed_dev.log10().to_string(),
                p.initial.cav.position.to_string(),
                p.initial.cav.speed.to_string(),
                p.initial.hdv.position.to_string(),
                p.initial.hdv.speed.to_string(),
                a.total.to_string(),
                a.time_energy().to_string(),
                a.exit_time.to_string(),
                a.min_distance.to_string(),
                a.unsafe_flag.to_string(),
                b.total.to_string(),
                b.time_energy().to_string(),
                b.exit_time.to_string(),
                b.min_distance.to_string(),
                b.unsafe_flag.to_string(),
                p.improvement().map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Aggregate statistics as `metric,value` rows.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let c = &self.counts;
        let rows = [
            ("config_hash", self.config_hash.clone()),
            ("seed", self.seed.to_string()),
            ("pairs", self.pairs.len().to_string()),
            ("failed", self.failed.to_string()),
            ("safe_both", c.safe_both.to_string()),
            ("safe_adaptive_only", c.safe_adaptive_only.to_string()),
            ("safe_baseline_only", c.safe_baseline_only.to_string()),
            ("unsafe_both", c.unsafe_both.to_string()),
            ("adaptive_safety_rate", self.adaptive_safety_rate().to_string()),
            ("baseline_safety_rate", self.baseline_safety_rate().to_string()),
            ("mean_improvement_pct", opt(self.mean_improvement)),
            ("median_improvement_pct", opt(self.median_improvement)),
            ("improved_share", opt(self.improved_share)),
        ];
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "value"])?;
        for (k, v) in rows {
            out.write_record([k, v.as_str()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_histogram_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["config_hash", "seed", "improvement_lo_pct", "improvement_hi_pct", "count"])?;
        for b in &self.histogram {
            out.write_record([
                self.config_hash.clone(),
                self.seed.to_string(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.count.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[1.0, 2.0, 9.0]), Some(2.0));
        assert_eq!(median(&[1.0, 2.0, 4.0, 9.0]), Some(3.0));
    }

    #[test]
    fn histogram_covers_all_values() {
        let v = [-7.0, -0.1, 0.0, 4.99, 5.0, 23.0];
        let h = histogram(&v, 5.0);
        assert_eq!(h.first().unwrap().lo, -10.0);
        assert_eq!(h.last().unwrap().hi, 25.0);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), v.len());
        assert_eq!(h[1].count, 1);
        assert_eq!(h[2].count, 2);
        assert!(histogram(&[], 5.0).is_empty());
    }
}
