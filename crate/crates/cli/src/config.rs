//! Run configuration: one JSON document covering every experiment.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gtmpc_core::bayesopt::BoConfig;
use gtmpc_core::dynamics::{JointState, VehicleState};
use gtmpc_core::evaluation::{HdvProfile, SimulationConfig};
use gtmpc_core::objectives::IndividualWeights;
use gtmpc_core::strategy::{GridAxis, SweepConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Parent of the timestamped run directories.
    pub output_root: PathBuf,
    /// Closed-loop settings for `simulate` and `compare`.
    pub simulation: SimulationConfig,
    pub sweep: SweepSection,
    pub compare: CompareSection,
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_root: PathBuf::from("runs"),
            simulation: SimulationConfig::default(),
            sweep: SweepSection::default(),
            compare: CompareSection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

/// Offline sweep settings. The simulation settings are taken from
/// [`RunConfig::simulation`] except for `irl_enabled`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: GridAxis,
    pub bo: BoConfig,
    pub n_s: usize,
    pub hdv_shared: f64,
    pub hdv_horizon: usize,
    /// Learn the HDV weights online in the sweep simulations; when off, the
    /// MPC is given each node's true weights.
    pub irl_enabled: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepConfig::default();
        Self {
            axis: s.axis,
            bo: s.bo,
            n_s: s.n_s,
            hdv_shared: s.hdv_shared,
            hdv_horizon: s.hdv_horizon,
            irl_enabled: s.simulation.irl_enabled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub runs: usize,
    /// HDV weights are drawn log-uniformly from `[10^lo, 10^hi]²`.
    pub hdv_log10_range: (f64, f64),
    pub hdv_shared: f64,
    pub hdv_horizon: usize,
    /// Width of the improvement histogram bins, in percent.
    pub histogram_width: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { runs: 200, hdv_log10_range: (-2.0, 2.0), hdv_shared: 1e3, hdv_horizon: 10, histogram_width: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Initial state of single runs; drawn from the prior when absent.
    pub initial: Option<JointState>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { initial: Some(JointState::new(VehicleState::new(-45.0, 8.0), VehicleState::new(-45.0, 8.0))) }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate().with_context(|| format!("validating {}", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate().context("simulation")?;
        self.sweep_config().validate().context("sweep")?;
        let c = &self.compare;
        let (lo, hi) = c.hdv_log10_range;
        if c.runs == 0 {
            bail!("compare.runs must be positive");
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            bail!("compare.hdv_log10_range must be an increasing finite pair");
        }
        if !(c.hdv_shared > 0.0 && c.hdv_shared.is_finite()) || c.hdv_horizon == 0 {
            bail!("compare.hdv_shared and compare.hdv_horizon must be positive");
        }
        if !(c.histogram_width > 0.0 && c.histogram_width.is_finite()) {
            bail!("compare.histogram_width must be positive");
        }
        if let Some(init) = &self.simulate.initial {
            if !(init.distance() > self.simulation.scenario.safety_radius) {
                bail!("simulate.initial must start farther apart than the safety radius");
            }
        }
        Ok(())
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let s = &self.sweep;
        SweepConfig {
            axis: s.axis,
            bo: s.bo.clone(),
            n_s: s.n_s,
            hdv_shared: s.hdv_shared,
            hdv_horizon: s.hdv_horizon,
            simulation: SimulationConfig { irl_enabled: s.irl_enabled, ..self.simulation.clone() },
        }
    }

    /// Leading 12 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// `out` when given, otherwise `output_root/<UTC timestamp>-<hash>`.
    pub fn output_dir(&self, out: Option<&Path>) -> PathBuf {
        match out {
            Some(p) => p.to_path_buf(),
            None => {
                let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
                self.output_root.join(format!("{stamp}-{}", self.hash()))
            }
        }
    }
}

/// A preset name (`altruistic`, `neutral`, `egoistic`) or an inline
/// `HdvProfile` JSON object.
pub fn parse_hdv_profile(spec: &str) -> Result<HdvProfile> {
    let profile = if spec.trim_start().starts_with('{') {
        serde_json::from_str(spec).context("parsing --hdv-profile JSON")?
    } else {
        HdvProfile::named(spec)
            .with_context(|| format!("unknown HDV profile {spec:?}; expected altruistic, neutral, egoistic or JSON"))?
    };
    profile.validate()?;
    Ok(profile)
}

/// Fixed CAV weights of the comparison baseline.
///
/// `fixed` is ω₁ = (1, 1); `fixed:A,B` sets `log₁₀ ω₁ = (A, B)`.
pub fn parse_baseline(spec: &str) -> Result<IndividualWeights> {
    match spec.split_once(':') {
        None if spec == "fixed" => Ok(IndividualWeights::new(1.0, 1.0)),
        Some(("fixed", rest)) => {
            let parts: Vec<f64> = rest
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("parsing baseline weights {rest:?}"))?;
            match parts[..] {
                [a, b] if a.is_finite() && b.is_finite() => Ok(IndividualWeights::from_log10([a, b])),
                _ => bail!("baseline needs two finite log10 weights, got {rest:?}"),
            }
        }
        _ => bail!("unknown baseline {spec:?}; expected fixed or fixed:A,B"),
    }
}

/// Node list: comma-separated indices or inclusive ranges `A..B` / `A..=B`.
pub fn parse_nodes(spec: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = item.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let (a, b): (usize, usize) = (
                a.parse().with_context(|| format!("bad node range {item:?}"))?,
                b.parse().with_context(|| format!("bad node range {item:?}"))?,
            );
            if a > b {
                bail!("empty node range {item:?}");
            }
            out.extend(a..=b);
        } else {
            out.push(item.parse().with_context(|| format!("bad node index {item:?}"))?);
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        bail!("--nodes selects no nodes");
    }
    Ok(out)
}
