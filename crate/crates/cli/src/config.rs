//! Experiment configuration, read from a TOML file with flat sections.
//!
//! ```toml
//! seed = 7
//! domain = "puddle_world"
//! features = "network"
//!
//! [data]
//! transitions = 50000
//!
//! [train]
//! epochs = 50
//!
//! [regularizer]
//! kind = "skl_exp"
//! beta = 0.1
//! lambda = 0.01
//!
//! [control]
//! alpha0 = 0.004
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparse_rep::{ControlConfig, Domain, EnvConfig, RegularizerSpec, TileCoderConfig, TrainConfig};

/// Which representation the control phase runs on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Network,
    TileCoding,
}

fn default_transitions() -> usize {
    50_000
}

fn default_probe_transitions() -> usize {
    1000
}

fn default_rollouts() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_transitions")]
    pub transitions: usize,
    /// Held-out transitions whose observations are used to report instance
    /// sparsity during training.
    #[serde(default = "default_probe_transitions")]
    pub probe_transitions: usize,
    /// Held-out states whose values are estimated by Monte Carlo for RMSE
    /// reporting; zero disables the RMSE column.
    #[serde(default)]
    pub test_states: usize,
    /// Rollouts per test state.
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            transitions: default_transitions(),
            probe_transitions: default_probe_transitions(),
            test_states: 0,
            rollouts: default_rollouts(),
        }
    }
}

fn default_runs() -> usize {
    5
}

fn default_resolution() -> usize {
    21
}

fn default_heatmap_count() -> usize {
    20
}

fn default_bins() -> usize {
    10
}

fn default_samples() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Probe observations; defaults to the domain's standard five.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<Vec<f64>>>,
    /// Action for each probe (default 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_actions: Option<Vec<usize>>,
    /// Units to render; defaults to `heatmap_count` units chosen by seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap_units: Option<Vec<usize>>,
    #[serde(default = "default_heatmap_count")]
    pub heatmap_count: usize,
    #[serde(default = "default_resolution")]
    pub heatmap_resolution: usize,
    /// Set to false to skip heatmaps; requesting them on a domain that is
    /// not 2-d is an error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmaps: Option<bool>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Observations drawn from the data policy for the sparsity histogram.
    #[serde(default = "default_samples")]
    pub sparsity_samples: usize,
    /// Record probe action-values after every control episode.
    #[serde(default = "default_true")]
    pub track_probes: bool,
}

fn default_true() -> bool {
    true
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            probes: None,
            probe_actions: None,
            heatmap_units: None,
            heatmap_count: default_heatmap_count(),
            heatmap_resolution: default_resolution(),
            heatmaps: None,
            histogram_bins: default_bins(),
            sparsity_samples: default_samples(),
            track_probes: true,
        }
    }
}

fn default_sweep_seeds() -> usize {
    1
}

/// Grids for `sweep`. Only the grids that apply to the configured
/// regularizer or feature kind are used; an omitted one falls back to the
/// standard set for that hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_percent: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tc_grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tc_tilings: Option<Vec<usize>>,
    /// Independent repetitions of every grid point.
    #[serde(default = "default_sweep_seeds")]
    pub seeds: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            lambda: None,
            beta: None,
            p: None,
            k: None,
            k_percent: None,
            alpha0: None,
            tc_grid: None,
            tc_tilings: None,
            seeds: default_sweep_seeds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub domain: Domain,
    #[serde(default)]
    pub features: FeatureKind,
    /// Control runs per invocation.
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub tile_coding: TileCoderConfig,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn new(domain: Domain) -> Self {
        ExperimentConfig {
            seed: 0,
            domain,
            features: FeatureKind::Network,
            runs: default_runs(),
            env: EnvConfig::default(),
            data: DataSection::default(),
            train: TrainConfig::default(),
            regularizer: RegularizerSpec::None,
            control: ControlConfig::default(),
            tile_coding: TileCoderConfig::default(),
            analysis: AnalysisSection::default(),
            sweep: SweepSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical serialization, stamped into every output.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate(&self.regularizer)?;
        self.control.validate()?;
        if self.data.transitions == 0 {
            bail!("data.transitions must be positive");
        }
        if self.runs == 0 {
            bail!("runs must be positive");
        }
        if self.sweep.seeds == 0 {
            bail!("sweep.seeds must be positive");
        }
        if let Some(probes) = &self.analysis.probes {
            if probes.len() < 2 {
                bail!("analysis.probes needs at least two states");
            }
            let d = self.domain.obs_dim();
            if let Some(p) = probes.iter().find(|p| p.len() != d) {
                bail!("probe {p:?} does not have {d} components");
            }
            if let Some(actions) = &self.analysis.probe_actions {
                if actions.len() != probes.len() {
                    bail!("analysis.probe_actions must list one action per probe");
                }
            }
        }
        if let Some(actions) = &self.analysis.probe_actions {
            if let Some(a) = actions.iter().find(|&&a| a >= self.domain.num_actions()) {
                bail!("probe action {a} out of range for {}", self.domain);
            }
        }
        Ok(())
    }

    /// The representation-network layer sizes for this domain.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.domain.obs_dim()];
        sizes.extend_from_slice(&self.train.hidden);
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("domain = \"mountain_car\"").unwrap();
        assert_eq!(cfg, ExperimentConfig::new(Domain::MountainCar));
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.control.epsilon, 0.1);
    }

    #[test]
    fn sections_parse() {
        let cfg = ExperimentConfig::from_toml(
            r#"
seed = 3
domain = "puddle_world"
features = "tile_coding"

[regularizer]
kind = "skl_exp"
beta = 0.1
lambda = 0.01

[control]
alpha0 = 0.04

[tile_coding]
grid = 4
tilings = 16

[sweep]
lambda = [0.1, 0.01, 0.001]
alpha0 = [0.1, 0.01]
seeds = 2
"#,
        )
        .unwrap();
        assert_eq!(cfg.regularizer, RegularizerSpec::SklExp { beta: 0.1, lambda: 0.01 });
        assert_eq!(cfg.features, FeatureKind::TileCoding);
        assert_eq!(cfg.tile_coding.tilings, 16);
        assert_eq!(cfg.sweep.lambda.as_deref(), Some(&[0.1, 0.01, 0.001][..]));
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("domain = \"cartpole\"").is_err());
        assert!(ExperimentConfig::from_toml("domain = \"acrobot\"\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("domain = \"acrobot\"\n[regularizer]\nkind = \"skl_exp\"\nbeta = -1.0\nlambda = 0.1").is_err());
        assert!(ExperimentConfig::from_toml("domain = \"acrobot\"\n[regularizer]\nkind = \"dropout\"\nbeta = 0.1").is_err());
        assert!(ExperimentConfig::from_toml("domain = \"mountain_car\"\n[analysis]\nprobes = [[0.1]]").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::new(Domain::Catcher);
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }
}
