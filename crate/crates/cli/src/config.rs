//! The experiment config file: one JSON document holding every knob, with a
//! full default set. Commands read the sections they need; flags override.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rmlab::goldworld::{SizeConfig, WorldConfig};
use rmlab::losses::{LossKind, LossSpec};
use rmlab::rloosim::RlooConfig;
use rmlab::rmcore::ModelDims;
use rmlab::seeds;
use rmlab::trainkit::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for the world and its datasets.
    pub seed: u64,
    pub world: WorldConfig,
    pub sizes: SizeConfig,
    /// Body widths of the reward network.
    pub model_hidden: Vec<usize>,
    /// Objectives to train; each gets one run per seed.
    pub losses: Vec<LossSpec>,
    /// Run seeds, shared across objectives so runs are matched.
    pub seeds: Vec<u64>,
    /// Training settings; `loss` and `seed` are overridden per run.
    pub train: TrainConfig,
    /// Policy optimization settings; `seed` is overridden per run.
    pub rloo: RlooConfig,
    /// Objectives whose reward models serve as RLOO proxies.
    pub rloo_losses: Vec<LossKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            sizes: SizeConfig::default(),
            model_hidden: vec![64, 64],
            losses: LossKind::ALL.iter().map(|&k| LossSpec::of(k)).collect(),
            seeds: vec![0, 1, 2, 3],
            train: TrainConfig::default(),
            rloo: RlooConfig::default(),
            rloo_losses: vec![LossKind::Bt, LossKind::BtBsr],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Missing(format!("config file {}", path.display())),
            _ => CliError::io(path, e),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.sizes.validate(&self.world)?;
        if self.model_hidden.is_empty() {
            return Err(CliError::Config("model_hidden needs at least one layer".into()));
        }
        self.model_dims().validate()?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(CliError::Config("seeds must be distinct".into()));
        }
        let mut labels: Vec<String> = self.losses.iter().map(run_label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.losses.len() {
            return Err(CliError::Config("loss specs must have distinct labels".into()));
        }
        for l in &self.losses {
            l.validate().map_err(CliError::Config)?;
        }
        for k in &self.rloo_losses {
            if !self.losses.iter().any(|l| l.kind == *k) {
                return Err(CliError::Config(format!("rloo proxy '{k}' is not among the trained losses")));
            }
        }
        self.rloo.validate()?;
        if self.rloo.n_prompts > self.world.n_valid_prompts {
            return Err(CliError::Config(format!(
                "rloo.n_prompts {} exceeds {} validation prompts",
                self.rloo.n_prompts, self.world.n_valid_prompts
            )));
        }
        Ok(())
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            input_dim: self.world.input_dim(),
            hidden: self.model_hidden.clone(),
        }
    }
}

/// Seed for dataset construction, derived from the world's master seed.
pub fn dataset_seed(master: u64) -> u64 {
    seeds::stream_seed(master, "cli.datasets")
}

/// Seed for reward-model initialization, derived from the run seed.
pub fn rm_init_seed(run_seed: u64) -> u64 {
    seeds::stream_seed(run_seed, "cli.rm_init")
}

/// Seed for the RLOO candidate pools, derived from the run seed.
pub fn candidate_seed(run_seed: u64) -> u64 {
    seeds::stream_seed(run_seed, "cli.candidates")
}

/// Directory-safe name for a loss spec. BT-BSR runs with a non-default
/// weight carry it in the name so λ sweeps do not collide.
pub fn run_label(spec: &LossSpec) -> String {
    if spec.kind == LossKind::BtBsr && spec.lambda != LossSpec::default().lambda {
        format!("bt-bsr-lambda-{}", spec.lambda)
    } else {
        spec.kind.name().to_string()
    }
}
