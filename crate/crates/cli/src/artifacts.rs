//! JSON documents written next to checkpoints and CSV logs.

use serde::{Deserialize, Serialize};

use rmlab::diagnostics::{EvalReport, ModelReport};
use rmlab::losses::LossSpec;
use rmlab::rloosim::RlooConfig;
use rmlab::rmcore::ModelDims;
use rmlab::trainkit::TrainConfig;

pub const RM_CKPT: &str = "rm.ckpt";
pub const RM_META: &str = "rm.meta.json";
pub const REPORT: &str = "report.json";
pub const POLICY_CKPT: &str = "policy.ckpt";
pub const RLOO_META: &str = "rloo.meta.json";
pub const SUMMARY: &str = "summary.json";

/// How a reward model was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub label: String,
    pub seed: u64,
    pub world_seed: u64,
    pub init_seed: u64,
    pub dims: ModelDims,
    pub train: TrainConfig,
    pub total_steps: usize,
    /// Set when training stopped on a non-finite value; the checkpoint is
    /// then the last finite state.
    pub diverged_at: Option<usize>,
}

/// Final diagnostics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub loss: LossSpec,
    pub seed: u64,
    pub final_train_loss: f64,
    pub diagnostics: ModelReport,
}

/// Output of `eval`: accuracy and τ for any scorer, plus representation
/// diagnostics when the scorer is a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub scorer: String,
    pub eval: EvalReport,
    pub diagnostics: Option<ModelReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlooMeta {
    /// Label of the proxy reward model, or `gold`.
    pub proxy: String,
    pub seed: u64,
    pub world_seed: u64,
    pub candidate_seed: u64,
    pub config: RlooConfig,
    pub final_expected_gold: f64,
    pub final_expected_proxy: f64,
    pub final_kl: f64,
    pub diverged_at: Option<usize>,
}
