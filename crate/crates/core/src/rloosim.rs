//! KL-regularized RLOO policy optimization over discrete candidate sets.
//!
//! Each held-out prompt gets a fixed pool of `K` candidate responses from the
//! unseen generator pool. The policy is a small scorer network whose logits
//! over a pool define `π(y | x) = softmax(logits)`. Every step samples `k`
//! candidates per prompt without replacement, scores them with a frozen proxy
//! reward model, and ascends the leave-one-out policy gradient. Gold scores
//! are cached per candidate and only ever logged, never optimized.
//!
//! The KL penalty is applied inside the reward by default,
//! `r̃ᵢ = r(x, yᵢ) − β log(π(yᵢ|x) / π_ref(yᵢ|x))`. With `kl_in_reward = false`
//! it becomes a separate exact loss term `β · KL(π ‖ π_ref)` instead.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::goldworld::{GoldWorld, Response, Split, WorldError};
use crate::numkit::{log_softmax, NumError};
use crate::rmcore::{
    backward_into, forward, init_reward_model, ForwardTrace, ModelDims, ModelError, ParamGradients, RewardModelParams,
    Scorer,
};
use crate::seeds;
use crate::trainkit::{optimizer_step, OptimizerKind, OptimizerState, TrainError};

const MAX_CANDIDATE_ATTEMPTS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum RlooError {
    #[error("invalid rloo config: {0}")]
    Config(String),
    #[error("need {requested} validation prompts, world has {available}")]
    InsufficientPrompts { requested: usize, available: usize },
    #[error("could not draw {0} distinct candidates for prompt {1}")]
    CandidateExhausted(usize, u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Numeric(#[from] NumError),
    /// The policy went non-finite. Carries the policy from before the
    /// failing step and the log so far.
    #[error("policy optimization diverged at step {step}")]
    Diverged {
        step: usize,
        last_good: Box<PolicyParams>,
        log: RlooRunLog,
    },
}

impl From<TrainError> for RlooError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => RlooError::Model(m),
            other => RlooError::Config(other.to_string()),
        }
    }
}

/// A prompt from the validation split with its fixed candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub prompt_id: u64,
    pub x: Vec<f64>,
    pub candidates: Vec<Response>,
    pub gold: Vec<f64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Draws `n_prompts` validation prompts and `k_candidates` responses for
/// each from the validation generator pool.
///
/// Generators are used round-robin from a per-prompt shuffle of the pool, so
/// every generator appears when `K` is at least the pool size. A candidate
/// whose gold score exactly ties an earlier one is redrawn.
pub fn build_candidate_sets(
    world: &GoldWorld,
    n_prompts: usize,
    k_candidates: usize,
    seed: u64,
) -> Result<Vec<CandidateSet>, RlooError> {
    if k_candidates < 2 {
        return Err(RlooError::Config(format!("need at least 2 candidates, got {k_candidates}")));
    }
    if n_prompts == 0 {
        return Err(RlooError::Config("need at least one prompt".into()));
    }
    let mut prompts: Vec<_> = world.prompts_in(Split::Valid).collect();
    if prompts.len() < n_prompts {
        return Err(RlooError::InsufficientPrompts {
            requested: n_prompts,
            available: prompts.len(),
        });
    }
    prompts.shuffle(&mut seeds::stream(seed, "rloo.pick"));
    prompts.truncate(n_prompts);
    prompts.sort_by_key(|p| p.id);

    let pool = world.pool(Split::Valid);
    prompts
        .into_iter()
        .map(|p| {
            let mut rng = seeds::indexed_stream(seed, "rloo.candidates", p.id);
            let mut order = pool.to_vec();
            order.shuffle(&mut rng);
            let mut candidates = Vec::with_capacity(k_candidates);
            let mut gold: Vec<f64> = Vec::with_capacity(k_candidates);
            for i in 0..k_candidates {
                let generator = order[i % order.len()];
                let mut attempts = 0;
                loop {
                    let y = world.sample_response(generator, &p.x, &mut rng)?;
                    let g = world.gold_score(&p.x, &y)?;
                    if !gold.contains(&g) {
                        candidates.push(Response { generator, y });
                        gold.push(g);
                        break;
                    }
                    attempts += 1;
                    if attempts >= MAX_CANDIDATE_ATTEMPTS {
                        return Err(RlooError::CandidateExhausted(k_candidates, p.id));
                    }
                }
            }
            Ok(CandidateSet {
                prompt_id: p.id,
                x: p.x.clone(),
                candidates,
                gold,
            })
        })
        .collect()
}

/// The policy: a scorer network whose outputs are logits over a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub net: RewardModelParams,
}

impl PolicyParams {
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self, RlooError> {
        Ok(Self {
            net: init_reward_model(dims, seeds::stream_seed(seed, "rloo.policy"))?,
        })
    }
}

fn logits_with_traces(policy: &PolicyParams, set: &CandidateSet) -> Result<Vec<ForwardTrace>, ModelError> {
    set.candidates.iter().map(|c| forward(&policy.net, &set.x, &c.y)).collect()
}

pub fn policy_logits(policy: &PolicyParams, set: &CandidateSet) -> Result<Vec<f64>, RlooError> {
    Ok(logits_with_traces(policy, set)?.iter().map(|t| t.reward).collect())
}

/// `π(· | x)` over the candidate set.
pub fn policy_distribution(policy: &PolicyParams, set: &CandidateSet) -> Result<Vec<f64>, RlooError> {
    Ok(crate::numkit::softmax(&policy_logits(policy, set)?)?)
}

/// Leave-one-out advantages `aᵢ = rᵢ − mean_{j≠i} r_j`.
pub fn rloo_advantages(rewards: &[f64]) -> Result<Vec<f64>, RlooError> {
    let k = rewards.len();
    if k < 2 {
        return Err(RlooError::Config(format!("leave-one-out needs k >= 2, got {k}")));
    }
    let total: f64 = rewards.iter().sum();
    let others = (k - 1) as f64;
    Ok(rewards.iter().map(|r| r - (total - r) / others).collect())
}

/// `Σ p log(p / q)` from log-probabilities.
pub fn discrete_kl(log_p: &[f64], log_q: &[f64]) -> f64 {
    let kl: f64 = log_p
        .iter()
        .zip(log_q)
        .map(|(lp, lq)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                assert!(lq.is_finite(), "reference assigns zero probability to a supported candidate");
                p * (lp - lq)
            }
        })
        .sum();
    kl.max(0.0)
}

fn entropy(log_p: &[f64]) -> f64 {
    -log_p
        .iter()
        .map(|lp| if lp.is_finite() { lp.exp() * lp } else { 0.0 })
        .sum::<f64>()
}

/// Mean exact KL from policy to reference over the candidate sets.
pub fn kl_to_reference(policy: &PolicyParams, reference: &PolicyParams, sets: &[CandidateSet]) -> Result<f64, RlooError> {
    if sets.is_empty() {
        return Err(RlooError::Config("no candidate sets".into()));
    }
    let mut total = 0.0;
    for s in sets {
        let lp = log_softmax(&policy_logits(policy, s)?)?;
        let lq = log_softmax(&policy_logits(reference, s)?)?;
        total += discrete_kl(&lp, &lq);
    }
    Ok(total / sets.len() as f64)
}

/// Indices of `k` draws without replacement from `softmax(logits)`, by
/// perturbing each logit with Gumbel noise and keeping the top `k`.
pub fn gumbel_top_k(logits: &[f64], k: usize, rng: &mut seeds::Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = logits
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let u: f64 = rng.random::<f64>();
            // u ∈ [0, 1); 1 − u keeps the log argument away from zero.
            (l - (-(1.0 - u).ln()).ln(), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlooConfig {
    /// Samples per prompt per step.
    pub k: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// Prompts sampled into each step's minibatch.
    pub prompts_per_step: usize,
    /// Validation prompts given a candidate pool.
    pub n_prompts: usize,
    /// Candidates per pool (`K`).
    pub n_candidates: usize,
    pub kl_in_reward: bool,
    pub optimizer: OptimizerKind,
    /// Hidden widths of the policy network.
    pub policy_hidden: Vec<usize>,
}

impl Default for RlooConfig {
    fn default() -> Self {
        Self {
            k: 2,
            beta: 0.05,
            learning_rate: 3e-3,
            steps: 300,
            seed: 0,
            prompts_per_step: 16,
            n_prompts: 64,
            n_candidates: 8,
            kl_in_reward: true,
            optimizer: OptimizerKind::default(),
            policy_hidden: vec![64, 64],
        }
    }
}

impl RlooConfig {
    pub fn validate(&self) -> Result<(), RlooError> {
        let bad = |m: String| Err(RlooError::Config(m));
        if self.n_candidates < 2 {
            return bad(format!("n_candidates must be >= 2, got {}", self.n_candidates));
        }
        if self.k < 2 || self.k > self.n_candidates {
            return bad(format!("k must be in 2..={}, got {}", self.n_candidates, self.k));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.prompts_per_step == 0 || self.prompts_per_step > self.n_prompts {
            return bad(format!("prompts_per_step must be in 1..={}", self.n_prompts));
        }
        if self.policy_hidden.is_empty() {
            return bad("policy_hidden needs at least one layer".into());
        }
        Ok(())
    }
}

/// One row of the run log. Sampled quantities come from the minibatch drawn
/// at this step; `kl`, `entropy` and the expectations are exact over every
/// candidate set, evaluated before the step's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlooRecord {
    pub step: usize,
    pub proxy_reward_mean: f64,
    pub gold_reward_mean: f64,
    pub kl: f64,
    pub entropy: f64,
    pub lr: f64,
    pub expected_proxy: f64,
    pub expected_gold: f64,
    /// Largest `|Σ aᵢ|` over the step's groups.
    pub max_advantage_sum: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RlooRunLog {
    pub records: Vec<RlooRecord>,
}

/// Frozen scores of every candidate under the proxy model.
fn proxy_table<S: Scorer + ?Sized>(rm: &S, sets: &[CandidateSet]) -> Result<Vec<Vec<f64>>, RlooError> {
    sets.iter()
        .map(|s| {
            s.candidates
                .iter()
                .map(|c| rm.score(&s.x, &c.y).map_err(RlooError::from))
                .collect()
        })
        .collect()
}

/// `Σᵢ aᵢ log π(y_{idx_i} | x) / k` for fixed samples and advantages.
pub fn surrogate_objective(
    policy: &PolicyParams,
    set: &CandidateSet,
    samples: &[usize],
    advantages: &[f64],
) -> Result<f64, RlooError> {
    let lp = log_softmax(&policy_logits(policy, set)?)?;
    let k = samples.len() as f64;
    Ok(samples.iter().zip(advantages).map(|(&i, a)| a * lp[i]).sum::<f64>() / k)
}

/// Coefficients `c_j` with `∇ Σᵢ aᵢ log πᵢ = Σ_j c_j ∇l_j`.
fn logit_coefficients(pi: &[f64], samples: &[usize], advantages: &[f64]) -> Vec<f64> {
    let a_sum: f64 = advantages.iter().sum();
    let mut c: Vec<f64> = pi.iter().map(|p| -p * a_sum).collect();
    for (&i, a) in samples.iter().zip(advantages) {
        c[i] += a;
    }
    c
}

/// Gradient of [`surrogate_objective`] with respect to the policy parameters.
pub fn surrogate_gradient(
    policy: &PolicyParams,
    set: &CandidateSet,
    samples: &[usize],
    advantages: &[f64],
) -> Result<ParamGradients, RlooError> {
    let traces = logits_with_traces(policy, set)?;
    let logits: Vec<f64> = traces.iter().map(|t| t.reward).collect();
    let pi = crate::numkit::softmax(&logits)?;
    let coeff = logit_coefficients(&pi, samples, advantages);
    let k = samples.len() as f64;
    let mut g = ParamGradients::zeros_like(&policy.net);
    for (t, c) in traces.iter().zip(&coeff) {
        backward_into(&policy.net, t, c / k, &mut g)?;
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct RlooOutcome {
    pub policy: PolicyParams,
    pub log: RlooRunLog,
}

struct SetState {
    traces: Vec<ForwardTrace>,
    log_pi: Vec<f64>,
    log_ref: Vec<f64>,
}

/// Runs `cfg.steps` RLOO updates against the frozen scorer `rm`.
///
/// The log has `steps + 1` rows: row `t` describes the policy after `t`
/// updates, so row 0 is the reference state.
pub fn rloo_train<S: Scorer + ?Sized>(
    policy_init: &PolicyParams,
    reference: &PolicyParams,
    rm: &S,
    sets: &[CandidateSet],
    cfg: &RlooConfig,
) -> Result<RlooOutcome, RlooError> {
    cfg.validate()?;
    if sets.len() < cfg.prompts_per_step {
        return Err(RlooError::InsufficientPrompts {
            requested: cfg.prompts_per_step,
            available: sets.len(),
        });
    }
    if let Some(s) = sets.iter().find(|s| s.len() < cfg.k) {
        return Err(RlooError::Config(format!(
            "candidate set for prompt {} has {} < k candidates",
            s.prompt_id,
            s.len()
        )));
    }
    let proxy = proxy_table(rm, sets)?;
    let ref_logps = sets
        .iter()
        .map(|s| Ok(log_softmax(&policy_logits(reference, s)?)?))
        .collect::<Result<Vec<_>, RlooError>>()?;

    let mut policy = policy_init.clone();
    let mut opt = OptimizerState::default();
    let mut log = RlooRunLog::default();
    let mut rng = seeds::stream(cfg.seed, "rloo.sampling");
    let mut set_order: Vec<usize> = (0..sets.len()).collect();
    let n_sets = sets.len() as f64;

    for step in 0..=cfg.steps {
        let states = sets
            .iter()
            .zip(&ref_logps)
            .map(|(s, lq)| {
                let traces = logits_with_traces(&policy, s)?;
                let logits: Vec<f64> = traces.iter().map(|t| t.reward).collect();
                Ok(SetState {
                    traces,
                    log_pi: log_softmax(&logits)?,
                    log_ref: lq.clone(),
                })
            })
            .collect::<Result<Vec<_>, RlooError>>();
        let states = match states {
            Ok(s) => s,
            Err(RlooError::Model(ModelError::NonFinite { .. })) | Err(RlooError::Numeric(NumError::NonFinite)) => {
                return Err(RlooError::Diverged {
                    step,
                    last_good: Box::new(policy),
                    log,
                })
            }
            Err(e) => return Err(e),
        };

        let mut kl = 0.0;
        let mut ent = 0.0;
        let mut e_proxy = 0.0;
        let mut e_gold = 0.0;
        for (i, st) in states.iter().enumerate() {
            kl += discrete_kl(&st.log_pi, &st.log_ref);
            ent += entropy(&st.log_pi);
            for (j, lp) in st.log_pi.iter().enumerate() {
                let p = lp.exp();
                e_proxy += p * proxy[i][j];
                e_gold += p * sets[i].gold[j];
            }
        }

        set_order.shuffle(&mut rng);
        let batch = &set_order[..cfg.prompts_per_step];
        let mut grads = ParamGradients::zeros_like(&policy.net);
        let mut proxy_sum = 0.0;
        let mut gold_sum = 0.0;
        let mut max_adv_sum: f64 = 0.0;
        let scale = 1.0 / (cfg.prompts_per_step * cfg.k) as f64;
        for &si in batch {
            let st = &states[si];
            let logits: Vec<f64> = st.traces.iter().map(|t| t.reward).collect();
            let samples = gumbel_top_k(&logits, cfg.k, &mut rng);
            let shaped: Vec<f64> = samples
                .iter()
                .map(|&j| {
                    proxy_sum += proxy[si][j];
                    gold_sum += sets[si].gold[j];
                    if cfg.kl_in_reward {
                        proxy[si][j] - cfg.beta * (st.log_pi[j] - st.log_ref[j])
                    } else {
                        proxy[si][j]
                    }
                })
                .collect();
            let adv = rloo_advantages(&shaped)?;
            max_adv_sum = max_adv_sum.max(adv.iter().sum::<f64>().abs());

            let pi: Vec<f64> = st.log_pi.iter().map(|l| l.exp()).collect();
            // Descend the negated surrogate, so gradients enter with a minus.
            let mut coeff: Vec<f64> = logit_coefficients(&pi, &samples, &adv)
                .into_iter()
                .map(|c| -c * scale)
                .collect();
            if !cfg.kl_in_reward && cfg.beta > 0.0 {
                let set_kl = discrete_kl(&st.log_pi, &st.log_ref);
                let per_prompt = cfg.beta / cfg.prompts_per_step as f64;
                for (j, c) in coeff.iter_mut().enumerate() {
                    *c += per_prompt * pi[j] * (st.log_pi[j] - st.log_ref[j] - set_kl);
                }
            }
            for (t, c) in st.traces.iter().zip(&coeff) {
                backward_into(&policy.net, t, *c, &mut grads)?;
            }
        }

        let sampled = (cfg.prompts_per_step * cfg.k) as f64;
        log.records.push(RlooRecord {
            step,
            proxy_reward_mean: proxy_sum / sampled,
            gold_reward_mean: gold_sum / sampled,
            kl: kl / n_sets,
            entropy: ent / n_sets,
            lr: cfg.learning_rate,
            expected_proxy: e_proxy / n_sets,
            expected_gold: e_gold / n_sets,
            max_advantage_sum: max_adv_sum,
        });
        if step == cfg.steps {
            break;
        }
        if grads.values.iter().any(|g| !g.is_finite()) {
            return Err(RlooError::Diverged {
                step,
                last_good: Box::new(policy),
                log,
            });
        }
        let before = policy.clone();
        optimizer_step(&mut opt, &cfg.optimizer, policy.net.values_mut(), &grads.values, cfg.learning_rate)?;
        if policy.net.values().iter().any(|v| !v.is_finite()) {
            return Err(RlooError::Diverged {
                step: step + 1,
                last_good: Box::new(before),
                log,
            });
        }
    }
    Ok(RlooOutcome { policy, log })
}
