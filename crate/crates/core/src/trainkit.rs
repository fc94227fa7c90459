//! Deterministic minibatch training of reward models.
//!
//! One call to [`train_rm`] owns the parameters for the whole run. The
//! training set is reshuffled every epoch from a stream derived from the run
//! seed, so `(init params, bundle, config)` pin down every update bit for bit.
//!
//! Steps count optimizer updates and start at 1. A record is written at
//! step 0 (the untouched initialization), every `log_every` steps, every
//! `eval_every` steps and at the final step; diagnostic hooks run on the
//! `eval_every` grid, at step 0 and at the end.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::goldworld::{DatasetBundle, PreferenceTriplet};
use crate::losses::{batch_loss_and_reward_grads, BatchRewards, LossSpec};
use crate::numkit::norm;
use crate::rmcore::{backward_into, decompose, forward, ForwardTrace, ModelError, ParamGradients, RewardModelParams};
use crate::seeds;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("diagnostics hook failed: {0}")]
    Hook(String),
    /// The loss or an update went non-finite. Carries the parameters from
    /// before the failing step and everything logged up to that point.
    #[error("training diverged at step {step}")]
    Diverged {
        step: usize,
        last_good: Box<RewardModelParams>,
        log: MetricsLog,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Shape of the learning rate after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    #[default]
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub warmup_fraction: f64,
    pub schedule: Schedule,
    pub log_every: usize,
    pub eval_every: usize,
    /// Rescales the gradient to this global L2 norm when it is exceeded.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossSpec::default(),
            learning_rate: 3e-3,
            batch_size: 32,
            epochs: 3,
            seed: 0,
            optimizer: OptimizerKind::default(),
            warmup_fraction: 0.05,
            schedule: Schedule::LinearDecay,
            log_every: 10,
            eval_every: 10,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.loss.validate().map_err(TrainError::Config)?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            return bad(format!("batch_size must be in 1..={n_train}, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction must be in [0, 1), got {}", self.warmup_fraction));
        }
        if self.log_every == 0 || self.eval_every == 0 {
            return bad("log_every and eval_every must be >= 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return bad("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        self.epochs * self.steps_per_epoch(n_train)
    }
}

/// Learning rate for 1-indexed `step` out of `total`.
///
/// Warmup ramps linearly to the peak over the first
/// `round(warmup_fraction · total)` steps; linear decay then falls toward
/// zero so that the last step still takes a small nonzero update.
pub fn learning_rate_at(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    let peak = cfg.learning_rate;
    let warmup = (cfg.warmup_fraction * total as f64).round() as usize;
    if step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    match cfg.schedule {
        Schedule::Constant => peak,
        Schedule::LinearDecay => peak * (total + 1 - step) as f64 / (total + 1 - warmup) as f64,
    }
}

/// Optimizer moments; empty until the first Adam step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Applies one update with learning rate `lr`.
pub fn optimizer_step(
    state: &mut OptimizerState,
    kind: &OptimizerKind,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} params vs {} gradients",
            params.len(),
            grads.len()
        ))
        .into());
    }
    state.step += 1;
    match *kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            if state.m.len() != params.len() {
                state.m = vec![0.0; params.len()];
                state.v = vec![0.0; params.len()];
            }
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for i in 0..params.len() {
                let g = grads[i];
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

/// One logged point of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    /// 1-indexed epoch the step belongs to; 0 for the initial record.
    pub epoch: usize,
    /// Loss on the whole training set at the logged parameters, treating the
    /// set as a single batch.
    pub train_loss: f64,
    pub learning_rate: f64,
    pub head_norm: f64,
    /// Largest `|r − ‖W_p‖‖h‖cos ψ| / (|r| + 1e-9)` over every training response.
    pub decomposition_error: f64,
    /// Values returned by the diagnostics hook, empty off the eval grid.
    pub extra: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<MetricsRecord>,
}

impl MetricsLog {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    pub fn first(&self) -> Option<&MetricsRecord> {
        self.records.first()
    }
}

/// What a diagnostics hook sees: frozen parameters at a step boundary.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub step: usize,
    pub epoch: usize,
    pub params: &'a RewardModelParams,
}

pub type HookResult = Result<Vec<(String, f64)>, Box<dyn std::error::Error + Send + Sync>>;

/// A hook that records nothing.
pub fn no_hook(_: &Snapshot<'_>) -> HookResult {
    Ok(Vec::new())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: RewardModelParams,
    pub log: MetricsLog,
}

fn pair_traces(params: &RewardModelParams, t: &PreferenceTriplet) -> Result<(ForwardTrace, ForwardTrace), ModelError> {
    Ok((forward(params, &t.x, &t.chosen.y)?, forward(params, &t.x, &t.rejected.y)?))
}

/// Loss over `set` at `params`, with the whole set as one batch.
pub fn dataset_loss(spec: &LossSpec, params: &RewardModelParams, set: &[PreferenceTriplet]) -> Result<f64, ModelError> {
    let pairs = set
        .iter()
        .map(|t| Ok((forward(params, &t.x, &t.chosen.y)?.reward, forward(params, &t.x, &t.rejected.y)?.reward)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(batch_loss_and_reward_grads(spec, &BatchRewards::new(pairs)).0)
}

/// Dataset loss plus the worst decomposition residual, in one pass.
fn loss_and_decomposition(
    spec: &LossSpec,
    params: &RewardModelParams,
    set: &[PreferenceTriplet],
) -> Result<(f64, f64), ModelError> {
    let mut pairs = Vec::with_capacity(set.len());
    let mut worst: f64 = 0.0;
    for t in set {
        let (tw, tl) = pair_traces(params, t)?;
        for tr in [&tw, &tl] {
            // A zero hidden state or head makes the angle undefined; the
            // identity then holds trivially with r = 0.
            if let Ok(d) = decompose(params, tr) {
                worst = worst.max((tr.reward - d.product()).abs() / (tr.reward.abs() + 1e-9));
            }
        }
        pairs.push((tw.reward, tl.reward));
    }
    let loss = batch_loss_and_reward_grads(spec, &BatchRewards::new(pairs)).0;
    Ok((loss, worst))
}

struct Recorder<'a, H> {
    cfg: &'a TrainConfig,
    train: &'a [PreferenceTriplet],
    steps_per_epoch: usize,
    total: usize,
    hook: H,
    log: MetricsLog,
}

impl<H: FnMut(&Snapshot<'_>) -> HookResult> Recorder<'_, H> {
    fn due(&self, step: usize) -> (bool, bool) {
        let eval = step == 0 || step == self.total || step % self.cfg.eval_every == 0;
        (eval || step % self.cfg.log_every == 0, eval)
    }

    fn record(&mut self, step: usize, params: &RewardModelParams) -> Result<(), TrainError> {
        let (log, eval) = self.due(step);
        if !log {
            return Ok(());
        }
        let (train_loss, decomposition_error) = loss_and_decomposition(&self.cfg.loss, params, self.train)?;
        let epoch = if step == 0 { 0 } else { (step - 1) / self.steps_per_epoch + 1 };
        let extra = if eval {
            (self.hook)(&Snapshot { step, epoch, params }).map_err(|e| TrainError::Hook(e.to_string()))?
        } else {
            Vec::new()
        };
        let learning_rate = if step == 0 {
            0.0
        } else {
            learning_rate_at(self.cfg, step, self.total)
        };
        self.log.records.push(MetricsRecord {
            step,
            epoch,
            train_loss,
            learning_rate,
            head_norm: norm(params.head()),
            decomposition_error,
            extra,
        });
        Ok(())
    }
}

/// Trains `init` on `bundle.d_train`.
///
/// `hook` is called on frozen parameters at step 0, on the `eval_every` grid
/// and after the final step; its named values are stored in the record.
pub fn train_rm<H>(
    init: &RewardModelParams,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    hook: H,
) -> Result<TrainOutcome, TrainError>
where
    H: FnMut(&Snapshot<'_>) -> HookResult,
{
    let train = &bundle.d_train;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    cfg.validate(train.len())?;
    let expected = init.dims().input_dim;
    let got = train[0].x.len() + train[0].chosen.y.len();
    if expected != got {
        return Err(ModelError::DimMismatch { expected, got }.into());
    }

    let steps_per_epoch = cfg.steps_per_epoch(train.len());
    let total = cfg.total_steps(train.len());
    let mut rec = Recorder {
        cfg,
        train,
        steps_per_epoch,
        total,
        hook,
        log: MetricsLog::default(),
    };
    let mut params = init.clone();
    let mut opt = OptimizerState::default();
    let mut grads = ParamGradients::zeros_like(&params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    rec.record(0, &params)?;

    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = seeds::indexed_stream(cfg.seed, "train.shuffle", epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let diverged = |log: MetricsLog, p: &RewardModelParams| TrainError::Diverged {
                step,
                last_good: Box::new(p.clone()),
                log,
            };
            let mut traces = Vec::with_capacity(batch.len());
            for &i in batch {
                match pair_traces(&params, &train[i]) {
                    Ok(tr) => traces.push(tr),
                    Err(ModelError::NonFinite { .. }) => return Err(diverged(rec.log, &params)),
                    Err(e) => return Err(e.into()),
                }
            }
            let rewards = BatchRewards::new(traces.iter().map(|(w, l)| (w.reward, l.reward)).collect());
            let (loss, reward_grads) = batch_loss_and_reward_grads(&cfg.loss, &rewards);
            if !loss.is_finite() {
                return Err(diverged(rec.log, &params));
            }
            grads.clear();
            for ((tw, tl), (gw, gl)) in traces.iter().zip(&reward_grads) {
                backward_into(&params, tw, *gw, &mut grads)?;
                backward_into(&params, tl, *gl, &mut grads)?;
            }
            if let Some(max_norm) = cfg.grad_clip {
                let g = norm(&grads.values);
                if g > max_norm {
                    let s = max_norm / g;
                    grads.values.iter_mut().for_each(|v| *v *= s);
                }
            }
            let lr = learning_rate_at(cfg, step, total);
            let before = params.clone();
            optimizer_step(&mut opt, &cfg.optimizer, params.values_mut(), &grads.values, lr)?;
            if params.values().iter().any(|v| !v.is_finite()) {
                return Err(diverged(rec.log, &before));
            }
            rec.record(step, &params)?;
        }
    }
    Ok(TrainOutcome { params, log: rec.log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goldworld::{build_datasets, generate_world, SizeConfig, WorldConfig};
    use crate::losses::LossKind;
    use crate::rmcore::{init_reward_model, ModelDims};

    fn small_bundle() -> DatasetBundle {
        let cfg = WorldConfig {
            d_x: 4,
            d_y: 4,
            n_train_prompts: 80,
            n_valid_prompts: 20,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg, 3).unwrap();
        build_datasets(&world, SizeConfig { train: 64, valid: 10 }, 5).unwrap()
    }

    fn small_model() -> RewardModelParams {
        init_reward_model(
            ModelDims {
                input_dim: 8,
                hidden: vec![8, 6],
            },
            11,
        )
        .unwrap()
    }

    #[test]
    fn sgd_hand_case() {
        let mut st = OptimizerState::default();
        let mut p = [1.0];
        optimizer_step(&mut st, &OptimizerKind::Sgd, &mut p, &[2.0], 0.1).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for g in [0.3, -5.0, 1e3] {
            let mut st = OptimizerState::default();
            let mut p = [0.0];
            optimizer_step(&mut st, &OptimizerKind::default(), &mut p, &[g], 0.01).unwrap();
            assert!((p[0].abs() - 0.01).abs() < 1e-8, "{g}: {}", p[0]);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn optimizer_rejects_shape_mismatch() {
        let mut st = OptimizerState::default();
        let mut p = [0.0, 1.0];
        assert!(optimizer_step(&mut st, &OptimizerKind::Sgd, &mut p, &[1.0], 0.1).is_err());
    }

    #[test]
    fn warmup_ramp_and_decay() {
        let cfg = TrainConfig {
            warmup_fraction: 0.1,
            learning_rate: 2.0,
            ..TrainConfig::default()
        };
        assert!((learning_rate_at(&cfg, 5, 100) - 1.0).abs() < 1e-15);
        assert!((learning_rate_at(&cfg, 10, 100) - 2.0).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for s in 11..=100 {
            let lr = learning_rate_at(&cfg, s, 100);
            assert!(lr < prev && lr > 0.0);
            prev = lr;
        }
        let constant = TrainConfig {
            schedule: Schedule::Constant,
            ..cfg
        };
        assert_eq!(learning_rate_at(&constant, 70, 100), 2.0);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let bundle = small_bundle();
        let init = small_model();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let out = train_rm(&init, &bundle, &cfg, no_hook).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn runs_are_bit_identical() {
        let bundle = small_bundle();
        let init = small_model();
        let cfg = TrainConfig {
            batch_size: 16,
            log_every: 1,
            ..TrainConfig::default()
        };
        let a = train_rm(&init, &bundle, &cfg, no_hook).unwrap();
        let b = train_rm(&init, &bundle, &cfg, no_hook).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        let steps: Vec<_> = a.log.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, (0..=cfg.total_steps(64)).collect::<Vec<_>>());
        assert!(a.log.records.iter().all(|r| r.decomposition_error < 1e-9));
    }

    #[test]
    fn zero_lambda_bsr_trajectory_equals_bt() {
        let bundle = small_bundle();
        let init = small_model();
        let bt = TrainConfig {
            batch_size: 16,
            log_every: 1,
            ..TrainConfig::default()
        };
        let bsr = TrainConfig {
            loss: LossSpec {
                lambda: 0.0,
                ..LossSpec::of(LossKind::BtBsr)
            },
            ..bt.clone()
        };
        let a = train_rm(&init, &bundle, &bt, no_hook).unwrap();
        let b = train_rm(&init, &bundle, &bsr, no_hook).unwrap();
        assert!(a.params.values().iter().zip(b.params.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn epoch_shuffles_are_permutations() {
        for epoch in 0..5 {
            let mut order: Vec<usize> = (0..50).collect();
            order.shuffle(&mut seeds::indexed_stream(9, "train.shuffle", epoch));
            let mut sorted = order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        }
    }

    #[test]
    fn hook_runs_on_eval_grid() {
        let bundle = small_bundle();
        let cfg = TrainConfig {
            batch_size: 16,
            log_every: 2,
            eval_every: 4,
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let out = train_rm(&small_model(), &bundle, &cfg, |s: &Snapshot<'_>| {
            seen.push(s.step);
            Ok(vec![("step_seen".into(), s.step as f64)])
        })
        .unwrap();
        assert_eq!(seen, vec![0, 4, 8, 12]);
        let with_extra: Vec<_> = out.log.records.iter().filter(|r| !r.extra.is_empty()).map(|r| r.step).collect();
        assert_eq!(with_extra, seen);
        assert_eq!(
            out.log.records.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![0, 2, 4, 6, 8, 10, 12]
        );
    }

    #[test]
    fn divergence_keeps_last_good_params() {
        let bundle = small_bundle();
        let init = small_model();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: f64::MAX,
            warmup_fraction: 0.0,
            schedule: Schedule::Constant,
            batch_size: 16,
            ..TrainConfig::default()
        };
        match train_rm(&init, &bundle, &cfg, no_hook) {
            Err(TrainError::Diverged { step, last_good, log }) => {
                assert!(step >= 1);
                assert!(last_good.values().iter().all(|v| v.is_finite()));
                assert_eq!(log.records[0].step, 0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bundle = small_bundle();
        let init = small_model();
        for cfg in [
            TrainConfig {
                batch_size: 65,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                warmup_fraction: 1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(train_rm(&init, &bundle, &cfg, no_hook), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn bt_training_lowers_train_loss() {
        let bundle = small_bundle();
        let cfg = TrainConfig {
            batch_size: 16,
            epochs: 5,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let out = train_rm(&small_model(), &bundle, &cfg, no_hook).unwrap();
        assert!(out.log.last().unwrap().train_loss < out.log.first().unwrap().train_loss);
    }
}
