//! Reward-modeling objectives and their gradients with respect to rewards.
//!
//! Every objective is a function of the batch of reward pairs
//! `(r_w, r_l)`; gradients flow back into the network through
//! [`crate::rmcore::backward_into`]. Per-pair losses are averaged over the
//! batch, and batch reductions run left to right in pair order.
//!
//! | kind       | per-pair loss                                          |
//! |------------|--------------------------------------------------------|
//! | `BT`       | `−log σ(r_w − r_l)`                                    |
//! | `BT-BSR`   | BT, plus `λ · (mean of all 2|B| rewards)²` per batch   |
//! | `BT-Norm`  | `−log σ((r_w − r_l) / √(r_w² + r_l² + eps))`           |
//! | `BT-Hinge` | `max(0, m − (r_w − r_l))`                              |
//! | `BT-DR`    | BT `− log σ(r_w) − log σ(−r_l)`                        |

use serde::{Deserialize, Serialize};

use crate::numkit::{log_sigmoid, sigmoid};
use crate::rmcore::{backward_into, forward, ModelError, ParamGradients, RewardModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "bt")]
    Bt,
    #[serde(rename = "bt-bsr")]
    BtBsr,
    #[serde(rename = "bt-norm")]
    BtNorm,
    #[serde(rename = "bt-hinge")]
    BtHinge,
    #[serde(rename = "bt-dr")]
    BtDr,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Bt,
        LossKind::BtBsr,
        LossKind::BtNorm,
        LossKind::BtHinge,
        LossKind::BtDr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bt => "bt",
            LossKind::BtBsr => "bt-bsr",
            LossKind::BtNorm => "bt-norm",
            LossKind::BtHinge => "bt-hinge",
            LossKind::BtDr => "bt-dr",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown loss '{s}' (expected one of bt, bt-bsr, bt-norm, bt-hinge, bt-dr)"))
    }
}

/// Which batch penalty the BSR term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsrVariant {
    /// `(Σ r / 2|B|)²`; the per-reward gradient is the batch mean over `|B|`.
    #[default]
    SquaredMean,
    /// `Σ r² / 2|B|`; the per-reward gradient is `r / |B|`.
    MeanOfSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    /// BSR weight; only read for `BT-BSR`.
    pub lambda: f64,
    /// Hinge margin; only read for `BT-Hinge`.
    pub margin: f64,
    /// Guard added under the square root of BT-Norm.
    pub norm_eps: f64,
    pub bsr_variant: BsrVariant,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::Bt,
            lambda: 1e-3,
            margin: 1.0,
            norm_eps: 1e-8,
            bsr_variant: BsrVariant::SquaredMean,
        }
    }
}

impl LossSpec {
    pub fn of(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return Err(format!("norm_eps must be positive, got {}", self.norm_eps));
        }
        Ok(())
    }
}

/// Rewards for one optimization batch: `(r_w, r_l)` per triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRewards {
    pub pairs: Vec<(f64, f64)>,
}

impl BatchRewards {
    pub fn new(pairs: Vec<(f64, f64)>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Mean over all `2|B|` rewards.
    pub fn reward_mean(&self) -> f64 {
        let sum: f64 = self.pairs.iter().map(|(w, l)| w + l).sum();
        sum / (2 * self.pairs.len()) as f64
    }
}

pub fn bt_loss(r_w: f64, r_l: f64) -> f64 {
    -log_sigmoid(r_w - r_l)
}

/// `(Σ_i (r_w + r_l) / 2|B|)²`.
pub fn bsr_penalty(batch: &BatchRewards) -> f64 {
    let m = batch.reward_mean();
    m * m
}

/// `Σ_i (r_w² + r_l²) / 2|B|`.
pub fn bsr_mean_of_squares(batch: &BatchRewards) -> f64 {
    let sum: f64 = batch.pairs.iter().map(|(w, l)| w * w + l * l).sum();
    sum / (2 * batch.pairs.len()) as f64
}

pub fn bt_norm_loss(r_w: f64, r_l: f64, eps: f64) -> f64 {
    let s = (r_w * r_w + r_l * r_l + eps).sqrt();
    -log_sigmoid((r_w - r_l) / s)
}

pub fn hinge_loss(r_w: f64, r_l: f64, m: f64) -> f64 {
    (m - (r_w - r_l)).max(0.0)
}

pub fn bt_dr_loss(r_w: f64, r_l: f64) -> f64 {
    bt_loss(r_w, r_l) - log_sigmoid(r_w) - log_sigmoid(-r_l)
}

/// Per-pair loss and its partials `(∂/∂r_w, ∂/∂r_l)`, before batch averaging.
fn pair_loss_and_grad(spec: &LossSpec, r_w: f64, r_l: f64) -> (f64, f64, f64) {
    match spec.kind {
        LossKind::Bt | LossKind::BtBsr => {
            let s = sigmoid(-(r_w - r_l));
            (bt_loss(r_w, r_l), -s, s)
        }
        LossKind::BtNorm => {
            let s = (r_w * r_w + r_l * r_l + spec.norm_eps).sqrt();
            let d = r_w - r_l;
            let u = d / s;
            let dl_du = -sigmoid(-u);
            let s3 = s * s * s;
            let du_dw = 1.0 / s - d * r_w / s3;
            let du_dl = -1.0 / s - d * r_l / s3;
            (-log_sigmoid(u), dl_du * du_dw, dl_du * du_dl)
        }
        LossKind::BtHinge => {
            let v = spec.margin - (r_w - r_l);
            if v > 0.0 {
                (v, -1.0, 1.0)
            } else {
                (0.0, 0.0, 0.0)
            }
        }
        LossKind::BtDr => {
            let s = sigmoid(-(r_w - r_l));
            (
                bt_dr_loss(r_w, r_l),
                -s - sigmoid(-r_w),
                s + sigmoid(r_l),
            )
        }
    }
}

/// Batch loss and `∂loss/∂r` for every reward, as `(d r_w, d r_l)` per pair.
///
/// The loss is the mean per-pair loss; `BT-BSR` adds `λ` times the batch
/// penalty. Under the squared-mean penalty every reward receives the same
/// extra gradient `λ μ / |B|`, with `μ` the mean of all `2|B|` rewards.
pub fn batch_loss_and_reward_grads(spec: &LossSpec, batch: &BatchRewards) -> (f64, Vec<(f64, f64)>) {
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for &(r_w, r_l) in &batch.pairs {
        let (l, gw, gl) = pair_loss_and_grad(spec, r_w, r_l);
        total += l;
        grads.push((gw / n, gl / n));
    }
    let mut loss = total / n;
    if spec.kind == LossKind::BtBsr && spec.lambda != 0.0 {
        match spec.bsr_variant {
            BsrVariant::SquaredMean => {
                let mu = batch.reward_mean();
                loss += spec.lambda * mu * mu;
                let g = spec.lambda * mu / n;
                for (gw, gl) in &mut grads {
                    *gw += g;
                    *gl += g;
                }
            }
            BsrVariant::MeanOfSquares => {
                loss += spec.lambda * bsr_mean_of_squares(batch);
                for ((gw, gl), (r_w, r_l)) in grads.iter_mut().zip(&batch.pairs) {
                    *gw += spec.lambda * r_w / n;
                    *gl += spec.lambda * r_l / n;
                }
            }
        }
    }
    (loss, grads)
}

/// Input pair for the end-to-end gradient check: `(x, y_w, y_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniPair {
    pub x: Vec<f64>,
    pub y_w: Vec<f64>,
    pub y_l: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty minibatch")]
    Empty,
}

fn end_to_end_loss(spec: &LossSpec, params: &RewardModelParams, batch: &[MiniPair]) -> Result<f64, GradCheckError> {
    let pairs = batch
        .iter()
        .map(|p| Ok((forward(params, &p.x, &p.y_w)?.reward, forward(params, &p.x, &p.y_l)?.reward)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let (loss, _) = batch_loss_and_reward_grads(spec, &BatchRewards::new(pairs));
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(GradCheckError::NonFiniteLoss)
    }
}

/// Analytic parameter gradient of the batch loss: reward gradients pushed
/// through the network's backward pass.
pub fn batch_param_gradients(
    spec: &LossSpec,
    params: &RewardModelParams,
    batch: &[MiniPair],
) -> Result<(f64, ParamGradients), GradCheckError> {
    if batch.is_empty() {
        return Err(GradCheckError::Empty);
    }
    let mut traces = Vec::with_capacity(batch.len());
    for p in batch {
        traces.push((forward(params, &p.x, &p.y_w)?, forward(params, &p.x, &p.y_l)?));
    }
    let rewards = BatchRewards::new(traces.iter().map(|(w, l)| (w.reward, l.reward)).collect());
    let (loss, reward_grads) = batch_loss_and_reward_grads(spec, &rewards);
    if !loss.is_finite() {
        return Err(GradCheckError::NonFiniteLoss);
    }
    let mut grads = ParamGradients::zeros_like(params);
    for ((tw, tl), (gw, gl)) in traces.iter().zip(&reward_grads) {
        backward_into(params, tw, *gw, &mut grads)?;
        backward_into(params, tl, *gl, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Relative error with a small absolute floor, so parameters whose true
/// gradient is ~0 are judged on absolute error instead.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares the composed analytic gradient against central finite
/// differences of the end-to-end loss over every parameter and returns the
/// largest relative error.
pub fn grad_check_full(
    spec: &LossSpec,
    params: &RewardModelParams,
    minibatch: &[MiniPair],
    eps: f64,
) -> Result<f64, GradCheckError> {
    let (_, analytic) = batch_param_gradients(spec, params, minibatch)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..probe.values().len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + eps;
        let up = end_to_end_loss(spec, &probe, minibatch)?;
        probe.values_mut()[i] = orig - eps;
        let down = end_to_end_loss(spec, &probe, minibatch)?;
        probe.values_mut()[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.values[i], fd));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmcore::{init_reward_model, ModelDims};
    use crate::seeds;
    use rand::{Rng as _, SeedableRng};
    use rand_distr::StandardNormal;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn bt_reference_values() {
        assert!((bt_loss(0.0, 0.0) - LN2).abs() < 1e-15);
        // mpmath: −log σ(20)
        let want = 2.061_153_620_314_380_7e-9;
        assert!((bt_loss(10.0, -10.0) - want).abs() < 1e-20);
        let base = bt_loss(1.0, 0.0);
        for c in [-10.0, -1.0, 1.0, 10.0, 123.0] {
            assert!((bt_loss(c + 1.0, c) - base).abs() < 1e-14);
        }
        assert!(bt_loss(1000.0, -1000.0).is_finite() && bt_loss(-1000.0, 1000.0).is_finite());
        assert!((bt_loss(-1000.0, 0.0) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn bsr_reference_values() {
        assert_eq!(bsr_penalty(&BatchRewards::new(vec![(2.0, -2.0)])), 0.0);
        assert_eq!(bsr_penalty(&BatchRewards::new(vec![(3.0, 1.0)])), 4.0);
        assert_eq!(bsr_penalty(&BatchRewards::new(vec![(1.0, 0.0), (2.0, -1.0)])), 0.25);
    }

    #[test]
    fn bt_norm_reference_values() {
        // mpmath: −log σ(√2) and −log σ(7/5)
        let sqrt2_case = 0.217_621_721_581_743_73;
        for c in [0.5, 1.0, 7.0, 100.0] {
            assert!((bt_norm_loss(c, -c, 0.0) - sqrt2_case).abs() < 1e-14, "{c}");
            assert!((bt_norm_loss(c, -c, 1e-8) - sqrt2_case).abs() < 1e-7, "{c}");
        }
        assert!((bt_norm_loss(0.0, 0.0, 1e-8) - LN2).abs() < 1e-15);
        assert!((bt_norm_loss(3.0, -4.0, 0.0) - 0.220_417_409_918_450_93).abs() < 1e-14);
    }

    #[test]
    fn hinge_reference_values() {
        assert_eq!(hinge_loss(2.0, 0.0, 1.0), 0.0);
        assert_eq!(hinge_loss(0.5, 0.0, 1.0), 0.5);
        assert_eq!(hinge_loss(0.0, 0.0, 1.0), 1.0);
    }

    #[test]
    fn dr_reference_values() {
        assert!((bt_dr_loss(0.0, 0.0) - 3.0 * LN2).abs() < 1e-14);
        let v = bt_dr_loss(10.0, -10.0);
        assert!((v - 9.079_985_958_734_961e-5).abs() < 1e-15 && v < 1e-4);
        assert_ne!(bt_dr_loss(1.0, 0.0), bt_dr_loss(2.0, 1.0));
    }

    #[test]
    fn shift_invariance_where_expected() {
        let batch = BatchRewards::new(vec![(0.7, -0.2), (1.3, 0.4)]);
        for c in [-10.0, -1.0, 1.0, 10.0] {
            for &(w, l) in &batch.pairs {
                assert!((bt_loss(w + c, l + c) - bt_loss(w, l)).abs() < 1e-13);
                assert!((hinge_loss(w + c, l + c, 1.0) - hinge_loss(w, l, 1.0)).abs() < 1e-13);
            }
        }
        let shifted = BatchRewards::new(batch.pairs.iter().map(|(w, l)| (w + 1.0, l + 1.0)).collect());
        assert_ne!(bsr_penalty(&shifted), bsr_penalty(&batch));
        assert_ne!(bt_dr_loss(1.7, 0.6), bt_dr_loss(0.7, -0.4));
    }

    #[test]
    fn bt_norm_scale_invariance() {
        for &(w, l) in &[(0.7, -0.2), (3.0, 1.0), (-2.0, 5.0)] {
            let base = bt_norm_loss(w, l, 0.0);
            for a in [0.5, 2.0, 10.0] {
                assert!((bt_norm_loss(a * w, a * l, 0.0) - base).abs() < 1e-14);
                assert!((bt_norm_loss(a * w, a * l, 1e-8) - base).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn bt_strictly_decreasing_in_margin() {
        let mut prev = f64::INFINITY;
        for i in -40..=40 {
            let v = bt_loss(i as f64 * 0.5, 0.0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn batch_grad_simple_cases() {
        let (loss, g) = batch_loss_and_reward_grads(&LossSpec::of(LossKind::Bt), &BatchRewards::new(vec![(0.0, 0.0)]));
        assert!((loss - LN2).abs() < 1e-15);
        assert_eq!(g, vec![(-0.5, 0.5)]);

        let spec = LossSpec {
            lambda: 1.0,
            ..LossSpec::of(LossKind::BtBsr)
        };
        let b = BatchRewards::new(vec![(2.0, -2.0)]);
        let (_, with) = batch_loss_and_reward_grads(&spec, &b);
        let (_, plain) = batch_loss_and_reward_grads(&LossSpec::of(LossKind::Bt), &b);
        assert_eq!(with, plain);
    }

    #[test]
    fn bsr_gradient_is_uniform() {
        let b = BatchRewards::new(vec![(1.0, 0.5), (-0.3, 2.0), (0.9, 0.1)]);
        let spec = LossSpec {
            lambda: 0.7,
            ..LossSpec::of(LossKind::BtBsr)
        };
        let (_, with) = batch_loss_and_reward_grads(&spec, &b);
        let (_, plain) = batch_loss_and_reward_grads(&LossSpec::of(LossKind::Bt), &b);
        let expected = 0.7 * b.reward_mean() / 3.0;
        for ((a, c), (p, q)) in with.iter().zip(&plain) {
            assert!((a - p - expected).abs() < 1e-15);
            assert!((c - q - expected).abs() < 1e-15);
        }
    }

    fn random_batch(seed: u64, n: usize) -> BatchRewards {
        let mut rng = seeds::Rng::seed_from_u64(seed);
        BatchRewards::new(
            (0..n)
                .map(|_| {
                    (
                        2.0 * rng.sample::<f64, _>(StandardNormal),
                        2.0 * rng.sample::<f64, _>(StandardNormal),
                    )
                })
                .collect(),
        )
    }

    fn all_specs() -> Vec<LossSpec> {
        let mut specs: Vec<LossSpec> = LossKind::ALL.iter().map(|&k| LossSpec::of(k)).collect();
        specs.push(LossSpec {
            lambda: 0.5,
            ..LossSpec::of(LossKind::BtBsr)
        });
        specs.push(LossSpec {
            lambda: 0.5,
            bsr_variant: BsrVariant::MeanOfSquares,
            ..LossSpec::of(LossKind::BtBsr)
        });
        specs
    }

    #[test]
    fn reward_grads_match_finite_differences() {
        for spec in all_specs() {
            for seed in 0..5 {
                let batch = random_batch(seed, 8);
                let (_, grads) = batch_loss_and_reward_grads(&spec, &batch);
                let eps = 1e-6;
                for i in 0..batch.len() {
                    for side in 0..2 {
                        let eval = |delta: f64| {
                            let mut b = batch.clone();
                            if side == 0 {
                                b.pairs[i].0 += delta;
                            } else {
                                b.pairs[i].1 += delta;
                            }
                            batch_loss_and_reward_grads(&spec, &b).0
                        };
                        let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                        let an = if side == 0 { grads[i].0 } else { grads[i].1 };
                        assert!(
                            (an - fd).abs() <= 1e-6 * an.abs().max(fd.abs()).max(1e-3),
                            "{:?} seed {seed} pair {i} side {side}: {an} vs {fd}",
                            spec.kind
                        );
                    }
                }
            }
        }
    }

    fn mini_batch(seed: u64, dx: usize, dy: usize, n: usize) -> Vec<MiniPair> {
        let mut rng = seeds::Rng::seed_from_u64(seed);
        let mut v = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect() };
        (0..n)
            .map(|_| MiniPair {
                x: v(dx),
                y_w: v(dy),
                y_l: v(dy),
            })
            .collect()
    }

    #[test]
    fn end_to_end_gradients_match() {
        let dims = ModelDims {
            input_dim: 6,
            hidden: vec![5, 4],
        };
        for spec in all_specs() {
            let params = init_reward_model(dims.clone(), 31).unwrap();
            let batch = mini_batch(5, 3, 3, 6);
            let err = grad_check_full(&spec, &params, &batch, 1e-5).unwrap();
            assert!(err < 1e-4, "{:?}: {err}", spec.kind);
        }
    }

    #[test]
    fn zero_lambda_bsr_matches_bt_exactly() {
        let dims = ModelDims {
            input_dim: 6,
            hidden: vec![5, 4],
        };
        let params = init_reward_model(dims, 2).unwrap();
        let batch = mini_batch(9, 3, 3, 4);
        let bsr = LossSpec {
            lambda: 0.0,
            ..LossSpec::of(LossKind::BtBsr)
        };
        let (la, ga) = batch_param_gradients(&bsr, &params, &batch).unwrap();
        let (lb, gb) = batch_param_gradients(&LossSpec::of(LossKind::Bt), &params, &batch).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert!(ga.values.iter().zip(&gb.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn satisfied_hinge_has_flat_gradient() {
        let dims = ModelDims {
            input_dim: 4,
            hidden: vec![3],
        };
        let params = init_reward_model(dims, 1).unwrap();
        let batch = mini_batch(2, 2, 2, 3);
        let spec = LossSpec {
            margin: 1e-9,
            ..LossSpec::of(LossKind::BtHinge)
        };
        let oriented: Vec<MiniPair> = batch
            .into_iter()
            .map(|p| {
                let rw = forward(&params, &p.x, &p.y_w).unwrap().reward;
                let rl = forward(&params, &p.x, &p.y_l).unwrap().reward;
                if rw - rl > 1e-6 {
                    p
                } else {
                    MiniPair {
                        x: p.x,
                        y_w: p.y_l,
                        y_l: p.y_w,
                    }
                }
            })
            .collect();
        let (loss, g) = batch_param_gradients(&spec, &params, &oriented).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parse_loss_names() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("bt-magic".parse::<LossKind>().is_err());
        let json = serde_json::to_string(&LossSpec::of(LossKind::BtHinge)).unwrap();
        assert!(json.contains("\"bt-hinge\""));
    }
}
