//! Robustness measurements for a frozen reward model.
//!
//! Ranking metrics ([`eval_accuracy`], [`eval_tau`]) accept any [`Scorer`], so
//! the gold network itself can be evaluated as a sanity reference.
//! Representation metrics (norm dispersion, hidden distances, effective rank)
//! need the hidden state and therefore take [`RewardModelParams`].

use serde::{Deserialize, Serialize};

use crate::goldworld::{DatasetBundle, PreferenceTriplet, RankedGroup};
use crate::numkit::{kendall_tau, moments, norm, singular_values, Matrix, MomentStats, NumError};
use crate::rmcore::{forward, ModelError, RewardModelParams, Scorer};

#[derive(Debug, thiserror::Error)]
pub enum DiagError {
    #[error("evaluation set '{0}' is empty")]
    EmptySet(&'static str),
    #[error("matrix has no nonzero singular value")]
    ZeroMatrix,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

/// A borrowed evaluation set, either pairwise or ranked groups.
#[derive(Debug, Clone, Copy)]
pub enum EvalSet<'a> {
    Triplets(&'a [PreferenceTriplet]),
    Groups(&'a [RankedGroup]),
}

impl<'a> EvalSet<'a> {
    pub fn is_empty(&self) -> bool {
        match self {
            EvalSet::Triplets(t) => t.is_empty(),
            EvalSet::Groups(g) => g.is_empty(),
        }
    }

    /// Every `(x, y)` in the set: chosen then rejected for triplets, all
    /// responses in order for groups.
    pub fn responses(&self) -> Vec<(&'a [f64], &'a [f64])> {
        match *self {
            EvalSet::Triplets(ts) => ts
                .iter()
                .flat_map(|t| [(t.x.as_slice(), t.chosen.y.as_slice()), (t.x.as_slice(), t.rejected.y.as_slice())])
                .collect(),
            EvalSet::Groups(gs) => gs
                .iter()
                .flat_map(|g| g.responses.iter().map(move |r| (g.x.as_slice(), r.y.as_slice())))
                .collect(),
        }
    }
}

/// Fraction of triplets scored `r(x, y_w) > r(x, y_l)`; exact ties count 0.5.
pub fn eval_accuracy<S: Scorer + ?Sized>(scorer: &S, triplets: &[PreferenceTriplet]) -> Result<f64, DiagError> {
    if triplets.is_empty() {
        return Err(DiagError::EmptySet("triplets"));
    }
    let mut hits = 0.0;
    for t in triplets {
        let w = scorer.score(&t.x, &t.chosen.y)?;
        let l = scorer.score(&t.x, &t.rejected.y)?;
        if w > l {
            hits += 1.0;
        } else if w == l {
            hits += 0.5;
        }
    }
    Ok(hits / triplets.len() as f64)
}

/// Mean Kendall τ-b between model scores and gold scores over groups.
///
/// A group where the model gives every response the same score carries no
/// ranking information; it contributes τ = 0.
pub fn eval_tau<S: Scorer + ?Sized>(scorer: &S, groups: &[RankedGroup]) -> Result<f64, DiagError> {
    if groups.is_empty() {
        return Err(DiagError::EmptySet("groups"));
    }
    let mut total = 0.0;
    for g in groups {
        let scores = g
            .responses
            .iter()
            .map(|r| scorer.score(&g.x, &r.y))
            .collect::<Result<Vec<_>, _>>()?;
        let all_tied = scores.iter().all(|s| *s == scores[0]);
        total += if all_tied { 0.0 } else { kendall_tau(&scores, &g.gold_scores)? };
    }
    Ok(total / groups.len() as f64)
}

/// Euclidean norm of the reward head `W_p`.
pub fn head_norm(params: &RewardModelParams) -> f64 {
    norm(params.head())
}

/// Stacks `h(x, y)` for every response in the set, one row each.
pub fn hidden_states(params: &RewardModelParams, set: EvalSet<'_>) -> Result<Matrix, DiagError> {
    if set.is_empty() {
        return Err(DiagError::EmptySet("hidden states"));
    }
    let responses = set.responses();
    let width = params.dims().hidden_dim();
    let mut data = Vec::with_capacity(responses.len() * width);
    for (x, y) in responses.iter() {
        data.extend_from_slice(forward(params, x, y)?.hidden());
    }
    Ok(Matrix::new(responses.len(), width, data)?)
}

/// Moments of `‖h(x, y)‖` over every response in the set.
pub fn norm_dispersion(params: &RewardModelParams, set: EvalSet<'_>) -> Result<MomentStats, DiagError> {
    if set.is_empty() {
        return Err(DiagError::EmptySet("norm dispersion"));
    }
    let norms = set
        .responses()
        .into_iter()
        .map(|(x, y)| forward(params, x, y).map(|t| norm(t.hidden())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(moments(&norms)?)
}

/// Moments of `‖h(x, y_w) − h(x, y_l)‖` over triplets.
pub fn hidden_distance_stats(params: &RewardModelParams, triplets: &[PreferenceTriplet]) -> Result<MomentStats, DiagError> {
    if triplets.is_empty() {
        return Err(DiagError::EmptySet("hidden distance"));
    }
    let dists = triplets
        .iter()
        .map(|t| {
            let hw = forward(params, &t.x, &t.chosen.y)?;
            let hl = forward(params, &t.x, &t.rejected.y)?;
            let d: f64 = hw.hidden().iter().zip(hl.hidden()).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(d.sqrt())
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(moments(&dists)?)
}

/// `exp(−Σ p_j ln p_j)` with `p_j = σ_j / Σσ` and `0 · ln 0 = 0`.
pub fn effective_rank_of_spectrum(sigma: &[f64]) -> Result<f64, DiagError> {
    let total: f64 = sigma.iter().sum();
    if !(total > 0.0) {
        return Err(DiagError::ZeroMatrix);
    }
    let entropy: f64 = sigma
        .iter()
        .filter(|s| **s > 0.0)
        .map(|s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Effective rank of a matrix, in `[1, min(rows, cols)]`.
pub fn effective_rank(m: &Matrix) -> Result<f64, DiagError> {
    let spectrum = singular_values(m)?;
    effective_rank_of_spectrum(spectrum.values())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErankReport {
    pub erank_train: f64,
    pub erank_eval: f64,
    /// `erank_eval − erank_train`.
    pub delta: f64,
}

/// Effective rank of the hidden states of two sets and their difference.
pub fn erank_gap(params: &RewardModelParams, train: EvalSet<'_>, eval: EvalSet<'_>) -> Result<ErankReport, DiagError> {
    let erank_train = effective_rank(&hidden_states(params, train)?)?;
    let erank_eval = effective_rank(&hidden_states(params, eval)?)?;
    Ok(ErankReport {
        erank_train,
        erank_eval,
        delta: erank_eval - erank_train,
    })
}

/// Ranking quality on the four held-out sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_id: f64,
    pub tau_prompt: f64,
    pub tau_response: f64,
    pub tau_mutual: f64,
    pub n_id: usize,
    pub n_prompt: usize,
    pub n_response: usize,
    pub n_mutual: usize,
}

pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, bundle: &DatasetBundle) -> Result<EvalReport, DiagError> {
    Ok(EvalReport {
        acc_id: eval_accuracy(scorer, &bundle.d_id)?,
        tau_prompt: eval_tau(scorer, &bundle.d_prompt_ood)?,
        tau_response: eval_tau(scorer, &bundle.d_response_ood)?,
        tau_mutual: eval_tau(scorer, &bundle.d_mutual_ood)?,
        n_id: bundle.d_id.len(),
        n_prompt: bundle.d_prompt_ood.len(),
        n_response: bundle.d_response_ood.len(),
        n_mutual: bundle.d_mutual_ood.len(),
    })
}

/// Hidden-norm moments on each held-out set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormDispersionReport {
    pub id: MomentStats,
    pub prompt: MomentStats,
    pub response: MomentStats,
    pub mutual: MomentStats,
}

/// Everything measured on a trained reward model.
///
/// Effective rank compares the hidden states of every training response
/// against every response of the mutual-shift set, the regime where both the
/// prompt and the generator are unseen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub eval: EvalReport,
    pub head_norm: f64,
    pub hidden_distance_train: MomentStats,
    pub hidden_norms: NormDispersionReport,
    pub erank: ErankReport,
}

pub fn diagnose(params: &RewardModelParams, bundle: &DatasetBundle) -> Result<ModelReport, DiagError> {
    Ok(ModelReport {
        eval: evaluate(params, bundle)?,
        head_norm: head_norm(params),
        hidden_distance_train: hidden_distance_stats(params, &bundle.d_train)?,
        hidden_norms: NormDispersionReport {
            id: norm_dispersion(params, EvalSet::Triplets(&bundle.d_id))?,
            prompt: norm_dispersion(params, EvalSet::Groups(&bundle.d_prompt_ood))?,
            response: norm_dispersion(params, EvalSet::Groups(&bundle.d_response_ood))?,
            mutual: norm_dispersion(params, EvalSet::Groups(&bundle.d_mutual_ood))?,
        },
        erank: erank_gap(
            params,
            EvalSet::Triplets(&bundle.d_train),
            EvalSet::Groups(&bundle.d_mutual_ood),
        )?,
    })
}

/// Names of [`ModelReport::named_values`], in order.
pub const REPORT_VALUE_NAMES: [&str; 17] = [
    "hdist_mean",
    "hdist_std",
    "hdist_skew",
    "acc_id",
    "hnorm_mean_id",
    "hnorm_std_id",
    "tau_prompt",
    "hnorm_mean_prompt",
    "hnorm_std_prompt",
    "tau_response",
    "hnorm_mean_response",
    "hnorm_std_response",
    "tau_mutual",
    "hnorm_mean_mutual",
    "hnorm_std_mutual",
    "erank_train",
    "erank_eval",
];

impl ModelReport {
    /// Flat `(name, value)` view in the column order of `metrics.csv`.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let h = &self.hidden_norms;
        let values = [
            self.hidden_distance_train.mean,
            self.hidden_distance_train.std,
            self.hidden_distance_train.skewness,
            self.eval.acc_id,
            h.id.mean,
            h.id.std,
            self.eval.tau_prompt,
            h.prompt.mean,
            h.prompt.std,
            self.eval.tau_response,
            h.response.mean,
            h.response.std,
            self.eval.tau_mutual,
            h.mutual.mean,
            h.mutual.std,
            self.erank.erank_train,
            self.erank.erank_eval,
        ];
        REPORT_VALUE_NAMES
            .iter()
            .zip(values)
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }
}
