use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{GoldWorld, Split, WorldConfig, WorldError};
use crate::numkit::sigmoid;
use crate::seeds::{self, Rng};

/// Responses per prompt, both for the train/ID split and for ranked groups.
pub const GROUP_SIZE: usize = 4;
/// Resample budget per group before the gold model is declared degenerate.
pub const MAX_RESAMPLE_ATTEMPTS: usize = 100;

/// How many train prompts (one triplet each in `d_train` and `d_id`) and how
/// many valid prompts (one group each in `d_prompt_ood` and `d_mutual_ood`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeConfig {
    pub train: usize,
    pub valid: usize,
}

impl Default for SizeConfig {
    fn default() -> Self {
        Self {
            train: 1000,
            valid: 200,
        }
    }
}

impl SizeConfig {
    pub fn validate(&self, world: &WorldConfig) -> Result<(), WorldError> {
        if self.train == 0 || self.valid == 0 {
            return Err(WorldError::Config("dataset sizes must be positive".into()));
        }
        if self.train > world.n_train_prompts {
            return Err(WorldError::InsufficientPrompts {
                split: Split::Train,
                requested: self.train,
                available: world.n_train_prompts,
            });
        }
        if self.valid > world.n_valid_prompts {
            return Err(WorldError::InsufficientPrompts {
                split: Split::Valid,
                requested: self.valid,
                available: world.n_valid_prompts,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub generator: u32,
    pub y: Vec<f64>,
}

/// `(x, y_w, y_l)` with gold scores; `gold_w > gold_l` under argmax labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriplet {
    pub prompt_id: u64,
    pub x: Vec<f64>,
    pub chosen: Response,
    pub rejected: Response,
    pub gold_w: f64,
    pub gold_l: f64,
}

/// Four responses to one prompt with pairwise-distinct gold scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedGroup {
    pub prompt_id: u64,
    pub x: Vec<f64>,
    pub responses: Vec<Response>,
    pub gold_scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub world_seed: u64,
    pub dataset_seed: u64,
    pub sizes: SizeConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub d_train: Vec<PreferenceTriplet>,
    pub d_id: Vec<PreferenceTriplet>,
    pub d_prompt_ood: Vec<RankedGroup>,
    pub d_response_ood: Vec<RankedGroup>,
    pub d_mutual_ood: Vec<RankedGroup>,
    pub provenance: Provenance,
}

/// Draws `GROUP_SIZE` responses from `pool` for prompt `x`, resampling any
/// response whose gold score exactly ties an earlier one.
fn draw_group(
    world: &GoldWorld,
    prompt_id: u64,
    x: &[f64],
    pool: &[u32],
    rng: &mut Rng,
) -> Result<(Vec<Response>, Vec<f64>), WorldError> {
    let gens: Vec<u32> = if pool.len() >= GROUP_SIZE {
        let mut ids = pool.to_vec();
        ids.shuffle(rng);
        ids.truncate(GROUP_SIZE);
        ids
    } else {
        (0..GROUP_SIZE)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect()
    };

    let mut responses = Vec::with_capacity(GROUP_SIZE);
    let mut scores: Vec<f64> = Vec::with_capacity(GROUP_SIZE);
    let mut attempts = 0;
    for &k in &gens {
        loop {
            let y = world.sample_response(k, x, rng)?;
            let s = world.gold_score(x, &y)?;
            if !scores.contains(&s) {
                responses.push(Response { generator: k, y });
                scores.push(s);
                break;
            }
            attempts += 1;
            if attempts > MAX_RESAMPLE_ATTEMPTS {
                return Err(WorldError::ResampleExhausted { prompt_id, attempts });
            }
        }
    }
    Ok((responses, scores))
}

fn make_triplet(
    world: &GoldWorld,
    prompt_id: u64,
    x: &[f64],
    a: (Response, f64),
    b: (Response, f64),
    rng: &mut Rng,
) -> PreferenceTriplet {
    let a_wins = match world.config.label_temperature {
        None => a.1 > b.1,
        Some(t) => rng.random::<f64>() < sigmoid((a.1 - b.1) / t),
    };
    let (w, l) = if a_wins { (a, b) } else { (b, a) };
    PreferenceTriplet {
        prompt_id,
        x: x.to_vec(),
        chosen: w.0,
        rejected: l.0,
        gold_w: w.1,
        gold_l: l.1,
    }
}

/// Builds the train set and the four evaluation sets.
///
/// Every prompt gets its own RNG stream `(seed, set-tag, prompt id)`, so a
/// set can be regenerated alone.
pub fn build_datasets(world: &GoldWorld, sizes: SizeConfig, seed: u64) -> Result<DatasetBundle, WorldError> {
    sizes.validate(&world.config)?;

    let mut train_prompts: Vec<&super::PromptVector> = world.prompts_in(Split::Train).collect();
    let mut valid_prompts: Vec<&super::PromptVector> = world.prompts_in(Split::Valid).collect();
    train_prompts.shuffle(&mut seeds::stream(seed, "datasets.pick.train"));
    valid_prompts.shuffle(&mut seeds::stream(seed, "datasets.pick.valid"));
    train_prompts.truncate(sizes.train);
    valid_prompts.truncate(sizes.valid);
    train_prompts.sort_by_key(|p| p.id);
    valid_prompts.sort_by_key(|p| p.id);

    let train_pool = world.pool(Split::Train);
    let valid_pool = world.pool(Split::Valid);

    let mut d_train = Vec::with_capacity(sizes.train);
    let mut d_id = Vec::with_capacity(sizes.train);
    let mut d_response_ood = Vec::with_capacity(sizes.train);
    for p in &train_prompts {
        let mut rng = seeds::indexed_stream(seed, "datasets.train_id", p.id);
        let (responses, scores) = draw_group(world, p.id, &p.x, train_pool, &mut rng)?;
        let mut items: Vec<(Response, f64)> = responses.into_iter().zip(scores).collect();
        items.shuffle(&mut rng);
        let mut it = items.into_iter();
        let (a, b, c, d) = (
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
        );
        d_train.push(make_triplet(world, p.id, &p.x, a, b, &mut rng));
        d_id.push(make_triplet(world, p.id, &p.x, c, d, &mut rng));

        let mut rng = seeds::indexed_stream(seed, "datasets.response_ood", p.id);
        let (responses, gold_scores) = draw_group(world, p.id, &p.x, valid_pool, &mut rng)?;
        d_response_ood.push(RankedGroup {
            prompt_id: p.id,
            x: p.x.clone(),
            responses,
            gold_scores,
        });
    }

    let mut d_prompt_ood = Vec::with_capacity(sizes.valid);
    let mut d_mutual_ood = Vec::with_capacity(sizes.valid);
    for p in &valid_prompts {
        let mut rng = seeds::indexed_stream(seed, "datasets.prompt_ood", p.id);
        let (responses, gold_scores) = draw_group(world, p.id, &p.x, train_pool, &mut rng)?;
        d_prompt_ood.push(RankedGroup {
            prompt_id: p.id,
            x: p.x.clone(),
            responses,
            gold_scores,
        });
        let mut rng = seeds::indexed_stream(seed, "datasets.mutual_ood", p.id);
        let (responses, gold_scores) = draw_group(world, p.id, &p.x, valid_pool, &mut rng)?;
        d_mutual_ood.push(RankedGroup {
            prompt_id: p.id,
            x: p.x.clone(),
            responses,
            gold_scores,
        });
    }

    Ok(DatasetBundle {
        d_train,
        d_id,
        d_prompt_ood,
        d_response_ood,
        d_mutual_ood,
        provenance: Provenance {
            world_seed: world.seed,
            dataset_seed: seed,
            sizes,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goldworld::generate_world;
    use std::collections::HashSet;

    fn world() -> GoldWorld {
        let cfg = WorldConfig {
            n_train_prompts: 150,
            n_valid_prompts: 30,
            ..WorldConfig::default()
        };
        generate_world(&cfg, 2024).unwrap()
    }

    #[test]
    fn counts_follow_sizes() {
        let b = build_datasets(&world(), SizeConfig { train: 100, valid: 20 }, 1).unwrap();
        assert_eq!(b.d_train.len(), 100);
        assert_eq!(b.d_id.len(), 100);
        assert_eq!(b.d_prompt_ood.len(), 20);
        assert_eq!(b.d_mutual_ood.len(), 20);
        assert_eq!(b.d_response_ood.len(), 100);
    }

    #[test]
    fn labels_follow_gold() {
        let b = build_datasets(&world(), SizeConfig { train: 100, valid: 20 }, 1).unwrap();
        assert!(b.d_train.iter().chain(&b.d_id).all(|t| t.gold_w > t.gold_l));
    }

    #[test]
    fn disjointness_by_membership_scan() {
        let w = world();
        let b = build_datasets(&w, SizeConfig { train: 100, valid: 20 }, 7).unwrap();
        let split_of = |id: u64| w.prompts[id as usize].split;
        let train_side: HashSet<u64> = b
            .d_train
            .iter()
            .chain(&b.d_id)
            .map(|t| t.prompt_id)
            .chain(b.d_response_ood.iter().map(|g| g.prompt_id))
            .collect();
        let valid_side: HashSet<u64> = b
            .d_prompt_ood
            .iter()
            .chain(&b.d_mutual_ood)
            .map(|g| g.prompt_id)
            .collect();
        assert!(train_side.is_disjoint(&valid_side));
        assert!(train_side.iter().all(|&id| split_of(id) == Split::Train));
        assert!(valid_side.iter().all(|&id| split_of(id) == Split::Valid));

        let train_pool: HashSet<u32> = w.config.train_pool.iter().copied().collect();
        let valid_pool: HashSet<u32> = w.config.valid_pool.iter().copied().collect();
        for t in b.d_train.iter().chain(&b.d_id) {
            assert!(train_pool.contains(&t.chosen.generator));
            assert!(train_pool.contains(&t.rejected.generator));
        }
        for g in &b.d_prompt_ood {
            assert!(g.responses.iter().all(|r| train_pool.contains(&r.generator)));
        }
        for g in b.d_response_ood.iter().chain(&b.d_mutual_ood) {
            assert!(g.responses.iter().all(|r| valid_pool.contains(&r.generator)));
        }
    }

    #[test]
    fn train_and_id_use_distinct_draws_per_prompt() {
        let b = build_datasets(&world(), SizeConfig { train: 60, valid: 10 }, 3).unwrap();
        for (t, i) in b.d_train.iter().zip(&b.d_id) {
            assert_eq!(t.prompt_id, i.prompt_id);
            let ys = [&t.chosen.y, &t.rejected.y, &i.chosen.y, &i.rejected.y];
            for a in 0..4 {
                for c in (a + 1)..4 {
                    assert_ne!(ys[a], ys[c]);
                }
            }
        }
    }

    #[test]
    fn group_scores_pairwise_distinct() {
        let b = build_datasets(&world(), SizeConfig { train: 50, valid: 20 }, 5).unwrap();
        for g in b.d_prompt_ood.iter().chain(&b.d_response_ood).chain(&b.d_mutual_ood) {
            assert_eq!(g.responses.len(), GROUP_SIZE);
            for a in 0..GROUP_SIZE {
                for c in (a + 1)..GROUP_SIZE {
                    assert_ne!(g.gold_scores[a], g.gold_scores[c]);
                }
            }
        }
    }

    #[test]
    fn insufficient_prompts() {
        let err = build_datasets(&world(), SizeConfig { train: 151, valid: 5 }, 0).unwrap_err();
        assert!(matches!(err, WorldError::InsufficientPrompts { .. }));
    }

    #[test]
    fn constant_gold_exhausts_resampling() {
        let mut w = world();
        let n = w.gold.input_dim();
        w.gold = crate::goldworld::GoldRewardModel::from_parts(n, vec![0.0; n], vec![0.0], vec![1.0])
            .unwrap();
        let err = build_datasets(&w, SizeConfig { train: 1, valid: 1 }, 0).unwrap_err();
        assert!(matches!(err, WorldError::ResampleExhausted { .. }));
    }

    #[test]
    fn temperature_labels_can_flip() {
        let cfg = WorldConfig {
            n_train_prompts: 200,
            n_valid_prompts: 10,
            label_temperature: Some(5.0),
            ..WorldConfig::default()
        };
        let w = generate_world(&cfg, 9).unwrap();
        let b = build_datasets(&w, SizeConfig { train: 200, valid: 5 }, 0).unwrap();
        let flipped = b.d_train.iter().filter(|t| t.gold_w < t.gold_l).count();
        assert!(flipped > 0 && flipped < 200);
    }
}
