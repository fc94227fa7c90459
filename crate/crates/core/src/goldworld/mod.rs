//! The synthetic preference universe.
//!
//! A [`GoldWorld`] holds prompts grouped into clusters (train clusters and
//! shifted valid clusters), a family of response generators split into a
//! train pool and a valid pool, and a frozen gold reward network `r*` that
//! defines every preference label. [`build_datasets`] carves the world into
//! the training set and the four evaluation scenarios:
//!
//! | set            | prompts | generators |
//! |----------------|---------|------------|
//! | `d_train`      | train   | train      |
//! | `d_id`         | train   | train      |
//! | `d_prompt_ood` | valid   | train      |
//! | `d_response_ood` | train | valid      |
//! | `d_mutual_ood` | valid   | valid      |

mod datasets;
mod io;

pub use datasets::{
    build_datasets, DatasetBundle, PreferenceTriplet, Provenance, RankedGroup, Response,
    SizeConfig, GROUP_SIZE, MAX_RESAMPLE_ATTEMPTS,
};
pub use io::{
    decode_bundle, encode_bundle, load_bundle, load_world, save_bundle, save_world, BUNDLE_MAGIC,
    BUNDLE_VERSION, DATASETS_FILE, WORLD_FILE,
};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numkit::{dot, norm, Matrix};
use crate::seeds::{self, Rng};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("unknown generator id {0}")]
    UnknownGenerator(u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("insufficient prompts: requested {requested} {split} prompts, world has {available}")]
    InsufficientPrompts {
        split: Split,
        requested: usize,
        available: usize,
    },
    #[error("gold scores kept tying for prompt {prompt_id} after {attempts} resamples")]
    ResampleExhausted { prompt_id: u64, attempts: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

/// Which side of the train/valid partition a prompt or generator belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
        })
    }
}

/// Shape and spread of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub d_x: usize,
    pub d_y: usize,
    pub train_clusters: usize,
    pub valid_clusters: usize,
    pub n_train_prompts: usize,
    pub n_valid_prompts: usize,
    /// Std of prompts around their cluster center.
    pub cluster_spread: f64,
    /// Length of the mean offset applied to valid cluster centers.
    pub valid_center_shift: f64,
    pub train_pool: Vec<u32>,
    pub valid_pool: Vec<u32>,
    /// Radius of train-pool style vectors.
    pub style_radius: f64,
    /// Valid-pool style radius as a multiple of `style_radius`.
    pub valid_style_scale: f64,
    pub noise_scale: f64,
    pub gold_hidden: usize,
    /// Input-layer gain of the gold network; larger is more nonlinear.
    pub gold_gain: f64,
    /// When set, chosen/rejected labels are drawn from a BT model over gold
    /// scores at this temperature instead of taking the argmax.
    pub label_temperature: Option<f64>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            d_x: 16,
            d_y: 16,
            train_clusters: 8,
            valid_clusters: 4,
            n_train_prompts: 1000,
            n_valid_prompts: 200,
            cluster_spread: 0.5,
            valid_center_shift: 1.5,
            train_pool: (0..17).collect(),
            valid_pool: (17..21).collect(),
            style_radius: 1.0,
            valid_style_scale: 2.0,
            noise_scale: 0.1,
            gold_hidden: 32,
            gold_gain: 1.5,
            label_temperature: None,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::Config(m));
        if self.d_x < 2 || self.d_y < 2 {
            return bad(format!("d_x and d_y must be >= 2 (got {}, {})", self.d_x, self.d_y));
        }
        if self.train_clusters < 2 || self.valid_clusters < 2 {
            return bad("need at least 2 prompt clusters per split".into());
        }
        if self.n_train_prompts < self.train_clusters || self.n_valid_prompts < self.valid_clusters {
            return bad("every cluster needs at least one prompt".into());
        }
        if self.train_pool.len() < 2 || self.valid_pool.len() < 2 {
            return bad("need at least 2 generators per pool".into());
        }
        let mut ids: Vec<u32> = self.train_pool.iter().chain(&self.valid_pool).copied().collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("generator pools overlap or repeat ids".into());
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be positive".into());
        }
        for (name, v) in [
            ("cluster_spread", self.cluster_spread),
            ("valid_center_shift", self.valid_center_shift),
            ("style_radius", self.style_radius),
            ("valid_style_scale", self.valid_style_scale),
            ("gold_gain", self.gold_gain),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if self.gold_hidden == 0 {
            return bad("gold_hidden must be >= 1".into());
        }
        if let Some(t) = self.label_temperature {
            if !(t > 0.0 && t.is_finite()) {
                return bad("label_temperature must be positive".into());
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.d_x + self.d_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVector {
    pub id: u64,
    pub x: Vec<f64>,
    pub cluster: u32,
    pub split: Split,
}

/// A response model `M_k`: `y = tanh(A x + b) + style + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGenerator {
    pub id: u32,
    pub map: Matrix,
    pub bias: Vec<f64>,
    pub style: Vec<f64>,
    pub noise_scale: f64,
    pub pool: Split,
}

impl ResponseGenerator {
    /// Noise-free response: `tanh(A x + b) + style`.
    pub fn mean_response(&self, x: &[f64]) -> Vec<f64> {
        (0..self.map.rows())
            .map(|i| (dot(self.map.row(i), x) + self.bias[i]).tanh() + self.style[i])
            .collect()
    }
}

/// Frozen gold reward `r*(x, y) = vᵀ tanh(W [x; y] + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRewardModel {
    input_dim: usize,
    hidden: usize,
    w_in: Vec<f64>,
    b_in: Vec<f64>,
    w_out: Vec<f64>,
}

impl GoldRewardModel {
    /// Assembles a gold network from raw row-major parameters.
    pub fn from_parts(
        input_dim: usize,
        w_in: Vec<f64>,
        b_in: Vec<f64>,
        w_out: Vec<f64>,
    ) -> Result<Self, WorldError> {
        let hidden = w_out.len();
        if w_in.len() != hidden * input_dim || b_in.len() != hidden || hidden == 0 {
            return Err(WorldError::Config("inconsistent gold network shapes".into()));
        }
        if w_in.iter().chain(&b_in).chain(&w_out).any(|v| !v.is_finite()) {
            return Err(WorldError::Config("non-finite gold parameters".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            w_in,
            b_in,
            w_out,
        })
    }

    fn random(input_dim: usize, hidden: usize, gain: f64, rng: &mut Rng) -> Self {
        let w_scale = gain / (input_dim as f64).sqrt();
        let w_in = (0..hidden * input_dim)
            .map(|_| w_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b_in = (0..hidden)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let o_scale = 1.0 / (hidden as f64).sqrt();
        let w_out = (0..hidden)
            .map(|_| o_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            input_dim,
            hidden,
            w_in,
            b_in,
            w_out,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn w_in(&self) -> &[f64] {
        &self.w_in
    }

    pub fn b_in(&self) -> &[f64] {
        &self.b_in
    }

    pub fn w_out(&self) -> &[f64] {
        &self.w_out
    }

    /// Scores a concatenated input `[x; y]`.
    pub fn score_joint(&self, z: &[f64]) -> Result<f64, WorldError> {
        if z.len() != self.input_dim {
            return Err(WorldError::DimMismatch {
                expected: self.input_dim,
                got: z.len(),
            });
        }
        let mut total = 0.0;
        for j in 0..self.hidden {
            let row = &self.w_in[j * self.input_dim..(j + 1) * self.input_dim];
            total += self.w_out[j] * (dot(row, z) + self.b_in[j]).tanh();
        }
        Ok(total)
    }
}

/// The generated universe. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldWorld {
    pub config: WorldConfig,
    pub seed: u64,
    pub prompts: Vec<PromptVector>,
    pub generators: Vec<ResponseGenerator>,
    pub gold: GoldRewardModel,
}

fn normal_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn random_direction(rng: &mut Rng, n: usize) -> Vec<f64> {
    loop {
        let v = normal_vec(rng, n, 1.0);
        let len = norm(&v);
        if len > 1e-12 {
            return v.into_iter().map(|c| c / len).collect();
        }
    }
}

/// Draws a world from `config`; identical `(config, seed)` give bit-identical worlds.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<GoldWorld, WorldError> {
    config.validate()?;
    let (dx, dy) = (config.d_x, config.d_y);

    let mut center_rng = seeds::stream(seed, "world.centers");
    let train_centers: Vec<Vec<f64>> = (0..config.train_clusters)
        .map(|_| normal_vec(&mut center_rng, dx, 1.0))
        .collect();
    let shift_dir = vec![1.0 / (dx as f64).sqrt(); dx];
    let valid_centers: Vec<Vec<f64>> = (0..config.valid_clusters)
        .map(|_| {
            normal_vec(&mut center_rng, dx, 1.0)
                .into_iter()
                .zip(&shift_dir)
                .map(|(c, d)| c + config.valid_center_shift * d)
                .collect()
        })
        .collect();

    let mut prompt_rng = seeds::stream(seed, "world.prompts");
    let mut prompts = Vec::with_capacity(config.n_train_prompts + config.n_valid_prompts);
    let splits = [
        (Split::Train, config.n_train_prompts, &train_centers),
        (Split::Valid, config.n_valid_prompts, &valid_centers),
    ];
    for (split, count, centers) in splits {
        for i in 0..count {
            let cluster = i % centers.len();
            let x = centers[cluster]
                .iter()
                .map(|c| c + config.cluster_spread * prompt_rng.sample::<f64, _>(StandardNormal))
                .collect();
            prompts.push(PromptVector {
                id: prompts.len() as u64,
                x,
                cluster: cluster as u32,
                split,
            });
        }
    }

    let mut gen_rng = seeds::stream(seed, "world.generators");
    let map_scale = 1.0 / (dx as f64).sqrt();
    let mut generators = Vec::with_capacity(config.train_pool.len() + config.valid_pool.len());
    for (pool, ids, radius) in [
        (Split::Train, &config.train_pool, config.style_radius),
        (Split::Valid, &config.valid_pool, config.style_radius * config.valid_style_scale),
    ] {
        for &id in ids {
            let map = Matrix::new(dy, dx, normal_vec(&mut gen_rng, dy * dx, map_scale))
                .map_err(|e| WorldError::Config(e.to_string()))?;
            let bias = normal_vec(&mut gen_rng, dy, 0.5);
            let style = random_direction(&mut gen_rng, dy)
                .into_iter()
                .map(|c| c * radius)
                .collect();
            generators.push(ResponseGenerator {
                id,
                map,
                bias,
                style,
                noise_scale: config.noise_scale,
                pool,
            });
        }
    }

    let mut gold_rng = seeds::stream(seed, "world.gold");
    let gold = GoldRewardModel::random(dx + dy, config.gold_hidden, config.gold_gain, &mut gold_rng);

    Ok(GoldWorld {
        config: config.clone(),
        seed,
        prompts,
        generators,
        gold,
    })
}

impl GoldWorld {
    pub fn generator(&self, id: u32) -> Result<&ResponseGenerator, WorldError> {
        self.generators
            .iter()
            .find(|g| g.id == id)
            .ok_or(WorldError::UnknownGenerator(id))
    }

    pub fn prompts_in(&self, split: Split) -> impl Iterator<Item = &PromptVector> {
        self.prompts.iter().filter(move |p| p.split == split)
    }

    pub fn pool(&self, split: Split) -> &[u32] {
        match split {
            Split::Train => &self.config.train_pool,
            Split::Valid => &self.config.valid_pool,
        }
    }

    /// Draws `y ~ M_k(· | x)`.
    pub fn sample_response(&self, k: u32, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>, WorldError> {
        let g = self.generator(k)?;
        if x.len() != self.config.d_x {
            return Err(WorldError::DimMismatch {
                expected: self.config.d_x,
                got: x.len(),
            });
        }
        let mut y = g.mean_response(x);
        for v in &mut y {
            *v += g.noise_scale * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(y)
    }

    /// Gold score `r*(x, y)`; deterministic.
    pub fn gold_score(&self, x: &[f64], y: &[f64]) -> Result<f64, WorldError> {
        if x.len() != self.config.d_x {
            return Err(WorldError::DimMismatch {
                expected: self.config.d_x,
                got: x.len(),
            });
        }
        if y.len() != self.config.d_y {
            return Err(WorldError::DimMismatch {
                expected: self.config.d_y,
                got: y.len(),
            });
        }
        let mut z = Vec::with_capacity(x.len() + y.len());
        z.extend_from_slice(x);
        z.extend_from_slice(y);
        self.gold.score_joint(&z)
    }
}
