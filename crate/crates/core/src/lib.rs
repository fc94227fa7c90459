//! `rmlab` is a desk-scale laboratory for reward-model robustness.
//!
//! It trains small Bradley-Terry reward models on preferences labelled by a
//! synthetic gold network, measures how well they generalize to unseen
//! prompts and unseen response generators, and checks whether a more robust
//! reward model also steers a KL-regularized RLOO policy toward higher gold
//! reward.
//!
//! Module map:
//!
//! - [`numkit`]: stable scalar functions, singular values, Kendall's τ, moments.
//! - [`goldworld`]: the synthetic universe and its train / evaluation splits.
//! - [`rmcore`]: the reward network with hand-written forward and backward passes.
//! - [`losses`]: BT, BT-BSR, BT-Norm, BT-Hinge and BT-DR with analytic gradients.
//! - [`trainkit`]: the deterministic minibatch training loop and optimizers.
//! - [`diagnostics`]: accuracy, τ, norm dispersion, hidden distances, effective rank.
//! - [`rloosim`]: RLOO policy optimization over discrete candidate sets.

pub mod diagnostics;
pub mod goldworld;
pub mod losses;
pub mod numkit;
pub mod rloosim;
pub mod rmcore;
pub mod seeds;
pub mod trainkit;
mod wire;
