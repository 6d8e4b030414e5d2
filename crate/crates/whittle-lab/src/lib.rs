//! Whittle indices for restless bandits.
//!
//! A restless bandit arm is a two-action controlled Markov chain whose
//! state keeps evolving whether or not it is activated. For indexable
//! arms each state carries a scalar index, the activation penalty at
//! which resting becomes optimal there, and a strong heuristic for the
//! joint problem is to activate the arms whose current states carry the
//! largest indices.
//!
//! This crate computes those indices and everything around them:
//!
//! * [`mdp`] — exact policy evaluation and penalty-parameterized solves;
//! * [`indexability`] — direct passive-set nesting verification and
//!   sufficient conditions, from cheap refinements to an exhaustive
//!   pairwise check;
//! * [`whittle`] — the generalized adaptive-greedy index pass, an
//!   independent bisection oracle, and the classical one-state-per-step
//!   variant with its PCL conditions;
//! * [`restart`] — a renewal-theory shortcut for arms whose active action
//!   redraws the state from a fixed distribution;
//! * [`monotone`] — threshold-policy machinery for ordered state spaces;
//! * [`generators`] — structured and random transition-matrix families;
//! * [`sim`] / [`experiments`] — seeded Monte-Carlo comparison of the
//!   index, myopic, and exact optimal policies;
//! * [`report`] — CSV/JSON rendering with replayable metadata.
//!
//! Each major capability has a runnable demonstration under `examples/`;
//! start with `three_state_index`. The `whittle-lab` binary exposes the
//! same functionality as batch subcommands.

pub mod experiments;
pub mod generators;
pub mod indexability;
pub mod mdp;
pub mod model;
pub mod monotone;
pub mod report;
pub mod restart;
pub mod rng;
pub mod sim;
pub mod whittle;

pub use model::{BanditModel, ModelError, ModelFile, MultiArmModel, PolicyVec};
pub use mdp::{policy_eval, solve_lambda, LambdaSolution, PolicyEval};
pub use whittle::{
    adaptive_greedy_pcl, check_pcl, compute_whittle, index_bounds, whittle_oracle,
    whittle_oracle_all, WhittleError, WhittleTable,
};
