//! Alignment: best-of-n selection, exact oracles on finite spaces, exact
//! KL of Markov policies, and a KL-regularised policy-gradient trainer.

mod bon;
mod finite;
mod kl;
mod rl;

pub use bon::{argmax_first, bon_select, bon_select_index, kl_bound, BonConfig};
pub use finite::{bon_exact_distribution, exact_tilted_policy, kl_divergence, regularized_objective, total_variation};
pub use kl::{enumerate_responses, kl_exact, kl_exact_class, mean_kl_exact};
pub use rl::{rl_train, sample_policy, AlignmentTrace, RlConfig, TracePoint};
