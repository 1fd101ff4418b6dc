//! Desk-scale simulator for reward-model ensembles and alignment.
//!
//! A synthetic [`env::Universe`] supplies prompts, a reference policy, and a
//! hidden true reward. Reward models ([`reward`]) are trained on preference
//! or pointwise labels drawn from it, grouped into [`ensemble`]s, and used to
//! align policies by best-of-n or KL-regularized policy gradient ([`align`]).
//! [`diagnostics`] measures how the reward models disagree and how aligned
//! policies exploit them; [`harness`] wires it all into runs on disk.

pub mod error;
pub mod rng;
pub mod stats;
pub mod types;

pub mod policy;

pub mod align;
pub mod diagnostics;
pub mod env;
pub mod ensemble;
pub mod harness;
pub mod reward;

pub use error::{Error, Result};
