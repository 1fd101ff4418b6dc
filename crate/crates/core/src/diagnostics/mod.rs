//! Measurements over reward models and aligned policies.

mod agreement;
mod correlation;
mod hack;
mod judge;

pub use agreement::{
    bon_cross_scoring, cross_scoring_from_scores, subset_top1_from_scores, top1_agreement, top1_from_scores, z_on_first_candidates, AgreementReport,
    AgreementRow, CandidatePool,
};
pub use correlation::{rank_correlation_trace, rank_correlations, CorrelationPoint};
pub use hack::{hack_stats, hack_stats_with, is_list, numeric_fraction, preference_conditioned_stats, CopyMeasure, HackStats};
pub use judge::{majority_vote_judge, win_rate, win_rate_responses, Judge, JudgeConfig, Verdict, WinRate};
