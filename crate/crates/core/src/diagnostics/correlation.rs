//! Rank agreement between reward models on samples from a policy.

use crate::env::Universe;
use crate::error::{Error, Result};
use crate::policy::MarkovPolicy;
use crate::reward::{score_matrix, RewardModel};
use crate::rng::SeedStream;
use crate::stats::spearman;
use crate::types::{Prompt, Response};

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationPoint {
    pub step: usize,
    /// Mean pairwise Spearman over model pairs sharing a pretrain seed.
    pub same_pretrain: Option<f64>,
    pub diff_pretrain: Option<f64>,
    /// Per prompt, mean Spearman over all model pairs.
    pub per_prompt: Vec<f64>,
}

/// Spearman correlations between every pair of models over `k` samples per
/// prompt from `policy`. Returns (same-pretrain mean, diff-pretrain mean,
/// per-prompt mean over all pairs).
pub fn rank_correlations(
    models: &[&RewardModel],
    policy: &MarkovPolicy,
    u: &Universe,
    prompts: &[Prompt],
    k: usize,
    stream: SeedStream,
) -> Result<(Option<f64>, Option<f64>, Vec<f64>)> {
    if k < 2 {
        return Err(Error::invalid("rank correlation needs k >= 2 samples per prompt"));
    }
    if models.len() < 2 {
        return Err(Error::invalid("rank correlation needs at least two models"));
    }
    if prompts.is_empty() {
        return Err(Error::invalid("rank correlation needs prompts"));
    }
    let samples: Vec<Vec<Response>> = prompts
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let class = u.prompt_class(x);
            (0..k)
                .map(|j| policy.sample(class, &mut stream.index(i as u64).index(j as u64).rng()))
                .collect()
        })
        .collect();
    let items: Vec<(&Prompt, &Response)> = prompts
        .iter()
        .zip(&samples)
        .flat_map(|(x, ys)| ys.iter().map(move |y| (x, y)))
        .collect();
    let scores = score_matrix(models, u, &items)?;
    let (mut same, mut n_same, mut diff, mut n_diff) = (0.0, 0usize, 0.0, 0usize);
    let mut per_prompt = vec![0.0; prompts.len()];
    let pairs = models.len() * (models.len() - 1) / 2;
    for a in 0..models.len() {
        for b in a + 1..models.len() {
            let shared = models[a].pretrain_seed() == models[b].pretrain_seed();
            for (p, slot) in per_prompt.iter_mut().enumerate() {
                let rho = spearman(&scores[a][p * k..(p + 1) * k], &scores[b][p * k..(p + 1) * k])?;
                *slot += rho / pairs as f64;
                if shared {
                    same += rho;
                    n_same += 1;
                } else {
                    diff += rho;
                    n_diff += 1;
                }
            }
        }
    }
    let avg = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    Ok((avg(same, n_same), avg(diff, n_diff), per_prompt))
}

/// `rank_correlations` at every snapshot of an alignment run. Each snapshot
/// draws its samples from `stream.index(step)`.
pub fn rank_correlation_trace(
    models: &[&RewardModel],
    snapshots: &[(usize, MarkovPolicy)],
    u: &Universe,
    prompts: &[Prompt],
    k: usize,
    stream: SeedStream,
) -> Result<Vec<CorrelationPoint>> {
    snapshots
        .iter()
        .map(|(step, policy)| {
            let (same_pretrain, diff_pretrain, per_prompt) =
                rank_correlations(models, policy, u, prompts, k, stream.index(*step as u64))?;
            Ok(CorrelationPoint {
                step: *step,
                same_pretrain,
                diff_pretrain,
                per_prompt,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_universe, UniverseConfig};
    use crate::reward::{RepDims, Representation, RmKind};
    use std::sync::Arc;

    fn model(p: u64, f: u64, flip: bool) -> RewardModel {
        let rep = Arc::new(Representation::new(p, RepDims::default()).unwrap());
        let s = SeedStream::new(7);
        let sign = if flip { -1.0 } else { 1.0 };
        let w = (0..32).map(|i| sign * (s.index(i).unit() - 0.5)).collect();
        RewardModel::new(RmKind::Pairwise, rep, f, w, 0.0).unwrap()
    }

    #[test]
    fn identical_and_reversed_models() {
        let u = make_universe(
            &UniverseConfig {
                pilot_size: 300,
                ..UniverseConfig::default()
            },
            2,
        )
        .unwrap();
        let prompts = u.sample_prompts(20, SeedStream::new(1));
        let a = model(1, 1, false);
        let b = model(1, 2, false);
        let (same, diff, pp) = rank_correlations(&[&a, &b], u.sft(), &u, &prompts, 6, SeedStream::new(2)).unwrap();
        assert!(diff.is_none());
        // Distinct samples always give a perfect correlation; duplicated
        // samples at most tie.
        assert!(same.unwrap() > 0.8);
        assert!(pp.iter().all(|r| *r >= 0.0 && *r <= 1.0 + 1e-12));
        let c = model(1, 3, true);
        let (same, _, _) = rank_correlations(&[&a, &c], u.sft(), &u, &prompts, 6, SeedStream::new(2)).unwrap();
        assert!(same.unwrap() < -0.8);
        assert!(rank_correlations(&[&a, &b], u.sft(), &u, &prompts, 1, SeedStream::new(2)).is_err());
        assert!(rank_correlations(&[&a], u.sft(), &u, &prompts, 4, SeedStream::new(2)).is_err());
        let trace =
            rank_correlation_trace(&[&a, &b], &[(0, u.sft().clone()), (10, u.sft().clone())], &u, &prompts, 4, SeedStream::new(3))
                .unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace[1].step, 10);
    }
}
