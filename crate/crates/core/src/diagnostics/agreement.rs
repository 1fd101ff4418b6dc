//! Cross-model scoring of best-of-n selections and top-1 agreement.

use crate::align::argmax_first;
use crate::env::Universe;
use crate::error::{Error, Result};
use crate::reward::{score_matrix, z_from_scores, RewardModel, Scorer};
use crate::rng::SeedStream;
use crate::types::{AffineScoreTransform, Prompt, Response};

/// `max_n` reference-policy samples per prompt. Prompt `i`, candidate `j`
/// comes from `stream.index(i).index(j)`, so the first `n` candidates of a
/// pool of size `m >= n` are exactly a pool of size `n`.
#[derive(Clone, Debug)]
pub struct CandidatePool {
    pub prompts: Vec<Prompt>,
    pub candidates: Vec<Vec<Response>>,
}

impl CandidatePool {
    pub fn sample(u: &Universe, prompts: &[Prompt], max_n: usize, stream: SeedStream) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::invalid("candidate pool needs prompts"));
        }
        if max_n == 0 {
            return Err(Error::invalid("candidate pool needs max_n >= 1"));
        }
        let candidates = prompts
            .iter()
            .enumerate()
            .map(|(i, x)| {
                (0..max_n)
                    .map(|j| u.sample_sft(x, 1.0, &mut stream.index(i as u64).index(j as u64).rng()))
                    .collect()
            })
            .collect();
        Ok(Self {
            prompts: prompts.to_vec(),
            candidates,
        })
    }

    pub fn max_n(&self) -> usize {
        self.candidates.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Items in prompt-major order: index `i * max_n + j`.
    pub fn items(&self) -> Vec<(&Prompt, &Response)> {
        self.prompts
            .iter()
            .zip(&self.candidates)
            .flat_map(|(x, ys)| ys.iter().map(move |y| (x, y)))
            .collect()
    }

    /// Scores of one scorer over the pool, prompt-major.
    pub fn score<S: Scorer + ?Sized>(&self, u: &Universe, scorer: &S) -> Result<Vec<f64>> {
        scorer.score_batch(u, &self.items())
    }

    /// Index of the best-of-`n` pick for every prompt.
    pub fn select(&self, scores: &[f64], n: usize) -> Result<Vec<usize>> {
        let m = self.max_n();
        if n == 0 || n > m {
            return Err(Error::invalid(format!("n = {n} outside the pool size {m}")));
        }
        Ok((0..self.len())
            .map(|p| argmax_first(&scores[p * m..p * m + n]).expect("n >= 1"))
            .collect())
    }

    /// Responses picked by `select`.
    pub fn picked(&self, picks: &[usize]) -> Vec<Response> {
        picks
            .iter()
            .zip(&self.candidates)
            .map(|(&j, ys)| ys[j].clone())
            .collect()
    }
}

/// Z-transform of a score row, fitted on the first candidate of each
/// prompt (the n = 1 selections).
pub fn z_on_first_candidates(pool: &CandidatePool, scores: &[f64]) -> Result<AffineScoreTransform> {
    let m = pool.max_n();
    let first: Vec<f64> = (0..pool.len()).map(|p| scores[p * m]).collect();
    z_from_scores(&first)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgreementRow {
    pub n: usize,
    pub self_score: f64,
    pub same_pretrain: Option<f64>,
    pub diff_pretrain: Option<f64>,
}

/// Z-scored evaluations of best-of-n picks, grouped by how the judging
/// model relates to the ranking model.
#[derive(Clone, Debug)]
pub struct AgreementReport {
    pub rows: Vec<AgreementRow>,
    /// Per n, per prompt: (self, same-pretrain mean, diff-pretrain mean).
    pub per_prompt: Vec<Vec<(f64, Option<f64>, Option<f64>)>>,
    /// Transforms that produced the Z-scores, one per model (ranker first).
    pub transforms: Vec<AffineScoreTransform>,
}

/// Cross-scoring from precomputed pool scores. `scores[m]` holds model `m`
/// over the pool; `pretrain[m]` its pretrain seed; model `ranker` ranks.
pub fn cross_scoring_from_scores(
    pool: &CandidatePool,
    scores: &[Vec<f64>],
    pretrain: &[u64],
    ranker: usize,
    n_grid: &[usize],
) -> Result<AgreementReport> {
    let transforms: Vec<AffineScoreTransform> = scores
        .iter()
        .map(|row| z_on_first_candidates(pool, row))
        .collect::<Result<_>>()?;
    let z: Vec<Vec<f64>> = scores
        .iter()
        .zip(&transforms)
        .map(|(row, t)| row.iter().map(|s| t.scale() * s + t.offset()).collect())
        .collect();
    let m = pool.max_n();
    let same: Vec<usize> = (0..scores.len())
        .filter(|&o| o != ranker && pretrain[o] == pretrain[ranker])
        .collect();
    let diff: Vec<usize> = (0..scores.len()).filter(|&o| pretrain[o] != pretrain[ranker]).collect();
    let group = |ids: &[usize], k: usize| -> Option<f64> {
        (!ids.is_empty()).then(|| ids.iter().map(|&o| z[o][k]).sum::<f64>() / ids.len() as f64)
    };
    let mut rows = Vec::with_capacity(n_grid.len());
    let mut per_prompt = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let picks = pool.select(&scores[ranker], n)?;
        let pp: Vec<(f64, Option<f64>, Option<f64>)> = picks
            .iter()
            .enumerate()
            .map(|(p, &j)| {
                let k = p * m + j;
                (z[ranker][k], group(&same, k), group(&diff, k))
            })
            .collect();
        let avg = |f: &dyn Fn(&(f64, Option<f64>, Option<f64>)) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = pp.iter().map(f).collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        rows.push(AgreementRow {
            n,
            self_score: avg(&|t| Some(t.0)).expect("self is always present"),
            same_pretrain: avg(&|t| t.1),
            diff_pretrain: avg(&|t| t.2),
        });
        per_prompt.push(pp);
    }
    Ok(AgreementReport {
        rows,
        per_prompt,
        transforms,
    })
}

/// Best-of-n picks of `ranker` on a reference-policy pool, scored by the
/// ranker itself and by every other model, grouped by pretrain seed.
pub fn bon_cross_scoring(
    ranker: &RewardModel,
    others: &[RewardModel],
    u: &Universe,
    prompts: &[Prompt],
    n_grid: &[usize],
    stream: SeedStream,
) -> Result<AgreementReport> {
    let max_n = n_grid.iter().copied().max().ok_or_else(|| Error::invalid("empty n grid"))?;
    let same = others.iter().any(|o| o.pretrain_seed() == ranker.pretrain_seed());
    let diff = others.iter().any(|o| o.pretrain_seed() != ranker.pretrain_seed());
    if !same || !diff {
        return Err(Error::invalid(
            "cross scoring needs other models both sharing and not sharing the ranker's pretrain seed",
        ));
    }
    let pool = CandidatePool::sample(u, prompts, max_n, stream)?;
    let models: Vec<&RewardModel> = std::iter::once(ranker).chain(others).collect();
    let scores = score_matrix(&models, u, &pool.items())?;
    let pretrain: Vec<u64> = models.iter().map(|m| m.pretrain_seed()).collect();
    cross_scoring_from_scores(&pool, &scores, &pretrain, 0, n_grid)
}

/// Fraction of prompts on which two score rows pick the same candidate.
pub fn top1_from_scores(pool: &CandidatePool, a: &[f64], b: &[f64], n: usize) -> Result<f64> {
    let pa = pool.select(a, n)?;
    let pb = pool.select(b, n)?;
    Ok(pa.iter().zip(&pb).filter(|(x, y)| x == y).count() as f64 / pa.len() as f64)
}

/// Top-1 agreement averaged over every `n`-subset of each prompt's pool
/// rather than only the first `n` candidates; one entry per `n` in `ns`.
/// Pool candidates are exchangeable, so this has the same expectation as
/// `top1_from_scores` with less variance. Ties go to the lower index, as in
/// `select`.
pub fn subset_top1_from_scores(pool: &CandidatePool, a: &[f64], b: &[f64], ns: &[usize]) -> Result<Vec<f64>> {
    let m = pool.max_n();
    if let Some(n) = ns.iter().find(|&&n| n == 0 || n > m) {
        return Err(Error::invalid(format!("n = {n} outside the pool size {m}")));
    }
    // `beats(s, c, d)`: c is picked over d by score row s.
    let beats = |s: &[f64], c: usize, d: usize| s[c] > s[d] || (s[c] == s[d] && c < d);
    // below[k]: how many candidates (prompt, c) beat under both rows in
    // exactly k others, summed over prompts.
    let mut below = vec![0usize; m];
    for p in 0..pool.len() {
        let (sa, sb) = (&a[p * m..(p + 1) * m], &b[p * m..(p + 1) * m]);
        for c in 0..m {
            let k = (0..m).filter(|&d| d != c && beats(sa, c, d) && beats(sb, c, d)).count();
            below[k] += 1;
        }
    }
    // A subset of size n is won by c under both rows iff its other n - 1
    // members all come from the candidates c beats under both.
    Ok(ns
        .iter()
        .map(|&n| {
            let hits: f64 = below.iter().enumerate().map(|(k, &count)| count as f64 * binomial(k, n - 1)).sum();
            hits / binomial(m, n) / pool.len() as f64
        })
        .collect())
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Top-1 agreement of two scorers on shared reference-policy candidates.
pub fn top1_agreement<A: Scorer + ?Sized, B: Scorer + ?Sized>(
    a: &A,
    b: &B,
    u: &Universe,
    prompts: &[Prompt],
    n: usize,
    stream: SeedStream,
) -> Result<f64> {
    let pool = CandidatePool::sample(u, prompts, n, stream)?;
    top1_from_scores(&pool, &pool.score(u, a)?, &pool.score(u, b)?, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_universe, UniverseConfig};
    use crate::reward::{RandomScorer, RepDims, Representation, RmKind};
    use std::sync::Arc;

    fn universe() -> Universe {
        make_universe(
            &UniverseConfig {
                pilot_size: 300,
                ..UniverseConfig::default()
            },
            6,
        )
        .unwrap()
    }

    fn model(p: u64, f: u64) -> RewardModel {
        let rep = Arc::new(Representation::new(p, RepDims::default()).unwrap());
        let s = SeedStream::new(p * 100 + f);
        let w = (0..32).map(|i| s.index(i).unit() - 0.5).collect();
        RewardModel::new(RmKind::Pairwise, rep, f, w, 0.0).unwrap()
    }

    #[test]
    fn pools_nest() {
        let u = universe();
        let prompts = u.sample_prompts(5, SeedStream::new(1));
        let big = CandidatePool::sample(&u, &prompts, 8, SeedStream::new(2)).unwrap();
        let small = CandidatePool::sample(&u, &prompts, 3, SeedStream::new(2)).unwrap();
        for (a, b) in big.candidates.iter().zip(&small.candidates) {
            assert_eq!(&a[..3], &b[..]);
        }
    }

    #[test]
    fn n1_groups_coincide_and_identical_models_agree() {
        let u = universe();
        let prompts = u.sample_prompts(120, SeedStream::new(1));
        let ranker = model(1, 1);
        let others = vec![model(1, 2), model(2, 1), model(3, 1)];
        let r = bon_cross_scoring(&ranker, &others, &u, &prompts, &[1, 4, 16], SeedStream::new(2)).unwrap();
        let row = &r.rows[0];
        assert!(row.self_score.abs() < 1e-12);
        assert!((row.self_score - row.same_pretrain.unwrap()).abs() < 1e-12);
        assert!((row.self_score - row.diff_pretrain.unwrap()).abs() < 1e-12);

        // Identical score rows: all curves coincide.
        let pool = CandidatePool::sample(&u, &prompts, 16, SeedStream::new(2)).unwrap();
        let s = pool.score(&u, &ranker).unwrap();
        let scores = vec![s.clone(), s.clone(), s];
        let r = cross_scoring_from_scores(&pool, &scores, &[1, 1, 2], 0, &[1, 4, 16]).unwrap();
        for row in &r.rows {
            assert!((row.self_score - row.same_pretrain.unwrap()).abs() < 1e-12);
            assert!((row.self_score - row.diff_pretrain.unwrap()).abs() < 1e-12);
        }
        assert!(bon_cross_scoring(&ranker, &[model(2, 1)], &u, &prompts, &[1, 2], SeedStream::new(2)).is_err());
    }

    #[test]
    fn top1_self_and_symmetry() {
        let u = universe();
        let prompts = u.sample_prompts(50, SeedStream::new(1));
        let a = model(1, 1);
        let b = model(2, 1);
        for n in [1, 2, 8] {
            assert_eq!(top1_agreement(&a, &a, &u, &prompts, n, SeedStream::new(3)).unwrap(), 1.0);
            let ab = top1_agreement(&a, &b, &u, &prompts, n, SeedStream::new(3)).unwrap();
            let ba = top1_agreement(&b, &a, &u, &prompts, n, SeedStream::new(3)).unwrap();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn random_scorers_agree_at_chance() {
        let u = universe();
        let prompts = u.sample_prompts(2000, SeedStream::new(4));
        let a = RandomScorer {
            stream: SeedStream::new(10),
        };
        let b = RandomScorer {
            stream: SeedStream::new(11),
        };
        let rate = top1_agreement(&a, &b, &u, &prompts, 4, SeedStream::new(5)).unwrap();
        let sigma = crate::stats::binomial_sigma(0.25, 2000);
        assert!((rate - 0.25).abs() <= 3.0 * sigma, "{rate}");
    }

    #[test]
    fn subset_top1_matches_enumerating_every_subset() {
        let u = universe();
        let prompts = u.sample_prompts(30, SeedStream::new(6));
        let pool = CandidatePool::sample(&u, &prompts, 7, SeedStream::new(7)).unwrap();
        // Coarse scores so ties occur.
        let coarse = |m: &RewardModel| -> Vec<f64> { pool.score(&u, m).unwrap().iter().map(|v| (v * 4.0).round()).collect() };
        let (a, b) = (coarse(&model(1, 1)), coarse(&model(2, 1)));
        let ns: Vec<usize> = (1..=7).collect();
        let got = subset_top1_from_scores(&pool, &a, &b, &ns).unwrap();
        for &n in &ns {
            let (mut hits, mut total) = (0usize, 0usize);
            for p in 0..pool.len() {
                for mask in 0u32..128 {
                    if mask.count_ones() as usize != n {
                        continue;
                    }
                    let idx: Vec<usize> = (0..7).filter(|j| mask & (1 << j) != 0).collect();
                    let pick = |s: &[f64]| idx[argmax_first(&idx.iter().map(|&j| s[p * 7 + j]).collect::<Vec<_>>()).unwrap()];
                    hits += (pick(&a) == pick(&b)) as usize;
                    total += 1;
                }
            }
            assert!((got[n - 1] - hits as f64 / total as f64).abs() < 1e-12, "n = {n}");
        }
        assert_eq!(got[0], 1.0);
        assert_eq!(got[6], top1_from_scores(&pool, &a, &b, 7).unwrap());
        assert!(subset_top1_from_scores(&pool, &a, &a, &ns).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(subset_top1_from_scores(&pool, &a, &b, &[8]).is_err());
    }
}
