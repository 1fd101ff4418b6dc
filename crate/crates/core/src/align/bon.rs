use serde::{Deserialize, Serialize};

use crate::env::Universe;
use crate::error::{Error, Result};
use crate::reward::Scorer;
use crate::types::{Prompt, Response};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BonConfig {
    pub n_grid: Vec<usize>,
}

impl Default for BonConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![1, 2, 4, 8, 16, 32, 64],
        }
    }
}

impl BonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::config("n_grid must be nonempty with every n >= 1"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("n_grid must be strictly increasing"));
        }
        Ok(())
    }

    pub fn max_n(&self) -> usize {
        self.n_grid.iter().copied().max().unwrap_or(1)
    }
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn bon_select_index<S: Scorer + ?Sized>(scorer: &S, u: &Universe, x: &Prompt, candidates: &[Response]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::invalid("best-of-n needs at least one candidate"));
    }
    let items: Vec<(&Prompt, &Response)> = candidates.iter().map(|y| (x, y)).collect();
    let scores = scorer.score_batch(u, &items)?;
    Ok(argmax_first(&scores).expect("nonempty"))
}

/// The candidate with the highest score, lowest index among ties.
pub fn bon_select<S: Scorer + ?Sized>(scorer: &S, u: &Universe, x: &Prompt, candidates: &[Response]) -> Result<Response> {
    Ok(candidates[bon_select_index(scorer, u, x, candidates)?].clone())
}

/// Upper bound `ln n − (n − 1)/n` on KL(best-of-n ‖ base).
pub fn kl_bound(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("kl_bound needs n >= 1"));
    }
    let n = n as f64;
    Ok(n.ln() - (n - 1.0) / n)
}
