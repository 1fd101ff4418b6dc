//! Anything that assigns rewards to (prompt, response) pairs.

use crate::env::Universe;
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::stats::mean_and_std;
use crate::types::{AffineScoreTransform, Prompt, Response};

use super::features::standardized_features;
use super::model::RewardModel;

/// Batch-first scoring interface shared by reward models, ensembles, the
/// true reward, and test scorers.
pub trait Scorer: Send + Sync {
    fn score_batch(&self, u: &Universe, items: &[(&Prompt, &Response)]) -> Result<Vec<f64>>;

    fn describe(&self) -> String;

    fn score_one(&self, u: &Universe, x: &Prompt, y: &Response) -> Result<f64> {
        Ok(self.score_batch(u, &[(x, y)])?[0])
    }
}

impl Scorer for RewardModel {
    fn score_batch(&self, u: &Universe, items: &[(&Prompt, &Response)]) -> Result<Vec<f64>> {
        self.score_features(&standardized_features(u, items))
    }

    fn describe(&self) -> String {
        self.label()
    }
}

/// The hidden true reward.
#[derive(Clone, Copy, Debug, Default)]
pub struct GoldReward;

impl Scorer for GoldReward {
    fn score_batch(&self, u: &Universe, items: &[(&Prompt, &Response)]) -> Result<Vec<f64>> {
        Ok(items.iter().map(|(x, y)| u.true_reward(x, y).value()).collect())
    }

    fn describe(&self) -> String {
        "gold".into()
    }
}

/// Uniform scores keyed by (stream, prompt, batch slot): two draws of the
/// same response in one batch get independent scores.
#[derive(Clone, Copy, Debug)]
pub struct RandomScorer {
    pub stream: SeedStream,
}

impl Scorer for RandomScorer {
    fn score_batch(&self, _u: &Universe, items: &[(&Prompt, &Response)]) -> Result<Vec<f64>> {
        Ok(items
            .iter()
            .enumerate()
            .map(|(i, (x, _))| self.stream.tokens(x.tokens()).index(i as u64).unit())
            .collect())
    }

    fn describe(&self) -> String {
        format!("random_{:016x}", self.stream.key())
    }
}

/// A scorer followed by an affine map.
pub struct Transformed<S> {
    pub inner: S,
    pub transform: AffineScoreTransform,
}

impl<S: Scorer> Scorer for Transformed<S> {
    fn score_batch(&self, u: &Universe, items: &[(&Prompt, &Response)]) -> Result<Vec<f64>> {
        let raw = self.inner.score_batch(u, items)?;
        Ok(raw
            .iter()
            .zip(items)
            .map(|(s, (x, _))| self.transform.apply(x, *s))
            .collect())
    }

    fn describe(&self) -> String {
        format!("{}*", self.inner.describe())
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score_batch(&self, u: &Universe, items: &[(&Prompt, &Response)]) -> Result<Vec<f64>> {
        (**self).score_batch(u, items)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

pub const MIN_REFERENCE: usize = 100;

/// Transform giving mean 0 and std 1 on the reference scores.
pub fn z_from_scores(scores: &[f64]) -> Result<AffineScoreTransform> {
    if scores.len() < MIN_REFERENCE {
        return Err(Error::invalid(format!(
            "z-normalisation needs at least {MIN_REFERENCE} reference scores (got {})",
            scores.len()
        )));
    }
    let (m, s) = mean_and_std(scores)?;
    if !(s > 0.0) {
        return Err(Error::invalid("z-normalisation reference has zero spread"));
    }
    AffineScoreTransform::new(1.0 / s, -m / s)
}

pub fn z_normalize<S: Scorer + ?Sized>(
    scorer: &S,
    u: &Universe,
    reference: &[(&Prompt, &Response)],
) -> Result<AffineScoreTransform> {
    z_from_scores(&scorer.score_batch(u, reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_maps_two_point_reference_to_unit_values() {
        let scores: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let t = z_from_scores(&scores).unwrap();
        let x = Prompt::new(vec![6]).unwrap();
        assert!((t.apply(&x, 0.0) + 1.0).abs() < 1e-12);
        assert!((t.apply(&x, 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn z_on_normalised_scores_is_identity() {
        let raw: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let t = z_from_scores(&raw).unwrap();
        let x = Prompt::new(vec![6]).unwrap();
        let normed: Vec<f64> = raw.iter().map(|s| t.apply(&x, *s)).collect();
        let t2 = z_from_scores(&normed).unwrap();
        assert!((t2.scale() - 1.0).abs() < 1e-9);
        assert!(t2.offset().abs() < 1e-9);
    }

    #[test]
    fn z_is_absorbs_positive_affine_maps() {
        let raw: Vec<f64> = (0..150).map(|i| (i as f64 * 0.37).sin()).collect();
        let mapped: Vec<f64> = raw.iter().map(|s| 3.5 * s - 2.0).collect();
        let (ta, tb) = (z_from_scores(&raw).unwrap(), z_from_scores(&mapped).unwrap());
        let x = Prompt::new(vec![6]).unwrap();
        for (a, b) in raw.iter().zip(&mapped) {
            assert!((ta.apply(&x, *a) - tb.apply(&x, *b)).abs() < 1e-9);
        }
    }

    #[test]
    fn z_errors() {
        assert!(z_from_scores(&[1.0; 50]).is_err());
        assert!(z_from_scores(&[1.0; 150]).is_err());
    }
}
