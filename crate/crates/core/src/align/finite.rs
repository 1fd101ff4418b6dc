//! Exact oracles on finite outcome spaces.

use crate::error::{Error, Result};

fn check_dist(base: &[f64]) -> Result<()> {
    if base.is_empty() {
        return Err(Error::invalid("distribution has empty support"));
    }
    if base.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid("probabilities must be finite and non-negative"));
    }
    let total: f64 = base.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// Distribution of the best-of-n pick when drawing `n` times from `base`.
/// Outcomes are ranked by score, and among equal scores the lower index
/// ranks higher (it wins the tie). With `F` the base mass ranked at or
/// below an outcome and `F⁻` the mass strictly below,
/// `P(select y) = F(y)^n − F⁻(y)^n`.
pub fn bon_exact_distribution(base: &[f64], scores: &[f64], n: usize) -> Result<Vec<f64>> {
    check_dist(base)?;
    if scores.len() != base.len() {
        return Err(Error::DimensionMismatch {
            expected: base.len(),
            actual: scores.len(),
        });
    }
    if n == 0 {
        return Err(Error::invalid("best-of-n needs n >= 1"));
    }
    // Worst first: ascending score, and for equal scores the higher index
    // is worse.
    let mut order: Vec<usize> = (0..base.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)));
    let mut out = vec![0.0; base.len()];
    let mut below = 0.0f64;
    for &i in &order {
        let upto = (below + base[i]).min(1.0);
        out[i] = upto.powi(n as i32) - below.powi(n as i32);
        below = upto;
    }
    Ok(out)
}

/// `π*(y) ∝ base(y)·exp(r(y)/λ)`, the maximiser of `E_π[r] − λ·KL(π ‖ base)`.
pub fn exact_tilted_policy(base: &[f64], rewards: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_dist(base)?;
    if rewards.len() != base.len() {
        return Err(Error::DimensionMismatch {
            expected: base.len(),
            actual: rewards.len(),
        });
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be positive (got {lambda})")));
    }
    let logits: Vec<f64> = base
        .iter()
        .zip(rewards)
        .map(|(p, r)| if *p > 0.0 { p.ln() + r / lambda } else { f64::NEG_INFINITY })
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / z).collect())
}

/// `KL(p ‖ q)` in nats; `+∞` if `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| if *b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `E_π[r] − λ·KL(π ‖ base)`.
pub fn regularized_objective(pi: &[f64], base: &[f64], rewards: &[f64], lambda: f64) -> f64 {
    let er: f64 = pi.iter().zip(rewards).map(|(p, r)| p * r).sum();
    er - lambda * kl_divergence(pi, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::kl_bound;
    use crate::rng::SeedStream;
    use rand::Rng;

    fn random_dist(stream: SeedStream, k: usize) -> Vec<f64> {
        let mut rng = stream.rng();
        let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn bon_two_outcome_example() {
        let d = bon_exact_distribution(&[0.5, 0.5], &[1.0, 0.0], 2).unwrap();
        assert!((d[0] - 0.75).abs() < 1e-15 && (d[1] - 0.25).abs() < 1e-15);
        let kl = kl_divergence(&d, &[0.5, 0.5]);
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.1308).abs() < 1e-4);
        assert!(kl <= kl_bound(2).unwrap());
    }

    #[test]
    fn bon_n1_is_base_and_ties_go_to_lower_index() {
        let base = [0.2, 0.3, 0.5];
        let d = bon_exact_distribution(&base, &[1.0, 1.0, 0.0], 1).unwrap();
        for (a, b) in d.iter().zip(&base) {
            assert!((a - b).abs() < 1e-15);
        }
        let d = bon_exact_distribution(&[0.5, 0.5], &[1.0, 1.0], 2).unwrap();
        assert!((d[0] - 0.75).abs() < 1e-15);
        assert!(bon_exact_distribution(&[], &[], 2).is_err());
    }

    #[test]
    fn bon_sums_to_one_and_respects_bound() {
        for trial in 0..50u64 {
            let s = SeedStream::new(trial);
            let k = 2 + (trial as usize % 9);
            let base = random_dist(s.derive("base"), k);
            let scores: Vec<f64> = (0..k).map(|i| s.derive("score").index(i as u64).unit()).collect();
            let mut prev_mean = f64::NEG_INFINITY;
            for n in [1, 2, 4, 8, 16, 32, 64] {
                let d = bon_exact_distribution(&base, &scores, n).unwrap();
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(kl_divergence(&d, &base) <= kl_bound(n).unwrap() + 1e-9);
                let m: f64 = d.iter().zip(&scores).map(|(p, r)| p * r).sum();
                assert!(m >= prev_mean - 1e-12);
                prev_mean = m;
            }
        }
    }

    #[test]
    fn tilted_examples() {
        let t = exact_tilted_policy(&[0.5, 0.5], &[1.0, 0.0], 1.0).unwrap();
        assert!((t[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        let base = [0.1, 0.2, 0.3, 0.4];
        let t = exact_tilted_policy(&base, &[3.0, -1.0, 0.5, 2.0], 1e6).unwrap();
        assert!(total_variation(&t, &base) < 1e-5);
        assert!(exact_tilted_policy(&base, &[0.0; 4], 0.0).is_err());
        assert!(exact_tilted_policy(&base, &[0.0; 4], -1.0).is_err());
    }

    #[test]
    fn tilted_beats_random_perturbations() {
        for trial in 0..20u64 {
            let s = SeedStream::new(100 + trial);
            let k = 2 + (trial as usize % 5);
            let base = random_dist(s.derive("base"), k);
            let r: Vec<f64> = (0..k).map(|i| 4.0 * s.derive("r").index(i as u64).unit() - 2.0).collect();
            let lambda = 0.1 + s.derive("lambda").unit();
            let t = exact_tilted_policy(&base, &r, lambda).unwrap();
            let best = regularized_objective(&t, &base, &r, lambda);
            for j in 0..1000u64 {
                let q = random_dist(s.derive("q").index(j), k);
                let mix: Vec<f64> = t.iter().zip(&q).map(|(a, b)| 0.9 * a + 0.1 * b).collect();
                assert!(regularized_objective(&q, &base, &r, lambda) <= best + 1e-12);
                assert!(regularized_objective(&mix, &base, &r, lambda) <= best + 1e-12);
            }
        }
    }
}
