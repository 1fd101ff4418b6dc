//! Small statistics toolkit: the sigmoid preference model, rank correlation,
//! moments, and seeded permutation tests.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)` without overflow.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Bradley-Terry probability that the response scored `r2` is preferred
/// over the one scored `r1`: `σ(r2 - r1)`.
pub fn bt_pref_prob(r1: f64, r2: f64) -> Result<f64> {
    if !r1.is_finite() {
        return Err(Error::NonFinite(r1));
    }
    if !r2.is_finite() {
        return Err(Error::NonFinite(r2));
    }
    Ok(sigmoid(r2 - r1))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Arithmetic mean and population (1/N) standard deviation.
pub fn mean_and_std(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::invalid("mean_and_std of an empty list"));
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    Ok((m, var.sqrt()))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; zero variance in either input gives 0.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation with average-rank ties. A list with zero
/// variance carries no ranking information and yields 0.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "spearman: length mismatch ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("spearman needs at least two observations"));
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// Standard deviation of a binomial proportion.
pub fn binomial_sigma(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// One-sided paired test of `mean(diffs) > 0` by random sign flips.
/// Returns `(1 + #{permuted mean >= observed}) / (1 + permutations)`.
pub fn sign_flip_p_value(diffs: &[f64], permutations: usize, stream: SeedStream) -> f64 {
    if diffs.is_empty() {
        return 1.0;
    }
    let observed = mean(diffs);
    let tol = 1e-12 * (1.0 + observed.abs());
    let mut rng = stream.rng();
    let mut hits = 0usize;
    for _ in 0..permutations {
        let mut s = 0.0;
        for &d in diffs {
            if rng.random::<bool>() {
                s += d;
            } else {
                s -= d;
            }
        }
        if s / diffs.len() as f64 >= observed - tol {
            hits += 1;
        }
    }
    (1 + hits) as f64 / (1 + permutations) as f64
}

/// Two-sided two-sample permutation test on the difference of means.
pub fn two_sample_p_value(a: &[f64], b: &[f64], permutations: usize, stream: SeedStream) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let observed = (mean(a) - mean(b)).abs();
    let tol = 1e-12 * (1.0 + observed);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let total: f64 = pooled.iter().sum();
    let na = a.len();
    let nb = b.len();
    let mut rng = stream.rng();
    let mut hits = 0usize;
    for _ in 0..permutations {
        // Partial Fisher-Yates: only the first `na` slots are needed.
        for i in 0..na {
            let j = rng.random_range(i..pooled.len());
            pooled.swap(i, j);
        }
        let sa: f64 = pooled[..na].iter().sum();
        let diff = (sa / na as f64 - (total - sa) / nb as f64).abs();
        if diff >= observed - tol {
            hits += 1;
        }
    }
    (1 + hits) as f64 / (1 + permutations) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bt_examples() {
        assert_eq!(bt_pref_prob(0.0, 0.0).unwrap(), 0.5);
        assert!((bt_pref_prob(0.0, 1.0).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((bt_pref_prob(0.0, 50.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(bt_pref_prob(f64::NAN, 0.0).is_err());
        assert!(bt_pref_prob(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn spearman_examples() {
        let r = spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let r = spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn spearman_matches_rank_difference_formula_without_ties() {
        // 1 - 6 Σd² / (n(n²-1)) holds exactly when there are no ties.
        let xs = [0.3, 1.7, -2.0, 4.1, 0.9, 2.2];
        let ys = [1.0, 0.5, -1.0, 3.0, 2.0, 0.0];
        let (rx, ry) = (average_ranks(&xs), average_ranks(&ys));
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        let n = xs.len() as f64;
        let expected = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        assert!((spearman(&xs, &ys).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_handle_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn mean_and_std_examples() {
        assert_eq!(mean_and_std(&[1.0, 1.0, 1.0]).unwrap(), (1.0, 0.0));
        assert_eq!(mean_and_std(&[0.0, 2.0]).unwrap(), (1.0, 1.0));
        let (m, s) = mean_and_std(&[-1.0, 0.0, 1.0]).unwrap();
        assert!(m.abs() < 1e-15);
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_and_std(&[]).is_err());
    }

    #[test]
    fn permutation_tests_on_identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(two_sample_p_value(&a, &a, 500, SeedStream::new(1)), 1.0);
        assert_eq!(sign_flip_p_value(&[0.0; 10], 500, SeedStream::new(1)), 1.0);
        let strong = [1.0; 30];
        assert!(sign_flip_p_value(&strong, 2000, SeedStream::new(2)) < 0.001);
    }

    proptest! {
        #[test]
        fn bt_antisymmetry(a in -60.0f64..60.0, b in -60.0f64..60.0) {
            let p = bt_pref_prob(a, b).unwrap();
            let q = bt_pref_prob(b, a).unwrap();
            prop_assert!((p + q - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn spearman_invariant_under_monotone_maps(
            xs in proptest::collection::vec(-100.0f64..100.0, 2..20),
            seed in 0u64..1000,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate()
                .map(|(i, _)| SeedStream::new(seed).index(i as u64).unit())
                .collect();
            let base = spearman(&xs, &ys).unwrap();
            let mapped: Vec<f64> = xs.iter().map(|x| (x / 10.0).exp() * 3.0 + 1.0).collect();
            let other = spearman(&mapped, &ys).unwrap();
            prop_assert!((base - other).abs() < 1e-12);
            let sym = spearman(&ys, &xs).unwrap();
            prop_assert!((base - sym).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
