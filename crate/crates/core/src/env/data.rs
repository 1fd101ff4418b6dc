use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::Universe;
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::stats::{bt_pref_prob, sigmoid};
use crate::types::{Prompt, Response};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub prompt: Prompt,
    pub preferred: Response,
    pub rejected: Response,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointwiseExample {
    pub prompt: Prompt,
    pub response: Response,
    pub label: u8,
}

pub trait HasPrompt {
    fn prompt(&self) -> &Prompt;
}

impl HasPrompt for PreferenceExample {
    fn prompt(&self) -> &Prompt {
        &self.prompt
    }
}

impl HasPrompt for PointwiseExample {
    fn prompt(&self) -> &Prompt {
        &self.prompt
    }
}

/// Annotator utility used for labelling: the true reward plus the optional
/// length bias of the universe.
fn annotator_utility(u: &Universe, x: &Prompt, y: &Response) -> f64 {
    u.true_reward(x, y).value() + u.config().annotator_length_bias * y.len() as f64
}

/// Preference pairs drawn from the reference policy and labelled by a
/// Bradley-Terry draw on the annotator utility. Example `i` consumes stream
/// `stream.index(i)`. Pairs whose two responses coincide are resampled once
/// and then dropped, so fewer than `m` examples may be returned.
pub fn gen_preference_data(u: &Universe, m: usize, stream: SeedStream) -> Result<Vec<PreferenceExample>> {
    if m == 0 {
        return Err(Error::invalid("gen_preference_data needs m >= 1"));
    }
    let temp = u.config().generator_temperature;
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut rng = stream.index(i as u64).rng();
        let x = u.sample_prompt(&mut rng);
        let y1 = u.sample_sft(&x, temp, &mut rng);
        let mut y2 = u.sample_sft(&x, temp, &mut rng);
        if y1 == y2 {
            y2 = u.sample_sft(&x, temp, &mut rng);
            if y1 == y2 {
                continue;
            }
        }
        let p2 = bt_pref_prob(annotator_utility(u, &x, &y1), annotator_utility(u, &x, &y2))?;
        let (preferred, rejected) = if rng.random::<f64>() < p2 { (y2, y1) } else { (y1, y2) };
        out.push(PreferenceExample {
            prompt: x,
            preferred,
            rejected,
        });
    }
    Ok(out)
}

/// Pointwise examples with labels drawn from `Bernoulli(σ(r* − τ))`.
pub fn gen_pointwise_data(u: &Universe, m: usize, stream: SeedStream) -> Result<Vec<PointwiseExample>> {
    if m == 0 {
        return Err(Error::invalid("gen_pointwise_data needs m >= 1"));
    }
    let temp = u.config().generator_temperature;
    let tau = u.pointwise_threshold();
    Ok((0..m)
        .map(|i| {
            let mut rng = stream.index(i as u64).rng();
            let x = u.sample_prompt(&mut rng);
            let y = u.sample_sft(&x, temp, &mut rng);
            let p = sigmoid(u.true_reward(&x, &y).value() - tau);
            let label = u8::from(rng.random::<f64>() < p);
            PointwiseExample {
                prompt: x,
                response: y,
                label,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<E> {
    pub rm_half: Vec<E>,
    pub policy_half: Vec<Prompt>,
    pub validation: Vec<E>,
}

/// Prompt-disjoint three-way split (reward-model data, policy prompts,
/// validation). Distinct prompts are shuffled and cut at the cumulative
/// fractions; every example follows its prompt.
pub fn split_dataset<E: HasPrompt + Clone>(
    examples: &[E],
    fractions: [f64; 3],
    stream: SeedStream,
) -> Result<DatasetSplit<E>> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be non-negative and sum to 1 (got {fractions:?})"
        )));
    }
    let mut seen = HashSet::new();
    let mut prompts: Vec<&Prompt> = Vec::new();
    for e in examples {
        if seen.insert(e.prompt()) {
            prompts.push(e.prompt());
        }
    }
    let needed = fractions.iter().filter(|&&f| f > 0.0).count();
    if prompts.len() < needed {
        return Err(Error::invalid(format!(
            "{} distinct prompts cannot fill {needed} non-empty splits",
            prompts.len()
        )));
    }
    prompts.shuffle(&mut stream.rng());
    let p = prompts.len() as f64;
    let b1 = (fractions[0] * p).round() as usize;
    let b2 = (((fractions[0] + fractions[1]) * p).round() as usize).max(b1);
    let part = |i: usize| -> u8 {
        if i < b1 {
            0
        } else if i < b2 {
            1
        } else {
            2
        }
    };
    let assignment: std::collections::HashMap<&Prompt, u8> =
        prompts.iter().enumerate().map(|(i, x)| (*x, part(i))).collect();

    let mut split = DatasetSplit {
        rm_half: Vec::new(),
        policy_half: Vec::new(),
        validation: Vec::new(),
    };
    for x in prompts.iter().filter(|x| assignment[*x] == 1) {
        split.policy_half.push((*x).clone());
    }
    for e in examples {
        match assignment[e.prompt()] {
            0 => split.rm_half.push(e.clone()),
            2 => split.validation.push(e.clone()),
            _ => {}
        }
    }
    Ok(split)
}

/// Writes one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_universe, UniverseConfig};
    use crate::stats::binomial_sigma;

    fn universe() -> Universe {
        make_universe(
            &UniverseConfig {
                pilot_size: 2000,
                ..UniverseConfig::default()
            },
            21,
        )
        .unwrap()
    }

    #[test]
    fn preference_data_is_deterministic_and_on_policy() {
        let u = universe();
        let a = gen_preference_data(&u, 200, SeedStream::new(1)).unwrap();
        let b = gen_preference_data(&u, 200, SeedStream::new(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.len() >= 190);
        for e in &a {
            assert_ne!(e.preferred, e.rejected);
            assert!(u.sft_log_prob(&e.prompt, &e.preferred).is_finite());
        }
        assert!(gen_preference_data(&u, 0, SeedStream::new(1)).is_err());
    }

    #[test]
    fn label_calibration_against_bradley_terry() {
        // Per bin of Δr*, the empirical rate at which the second-drawn
        // response wins must match σ(Δ) within 3σ binomial.
        let u = universe();
        let n = 20_000;
        let stream = SeedStream::new(99);
        let edges = [-3.0, -1.5, -0.5, 0.5, 1.5, 3.0];
        let mut wins = vec![0usize; edges.len() - 1];
        let mut totals = vec![0usize; edges.len() - 1];
        let mut expected = vec![0.0f64; edges.len() - 1];
        for i in 0..n {
            let mut rng = stream.index(i).rng();
            let x = u.sample_prompt(&mut rng);
            let y1 = u.sample_sft(&x, 1.0, &mut rng);
            let y2 = u.sample_sft(&x, 1.0, &mut rng);
            let d = u.true_reward(&x, &y2).value() - u.true_reward(&x, &y1).value();
            let p = bt_pref_prob(0.0, d).unwrap();
            let won = rng.random::<f64>() < p;
            if let Some(b) = edges.windows(2).position(|w| d >= w[0] && d < w[1]) {
                totals[b] += 1;
                expected[b] += p;
                wins[b] += usize::from(won);
            }
        }
        for b in 0..totals.len() {
            if totals[b] < 200 {
                continue;
            }
            let p = expected[b] / totals[b] as f64;
            let f = wins[b] as f64 / totals[b] as f64;
            assert!((f - p).abs() <= 3.0 * binomial_sigma(p, totals[b]), "bin {b}: {f} vs {p}");
        }
    }

    #[test]
    fn generator_matches_bt_draw_rates() {
        // The generator's labelling step: equal rewards → uniform, Δ = 1 → σ(1).
        let n = 10_000;
        for (delta, target) in [(0.0, 0.5), (1.0, 0.731_058_578_630_005)] {
            let stream = SeedStream::new(4);
            let hits = (0..n)
                .filter(|&i| {
                    let p = bt_pref_prob(0.0, delta).unwrap();
                    stream.index(i).rng().random::<f64>() < p
                })
                .count();
            let f = hits as f64 / n as f64;
            assert!((f - target).abs() <= 3.0 * binomial_sigma(target, n as usize));
        }
    }

    #[test]
    fn pointwise_positive_rate_is_balanced() {
        let u = universe();
        let n = 10_000;
        let data = gen_pointwise_data(&u, n, SeedStream::new(3)).unwrap();
        let rate = data.iter().filter(|e| e.label == 1).count() as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 3.0 * binomial_sigma(0.5, n), "rate {rate}");
        let again = gen_pointwise_data(&u, 50, SeedStream::new(3)).unwrap();
        assert_eq!(&data[..50], &again[..]);
    }

    #[test]
    fn split_is_prompt_disjoint() {
        let u = universe();
        let data = gen_preference_data(&u, 100, SeedStream::new(5)).unwrap();
        let split = split_dataset(&data, [0.45, 0.45, 0.10], SeedStream::new(6)).unwrap();
        let rm: HashSet<&Prompt> = split.rm_half.iter().map(|e| &e.prompt).collect();
        let val: HashSet<&Prompt> = split.validation.iter().map(|e| &e.prompt).collect();
        for x in &split.policy_half {
            assert!(!rm.contains(x) && !val.contains(x));
        }
        assert!(rm.is_disjoint(&val));
        assert_eq!(split.rm_half.len() + split.policy_half.len() + split.validation.len(), data.len());
        let again = split_dataset(&data, [0.45, 0.45, 0.10], SeedStream::new(6)).unwrap();
        assert_eq!(split, again);
    }

    #[test]
    fn split_everything_to_rm() {
        let u = universe();
        let data = gen_preference_data(&u, 30, SeedStream::new(5)).unwrap();
        let split = split_dataset(&data, [1.0, 0.0, 0.0], SeedStream::new(6)).unwrap();
        assert_eq!(split.rm_half.len(), data.len());
        assert!(split.policy_half.is_empty() && split.validation.is_empty());
    }

    #[test]
    fn split_errors() {
        let u = universe();
        let data = gen_preference_data(&u, 2, SeedStream::new(5)).unwrap();
        assert!(split_dataset(&data, [0.4, 0.4, 0.2], SeedStream::new(1)).is_err());
        assert!(split_dataset(&data, [0.5, 0.6, 0.0], SeedStream::new(1)).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let u = universe();
        let data = gen_preference_data(&u, 20, SeedStream::new(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefs.jsonl");
        write_jsonl(&path, &data).unwrap();
        let back: Vec<PreferenceExample> = read_jsonl(&path).unwrap();
        assert_eq!(back, data);
    }
}
