//! Pairwise judges and win rates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Universe;
use crate::error::{Error, Result};
use crate::policy::MarkovPolicy;
use crate::rng::{SeedStream, StreamRng};
use crate::stats::sigmoid;
use crate::types::{Prompt, Response};

/// A noisy pairwise judge. Each vote prefers the response shown first with
/// probability `σ((r_first − r_second)/temperature + position_bias)`.
/// `votes_per_order` votes are cast with each presentation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub temperature: f64,
    pub position_bias: f64,
    pub votes_per_order: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            position_bias: 0.0,
            votes_per_order: 8,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("judge temperature must be finite and >= 0"));
        }
        if !self.position_bias.is_finite() {
            return Err(Error::config("judge position bias must be finite"));
        }
        if self.votes_per_order == 0 {
            return Err(Error::config("judge needs at least one vote per order"));
        }
        Ok(())
    }

    /// Probability that one vote prefers the first-shown response. At zero
    /// temperature the reward sign decides and only exact ties fall back to
    /// the position bias.
    pub fn first_vote_prob(&self, r_first: f64, r_second: f64) -> f64 {
        let d = r_first - r_second;
        if self.temperature == 0.0 {
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                0.0
            } else {
                sigmoid(self.position_bias)
            }
        } else {
            sigmoid(d / self.temperature + self.position_bias)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    A,
    B,
    Tie,
}

impl Verdict {
    /// Credit for response A: 1, 0, or 0.5 on a tie.
    pub fn credit(self) -> f64 {
        match self {
            Verdict::A => 1.0,
            Verdict::B => 0.0,
            Verdict::Tie => 0.5,
        }
    }
}

/// Majority over `2·votes_per_order` votes judged on the true reward; a
/// split vote is a tie.
pub fn majority_vote_judge(
    u: &Universe,
    x: &Prompt,
    a: &Response,
    b: &Response,
    cfg: &JudgeConfig,
    rng: &mut StreamRng,
) -> Result<Verdict> {
    cfg.validate()?;
    let ra = u.true_reward(x, a).value();
    let rb = u.true_reward(x, b).value();
    let p_ab = cfg.first_vote_prob(ra, rb);
    let p_ba = cfg.first_vote_prob(rb, ra);
    let k = cfg.votes_per_order;
    let mut for_a = 0;
    for _ in 0..k {
        if rng.random::<f64>() < p_ab {
            for_a += 1;
        }
    }
    for _ in 0..k {
        if rng.random::<f64>() >= p_ba {
            for_a += 1;
        }
    }
    Ok(match for_a.cmp(&k) {
        std::cmp::Ordering::Greater => Verdict::A,
        std::cmp::Ordering::Less => Verdict::B,
        std::cmp::Ordering::Equal => Verdict::Tie,
    })
}

/// How pairs are decided when computing win rates.
#[derive(Clone, Debug, PartialEq)]
pub enum Judge {
    /// Exact comparison of the true reward; ties count one half.
    Gold,
    Majority(JudgeConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WinRate {
    pub rate: f64,
    /// Credit of the first response on each prompt.
    pub per_prompt: Vec<f64>,
}

/// Win rate of `a[i]` over `b[i]` on `prompts[i]`. Judge votes for prompt
/// `i` come from `stream.index(i)`.
pub fn win_rate_responses(
    u: &Universe,
    prompts: &[Prompt],
    a: &[Response],
    b: &[Response],
    judge: &Judge,
    stream: SeedStream,
) -> Result<WinRate> {
    if prompts.is_empty() {
        return Err(Error::invalid("win rate needs prompts"));
    }
    if a.len() != prompts.len() || b.len() != prompts.len() {
        return Err(Error::DimensionMismatch {
            expected: prompts.len(),
            actual: a.len().min(b.len()),
        });
    }
    let per_prompt = prompts
        .iter()
        .zip(a.iter().zip(b))
        .enumerate()
        .map(|(i, (x, (ya, yb)))| {
            Ok(match judge {
                Judge::Gold => {
                    let (ra, rb) = (u.true_reward(x, ya).value(), u.true_reward(x, yb).value());
                    if ra > rb {
                        1.0
                    } else if ra < rb {
                        0.0
                    } else {
                        0.5
                    }
                }
                Judge::Majority(cfg) => majority_vote_judge(u, x, ya, yb, cfg, &mut stream.index(i as u64).rng())?.credit(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(WinRate {
        rate: per_prompt.iter().sum::<f64>() / per_prompt.len() as f64,
        per_prompt,
    })
}

/// Win rate of one sample from `policy` against one from `reference` per
/// prompt.
pub fn win_rate(
    u: &Universe,
    policy: &MarkovPolicy,
    reference: &MarkovPolicy,
    prompts: &[Prompt],
    judge: &Judge,
    stream: SeedStream,
) -> Result<WinRate> {
    let draw = |p: &MarkovPolicy, label: &str| -> Vec<Response> {
        let s = stream.derive(label);
        prompts
            .iter()
            .enumerate()
            .map(|(i, x)| p.sample(u.prompt_class(x), &mut s.index(i as u64).rng()))
            .collect()
    };
    let a = draw(policy, "policy");
    let b = draw(reference, "reference");
    win_rate_responses(u, prompts, &a, &b, judge, stream.derive("judge"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_universe, UniverseConfig};

    fn universe() -> Universe {
        make_universe(
            &UniverseConfig {
                pilot_size: 300,
                ..UniverseConfig::default()
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn zero_temperature_follows_reward_sign() {
        let u = universe();
        let prompts = u.sample_prompts(200, SeedStream::new(1));
        let cfg = JudgeConfig {
            temperature: 0.0,
            position_bias: 0.7,
            votes_per_order: 3,
        };
        let mut rng = SeedStream::new(2).rng();
        for (i, x) in prompts.iter().enumerate() {
            let a = u.sample_sft(x, 1.0, &mut SeedStream::new(3).index(i as u64).rng());
            let b = u.sample_sft(x, 1.0, &mut SeedStream::new(4).index(i as u64).rng());
            let v = majority_vote_judge(&u, x, &a, &b, &cfg, &mut rng).unwrap();
            let (ra, rb) = (u.true_reward(x, &a).value(), u.true_reward(x, &b).value());
            // Exact reward ties are decided by the position-biased coin.
            if ra > rb {
                assert_eq!(v, Verdict::A);
            } else if ra < rb {
                assert_eq!(v, Verdict::B);
            }
        }
    }

    #[test]
    fn self_comparison_is_a_tie_or_even() {
        let u = universe();
        let prompts = u.sample_prompts(300, SeedStream::new(1));
        let ys: Vec<Response> = prompts
            .iter()
            .enumerate()
            .map(|(i, x)| u.sample_sft(x, 1.0, &mut SeedStream::new(5).index(i as u64).rng()))
            .collect();
        let gold = win_rate_responses(&u, &prompts, &ys, &ys, &Judge::Gold, SeedStream::new(6)).unwrap();
        assert_eq!(gold.rate, 0.5);
        let noisy = win_rate_responses(&u, &prompts, &ys, &ys, &Judge::Majority(JudgeConfig::default()), SeedStream::new(6))
            .unwrap();
        assert!((noisy.rate - 0.5).abs() < 0.1);
    }

    #[test]
    fn votes_are_symmetric_under_swap_without_bias() {
        let cfg = JudgeConfig::default();
        assert!((cfg.first_vote_prob(1.0, 0.2) + cfg.first_vote_prob(0.2, 1.0) - 1.0).abs() < 1e-12);
        assert!(JudgeConfig {
            votes_per_order: 0,
            ..JudgeConfig::default()
        }
        .validate()
        .is_err());
        assert!(JudgeConfig {
            temperature: -1.0,
            ..JudgeConfig::default()
        }
        .validate()
        .is_err());
    }
}
