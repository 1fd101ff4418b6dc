//! Policy-gradient training of a Markov policy against a reward scorer with
//! a KL penalty toward the reference policy.
//!
//! Each step draws `prompts_per_step` training prompts and `k` responses per
//! prompt. A response's return is `r(x, y) − λ·(log π(y|x) − log π_sft(y|x))`
//! and its advantage subtracts the mean return of the other `k − 1` responses
//! to the same prompt. Logits move along `A · ∇ log π(y|x)`, computed from the
//! probabilities recorded while sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{hack_stats, HackStats};
use crate::env::Universe;
use crate::error::{Error, Result};
use crate::policy::{draw_index, softmax_into, MarkovPolicy};
use crate::reward::Scorer;
use crate::rng::SeedStream;
use crate::types::{Prompt, Response, Token, EOS};

use super::kl::mean_kl_exact;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    /// KL coefficients swept by experiments.
    pub lambdas: Vec<f64>,
    pub steps: usize,
    /// Responses per prompt; the leave-one-out baseline needs at least 2.
    pub samples_per_prompt: usize,
    pub prompts_per_step: usize,
    pub learning_rate: f64,
    pub eval_interval: usize,
    /// Responses sampled per evaluation prompt at each evaluation.
    pub eval_samples: usize,
    /// Keep a copy of the policy at every evaluation step.
    pub keep_snapshots: bool,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.01, 0.03, 0.1, 0.3, 0.5],
            steps: 5000,
            samples_per_prompt: 5,
            prompts_per_step: 4,
            learning_rate: 0.3,
            eval_interval: 500,
            eval_samples: 2,
            keep_snapshots: false,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::config("every lambda must be finite and > 0"));
        }
        if self.samples_per_prompt < 2 {
            return Err(Error::config("samples_per_prompt must be >= 2 for the leave-one-out baseline"));
        }
        if self.prompts_per_step == 0 || self.eval_interval == 0 || self.eval_samples == 0 {
            return Err(Error::config("prompts_per_step, eval_interval and eval_samples must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub proxy_reward: f64,
    pub true_reward: f64,
    pub kl_nats: f64,
    pub hack: HackStats,
}

#[derive(Clone, Debug, Default)]
pub struct AlignmentTrace {
    pub points: Vec<TracePoint>,
    /// Policies at each evaluation step, when requested.
    pub snapshots: Vec<(usize, MarkovPolicy)>,
}

impl AlignmentTrace {
    pub fn last(&self) -> Option<&TracePoint> {
        self.points.last()
    }
}

/// One sampled response with the row offsets and probabilities seen on the way.
struct Rollout {
    response: Response,
    steps: Vec<(usize, Token)>,
    probs: Vec<f64>,
    log_prob: f64,
}

fn rollout(policy: &MarkovPolicy, class: usize, rng: &mut crate::rng::StreamRng, buf: &mut [f64]) -> Rollout {
    let v = policy.vocab();
    let mut state = policy.start_state();
    let mut steps = Vec::with_capacity(8);
    let mut probs = Vec::with_capacity(8 * v);
    let mut tokens = Vec::with_capacity(8);
    let mut lp = 0.0;
    for _ in 0..policy.max_len() {
        softmax_into(policy.row(class, state), 1.0, buf);
        let tok = draw_index(buf, rng) as Token;
        lp += buf[tok as usize].ln();
        steps.push((policy.row_index(class, state), tok));
        probs.extend_from_slice(buf);
        tokens.push(tok);
        if tok == EOS {
            break;
        }
        state = policy.next_state(state, tok);
    }
    Rollout {
        response: Response::from_tokens(tokens).expect("rollout stops at EOS"),
        steps,
        probs,
        log_prob: lp,
    }
}

/// Samples `per_prompt` responses for each prompt; prompt `i`, sample `j`
/// uses `stream.index(i).index(j)`.
pub fn sample_policy(u: &Universe, policy: &MarkovPolicy, prompts: &[Prompt], per_prompt: usize, stream: SeedStream) -> Vec<Vec<Response>> {
    let table = policy.table();
    prompts
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let c = u.prompt_class(x);
            (0..per_prompt)
                .map(|j| table.sample(c, 1.0, &mut stream.index(i as u64).index(j as u64).rng()))
                .collect()
        })
        .collect()
}

fn evaluate<S: Scorer + ?Sized>(
    u: &Universe,
    policy: &MarkovPolicy,
    scorer: &S,
    prompts: &[Prompt],
    samples: usize,
    step: usize,
    stream: SeedStream,
) -> Result<TracePoint> {
    let draws = sample_policy(u, policy, prompts, samples, stream);
    let mut xs = Vec::with_capacity(prompts.len() * samples);
    let mut ys = Vec::with_capacity(prompts.len() * samples);
    for (x, d) in prompts.iter().zip(draws) {
        for y in d {
            xs.push(x.clone());
            ys.push(y);
        }
    }
    let items: Vec<(&Prompt, &Response)> = xs.iter().zip(&ys).collect();
    let proxy = scorer.score_batch(u, &items)?;
    let n = items.len() as f64;
    Ok(TracePoint {
        step,
        proxy_reward: proxy.iter().sum::<f64>() / n,
        true_reward: items.iter().map(|(x, y)| u.true_reward(x, y).value()).sum::<f64>() / n,
        kl_nats: mean_kl_exact(u, policy, prompts)?,
        hack: hack_stats(&ys, &xs)?,
    })
}

/// Trains from `init` for `cfg.steps` steps at KL coefficient `lambda`.
/// Training prompts are drawn uniformly from `train_prompts`; evaluation
/// uses `eval_prompts` with the same sample streams at every evaluation.
#[allow(clippy::too_many_arguments)]
pub fn rl_train<S: Scorer + ?Sized>(
    u: &Universe,
    init: &MarkovPolicy,
    scorer: &S,
    cfg: &RlConfig,
    lambda: f64,
    train_prompts: &[Prompt],
    eval_prompts: &[Prompt],
    stream: SeedStream,
) -> Result<(MarkovPolicy, AlignmentTrace)> {
    cfg.validate()?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!("lambda must be finite and > 0 (got {lambda})")));
    }
    if train_prompts.is_empty() || eval_prompts.is_empty() {
        return Err(Error::invalid("rl_train needs training and evaluation prompts"));
    }
    if !init.same_shape(u.sft()) {
        return Err(Error::invalid("initial policy does not match the universe's state space"));
    }
    let sft = u.sft_table();
    let mut policy = init.clone().with_origin(&format!("rl(lambda={lambda})<-{}", init.origin()));
    let mut trace = AlignmentTrace::default();
    let eval_stream = stream.derive("eval");
    let train_stream = stream.derive("train");
    let k = cfg.samples_per_prompt;
    let batch = (k * cfg.prompts_per_step) as f64;
    // The KL term's curvature grows with λ; shrinking the step keeps large
    // coefficients stable and leaves λ <= 1 untouched.
    let lr = cfg.learning_rate / lambda.max(1.0);
    let mut buf = vec![0.0; policy.vocab()];
    // Gradient buffer over the full table; only rows visited in a step are
    // touched, tracked in `rows`.
    let mut grad = vec![0.0; policy.logits().len()];
    let mut in_rows = vec![false; policy.logits().len() / policy.vocab()];
    let mut rows: Vec<usize> = Vec::new();

    let record = |step: usize, policy: &MarkovPolicy, trace: &mut AlignmentTrace| -> Result<()> {
        trace
            .points
            .push(evaluate(u, policy, scorer, eval_prompts, cfg.eval_samples, step, eval_stream)?);
        if cfg.keep_snapshots {
            trace.snapshots.push((step, policy.clone()));
        }
        Ok(())
    };

    for step in 0..cfg.steps {
        if step % cfg.eval_interval == 0 {
            record(step, &policy, &mut trace)?;
        }
        let mut rng = train_stream.index(step as u64).rng();
        let mut groups: Vec<(Prompt, Vec<Rollout>)> = Vec::with_capacity(cfg.prompts_per_step);
        for _ in 0..cfg.prompts_per_step {
            let x = &train_prompts[rng.random_range(0..train_prompts.len())];
            let c = u.prompt_class(x);
            let rolls = (0..k).map(|_| rollout(&policy, c, &mut rng, &mut buf)).collect();
            groups.push((x.clone(), rolls));
        }
        let items: Vec<(&Prompt, &Response)> = groups
            .iter()
            .flat_map(|(x, rolls)| rolls.iter().map(move |r| (x, &r.response)))
            .collect();
        let rewards = scorer.score_batch(u, &items)?;
        let v = policy.vocab();
        for &row in &rows {
            grad[row..row + v].iter_mut().for_each(|g| *g = 0.0);
            in_rows[row / v] = false;
        }
        rows.clear();
        for (g, (x, rolls)) in groups.iter().enumerate() {
            let c = u.prompt_class(x);
            let returns: Vec<f64> = rolls
                .iter()
                .enumerate()
                .map(|(i, r)| rewards[g * k + i] - lambda * (r.log_prob - sft.log_prob(c, &r.response)))
                .collect();
            let total: f64 = returns.iter().sum();
            for (r, ret) in rolls.iter().zip(&returns) {
                let adv = ret - (total - ret) / (k - 1) as f64;
                let scale = adv / batch;
                if scale == 0.0 {
                    continue;
                }
                for (t, &(row, tok)) in r.steps.iter().enumerate() {
                    let p = &r.probs[t * v..(t + 1) * v];
                    if !in_rows[row / v] {
                        in_rows[row / v] = true;
                        rows.push(row);
                    }
                    for (j, (gj, pj)) in grad[row..row + v].iter_mut().zip(p).enumerate() {
                        let ind = if j == tok as usize { 1.0 } else { 0.0 };
                        *gj += scale * (ind - pj);
                    }
                }
            }
        }
        // Rows in first-visit order, so the update is deterministic.
        let logits = policy.logits_mut();
        let mut bad = false;
        for &row in &rows {
            for (l, g) in logits[row..row + v].iter_mut().zip(&grad[row..row + v]) {
                *l += lr * g;
                bad |= !l.is_finite();
            }
        }
        if bad || rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFiniteParameters { step });
        }
    }
    record(cfg.steps, &policy, &mut trace)?;
    Ok((policy, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_universe, UniverseConfig};
    use crate::reward::GoldReward;

    fn small() -> Universe {
        make_universe(
            &UniverseConfig {
                pilot_size: 200,
                max_len: 12,
                ..UniverseConfig::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(RlConfig::default().validate().is_ok());
        let bad = RlConfig {
            samples_per_prompt: 1,
            ..RlConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RlConfig {
            lambdas: vec![0.1, 0.0],
            ..RlConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deterministic_and_strictly_increasing_steps() {
        let u = small();
        let prompts = u.sample_prompts(8, SeedStream::new(1));
        let cfg = RlConfig {
            steps: 60,
            eval_interval: 20,
            ..RlConfig::default()
        };
        let run = || rl_train(&u, u.sft(), &GoldReward, &cfg, 0.1, &prompts, &prompts, SeedStream::new(2)).unwrap();
        let (pa, ta) = run();
        let (pb, tb) = run();
        assert_eq!(pa.logits(), pb.logits());
        assert_eq!(ta.points, tb.points);
        let steps: Vec<usize> = ta.points.iter().map(|p| p.step).collect();
        assert_eq!(steps, vec![0, 20, 40, 60]);
        assert!(ta.points[0].kl_nats.abs() < 1e-12);
    }

    #[test]
    fn huge_lambda_stays_near_reference() {
        let u = small();
        let prompts = u.sample_prompts(8, SeedStream::new(1));
        let cfg = RlConfig {
            steps: 200,
            eval_interval: 100,
            ..RlConfig::default()
        };
        let (_, trace) = rl_train(&u, u.sft(), &GoldReward, &cfg, 1e6, &prompts, &prompts, SeedStream::new(3)).unwrap();
        assert!(trace.last().unwrap().kl_nats <= 0.01);
    }
}
