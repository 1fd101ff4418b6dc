//! Synthetic universes: prompt distribution, hidden true reward, and the
//! reference policy every alignment run starts from.

mod data;

pub use data::{
    gen_pointwise_data, gen_preference_data, read_jsonl, split_dataset, write_jsonl, DatasetSplit,
    HasPrompt, PointwiseExample, PreferenceExample,
};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{LogProbTable, MarkovPolicy};
use crate::reward::features::{raw_features, FeatureScaler, FEATURE_DIM, HIST_DIMS};
use crate::rng::{SeedStream, StreamRng};
use crate::stats::sigmoid;
use crate::types::{Prompt, Response, Score, Token, EOS, FIRST_CONTENT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub prompt_len_min: usize,
    pub prompt_len_max: usize,
    pub prompt_classes: usize,
    /// Std of the Gaussian draw for reference-policy logits.
    pub sft_logit_scale: f64,
    /// Divisor applied to the drawn logits.
    pub sft_temper: f64,
    /// Added to every EOS logit of the reference policy.
    pub eos_bias: f64,
    pub target_set_size: usize,
    pub content_weight: f64,
    /// Length beyond which the brevity penalty applies.
    pub target_length: usize,
    pub brevity_slope: f64,
    pub fluency_weight: f64,
    /// Observation noise of the content-overlap feature.
    pub content_proxy_noise: f64,
    /// Observation noise of the fluency feature.
    pub fluency_proxy_noise: f64,
    /// Sampling temperature used when generating preference/pointwise data.
    pub generator_temperature: f64,
    /// Extra per-token utility the simulated annotators give to length when
    /// labelling preference pairs. Zero means labels follow the true reward.
    pub annotator_length_bias: f64,
    pub pilot_size: usize,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            max_len: 32,
            prompt_len_min: 4,
            prompt_len_max: 16,
            prompt_classes: 8,
            sft_logit_scale: 1.0,
            sft_temper: 1.5,
            eos_bias: 1.8,
            target_set_size: 4,
            content_weight: 4.0,
            target_length: 8,
            brevity_slope: 0.5,
            fluency_weight: 2.0,
            content_proxy_noise: 0.1,
            fluency_proxy_noise: 0.1,
            generator_temperature: 1.0,
            annotator_length_bias: 0.0,
            pilot_size: 10_000,
        }
    }
}

impl UniverseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 8 {
            return Err(Error::config(format!("vocab_size must be >= 8 (got {})", self.vocab_size)));
        }
        if self.vocab_size > Token::MAX as usize {
            return Err(Error::config("vocab_size too large for token ids"));
        }
        if self.max_len < 4 {
            return Err(Error::config(format!("max_len must be >= 4 (got {})", self.max_len)));
        }
        if self.prompt_classes < 1 {
            return Err(Error::config("prompt_classes must be >= 1"));
        }
        if self.prompt_len_min < 1 || self.prompt_len_min > self.prompt_len_max {
            return Err(Error::config("prompt length range must satisfy 1 <= min <= max"));
        }
        let content_tokens = self.vocab_size - FIRST_CONTENT as usize;
        if self.target_set_size < 1 || self.target_set_size > content_tokens {
            return Err(Error::config(format!(
                "target_set_size must be in [1, {content_tokens}]"
            )));
        }
        if !(self.sft_temper > 0.0) || !(self.generator_temperature > 0.0) {
            return Err(Error::config("temperatures must be positive"));
        }
        for (name, v) in [
            ("sft_logit_scale", self.sft_logit_scale),
            ("content_weight", self.content_weight),
            ("brevity_slope", self.brevity_slope),
            ("fluency_weight", self.fluency_weight),
            ("content_proxy_noise", self.content_proxy_noise),
            ("fluency_proxy_noise", self.fluency_proxy_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        if !self.eos_bias.is_finite() || !self.annotator_length_bias.is_finite() {
            return Err(Error::config("eos_bias and annotator_length_bias must be finite"));
        }
        if self.pilot_size < 100 {
            return Err(Error::config("pilot_size must be >= 100"));
        }
        Ok(())
    }

    /// A universe whose preference labels carry an annotator bias toward
    /// length, so length is spuriously predictive in reward-model training
    /// data while the true reward penalises long responses. The reference
    /// policy stops early, so preferred responses are short in absolute terms.
    pub fn length_spurious() -> Self {
        Self {
            annotator_length_bias: 1.0,
            eos_bias: 2.5,
            ..Self::default()
        }
    }
}

/// The three terms of the true reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardTerms {
    /// Fraction of the hidden target tokens present in the response.
    pub content_match: f64,
    /// Tokens beyond the target length.
    pub excess_length: f64,
    /// Mean reference-policy log-probability per token, rescaled to [0, 1].
    pub fluency: f64,
}

#[derive(Clone, Debug)]
pub struct Universe {
    config: UniverseConfig,
    seed: u64,
    sft: MarkovPolicy,
    sft_table: LogProbTable,
    targets: Vec<Vec<Token>>,
    class_key: u64,
    projection: Vec<f64>,
    scaler: FeatureScaler,
    pointwise_threshold: f64,
}

/// Builds a universe; deterministic in `(config, universe_seed)`.
pub fn make_universe(config: &UniverseConfig, universe_seed: u64) -> Result<Universe> {
    config.validate()?;
    let root = SeedStream::new(universe_seed).derive("universe");
    let v = config.vocab_size;
    let c = config.prompt_classes;

    let mut rng = root.derive("sft").rng();
    let n = c * (v + 1) * (v + 1) * v;
    let mut logits = Vec::with_capacity(n);
    for i in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let mut l = z * config.sft_logit_scale / config.sft_temper;
        if i % v == EOS as usize {
            l += config.eos_bias;
        }
        logits.push(l);
    }
    let sft = MarkovPolicy::new(v, config.max_len, c, logits, "sft")?;
    let sft_table = sft.table();

    let mut rng = root.derive("targets").rng();
    let content: Vec<Token> = (FIRST_CONTENT..v as Token).collect();
    let targets = (0..c)
        .map(|_| {
            let mut t: Vec<Token> = content
                .choose_multiple(&mut rng, config.target_set_size)
                .copied()
                .collect();
            t.sort_unstable();
            t
        })
        .collect();

    let mut rng = root.derive("projection").rng();
    let projection = (0..HIST_DIMS * v)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();

    let mut u = Universe {
        config: config.clone(),
        seed: universe_seed,
        sft,
        sft_table,
        targets,
        class_key: root.derive("classes").key(),
        projection,
        scaler: FeatureScaler::identity(),
        pointwise_threshold: 0.0,
    };

    // Pilot sample from the reference policy: fixes feature standardisation
    // and the pointwise-label threshold.
    let pilot = root.derive("pilot");
    let mut feats = Vec::with_capacity(config.pilot_size);
    let mut rewards = Vec::with_capacity(config.pilot_size);
    for i in 0..config.pilot_size {
        let mut rng = pilot.index(i as u64).rng();
        let x = u.sample_prompt(&mut rng);
        let y = u.sample_sft(&x, 1.0, &mut rng);
        feats.push(raw_features(&u, &x, &y).0);
        rewards.push(u.true_reward(&x, &y).value());
    }
    u.scaler = FeatureScaler::fit(&feats);
    u.pointwise_threshold = balanced_threshold(&rewards);
    Ok(u)
}

/// Threshold τ with mean σ(r − τ) = 1/2 over the sample.
fn balanced_threshold(rewards: &[f64]) -> f64 {
    let lo0 = rewards.iter().copied().fold(f64::INFINITY, f64::min) - 50.0;
    let hi0 = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 50.0;
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let rate = rewards.iter().map(|r| sigmoid(r - mid)).sum::<f64>() / rewards.len() as f64;
        if rate > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl Universe {
    pub fn config(&self) -> &UniverseConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn max_len(&self) -> usize {
        self.config.max_len
    }

    pub fn classes(&self) -> usize {
        self.config.prompt_classes
    }

    pub fn sft(&self) -> &MarkovPolicy {
        &self.sft
    }

    pub fn sft_table(&self) -> &LogProbTable {
        &self.sft_table
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn pointwise_threshold(&self) -> f64 {
        self.pointwise_threshold
    }

    pub fn targets(&self, class: usize) -> &[Token] {
        &self.targets[class]
    }

    pub fn prompt_class(&self, x: &Prompt) -> usize {
        (SeedStream::new(self.class_key).tokens(x.tokens()).key() % self.classes() as u64) as usize
    }

    /// Target set of the prompt's class, in ascending order; as a response
    /// body it scores full content match.
    pub fn target_sequence(&self, x: &Prompt) -> Vec<Token> {
        self.targets[self.prompt_class(x)].clone()
    }

    /// Draw from the prompt distribution.
    pub fn sample_prompt(&self, rng: &mut StreamRng) -> Prompt {
        let len = rng.random_range(self.config.prompt_len_min..=self.config.prompt_len_max);
        let tokens = (0..len)
            .map(|_| rng.random_range(1..self.config.vocab_size as Token))
            .collect();
        Prompt::new(tokens).expect("prompt tokens exclude EOS")
    }

    pub fn sample_prompts(&self, count: usize, stream: SeedStream) -> Vec<Prompt> {
        (0..count)
            .map(|i| self.sample_prompt(&mut stream.index(i as u64).rng()))
            .collect()
    }

    pub fn sample_sft(&self, x: &Prompt, temperature: f64, rng: &mut StreamRng) -> Response {
        self.sft_table.sample(self.prompt_class(x), temperature, rng)
    }

    pub fn sft_log_prob(&self, x: &Prompt, y: &Response) -> f64 {
        self.sft_table.log_prob(self.prompt_class(x), y)
    }

    pub fn check_prompt(&self, x: &Prompt) -> Result<()> {
        if x.tokens().iter().any(|&t| t as usize >= self.vocab_size()) {
            return Err(Error::invalid("prompt token outside vocabulary"));
        }
        Ok(())
    }

    pub fn check_response(&self, y: &Response) -> Result<()> {
        if y.tokens().iter().any(|&t| t as usize >= self.vocab_size()) {
            return Err(Error::invalid("response token outside vocabulary"));
        }
        if y.tokens().len() > self.max_len() {
            return Err(Error::invalid("response longer than max_len"));
        }
        Ok(())
    }

    pub fn content_match(&self, x: &Prompt, y: &Response) -> f64 {
        let targets = &self.targets[self.prompt_class(x)];
        let hits = targets.iter().filter(|t| y.body().contains(t)).count();
        hits as f64 / targets.len() as f64
    }

    pub fn fluency(&self, x: &Prompt, y: &Response) -> f64 {
        let lps = self.sft_table.token_log_probs(self.prompt_class(x), y);
        if lps.is_empty() {
            return 0.0;
        }
        let mean = lps.iter().sum::<f64>() / lps.len() as f64;
        let scale = 2.0 * (self.vocab_size() as f64).ln();
        (1.0 + mean / scale).clamp(0.0, 1.0)
    }

    pub fn reward_terms(&self, x: &Prompt, y: &Response) -> RewardTerms {
        RewardTerms {
            content_match: self.content_match(x, y),
            excess_length: y.len().saturating_sub(self.config.target_length) as f64,
            fluency: self.fluency(x, y),
        }
    }

    /// Hidden true reward `w_c·content − w_b·excess_length + w_f·fluency`.
    /// List formatting, numeric tokens, and prompt copying carry no weight.
    pub fn true_reward(&self, x: &Prompt, y: &Response) -> Score {
        let t = self.reward_terms(x, y);
        let c = &self.config;
        Score::new(
            c.content_weight * t.content_match - c.brevity_slope * t.excess_length
                + c.fluency_weight * t.fluency,
        )
        .expect("true reward is finite")
    }
}

/// Autoregressive sample from `policy` for prompt `x`.
pub fn sample_response(u: &Universe, policy: &MarkovPolicy, x: &Prompt, rng: &mut StreamRng) -> Result<Response> {
    if policy.vocab() != u.vocab_size() || policy.classes() != u.classes() || policy.max_len() != u.max_len() {
        return Err(Error::invalid("policy does not match the universe's state space"));
    }
    Ok(policy.sample(u.prompt_class(x), rng))
}

/// Number of raw features a universe exposes to reward models.
pub const fn feature_dim() -> usize {
    FEATURE_DIM
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BULLET;

    pub(crate) fn small_config() -> UniverseConfig {
        UniverseConfig {
            pilot_size: 500,
            ..UniverseConfig::default()
        }
    }

    #[test]
    fn deterministic_construction() {
        let a = make_universe(&small_config(), 3).unwrap();
        let b = make_universe(&small_config(), 3).unwrap();
        assert_eq!(a.sft().logits(), b.sft().logits());
        assert_eq!(a.targets, b.targets);
        assert_eq!(a.pointwise_threshold, b.pointwise_threshold);
        let c = make_universe(&small_config(), 4).unwrap();
        assert!(a.sft().logits().iter().zip(c.sft().logits()).any(|(x, y)| x != y));
    }

    #[test]
    fn rejects_invalid_sizes() {
        for cfg in [
            UniverseConfig { vocab_size: 7, ..small_config() },
            UniverseConfig { max_len: 3, ..small_config() },
            UniverseConfig { prompt_classes: 0, ..small_config() },
        ] {
            assert!(matches!(make_universe(&cfg, 1), Err(Error::Config(_))));
        }
    }

    #[test]
    fn small_vocab_samples_stay_in_range() {
        let cfg = UniverseConfig {
            vocab_size: 8,
            target_set_size: 2,
            ..small_config()
        };
        let u = make_universe(&cfg, 5).unwrap();
        let mut rng = SeedStream::new(1).rng();
        for _ in 0..500 {
            let x = u.sample_prompt(&mut rng);
            let y = u.sample_sft(&x, 1.0, &mut rng);
            assert!(x.tokens().iter().all(|&t| t < 8));
            assert!(y.tokens().iter().all(|&t| t < 8));
        }
    }

    #[test]
    fn empty_response_reward_is_fluency_only() {
        let u = make_universe(&small_config(), 1).unwrap();
        let x = Prompt::new(vec![7, 9, 11, 13]).unwrap();
        let y = Response::empty();
        let t = u.reward_terms(&x, &y);
        assert_eq!(t.content_match, 0.0);
        assert_eq!(t.excess_length, 0.0);
        let r = u.true_reward(&x, &y).value();
        assert!((r - u.config().fluency_weight * t.fluency).abs() < 1e-12);
    }

    #[test]
    fn target_sequence_has_full_content_match() {
        let u = make_universe(&small_config(), 1).unwrap();
        let x = Prompt::new(vec![7, 9, 11, 13, 2]).unwrap();
        let y = Response::terminated(u.target_sequence(&x)).unwrap();
        assert!(y.len() <= u.config().target_length);
        let t = u.reward_terms(&x, &y);
        assert_eq!(t.content_match, 1.0);
        assert_eq!(t.excess_length, 0.0);
    }

    #[test]
    fn hack_channels_never_add_reward() {
        let u = make_universe(&small_config(), 2).unwrap();
        let mut rng = SeedStream::new(8).rng();
        for _ in 0..300 {
            let x = u.sample_prompt(&mut rng);
            let y = u.sample_sft(&x, 1.0, &mut rng);
            let base = u.reward_terms(&x, &y);
            let mut bulleted = y.body().to_vec();
            bulleted.extend([BULLET, BULLET, BULLET]);
            let mut copied = y.body().to_vec();
            copied.extend_from_slice(&x.tokens()[..3.min(x.len())]);
            for body in [bulleted, copied] {
                let body: Vec<Token> = body.into_iter().take(u.max_len() - 1).collect();
                let y2 = Response::terminated(body).unwrap();
                let t = u.reward_terms(&x, &y2);
                let c = u.config();
                // Outside the fluency term the reward can only change through
                // content (copying may add target tokens) and the length penalty.
                let non_fluency = |t: &RewardTerms| {
                    c.content_weight * t.content_match - c.brevity_slope * t.excess_length
                };
                let content_gain = c.content_weight * (t.content_match - base.content_match);
                assert!(t.excess_length >= base.excess_length);
                assert!(non_fluency(&t) - non_fluency(&base) <= content_gain + 1e-12);
            }
            // Bullets are never target tokens, so they cannot raise content match.
            let mut b = y.body().to_vec();
            b.push(BULLET);
            let b: Vec<Token> = b.into_iter().take(u.max_len() - 1).collect();
            let t = u.reward_terms(&x, &Response::terminated(b).unwrap());
            assert!(t.content_match <= base.content_match + 1e-12);
        }
    }

    #[test]
    fn reference_policy_terminates() {
        let u = make_universe(&small_config(), 9).unwrap();
        let mut rng = SeedStream::new(3).rng();
        let n = 10_000;
        let finished = (0..n)
            .filter(|_| {
                let x = u.sample_prompt(&mut rng);
                u.sample_sft(&x, 1.0, &mut rng).is_terminated()
            })
            .count();
        assert!(finished as f64 / n as f64 >= 0.99, "terminated {finished}/{n}");
    }

    #[test]
    fn eos_probability_positive_everywhere() {
        let u = make_universe(&small_config(), 9).unwrap();
        let t = u.sft_table();
        for c in 0..u.classes() {
            for s in 0..(u.vocab_size() + 1).pow(2) {
                assert!(t.row(c, s)[EOS as usize] > f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn empirical_next_token_frequencies_match_softmax() {
        let u = make_universe(&small_config(), 4).unwrap();
        let x = Prompt::new(vec![8, 9, 10, 11]).unwrap();
        let class = u.prompt_class(&x);
        let probs: Vec<f64> = u
            .sft_table()
            .row(class, u.sft().start_state())
            .iter()
            .map(|l| l.exp())
            .collect();
        let n = 10_000;
        let mut counts = vec![0usize; u.vocab_size()];
        let stream = SeedStream::new(77);
        for i in 0..n {
            let y = u.sample_sft(&x, 1.0, &mut stream.index(i).rng());
            counts[y.tokens()[0] as usize] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let p = probs[k];
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let f = c as f64 / n as f64;
            assert!((f - p).abs() <= 3.0 * sigma + 1e-9, "token {k}: {f} vs {p}");
        }
    }

    #[test]
    fn sample_response_is_deterministic() {
        let u = make_universe(&small_config(), 4).unwrap();
        let x = Prompt::new(vec![8, 9, 10, 11]).unwrap();
        let s = SeedStream::new(5);
        let a = sample_response(&u, u.sft(), &x, &mut s.rng()).unwrap();
        let b = sample_response(&u, u.sft(), &x, &mut s.rng()).unwrap();
        assert_eq!(a, b);
    }
}
