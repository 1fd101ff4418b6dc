//! Prompt-class-conditioned order-2 Markov policies over the token vocabulary.
//!
//! The state before emitting a token is the pair of the two previous tokens,
//! with the virtual id `V` standing for "before the start". Logits are stored
//! densely as `[class][prev2 * (V + 1) + prev1][token]`; the start logits are
//! the row for state `(V, V)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::types::{Response, Token, EOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovPolicy {
    vocab: usize,
    max_len: usize,
    classes: usize,
    logits: Vec<f64>,
    origin: String,
}

/// Writes `log softmax(logits)` into `out`. Entries at `+inf` share all of
/// the mass; entries at `-inf` get `-inf`.
pub fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        let count = logits.iter().filter(|&&l| l == f64::INFINITY).count() as f64;
        for (o, &l) in out.iter_mut().zip(logits) {
            *o = if l == f64::INFINITY { -count.ln() } else { f64::NEG_INFINITY };
        }
        return;
    }
    let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
    let lz = m + z.ln();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lz;
    }
}

/// Writes `softmax(logits / temperature)` into `out`.
pub fn softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    if temperature == 1.0 {
        log_softmax_into(logits, out);
    } else {
        let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        log_softmax_into(&scaled, out);
    }
    for o in out.iter_mut() {
        *o = o.exp();
    }
}

/// Inverse-CDF draw from a probability vector.
#[inline]
pub fn draw_index(probs: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

impl MarkovPolicy {
    pub fn new(vocab: usize, max_len: usize, classes: usize, logits: Vec<f64>, origin: &str) -> Result<Self> {
        if vocab < 2 || max_len < 1 || classes < 1 {
            return Err(Error::config("policy needs vocab >= 2, max_len >= 1, classes >= 1"));
        }
        let expected = classes * (vocab + 1) * (vocab + 1) * vocab;
        if logits.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: logits.len(),
            });
        }
        Ok(Self {
            vocab,
            max_len,
            classes,
            logits,
            origin: origin.to_string(),
        })
    }

    pub fn zeros(vocab: usize, max_len: usize, classes: usize, origin: &str) -> Result<Self> {
        let n = classes * (vocab + 1) * (vocab + 1) * vocab;
        Self::new(vocab, max_len, classes, vec![0.0; n], origin)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn with_origin(mut self, origin: &str) -> Self {
        self.origin = origin.to_string();
        self
    }

    pub fn states(&self) -> usize {
        (self.vocab + 1) * (self.vocab + 1)
    }

    pub fn start_state(&self) -> usize {
        self.vocab * (self.vocab + 1) + self.vocab
    }

    #[inline]
    pub fn next_state(&self, state: usize, token: Token) -> usize {
        (state % (self.vocab + 1)) * (self.vocab + 1) + token as usize
    }

    #[inline]
    pub fn row_index(&self, class: usize, state: usize) -> usize {
        (class * self.states() + state) * self.vocab
    }

    pub fn row(&self, class: usize, state: usize) -> &[f64] {
        let i = self.row_index(class, state);
        &self.logits[i..i + self.vocab]
    }

    pub fn row_mut(&mut self, class: usize, state: usize) -> &mut [f64] {
        let i = self.row_index(class, state);
        &mut self.logits[i..i + self.vocab]
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn same_shape(&self, other: &MarkovPolicy) -> bool {
        self.vocab == other.vocab && self.max_len == other.max_len && self.classes == other.classes
    }

    pub fn has_nan(&self) -> bool {
        self.logits.iter().any(|l| l.is_nan())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.classes {
            return Err(Error::invalid(format!("class {class} out of range ({})", self.classes)));
        }
        Ok(())
    }

    /// Samples a response; the log-probability of the sample is returned
    /// alongside it.
    pub fn sample_with_log_prob(&self, class: usize, temperature: f64, rng: &mut StreamRng) -> (Response, f64) {
        let mut probs = vec![0.0; self.vocab];
        let mut tokens = Vec::with_capacity(8);
        let mut state = self.start_state();
        let mut lp = 0.0;
        for _ in 0..self.max_len {
            softmax_into(self.row(class, state), temperature, &mut probs);
            let tok = draw_index(&probs, rng);
            lp += probs[tok].ln();
            tokens.push(tok as Token);
            if tok as Token == EOS {
                break;
            }
            state = self.next_state(state, tok as Token);
        }
        (Response::from_tokens(tokens).expect("sampler stops at EOS"), lp)
    }

    pub fn sample(&self, class: usize, rng: &mut StreamRng) -> Response {
        self.sample_with_log_prob(class, 1.0, rng).0
    }

    /// Log-probability of a complete response (including its EOS, if any).
    pub fn log_prob(&self, class: usize, y: &Response) -> Result<f64> {
        self.check_class(class)?;
        let mut buf = vec![0.0; self.vocab];
        let mut state = self.start_state();
        let mut lp = 0.0;
        let toks = y.tokens();
        if toks.len() > self.max_len {
            return Ok(f64::NEG_INFINITY);
        }
        if !y.is_terminated() && toks.len() != self.max_len {
            // Truncation only happens at the length limit.
            return Ok(f64::NEG_INFINITY);
        }
        for &t in toks {
            if t as usize >= self.vocab {
                return Err(Error::invalid(format!("token {t} outside vocabulary")));
            }
            log_softmax_into(self.row(class, state), &mut buf);
            lp += buf[t as usize];
            state = self.next_state(state, t);
        }
        Ok(lp)
    }

    /// Per-row log-probabilities, for immutable policies queried many times.
    pub fn table(&self) -> LogProbTable {
        let mut logp = vec![0.0; self.logits.len()];
        for (src, dst) in self.logits.chunks(self.vocab).zip(logp.chunks_mut(self.vocab)) {
            log_softmax_into(src, dst);
        }
        LogProbTable {
            vocab: self.vocab,
            max_len: self.max_len,
            classes: self.classes,
            logp,
        }
    }
}

/// Precomputed log-softmax rows of a fixed policy.
#[derive(Clone, Debug)]
pub struct LogProbTable {
    vocab: usize,
    max_len: usize,
    classes: usize,
    logp: Vec<f64>,
}

impl LogProbTable {
    #[inline]
    fn row_index(&self, class: usize, state: usize) -> usize {
        (class * (self.vocab + 1) * (self.vocab + 1) + state) * self.vocab
    }

    pub fn row(&self, class: usize, state: usize) -> &[f64] {
        let i = self.row_index(class, state);
        &self.logp[i..i + self.vocab]
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn start_state(&self) -> usize {
        self.vocab * (self.vocab + 1) + self.vocab
    }

    #[inline]
    fn next_state(&self, state: usize, token: Token) -> usize {
        (state % (self.vocab + 1)) * (self.vocab + 1) + token as usize
    }

    /// Log-probability of each emitted token of `y`, in order.
    pub fn token_log_probs(&self, class: usize, y: &Response) -> Vec<f64> {
        let mut state = self.start_state();
        y.tokens()
            .iter()
            .map(|&t| {
                let lp = self.row(class, state)[t as usize];
                state = self.next_state(state, t);
                lp
            })
            .collect()
    }

    pub fn log_prob(&self, class: usize, y: &Response) -> f64 {
        if !y.is_terminated() && y.tokens().len() != self.max_len {
            return f64::NEG_INFINITY;
        }
        self.token_log_probs(class, y).iter().sum()
    }

    pub fn sample(&self, class: usize, temperature: f64, rng: &mut StreamRng) -> Response {
        let mut probs = vec![0.0; self.vocab];
        let mut tokens = Vec::with_capacity(8);
        let mut state = self.start_state();
        for _ in 0..self.max_len {
            let row = self.row(class, state);
            if temperature == 1.0 {
                for (p, &l) in probs.iter_mut().zip(row) {
                    *p = l.exp();
                }
            } else {
                softmax_into(row, temperature, &mut probs);
            }
            let tok = draw_index(&probs, rng) as Token;
            tokens.push(tok);
            if tok == EOS {
                break;
            }
            state = self.next_state(state, tok);
        }
        Response::from_tokens(tokens).expect("sampler stops at EOS")
    }
}
