use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u16;

/// End-of-sequence token.
pub const EOS: Token = 0;
/// Bullet token used by list-format responses.
pub const BULLET: Token = 5;
/// First id of the content range; ids below it have designated roles.
pub const FIRST_CONTENT: Token = 6;

/// Ids 1-4 stand for digits.
#[inline]
pub fn is_numeric(t: Token) -> bool {
    (1..=4).contains(&t)
}

#[inline]
pub fn is_content(t: Token) -> bool {
    t >= FIRST_CONTENT
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prompt(Vec<Token>);

impl Prompt {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.contains(&EOS) {
            return Err(Error::invalid("prompt may not contain EOS"));
        }
        Ok(Prompt(tokens))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A generated response: body tokens optionally followed by a single EOS.
/// A response without EOS was truncated at the length limit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Response(Vec<Token>);

impl Response {
    pub fn from_tokens(tokens: Vec<Token>) -> Result<Self> {
        if let Some(pos) = tokens.iter().position(|&t| t == EOS) {
            if pos + 1 != tokens.len() {
                return Err(Error::invalid("response has tokens after EOS"));
            }
        }
        Ok(Response(tokens))
    }

    /// Body followed by EOS.
    pub fn terminated(mut body: Vec<Token>) -> Result<Self> {
        body.push(EOS);
        Self::from_tokens(body)
    }

    pub fn empty() -> Self {
        Response(vec![EOS])
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    /// Tokens before EOS.
    pub fn body(&self) -> &[Token] {
        match self.0.last() {
            Some(&EOS) => &self.0[..self.0.len() - 1],
            _ => &self.0,
        }
    }

    /// Number of tokens before EOS.
    pub fn len(&self) -> usize {
        self.body().len()
    }

    pub fn is_empty(&self) -> bool {
        self.body().is_empty()
    }

    pub fn is_terminated(&self) -> bool {
        self.0.last() == Some(&EOS)
    }
}

/// A finite reward value.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Score(value))
        } else {
            Err(Error::NonFinite(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Score::new(v)
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.0
    }
}

/// `s -> scale * s + offset + C(x)` with `scale > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineScoreTransform {
    scale: f64,
    offset: f64,
    offset_per_prompt: BTreeMap<Prompt, f64>,
}

impl AffineScoreTransform {
    pub fn new(scale: f64, offset: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || !offset.is_finite() {
            return Err(Error::invalid(format!(
                "affine transform needs finite scale > 0 and finite offset (got {scale}, {offset})"
            )));
        }
        Ok(Self {
            scale,
            offset,
            offset_per_prompt: BTreeMap::new(),
        })
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0).expect("identity is valid")
    }

    pub fn with_prompt_offset(mut self, x: Prompt, c: f64) -> Self {
        self.offset_per_prompt.insert(x, c);
        self
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn prompt_offset(&self, x: &Prompt) -> f64 {
        self.offset_per_prompt.get(x).copied().unwrap_or(0.0)
    }

    pub fn apply(&self, x: &Prompt, s: f64) -> f64 {
        self.scale * s + self.offset + self.prompt_offset(x)
    }
}

/// Length of the longest common contiguous run of tokens.
pub fn longest_common_substring(a: &[Token], b: &[Token]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &ta in a {
        for (j, &tb) in b.iter().enumerate() {
            cur[j + 1] = if ta == tb { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Length of the longest common (not necessarily contiguous) subsequence.
pub fn longest_common_subsequence(a: &[Token], b: &[Token]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &ta in a {
        for (j, &tb) in b.iter().enumerate() {
            cur[j + 1] = if ta == tb {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_rejects_tokens_after_eos() {
        assert!(Response::from_tokens(vec![7, 0, 8]).is_err());
        let r = Response::from_tokens(vec![7, 8, 0]).unwrap();
        assert_eq!(r.body(), &[7, 8]);
        assert!(r.is_terminated());
        let t = Response::from_tokens(vec![7, 8]).unwrap();
        assert!(!t.is_terminated());
        assert_eq!(t.len(), 2);
        assert_eq!(Response::empty().len(), 0);
    }

    #[test]
    fn score_rejects_non_finite() {
        assert!(Score::new(f64::NAN).is_err());
        assert!(Score::new(f64::INFINITY).is_err());
        assert_eq!(Score::new(1.5).unwrap().value(), 1.5);
    }

    #[test]
    fn affine_requires_positive_scale() {
        assert!(AffineScoreTransform::new(0.0, 1.0).is_err());
        assert!(AffineScoreTransform::new(-1.0, 1.0).is_err());
        let x = Prompt::new(vec![6, 7, 8, 9]).unwrap();
        let t = AffineScoreTransform::new(2.0, 1.0)
            .unwrap()
            .with_prompt_offset(x.clone(), 0.5);
        assert_eq!(t.apply(&x, 1.0), 3.5);
    }

    #[test]
    fn substring_and_subsequence() {
        assert_eq!(longest_common_substring(&[1, 2, 3, 4], &[9, 2, 3, 9]), 2);
        assert_eq!(longest_common_substring(&[1, 2, 3], &[]), 0);
        assert_eq!(longest_common_substring(&[6, 7, 8], &[6, 7, 8]), 3);
        assert_eq!(longest_common_subsequence(&[1, 2, 3, 4], &[1, 9, 3, 4]), 3);
        assert_eq!(longest_common_subsequence(&[1, 2], &[3, 4]), 0);
    }
}
