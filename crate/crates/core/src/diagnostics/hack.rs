//! Surface statistics of responses that reward hacking tends to inflate.

use serde::{Deserialize, Serialize};

use crate::env::PreferenceExample;
use crate::error::{Error, Result};
use crate::types::{is_content, is_numeric, longest_common_subsequence, longest_common_substring, Prompt, Response, BULLET};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HackStats {
    /// Tokens before EOS.
    pub mean_len: f64,
    /// Longest common run of tokens shared with the prompt.
    pub mean_copy_lcs: f64,
    /// Fraction of responses in list format.
    pub list_frac: f64,
    /// Fraction of responses containing at least one numeric token.
    pub contains_numeric_frac: f64,
    /// Mean over responses of the numeric share of their tokens.
    pub mean_numeric_frac: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopyMeasure {
    #[default]
    Substring,
    Subsequence,
}

/// At least two bullets that are immediately followed by a content token.
pub fn is_list(y: &Response) -> bool {
    let body = y.body();
    body.windows(2)
        .filter(|w| w[0] == BULLET && is_content(w[1]))
        .count()
        >= 2
}

pub fn numeric_fraction(y: &Response) -> f64 {
    let body = y.body();
    if body.is_empty() {
        return 0.0;
    }
    body.iter().filter(|&&t| is_numeric(t)).count() as f64 / body.len() as f64
}

pub fn hack_stats(responses: &[Response], prompts: &[Prompt]) -> Result<HackStats> {
    hack_stats_with(responses, prompts, CopyMeasure::Substring)
}

pub fn hack_stats_with(responses: &[Response], prompts: &[Prompt], copy: CopyMeasure) -> Result<HackStats> {
    if responses.len() != prompts.len() {
        return Err(Error::invalid(format!(
            "hack_stats: {} responses but {} prompts",
            responses.len(),
            prompts.len()
        )));
    }
    if responses.is_empty() {
        return Err(Error::invalid("hack_stats needs at least one response"));
    }
    let n = responses.len() as f64;
    let mut s = HackStats::default();
    for (y, x) in responses.iter().zip(prompts) {
        s.mean_len += y.len() as f64;
        s.mean_copy_lcs += match copy {
            CopyMeasure::Substring => longest_common_substring(x.tokens(), y.body()),
            CopyMeasure::Subsequence => longest_common_subsequence(x.tokens(), y.body()),
        } as f64;
        s.list_frac += f64::from(u8::from(is_list(y)));
        let nf = numeric_fraction(y);
        s.contains_numeric_frac += f64::from(u8::from(nf > 0.0));
        s.mean_numeric_frac += nf;
    }
    s.mean_len /= n;
    s.mean_copy_lcs /= n;
    s.list_frac /= n;
    s.contains_numeric_frac /= n;
    s.mean_numeric_frac /= n;
    Ok(s)
}

/// Statistics of the preferred and of the rejected responses.
pub fn preference_conditioned_stats(data: &[PreferenceExample]) -> Result<(HackStats, HackStats)> {
    if data.is_empty() {
        return Err(Error::invalid("preference_conditioned_stats needs data"));
    }
    let prompts: Vec<Prompt> = data.iter().map(|e| e.prompt.clone()).collect();
    let preferred: Vec<Response> = data.iter().map(|e| e.preferred.clone()).collect();
    let rejected: Vec<Response> = data.iter().map(|e| e.rejected.clone()).collect();
    Ok((hack_stats(&preferred, &prompts)?, hack_stats(&rejected, &prompts)?))
}
