//! Exact sequence-level quantities of Markov policies.

use crate::env::Universe;
use crate::error::{Error, Result};
use crate::policy::{log_softmax_into, MarkovPolicy};
use crate::types::{Prompt, Response, Token, EOS};

/// `KL(π ‖ π_ref)` over whole responses for one prompt class, by a forward
/// pass over (position, last-two-tokens) states: the sequence KL is the sum
/// over positions of the expected per-state KL under π.
pub fn kl_exact_class(pi: &MarkovPolicy, reference: &MarkovPolicy, class: usize) -> Result<f64> {
    if !pi.same_shape(reference) {
        return Err(Error::invalid("policies do not share a state space"));
    }
    if class >= pi.classes() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    let v = pi.vocab();
    let states = pi.states();
    // Per-state KL and next-token probabilities are computed lazily.
    let mut state_kl: Vec<Option<f64>> = vec![None; states];
    let mut state_probs: Vec<Vec<f64>> = vec![Vec::new(); states];
    let mut lp = vec![0.0; v];
    let mut lq = vec![0.0; v];
    let mut mass = vec![0.0; states];
    mass[pi.start_state()] = 1.0;
    let mut next = vec![0.0; states];
    let mut total = 0.0;
    for _ in 0..pi.max_len() {
        next.iter_mut().for_each(|m| *m = 0.0);
        let mut any = false;
        for s in 0..states {
            let m = mass[s];
            if m == 0.0 {
                continue;
            }
            any = true;
            if state_kl[s].is_none() {
                log_softmax_into(pi.row(class, s), &mut lp);
                log_softmax_into(reference.row(class, s), &mut lq);
                let mut kl = 0.0;
                for k in 0..v {
                    if lp[k] > f64::NEG_INFINITY {
                        let p = lp[k].exp();
                        kl += p * (lp[k] - lq[k]);
                    }
                }
                state_kl[s] = Some(kl);
                state_probs[s] = lp.iter().map(|l| l.exp()).collect();
            }
            total += m * state_kl[s].expect("filled above");
            for (k, p) in state_probs[s].iter().enumerate() {
                if k as Token != EOS && *p > 0.0 {
                    next[pi.next_state(s, k as Token)] += m * p;
                }
            }
        }
        if !any {
            break;
        }
        std::mem::swap(&mut mass, &mut next);
    }
    Ok(total.max(0.0))
}

/// `KL(π(·|x) ‖ π_sft(·|x))` for the universe's reference policy.
pub fn kl_exact(u: &Universe, pi: &MarkovPolicy, x: &Prompt) -> Result<f64> {
    kl_exact_class(pi, u.sft(), u.prompt_class(x))
}

/// Mean exact KL over a prompt set; each class is solved once.
pub fn mean_kl_exact(u: &Universe, pi: &MarkovPolicy, prompts: &[Prompt]) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::invalid("mean_kl_exact needs prompts"));
    }
    let mut per_class: Vec<Option<f64>> = vec![None; u.classes()];
    let mut total = 0.0;
    for x in prompts {
        let c = u.prompt_class(x);
        if per_class[c].is_none() {
            per_class[c] = Some(kl_exact_class(pi, u.sft(), c)?);
        }
        total += per_class[c].expect("filled");
    }
    Ok(total / prompts.len() as f64)
}

/// Every possible response and its probability under `policy` for `class`.
/// Refuses spaces with more than `limit` sequences.
pub fn enumerate_responses(policy: &MarkovPolicy, class: usize, limit: usize) -> Result<Vec<(Response, f64)>> {
    let v = policy.vocab();
    let t = policy.max_len();
    let body_tokens = (v - 1) as f64;
    let count: f64 = (0..t).map(|l| body_tokens.powi(l as i32)).sum::<f64>() + body_tokens.powi(t as i32);
    if count > limit as f64 {
        return Err(Error::invalid(format!("{count} sequences exceed the enumeration limit {limit}")));
    }
    let table = policy.table();
    let mut out = Vec::with_capacity(count as usize);
    let mut stack: Vec<(Vec<Token>, usize, f64)> = vec![(Vec::new(), policy.start_state(), 0.0)];
    while let Some((prefix, state, lp)) = stack.pop() {
        let row = table.row(class, state);
        if prefix.len() < t {
            let mut done = prefix.clone();
            done.push(EOS);
            out.push((Response::from_tokens(done)?, (lp + row[EOS as usize]).exp()));
        }
        for k in 1..v {
            let mut p = prefix.clone();
            p.push(k as Token);
            let l = lp + row[k];
            if p.len() == t {
                out.push((Response::from_tokens(p)?, l.exp()));
            } else {
                stack.push((p, policy.next_state(state, k as Token), l));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
