use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    pub max_len: usize,
    pub bos: usize,
    pub eos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, without the end marker.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Whether the end marker was produced before the length cap.
    pub finished: bool,
}

struct Live<S> {
    state: S,
    tokens: Vec<usize>,
    score: f64,
}

/// Higher score first, then the lexicographically smaller token sequence.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

/// Length-capped beam search over log-probabilities.
///
/// `step(state, last_token)` returns the next state and log-probabilities
/// over the output space. Each round keeps the `width` best expansions;
/// expansions ending in `eos` are retired. At the cap, surviving
/// hypotheses count as complete. The best complete hypothesis wins, ties
/// going to the one completed first. Expansions of one round run through
/// `exec`.
pub fn beam_search<S, F>(exec: &Exec, init: S, cfg: &BeamConfig, step: F) -> Result<Hypothesis>
where
    S: Clone + Send + Sync,
    F: Fn(&S, usize) -> Result<(S, Vec<f64>)> + Sync + Send,
{
    if cfg.width == 0 || cfg.max_len == 0 {
        return Err(Error::Config(
            "beam width and max length must be at least 1".into(),
        ));
    }
    let mut live = vec![Live {
        state: init,
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let expanded = exec.map(&live, |h| {
            step(&h.state, h.tokens.last().copied().unwrap_or(cfg.bos))
        });
        let mut next_states = Vec::with_capacity(live.len());
        let mut cands: Vec<(f64, Vec<usize>, usize)> = Vec::new();
        for (hi, r) in expanded.into_iter().enumerate() {
            let (state, logp) = r?;
            for (tok, &lp) in logp.iter().enumerate() {
                if lp.is_nan() {
                    return Err(Error::NonFinite(format!("log-probability of token {tok}")));
                }
                let mut toks = live[hi].tokens.clone();
                toks.push(tok);
                cands.push((live[hi].score + lp, toks, hi));
            }
            next_states.push(state);
        }
        cands.sort_by(|a, b| rank((a.0, &a.1), (b.0, &b.1)));
        cands.truncate(cfg.width);

        let mut next = Vec::new();
        for (score, mut tokens, hi) in cands {
            if tokens.last() == Some(&cfg.eos) {
                tokens.pop();
                done.push(Hypothesis {
                    tokens,
                    log_prob: score,
                    finished: true,
                });
            } else {
                next.push(Live {
                    state: next_states[hi].clone(),
                    tokens,
                    score,
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        // scores only fall, so a live hypothesis below the best finished
        // one can never win
        let best_done = done
            .iter()
            .map(|h| h.log_prob)
            .fold(f64::NEG_INFINITY, f64::max);
        if live.iter().all(|h| h.score < best_done) {
            live.clear();
            break;
        }
    }
    for h in live {
        done.push(Hypothesis {
            tokens: h.tokens,
            log_prob: h.score,
            finished: false,
        });
    }
    let mut best = 0;
    for (i, h) in done.iter().enumerate() {
        if h.log_prob > done[best].log_prob {
            best = i;
        }
    }
    Ok(done.swap_remove(best))
}
