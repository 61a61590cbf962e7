//! N-best list post-processing and hypothesis posteriors.
//!
//! File format, one hypothesis per line, lists separated by a blank line:
//!
//! ```text
//! source_id<TAB>rank<TAB>loglik<TAB>space separated tokens
//! ```

use std::io::{self, BufRead, Write};

use crate::decoder::{rank_order, Hypothesis};
use crate::text::{strip_punctuation, EOS, PAD};

#[derive(Debug, thiserror::Error)]
pub enum NBestError {
    #[error("every hypothesis for source {0} is empty after post-processing")]
    AllEmpty(String),
    #[error("N-best line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Ranked hypotheses for one source sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub source_id: String,
    pub source: Vec<String>,
    pub hypotheses: Vec<Hypothesis>,
    /// One probability per hypothesis, summing to one.
    pub posteriors: Vec<f64>,
}

impl NBestList {
    /// Sorts the hypotheses and computes posteriors with scale 1.
    pub fn new(source_id: impl Into<String>, source: Vec<String>, mut hypotheses: Vec<Hypothesis>) -> Self {
        hypotheses.sort_by(rank_order);
        let posteriors = if hypotheses.is_empty() {
            Vec::new()
        } else {
            nbest_posteriors(&logliks(&hypotheses), 1.0)
        };
        NBestList {
            source_id: source_id.into(),
            source,
            hypotheses,
            posteriors,
        }
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// Keeps the `n` best hypotheses and renormalizes the posteriors.
    pub fn truncated(&self, n: usize, alpha: f64) -> NBestList {
        let hypotheses: Vec<Hypothesis> = self.hypotheses.iter().take(n).cloned().collect();
        let posteriors = if hypotheses.is_empty() {
            Vec::new()
        } else {
            nbest_posteriors(&logliks(&hypotheses), alpha)
        };
        NBestList {
            source_id: self.source_id.clone(),
            source: self.source.clone(),
            hypotheses,
            posteriors,
        }
    }
}

fn logliks(hyps: &[Hypothesis]) -> Vec<f64> {
    hyps.iter().map(|h| h.loglik).collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `exp(alpha * ll_n) / sum_m exp(alpha * ll_m)`, shifted by the maximum.
pub fn nbest_posteriors(logliks: &[f64], alpha: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logliks.iter().map(|ll| alpha * ll).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Drops everything from the first `</s>` or `<pad>` on.
pub fn prune_at_eos<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .take_while(|t| *t != EOS && *t != PAD)
        .map(str::to_owned)
        .collect()
}

/// Allowed length excess of a translation over its source,
/// `max(3, 1 + L_S / 5)`.
pub fn length_slack(source_len: usize) -> f64 {
    f64::max(3.0, 1.0 + source_len as f64 / 5.0)
}

/// Length of the shortest block repeated at the end of `tokens`, with the
/// number of consecutive copies.
fn trailing_repeat<S: PartialEq>(tokens: &[S]) -> Option<(usize, usize)> {
    let n = tokens.len();
    (1..=n / 2).find_map(|period| {
        let block = &tokens[n - period..];
        let mut copies = 1;
        while (copies + 1) * period <= n
            && tokens[n - (copies + 1) * period..n - copies * period] == *block
        {
            copies += 1;
        }
        (copies > 1).then_some((period, copies))
    })
}

/// Cleans up unusually long hypotheses: when `L_T - L_S >= slack` the
/// shortest trailing repeated block is collapsed to one copy and the result
/// is cut to at most `L_S + slack` tokens, repeated until stable.
pub fn prune_repetition<S: AsRef<str>>(tokens: &[S], source_len: usize) -> Vec<String> {
    let slack = length_slack(source_len);
    let max_len = (source_len as f64 + slack).floor() as usize;
    let mut out: Vec<String> = tokens.iter().map(|t| t.as_ref().to_owned()).collect();
    loop {
        if (out.len() as f64) - (source_len as f64) < slack {
            return out;
        }
        let before = out.len();
        if let Some((period, copies)) = trailing_repeat(&out) {
            out.truncate(before - (copies - 1) * period);
        }
        out.truncate(max_len);
        if out.len() == before {
            return out;
        }
    }
}

fn clean_tokens(tokens: &[String], source_len: usize) -> Vec<String> {
    let stripped = strip_punctuation(tokens);
    let cut = prune_at_eos(&stripped);
    prune_repetition(&cut, source_len)
}

/// Punctuation stripping, end-of-sentence pruning and repetition pruning
/// per hypothesis; hypotheses that end up identical are merged by summing
/// their likelihoods, empty ones are dropped.
pub fn postprocess_nbest(list: &NBestList, alpha: f64) -> Result<NBestList, NBestError> {
    let mut merged: Vec<(Vec<String>, Vec<f64>)> = Vec::new();
    for h in &list.hypotheses {
        let tokens = clean_tokens(&h.tokens, list.source.len());
        if tokens.is_empty() {
            continue;
        }
        match merged.iter_mut().find(|(t, _)| *t == tokens) {
            Some((_, lls)) => lls.push(h.loglik),
            None => merged.push((tokens, vec![h.loglik])),
        }
    }
    if merged.is_empty() {
        return Err(NBestError::AllEmpty(list.source_id.clone()));
    }
    let mut hypotheses: Vec<Hypothesis> = merged
        .into_iter()
        .map(|(tokens, lls)| Hypothesis {
            tokens,
            loglik: if lls.len() == 1 { lls[0] } else { log_sum_exp(&lls) },
        })
        .collect();
    hypotheses.sort_by(rank_order);
    let posteriors = nbest_posteriors(&logliks(&hypotheses), alpha);
    Ok(NBestList {
        source_id: list.source_id.clone(),
        source: list.source.clone(),
        hypotheses,
        posteriors,
    })
}

pub fn write_nbest<W: Write>(mut out: W, lists: &[NBestList]) -> io::Result<()> {
    for (i, list) in lists.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        for (rank, h) in list.hypotheses.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{:.6}\t{}",
                list.source_id,
                rank + 1,
                h.loglik,
                h.tokens.join(" ")
            )?;
        }
    }
    Ok(())
}

/// Reads an N-best file. Sources are left empty; posteriors use scale 1.
pub fn read_nbest<R: BufRead>(input: R) -> Result<Vec<NBestList>, NBestError> {
    let mut lists = Vec::new();
    let mut current: Option<(String, Vec<Hypothesis>)> = None;
    let flush = |cur: &mut Option<(String, Vec<Hypothesis>)>, lists: &mut Vec<NBestList>| {
        if let Some((id, hyps)) = cur.take() {
            lists.push(NBestList::new(id, Vec::new(), hyps));
        }
    };
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            flush(&mut current, &mut lists);
            continue;
        }
        let err = |msg: &str| NBestError::Parse {
            line: lineno,
            msg: msg.to_owned(),
        };
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(err("expected 4 tab-separated fields"));
        }
        let _rank: usize = fields[1].parse().map_err(|_| err("bad rank"))?;
        let loglik: f64 = fields[2].parse().map_err(|_| err("bad log-likelihood"))?;
        if !loglik.is_finite() {
            return Err(err("non-finite log-likelihood"));
        }
        let hyp = Hypothesis {
            tokens: fields[3].split_whitespace().map(str::to_owned).collect(),
            loglik,
        };
        match &mut current {
            Some((id, hyps)) if id == fields[0] => hyps.push(hyp),
            Some(_) => {
                flush(&mut current, &mut lists);
                current = Some((fields[0].to_owned(), vec![hyp]));
            }
            None => current = Some((fields[0].to_owned(), vec![hyp])),
        }
    }
    flush(&mut current, &mut lists);
    Ok(lists)
}
