//! Beam search and diverse (group) beam search over a pluggable next-token
//! scorer.
//!
//! Both searches share one implementation: plain beam search is group beam
//! search with a single group, so the two agree exactly when `groups == 1`.
//! Hypothesis scores are raw sums of token log-probabilities. The diversity
//! penalty only affects which candidates are selected, never the stored
//! log-likelihood.

mod graph;
mod toy;

use std::cmp::Ordering;
use std::collections::HashSet;

pub use graph::{read_graph_records, BeamGraph, GraphNode, GraphRecord, NodeId, NodeStatus};
pub use toy::{ToyParams, ToyScorer};

use crate::text::{TokenId, Vocabulary, EOS_ID};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("max_len must be at least 1")]
    ZeroMaxLen,
    #[error("{groups} groups do not divide beam width {beam}")]
    GroupsDontDivide { beam: usize, groups: usize },
    #[error("diversity strength must be finite and non-negative, got {0}")]
    BadDiversity(f64),
    #[error("scorer returned {got} scores for a vocabulary of {expected}")]
    ScorerMismatch { expected: usize, got: usize },
    #[error("scorer returned NaN for token {0:?}")]
    NanScore(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("scorer weights must be finite and non-negative")]
    BadWeights,
}

/// Next-token scoring function for one source sentence: maps a target
/// prefix (excluding the root `<pad>`) to a log-probability per vocabulary
/// entry. Impossible tokens get `-inf`.
pub type ScoreFn<'a> = Box<dyn Fn(&[TokenId]) -> Vec<f64> + 'a>;

/// A conditional next-token model over a target vocabulary.
pub trait Scorer: Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Conditions the scorer on a source sentence.
    fn session<'a>(&'a self, source: &[String]) -> ScoreFn<'a>;
}

/// A target token sequence with its total log-likelihood in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub loglik: f64,
}

impl Hypothesis {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>, loglik: f64) -> Self {
        Hypothesis {
            tokens: tokens.into_iter().map(Into::into).collect(),
            loglik,
        }
    }
}

/// Log-likelihood descending, then tokens ascending.
pub fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.loglik
        .total_cmp(&a.loglik)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub beam: usize,
    pub groups: usize,
    pub diversity: f64,
    pub max_len: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            beam: 5,
            groups: 1,
            diversity: 0.5,
            max_len: 32,
        }
    }
}

impl SearchParams {
    pub fn beam(beam: usize, max_len: usize) -> Self {
        SearchParams {
            beam,
            groups: 1,
            diversity: 0.0,
            max_len,
        }
    }

    pub fn diverse(beam: usize, groups: usize, diversity: f64, max_len: usize) -> Self {
        SearchParams {
            beam,
            groups,
            diversity,
            max_len,
        }
    }

    fn validate(&self) -> Result<(), DecodeError> {
        if self.beam == 0 {
            return Err(DecodeError::ZeroBeam);
        }
        if self.max_len == 0 {
            return Err(DecodeError::ZeroMaxLen);
        }
        if self.groups == 0 || self.beam % self.groups != 0 {
            return Err(DecodeError::GroupsDontDivide {
                beam: self.beam,
                groups: self.groups,
            });
        }
        if !(self.diversity.is_finite() && self.diversity >= 0.0) {
            return Err(DecodeError::BadDiversity(self.diversity));
        }
        Ok(())
    }
}

/// Output of a search: the beam graph plus the finished hypotheses ranked
/// by log-likelihood. `leaves[i]` is the graph node ending `hypotheses[i]`
/// and `groups[i]` the group that produced it.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub graph: BeamGraph,
    pub hypotheses: Vec<Hypothesis>,
    pub leaves: Vec<NodeId>,
    pub groups: Vec<usize>,
}

impl SearchResult {
    /// Hypotheses found by one group, ranked.
    pub fn group(&self, g: usize) -> Vec<&Hypothesis> {
        self.hypotheses
            .iter()
            .zip(&self.groups)
            .filter(|&(_, &gi)| gi == g)
            .map(|(h, _)| h)
            .collect()
    }
}

struct Beam {
    node: NodeId,
    prefix: Vec<TokenId>,
    score: f64,
}

struct Candidate {
    selection: f64,
    score: f64,
    logprob: f64,
    parent: usize,
    token: TokenId,
}

struct Finished {
    node: NodeId,
    prefix: Vec<TokenId>,
    score: f64,
}

#[derive(Default)]
struct Group {
    active: Vec<Beam>,
    finished: Vec<Finished>,
}

impl Group {
    /// Scores only decrease along a path, so once `width` paths have ended
    /// and no live prefix beats the worst of them the group is done.
    fn is_settled(&mut self, width: usize) -> bool {
        if self.finished.len() < width {
            return false;
        }
        self.finished.sort_by(|a, b| b.score.total_cmp(&a.score));
        let bar = self.finished[width - 1].score;
        self.active.iter().all(|b| b.score <= bar)
    }
}

/// Standard beam search with width `beam`.
pub fn beam_search(
    scorer: &dyn Scorer,
    source: &[String],
    beam: usize,
    max_len: usize,
) -> Result<SearchResult, DecodeError> {
    search(scorer, source, &SearchParams::beam(beam, max_len))
}

/// Group beam search with Hamming diversity: `groups` groups of
/// `beam / groups` beams, expanded in order at every step; a group's
/// candidate scores are lowered by `diversity` times the number of times
/// each token was already chosen at this step by earlier groups.
pub fn diverse_beam_search(
    scorer: &dyn Scorer,
    source: &[String],
    beam: usize,
    groups: usize,
    diversity: f64,
    max_len: usize,
) -> Result<SearchResult, DecodeError> {
    search(
        scorer,
        source,
        &SearchParams::diverse(beam, groups, diversity, max_len),
    )
}

pub fn search(
    scorer: &dyn Scorer,
    source: &[String],
    params: &SearchParams,
) -> Result<SearchResult, DecodeError> {
    params.validate()?;
    let vocab = scorer.vocab();
    let score_fn = scorer.session(source);
    let width = params.beam / params.groups;

    let mut graph = BeamGraph::new();
    let root = graph.root();
    let mut groups: Vec<Group> = (0..params.groups)
        .map(|_| Group {
            active: vec![Beam {
                node: root,
                prefix: Vec::new(),
                score: 0.0,
            }],
            finished: Vec::new(),
        })
        .collect();

    let mut chosen_counts = vec![0usize; vocab.len()];
    for _step in 0..params.max_len {
        chosen_counts.iter_mut().for_each(|c| *c = 0);
        let mut any_active = false;
        for group in groups.iter_mut() {
            if group.active.is_empty() {
                continue;
            }
            let mut candidates = Vec::new();
            for (rank, beam) in group.active.iter().enumerate() {
                let scores = score_fn(&beam.prefix);
                if scores.len() != vocab.len() {
                    return Err(DecodeError::ScorerMismatch {
                        expected: vocab.len(),
                        got: scores.len(),
                    });
                }
                for (v, &lp) in scores.iter().enumerate() {
                    if lp.is_nan() {
                        return Err(DecodeError::NanScore(vocab.token(v as TokenId).into()));
                    }
                    if lp == f64::NEG_INFINITY {
                        continue;
                    }
                    let score = beam.score + lp;
                    candidates.push(Candidate {
                        selection: score - params.diversity * chosen_counts[v] as f64,
                        score,
                        logprob: lp,
                        parent: rank,
                        token: v as TokenId,
                    });
                }
            }
            let order = |a: &Candidate, b: &Candidate| {
                b.selection
                    .total_cmp(&a.selection)
                    .then_with(|| vocab.token(a.token).cmp(vocab.token(b.token)))
                    .then_with(|| a.parent.cmp(&b.parent))
            };
            // at most `width` ends plus `width` live prefixes can be kept
            let keep = 2 * width;
            if candidates.len() > keep {
                candidates.select_nth_unstable_by(keep - 1, order);
                candidates.truncate(keep);
            }
            candidates.sort_by(order);

            let mut has_child = vec![false; group.active.len()];
            let mut next = Vec::with_capacity(width);
            for (rank, c) in candidates.iter().enumerate() {
                if next.len() == width {
                    break;
                }
                let is_end = c.token == EOS_ID;
                if is_end && rank >= width {
                    continue;
                }
                let parent = &group.active[c.parent];
                has_child[c.parent] = true;
                chosen_counts[c.token as usize] += 1;
                let mut prefix = parent.prefix.clone();
                prefix.push(c.token);
                if is_end {
                    let node = graph.add(parent.node, c.token, c.logprob, NodeStatus::Completed);
                    group.finished.push(Finished {
                        node,
                        prefix,
                        score: c.score,
                    });
                } else {
                    let node = graph.add(parent.node, c.token, c.logprob, NodeStatus::Open);
                    next.push(Beam {
                        node,
                        prefix,
                        score: c.score,
                    });
                }
            }
            for (beam, expanded) in group.active.iter().zip(has_child) {
                let status = if expanded {
                    NodeStatus::Interior
                } else {
                    NodeStatus::Pruned
                };
                graph.set_status(beam.node, status);
            }
            group.active = next;
            if group.is_settled(width) {
                for beam in group.active.drain(..) {
                    graph.set_status(beam.node, NodeStatus::Pruned);
                }
            }
            any_active |= !group.active.is_empty();
        }
        if !any_active {
            break;
        }
    }

    for group in groups.iter_mut() {
        for beam in group.active.drain(..) {
            graph.set_status(beam.node, NodeStatus::Truncated);
            group.finished.push(Finished {
                node: beam.node,
                prefix: beam.prefix,
                score: beam.score,
            });
        }
        group.finished.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.prefix.cmp(&b.prefix))
        });
        group.finished.truncate(width);
    }

    let mut ranked: Vec<(Hypothesis, NodeId, usize)> = Vec::new();
    let mut seen: HashSet<Vec<TokenId>> = HashSet::new();
    for (g, group) in groups.into_iter().enumerate() {
        for f in group.finished {
            if !seen.insert(f.prefix.clone()) {
                continue;
            }
            let tokens = f
                .prefix
                .iter()
                .map(|&t| vocab.token(t).to_owned())
                .collect();
            ranked.push((
                Hypothesis {
                    tokens,
                    loglik: f.score,
                },
                f.node,
                g,
            ));
        }
    }
    ranked.sort_by(|a, b| rank_order(&a.0, &b.0));

    let mut result = SearchResult {
        graph,
        hypotheses: Vec::with_capacity(ranked.len()),
        leaves: Vec::with_capacity(ranked.len()),
        groups: Vec::with_capacity(ranked.len()),
    };
    for (h, node, g) in ranked {
        result.hypotheses.push(h);
        result.leaves.push(node);
        result.groups.push(g);
    }
    Ok(result)
}

/// Applies a log-softmax in place; used by scorers built from raw scores.
pub fn log_softmax_in_place(scores: &mut [f64]) {
    let max = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return;
    }
    let sum: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
    let lse = max + sum.ln();
    for s in scores.iter_mut() {
        *s -= lse;
    }
}
