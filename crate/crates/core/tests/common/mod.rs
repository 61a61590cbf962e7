//! Independent reference implementations the library is checked against.
//!
//! The oracles use nothing of the code under test beyond its data types:
//! each recomputes its answer the slow, obvious way. [`checks`] holds the
//! comparisons themselves.

#![allow(dead_code)]

pub mod checks;

use std::collections::{BTreeSet, HashMap};

use cnlm::cnbuild::ConfusionNetwork;
use cnlm::decoder::{Hypothesis, ScoreFn, Scorer};
use cnlm::nbest::NBestList;
use cnlm::rnn::RnnLmParams;
use cnlm::text::{TokenId, Vocabulary, BOS, BOS_ID, DELETE, EOS, EOS_ID, SPECIALS, UNK};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

pub fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
    lines.iter().map(|l| toks(l)).collect()
}

// ---------------------------------------------------------------------------
// Modified Kneser-Ney on integer counts

/// Textbook interpolated modified Kneser-Ney (Chen & Goodman) over integer
/// counts: raw counts at the highest order and for n-grams starting with
/// `<s>`, left-continuation type counts elsewhere, three discounts per
/// order, and a uniform distribution below the unigrams.
pub struct KnOracle {
    order: usize,
    /// `counts[k - 1]`: the count each k-gram is estimated from.
    counts: Vec<HashMap<Vec<String>, u64>>,
    discounts: Vec<[f64; 3]>,
    vocab_size: usize,
}

impl KnOracle {
    pub fn train(corpus: &[Vec<String>], order: usize) -> Self {
        let mut raw: Vec<HashMap<Vec<String>, u64>> = vec![HashMap::new(); order];
        let mut words = BTreeSet::new();
        for s in corpus {
            let mut padded = vec![BOS.to_owned()];
            padded.extend(s.iter().cloned());
            padded.push(EOS.to_owned());
            for w in &padded[1..] {
                words.insert(w.clone());
            }
            for k in 1..=order {
                for g in padded.windows(k) {
                    *raw[k - 1].entry(g.to_vec()).or_default() += 1;
                }
            }
        }
        words.insert(UNK.to_owned());

        let mut counts = vec![HashMap::new(); order];
        counts[order - 1] = raw[order - 1].clone();
        for k in 1..order {
            let table = &mut counts[k - 1];
            for (g, &c) in &raw[k - 1] {
                if g[0] == BOS {
                    table.insert(g.clone(), c);
                }
            }
            let mut left: HashMap<Vec<String>, BTreeSet<String>> = HashMap::new();
            for g in raw[k].keys() {
                left.entry(g[1..].to_vec()).or_default().insert(g[0].clone());
            }
            for (g, vs) in left {
                table.insert(g, vs.len() as u64);
            }
        }

        let discounts = counts
            .iter()
            .map(|table| {
                let mut n = [0.0f64; 5];
                for (g, &c) in table {
                    if !(g.len() == 1 && g[0] == BOS) && (1..=4).contains(&c) {
                        n[c as usize] += 1.0;
                    }
                }
                let fallback = [0.75; 3];
                if n[1] == 0.0 || n[2] == 0.0 || n[3] == 0.0 {
                    return fallback;
                }
                let y = n[1] / (n[1] + 2.0 * n[2]);
                let d = [
                    1.0 - 2.0 * y * n[2] / n[1],
                    2.0 - 3.0 * y * n[3] / n[2],
                    3.0 - 4.0 * y * n[4] / n[3],
                ];
                if d.iter().all(|&x| x > 0.0) {
                    d
                } else {
                    fallback
                }
            })
            .collect();

        KnOracle {
            order,
            counts,
            discounts,
            vocab_size: words.len(),
        }
    }

    /// Words the model predicts (everything but `<s>`), `<unk>` included.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn discounts(&self) -> &[[f64; 3]] {
        &self.discounts
    }

    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let keep = context.len().min(self.order - 1);
        self.interp(&context[context.len() - keep..], word)
    }

    fn interp(&self, h: &[&str], word: &str) -> f64 {
        let lower = if h.is_empty() {
            1.0 / self.vocab_size as f64
        } else {
            self.interp(&h[1..], word)
        };
        let k = h.len() + 1;
        let table = &self.counts[k - 1];
        let d = &self.discounts[k - 1];
        let disc = |c: u64| match c {
            0 => 0.0,
            1 => d[0],
            2 => d[1],
            _ => d[2],
        };
        let (mut total, mut removed) = (0.0, 0.0);
        for (g, &c) in table {
            if g.len() == k && g[..k - 1].iter().map(String::as_str).eq(h.iter().copied()) && g[k - 1] != BOS {
                total += c as f64;
                removed += disc(c);
            }
        }
        if total == 0.0 {
            return lower;
        }
        let mut key: Vec<String> = h.iter().map(|s| s.to_string()).collect();
        key.push(word.to_owned());
        let c = table.get(&key).copied().unwrap_or(0);
        (c as f64 - disc(c)).max(0.0) / total + removed / total * lower
    }
}

// ---------------------------------------------------------------------------
// Poisson-binomial by enumeration

/// Distribution of the number of successes of independent Bernoulli trials,
/// by summing over all `2^k` outcomes.
pub fn poisson_binomial_enumerated(ps: &[f64]) -> Vec<f64> {
    let k = ps.len();
    let mut dist = vec![0.0; k + 1];
    for mask in 0u32..(1 << k) {
        let mut p = 1.0;
        for (i, &pi) in ps.iter().enumerate() {
            p *= if mask & (1 << i) != 0 { pi } else { 1.0 - pi };
        }
        dist[mask.count_ones() as usize] += p;
    }
    dist
}

// ---------------------------------------------------------------------------
// Decoding

/// Deterministic pseudo-random next-token model: the distribution after a
/// prefix comes from an RNG seeded by the prefix.
pub struct HashScorer {
    pub vocab: Vocabulary,
    seed: u64,
}

impl HashScorer {
    pub fn new(words: &[&str], seed: u64) -> Self {
        HashScorer {
            vocab: Vocabulary::from_tokens(words),
            seed,
        }
    }

    pub fn dist(&self, prefix: &[TokenId]) -> Vec<f64> {
        let mut h = self.seed;
        for &t in prefix {
            h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let mut out: Vec<f64> = (0..self.vocab.len())
            .map(|i| {
                if i >= SPECIALS.len() || i == EOS_ID as usize {
                    rng.gen_range(-3.0..3.0)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + out.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for x in &mut out {
            *x -= lse;
        }
        out
    }
}

impl Scorer for HashScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn session<'a>(&'a self, _source: &[String]) -> ScoreFn<'a> {
        Box::new(move |p| self.dist(p))
    }
}

/// Every complete path (ending at the first `</s>` or at `max_len` tokens),
/// best first; ties broken by token sequence.
pub fn enumerate_paths(scorer: &HashScorer, max_len: usize) -> Vec<Hypothesis> {
    fn rec(s: &HashScorer, prefix: &mut Vec<TokenId>, score: f64, max_len: usize, out: &mut Vec<Hypothesis>) {
        if prefix.len() == max_len || prefix.last() == Some(&EOS_ID) {
            out.push(Hypothesis {
                tokens: prefix.iter().map(|&t| s.vocab.token(t).to_owned()).collect(),
                loglik: score,
            });
            return;
        }
        for (v, lp) in s.dist(prefix).into_iter().enumerate() {
            if lp > f64::NEG_INFINITY {
                prefix.push(v as TokenId);
                rec(s, prefix, score + lp, max_len, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(scorer, &mut Vec::new(), 0.0, max_len, &mut out);
    out.sort_by(|a, b| b.loglik.total_cmp(&a.loglik).then_with(|| a.tokens.cmp(&b.tokens)));
    out
}

/// Most likely token at every step.
pub fn greedy(scorer: &HashScorer, max_len: usize) -> Hypothesis {
    let mut prefix = Vec::new();
    let mut score = 0.0;
    while prefix.len() < max_len {
        let dist = scorer.dist(&prefix);
        let (best, lp) = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        prefix.push(best as TokenId);
        score += lp;
        if best as TokenId == EOS_ID {
            break;
        }
    }
    Hypothesis {
        tokens: prefix.iter().map(|&t| scorer.vocab.token(t).to_owned()).collect(),
        loglik: score,
    }
}

// ---------------------------------------------------------------------------
// N-best lists and networks

/// A random N-best list over a small lowercase vocabulary: variants of a
/// base sentence with substitutions, insertions and deletions, ranked by
/// made-up log-likelihoods, each ending in `</s>`.
pub fn random_nbest<R: Rng>(rng: &mut R, id: usize, max_n: usize) -> NBestList {
    const WORDS: &[&str] = &["no", "they", "are", "at", "on", "the", "outside", "inside", "yes", "we"];
    let base_len = rng.gen_range(1..=6);
    let base: Vec<&str> = (0..base_len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
    let n = rng.gen_range(1..=max_n);
    let mut hyps = Vec::with_capacity(n);
    for _ in 0..n {
        let mut h: Vec<String> = Vec::new();
        for &w in &base {
            match rng.gen_range(0..10) {
                0 => {}
                1 => h.push(WORDS[rng.gen_range(0..WORDS.len())].to_owned()),
                2 => {
                    h.push(w.to_owned());
                    h.push(WORDS[rng.gen_range(0..WORDS.len())].to_owned());
                }
                _ => h.push(w.to_owned()),
            }
        }
        if h.is_empty() {
            h.push(base[0].to_owned());
        }
        h.push(EOS.to_owned());
        hyps.push(Hypothesis {
            tokens: h,
            loglik: -rng.gen_range(0.5..8.0),
        });
    }
    hyps.sort_by(|a, b| b.loglik.total_cmp(&a.loglik));
    let source = (0..base_len).map(|i| format!("s{i}")).collect();
    NBestList::new(id.to_string(), source, hyps)
}

/// Whether `tokens` can be read off `cn` by taking one arc per bin,
/// `*DELETE*` arcs standing for nothing.
pub fn is_path(cn: &ConfusionNetwork, tokens: &[String]) -> bool {
    // reachable[j]: the first j tokens are consumed by the bins seen so far
    let mut reachable = vec![false; tokens.len() + 1];
    reachable[0] = true;
    for bin in &cn.bins {
        let mut next = vec![false; tokens.len() + 1];
        for j in 0..=tokens.len() {
            if !reachable[j] {
                continue;
            }
            if bin.arcs.iter().any(|a| a.token == DELETE) {
                next[j] = true;
            }
            if j < tokens.len() && bin.arcs.iter().any(|a| a.token == tokens[j]) {
                next[j + 1] = true;
            }
        }
        reachable = next;
    }
    reachable[tokens.len()]
}

/// Sum over all paths of the product of arc scores, by enumeration.
pub fn total_path_mass(cn: &ConfusionNetwork) -> f64 {
    fn go(bins: &[cnlm::cnbuild::Bin], acc: f64) -> f64 {
        match bins.split_first() {
            None => acc,
            Some((b, rest)) => b.arcs.iter().map(|a| go(rest, acc * a.score)).sum(),
        }
    }
    go(&cn.bins, 1.0)
}

// ---------------------------------------------------------------------------
// GRU language model

/// Natural-log probability of `tokens </s>` after `<s>`, recomputed from the
/// raw parameter blocks with plain loops.
pub fn gru_sentence_logprob(p: &RnnLmParams<f64>, tokens: &[TokenId]) -> f64 {
    let d = p.dim();
    let v = p.vocab_size();
    let (emb, u, w, b) = (p.embedding(), p.input_weights(), p.recurrent_weights(), p.bias());
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut h = vec![0.0; d];
    let mut inputs = vec![BOS_ID];
    inputs.extend_from_slice(tokens);
    let targets = tokens.iter().copied().chain([EOS_ID]);
    let mut total = 0.0;
    for (&x_id, y) in inputs.iter().zip(targets) {
        let x = &emb[x_id as usize * d..(x_id as usize + 1) * d];
        let mut a = vec![0.0; 3 * d];
        let mut g = vec![0.0; 3 * d];
        for i in 0..3 * d {
            a[i] = b[i] + (0..d).map(|j| u[i * d + j] * x[j]).sum::<f64>();
            g[i] = (0..d).map(|j| w[i * d + j] * h[j]).sum::<f64>();
        }
        let mut next = vec![0.0; d];
        for k in 0..d {
            let z = sigmoid(a[k] + g[k]);
            let r = sigmoid(a[d + k] + g[d + k]);
            let n = (a[2 * d + k] + r * g[2 * d + k]).tanh();
            next[k] = (1.0 - z) * h[k] + z * n;
        }
        h = next;
        let logits: Vec<f64> = (0..v)
            .map(|t| (0..d).map(|j| emb[t * d + j] * h[j]).sum::<f64>())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += logits[y as usize] - lse;
    }
    total
}
