use std::collections::BTreeMap;
use std::io::{self, Write};

use crate::cnbuild::ConfusionNetwork;
use crate::text::{BOS, DELETE, EOS};

/// Default floor below which a counted occurrence is dropped.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Occurrence lists for every n-gram of orders `1..=order`. Each
/// occurrence carries the probability that it really happened; integer
/// counts are the special case where every probability is one.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalCounts {
    order: usize,
    grams: Vec<BTreeMap<Vec<String>, Vec<f64>>>,
}

impl FractionalCounts {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "n-gram order must be at least 1");
        FractionalCounts {
            order,
            grams: vec![BTreeMap::new(); order],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// N-grams of order `k` with their occurrence probabilities.
    pub fn grams(&self, k: usize) -> &BTreeMap<Vec<String>, Vec<f64>> {
        &self.grams[k - 1]
    }

    pub fn occurrences<S: AsRef<str>>(&self, gram: &[S]) -> Option<&[f64]> {
        let key: Vec<String> = gram.iter().map(|t| t.as_ref().to_owned()).collect();
        self.grams
            .get(key.len().checked_sub(1)?)?
            .get(&key)
            .map(Vec::as_slice)
    }

    /// Expected count: the sum of the occurrence probabilities.
    pub fn expected<S: AsRef<str>>(&self, gram: &[S]) -> f64 {
        self.occurrences(gram).map_or(0.0, |ps| ps.iter().sum())
    }

    pub fn is_empty(&self) -> bool {
        self.grams.iter().all(BTreeMap::is_empty)
    }

    pub fn add(&mut self, gram: &[&str], p: f64) {
        debug_assert!(p > 0.0 && p <= 1.0 + 1e-9, "occurrence probability {p}");
        let key: Vec<String> = gram.iter().map(|t| (*t).to_owned()).collect();
        self.grams[gram.len() - 1].entry(key).or_default().push(p.min(1.0));
    }

    /// Concatenates the occurrence lists of `other` onto these.
    pub fn merge(&mut self, other: FractionalCounts) {
        assert_eq!(self.order, other.order, "merging counts of different orders");
        for (mine, theirs) in self.grams.iter_mut().zip(other.grams) {
            for (gram, ps) in theirs {
                mine.entry(gram).or_default().extend(ps);
            }
        }
    }

    /// Debug dump, one n-gram per line: `tokens<TAB>expected<TAB>occurrences`.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for table in &self.grams {
            for (gram, ps) in table {
                let e: f64 = ps.iter().sum();
                writeln!(out, "{}\t{:.6}\t{}", gram.join(" "), e, ps.len())?;
            }
        }
        Ok(())
    }
}

/// Integer counts of every n-gram up to `order` in sentences wrapped with
/// `<s>` and `</s>`.
pub fn count_text<S: AsRef<str>>(corpus: &[Vec<S>], order: usize) -> FractionalCounts {
    let mut counts = FractionalCounts::new(order);
    for sentence in corpus {
        let mut words = Vec::with_capacity(sentence.len() + 2);
        words.push(BOS);
        words.extend(sentence.iter().map(AsRef::as_ref));
        words.push(EOS);
        for k in 1..=order {
            for gram in words.windows(k) {
                counts.add(gram, 1.0);
            }
        }
    }
    counts
}

/// Options for [`count_cn`].
#[derive(Debug, Clone, Copy)]
pub struct CnCountOptions {
    pub order: usize,
    /// Occurrences less likely than this are dropped.
    pub eps: f64,
    /// Maximum number of consecutive bins a window may skip through their
    /// `*DELETE*` arcs; `None` for no limit, which makes the counts the
    /// expected counts over all paths.
    pub max_skip: Option<usize>,
}

impl Default for CnCountOptions {
    fn default() -> Self {
        CnCountOptions {
            order: 3,
            eps: DEFAULT_EPS,
            max_skip: None,
        }
    }
}

struct CountBin<'a> {
    words: Vec<(&'a str, f64)>,
    delete: Option<f64>,
}

/// Expected n-gram counts of a confusion network bracketed by `<s>` and
/// `</s>` bins. Every word sequence read over consecutive bins is one
/// occurrence whose probability is the product of the arc posteriors used;
/// a `*DELETE*` arc lets a window pass over its bin at the cost of the
/// arc's posterior.
pub fn count_cn(cn: &ConfusionNetwork, opts: &CnCountOptions) -> FractionalCounts {
    let mut counts = FractionalCounts::new(opts.order);
    add_cn_counts(&mut counts, cn, opts);
    counts
}

/// Adds the counts of one network to `counts`.
pub fn add_cn_counts(counts: &mut FractionalCounts, cn: &ConfusionNetwork, opts: &CnCountOptions) {
    let mut bins = Vec::with_capacity(cn.bins.len() + 2);
    bins.push(CountBin {
        words: vec![(BOS, 1.0)],
        delete: None,
    });
    for bin in &cn.bins {
        let mut words = Vec::with_capacity(bin.arcs.len());
        let mut delete = None;
        for arc in &bin.arcs {
            if arc.score <= 0.0 {
                continue;
            }
            if arc.token == DELETE {
                *delete.get_or_insert(0.0) += arc.score;
            } else {
                words.push((arc.token.as_str(), arc.score));
            }
        }
        bins.push(CountBin { words, delete });
    }
    bins.push(CountBin {
        words: vec![(EOS, 1.0)],
        delete: None,
    });

    let max_skip = opts.max_skip.unwrap_or(usize::MAX);
    let mut gram = Vec::with_capacity(opts.order);
    for start in 0..bins.len() {
        for &(w, s) in &bins[start].words {
            if s < opts.eps {
                continue;
            }
            gram.push(w);
            counts.add(&gram, s);
            extend(&bins, start + 1, &mut gram, s, 0, max_skip, opts, counts);
            gram.pop();
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn extend<'a>(
    bins: &[CountBin<'a>],
    pos: usize,
    gram: &mut Vec<&'a str>,
    prob: f64,
    skipped: usize,
    max_skip: usize,
    opts: &CnCountOptions,
    counts: &mut FractionalCounts,
) {
    if gram.len() == opts.order || pos >= bins.len() {
        return;
    }
    let bin = &bins[pos];
    for &(w, s) in &bin.words {
        let p = prob * s;
        if p < opts.eps {
            continue;
        }
        gram.push(w);
        counts.add(gram, p);
        extend(bins, pos + 1, gram, p, 0, max_skip, opts, counts);
        gram.pop();
    }
    if let Some(d) = bin.delete {
        let p = prob * d;
        if skipped < max_skip && p >= opts.eps {
            extend(bins, pos + 1, gram, p, skipped + 1, max_skip, opts, counts);
        }
    }
}

/// Distribution of the number of occurrences that really happened, for
/// independent occurrences with probabilities `ps`: entry `k` is
/// `P(count = k)` for `k < kmax`, and the last entry is `P(count >= kmax)`.
pub fn poisson_binomial(ps: &[f64], kmax: usize) -> Vec<f64> {
    let mut dist = vec![0.0; kmax + 1];
    dist[0] = 1.0;
    for &p in ps {
        let q = 1.0 - p;
        if kmax > 0 {
            dist[kmax] += dist[kmax - 1] * p;
        }
        for k in (1..kmax).rev() {
            dist[k] = dist[k] * q + dist[k - 1] * p;
        }
        dist[0] *= q;
    }
    dist
}
