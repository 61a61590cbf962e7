use std::collections::BTreeMap;

use log::warn;

use super::counts::{poisson_binomial, FractionalCounts};
use super::model::{Entry, NGramModel, LOG10_ZERO};
use super::NGramError;
use crate::text::{Vocabulary, BOS, DELETE, EOS, PAD, UNK};

/// Discount used when the counts-of-counts do not support estimation.
pub const FALLBACK_DISCOUNT: f64 = 0.75;

/// Buckets used for counts-of-counts: `P(count = k)` must be exact for
/// `k <= 4`, so the lumped bucket starts at five.
const COC_BUCKETS: usize = 5;

/// Modified Kneser-Ney discounts for one order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discounts {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Discounts {
    pub const FALLBACK: Discounts = Discounts {
        d1: FALLBACK_DISCOUNT,
        d2: FALLBACK_DISCOUNT,
        d3: FALLBACK_DISCOUNT,
    };

    /// Discounts from (expected) counts-of-counts `n[k-1] = n_k`, `k = 1..=4`.
    /// Returns `None` when a denominator vanishes or a discount is not
    /// positive: a zero discount leaves contexts whose n-grams all fall in
    /// that bucket without backoff mass, so unseen words get probability 0.
    pub fn from_counts_of_counts(n: [f64; 4]) -> Option<Discounts> {
        let [n1, n2, n3, n4] = n;
        if !(n1 > 0.0 && n2 > 0.0 && n3 > 0.0) {
            return None;
        }
        let y = n1 / (n1 + 2.0 * n2);
        let d = Discounts {
            d1: 1.0 - 2.0 * y * n2 / n1,
            d2: 2.0 - 3.0 * y * n3 / n2,
            d3: 3.0 - 4.0 * y * n4 / n3,
        };
        (d.d1 > 0.0 && d.d2 > 0.0 && d.d3 > 0.0).then_some(d)
    }

    fn weigh(&self, p: &[f64; 3]) -> f64 {
        self.d1 * p[0] + self.d2 * p[1] + self.d3 * p[2]
    }
}

/// Expected counts-of-counts `n_k = sum over n-grams of P(count = k)`.
pub fn counts_of_counts<'a>(lists: impl IntoIterator<Item = &'a [f64]>) -> [f64; 4] {
    let mut n = [0.0; 4];
    for ps in lists {
        let dist = poisson_binomial(ps, COC_BUCKETS);
        for k in 0..4 {
            n[k] += dist[k + 1];
        }
    }
    n
}

/// Discounts for a set of occurrence lists; falls back to a flat discount
/// (with a warning) when the counts-of-counts are degenerate.
pub fn estimate_discounts<'a>(lists: impl IntoIterator<Item = &'a [f64]>) -> Discounts {
    let n = counts_of_counts(lists);
    Discounts::from_counts_of_counts(n).unwrap_or_else(|| {
        warn!("counts-of-counts {n:?} give no usable discounts, using {FALLBACK_DISCOUNT}");
        Discounts::FALLBACK
    })
}

/// A trained model together with the per-order discounts it used.
#[derive(Debug, Clone)]
pub struct KnModel {
    pub model: NGramModel,
    pub discounts: Vec<Discounts>,
}

/// Tokens the unigram level distributes probability over.
fn predictable_vocab(counts: &FractionalCounts, vocab: Option<&Vocabulary>) -> Vec<String> {
    let mut words: Vec<String> = counts.grams(1).keys().map(|g| g[0].clone()).collect();
    if let Some(v) = vocab {
        words.extend(v.tokens().iter().cloned());
    }
    words.push(EOS.to_owned());
    words.push(UNK.to_owned());
    words.retain(|w| w != BOS && w != PAD && w != DELETE);
    words.sort_unstable();
    words.dedup();
    words
}

/// Occurrence lists each order is estimated from: raw counts at the top
/// order and for n-grams starting with `<s>`; elsewhere one continuation
/// occurrence per distinct left extension `v`, with probability that the
/// extended n-gram occurred at least once. Prefixes of every n-gram are
/// present (possibly with no occurrences) so they can carry backoff weights.
fn estimation_lists(
    counts: &FractionalCounts,
    predictable: &[String],
) -> Vec<BTreeMap<Vec<String>, Vec<f64>>> {
    let n = counts.order();
    let mut lists: Vec<BTreeMap<Vec<String>, Vec<f64>>> = vec![BTreeMap::new(); n];
    lists[n - 1] = counts.grams(n).clone();
    for k in (1..n).rev() {
        let table = &mut lists[k - 1];
        for (gram, ps) in counts.grams(k) {
            if gram[0] == BOS {
                table.insert(gram.clone(), ps.clone());
            }
        }
        for (gram, ps) in counts.grams(k + 1) {
            let p0 = poisson_binomial(ps, 1)[0];
            table.entry(gram[1..].to_vec()).or_default().push(1.0 - p0);
        }
    }
    for k in (2..=n).rev() {
        let prefixes: Vec<Vec<String>> = lists[k - 1].keys().map(|g| g[..k - 1].to_vec()).collect();
        for p in prefixes {
            lists[k - 2].entry(p).or_default();
        }
    }
    for w in predictable {
        lists[0].entry(vec![w.clone()]).or_default();
    }
    lists[0].entry(vec![BOS.to_owned()]).or_default();
    lists
}

/// Linear-domain model under construction: probability and backoff weight.
type Table = BTreeMap<Vec<String>, (f64, Option<f64>)>;

fn interpolated(tables: &[Table], context: &[String], word: &str, uniform: f64) -> f64 {
    let k = context.len();
    if k >= tables.len() {
        return interpolated(tables, &context[1..], word, uniform);
    }
    let mut key = context.to_vec();
    key.push(word.to_owned());
    if let Some(&(p, _)) = tables[k].get(&key) {
        return p;
    }
    if k == 0 {
        return uniform;
    }
    let bow = tables[k - 1]
        .get(context)
        .and_then(|&(_, b)| b)
        .unwrap_or(1.0);
    bow * interpolated(tables, &context[1..], word, uniform)
}

/// Interpolated modified Kneser-Ney on expected counts. Lower orders use
/// expected continuation counts; the unigram level interpolates with a
/// uniform distribution over the predictable vocabulary (every token of
/// `vocab` and of the counts, except `<s>`).
pub fn train_kn(counts: &FractionalCounts, vocab: Option<&Vocabulary>) -> Result<KnModel, NGramError> {
    if counts.grams(1).is_empty() {
        return Err(NGramError::EmptyCounts);
    }
    let n = counts.order();
    let predictable = predictable_vocab(counts, vocab);
    let uniform = 1.0 / predictable.len() as f64;
    let lists = estimation_lists(counts, &predictable);

    let discounts: Vec<Discounts> = lists
        .iter()
        .map(|table| {
            estimate_discounts(
                table
                    .iter()
                    .filter(|(g, _)| !(g.len() == 1 && g[0] == BOS))
                    .map(|(_, ps)| ps.as_slice()),
            )
        })
        .collect();

    let mut tables: Vec<Table> = Vec::with_capacity(n);
    for k in 1..=n {
        let disc = discounts[k - 1];
        let mut table = Table::new();
        let mut bows: Vec<(Vec<String>, f64)> = Vec::new();
        let grams: Vec<(&Vec<String>, &Vec<f64>)> = lists[k - 1]
            .iter()
            .filter(|(g, _)| !(k == 1 && g[0] == BOS))
            .collect();
        let mut start = 0;
        while start < grams.len() {
            let context = &grams[start].0[..k - 1];
            let mut end = start;
            while end < grams.len() && grams[end].0[..k - 1] == *context {
                end += 1;
            }
            let group = &grams[start..end];
            let stats: Vec<(f64, [f64; 3])> = group
                .iter()
                .map(|(_, ps)| {
                    let d = poisson_binomial(ps, 3);
                    (ps.iter().sum::<f64>(), [d[1], d[2], d[3]])
                })
                .collect();
            let total: f64 = stats.iter().map(|s| s.0).sum();
            let gamma = if total > 0.0 {
                stats.iter().map(|s| disc.weigh(&s.1)).sum::<f64>() / total
            } else {
                1.0
            };
            let lower_context = if k > 1 { &context[1..] } else { context };
            for ((gram, _), (e, p)) in group.iter().zip(&stats) {
                let word = &gram[k - 1];
                let lower = if k == 1 {
                    uniform
                } else {
                    interpolated(&tables, lower_context, word, uniform)
                };
                let own = if total > 0.0 {
                    (e - disc.weigh(p)).max(0.0) / total
                } else {
                    0.0
                };
                table.insert((*gram).clone(), (own + gamma * lower, None));
            }
            if k > 1 {
                bows.push((context.to_vec(), gamma));
            }
            start = end;
        }
        if k == 1 {
            table.insert(vec![BOS.to_owned()], (0.0, None));
        }
        if let Some(prev) = tables.last_mut() {
            for (context, gamma) in bows {
                if let Some(entry) = prev.get_mut(&context) {
                    entry.1 = Some(gamma);
                }
            }
        }
        tables.push(table);
    }

    let mut model = NGramModel::new(n);
    for table in tables {
        for (gram, (p, bow)) in table {
            let logp = if p > 0.0 { p.log10() } else { LOG10_ZERO };
            let bow = bow.map(|b| if b > 0.0 { b.log10() } else { LOG10_ZERO });
            model.insert(gram, Entry { logp, bow });
        }
    }
    Ok(KnModel { model, discounts })
}
