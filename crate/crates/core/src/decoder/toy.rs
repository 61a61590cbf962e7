use std::collections::HashMap;

use super::{log_softmax_in_place, DecodeError, ScoreFn, Scorer};
use crate::ngram::{count_text, train_kn, NGramModel};
use crate::text::{TokenId, Vocabulary, BOS, BOS_ID, EOS_ID, SPECIALS};

/// A small translation model for desk-scale experiments: a modified
/// Kneser-Ney trigram model of the targets combined with a lexicon
/// `P(target word | source bag of words)`.
///
/// The lexicon is IBM Model 1: word translation tables `t(w | s)` (plus a
/// NULL source word) estimated by a few EM passes from sentence-level
/// co-occurrences. Raw co-occurrence rows would credit every name in the
/// corpus to "namen"; EM lets the source name explain the target name.
/// `P(w | S)` is the mean of `t(w | s)` over NULL and the known source
/// words.
///
/// The two are interpolated log-linearly,
/// `p(w) ∝ lm(w | history) · (lexicon(w) / prior(w))^γ`, renormalized over
/// the output words, where `prior` is the smoothed target unigram; `</s>`
/// has no lexicon factor. Dividing by the prior makes words found in every
/// target (final punctuation) neutral; with a linear mixture their lexicon
/// mass pushes them straight after `<s>`, and as hypotheses are ranked by
/// raw log-likelihood `? </s>` then beats every real translation. A
/// bigram history is too short for the same reason: `can you . </s>` is a
/// cheap path through "thank you .".
///
/// The lexicon factor only applies to words not yet in the prefix: without
/// this coverage constraint the search keeps emitting strongly attested
/// words instead of finishing the sentence.
///
/// Finally `</s>` is scaled by `exp(-eos_penalty)`, a word penalty in the
/// usual sense: every factor above is at most one on average, so without it
/// stopping early is always cheap.
///
/// A sentence with no known source word gets a uniform lexicon term, which
/// leaves the language model distribution unchanged.
#[derive(Debug, Clone)]
pub struct ToyScorer {
    vocab: Vocabulary,
    /// Ids that can be generated: every target word plus `</s>`.
    outputs: Vec<TokenId>,
    /// `ln P(w | prev)` rows, `V` entries per previous token.
    history: Vec<f64>,
    /// `ln P(w | a b)` rows for the two-word histories the model has seen;
    /// other histories back off to [`history`](Self::history) with weight 1.
    pairs: HashMap<(TokenId, TokenId), Vec<f64>>,
    /// Source word -> row of `translation`.
    sources: HashMap<String, usize>,
    /// `t(w | s)` rows indexed by target id; the last row is NULL.
    translation: Vec<Vec<f64>>,
    /// Target unigram over words (no `</s>`).
    prior: Vec<f64>,
    params: ToyParams,
}

/// Weights of the [`ToyScorer`] factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParams {
    /// Exponent γ on the lexicon factor.
    pub lexicon_weight: f64,
    /// Log-space penalty on `</s>`.
    pub eos_penalty: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            lexicon_weight: 1.0,
            eos_penalty: 4.0,
        }
    }
}

impl ToyScorer {
    /// Order of the target language model.
    pub const LM_ORDER: usize = 3;
    pub const EM_ITERATIONS: usize = 10;
    /// Additive smoothing of the translation tables.
    pub const LEXICON_SMOOTHING: f64 = 0.01;

    pub fn train(pairs: &[(Vec<String>, Vec<String>)]) -> Result<Self, DecodeError> {
        Self::train_with(pairs, ToyParams::default())
    }

    pub fn train_with(pairs: &[(Vec<String>, Vec<String>)], params: ToyParams) -> Result<Self, DecodeError> {
        let valid = |x: f64| x.is_finite() && x >= 0.0;
        if !(valid(params.lexicon_weight) && valid(params.eos_penalty)) {
            return Err(DecodeError::BadWeights);
        }
        if pairs.iter().all(|(_, t)| t.is_empty()) {
            return Err(DecodeError::EmptyCorpus);
        }
        let mut words: Vec<&str> = pairs
            .iter()
            .flat_map(|(_, t)| t.iter().map(String::as_str))
            .filter(|t| !SPECIALS.contains(t))
            .collect();
        words.sort_unstable();
        words.dedup();
        let vocab = Vocabulary::from_tokens(words);
        let v = vocab.len();
        let word_ids: Vec<TokenId> = (SPECIALS.len() as TokenId..v as TokenId).collect();
        let mut outputs = word_ids.clone();
        outputs.push(EOS_ID);
        outputs.sort_unstable();

        let mut unigram_counts = vec![0.0f64; v];
        let mut sources: HashMap<String, usize> = HashMap::new();
        let mut encoded: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(pairs.len());
        for (source, target) in pairs {
            let tgt: Vec<usize> = target
                .iter()
                .filter(|t| !SPECIALS.contains(&t.as_str()))
                .map(|t| vocab.id_or_unk(t) as usize)
                .collect();
            for &w in &tgt {
                unigram_counts[w] += 1.0;
            }
            let src: Vec<usize> = source
                .iter()
                .map(|s| {
                    let next = sources.len();
                    *sources.entry(s.clone()).or_insert(next)
                })
                .collect();
            encoded.push((src, tgt));
        }

        let targets: Vec<Vec<String>> = pairs.iter().map(|(_, t)| t.clone()).collect();
        let lm = train_kn(&count_text(&targets, Self::LM_ORDER), None)
            .expect("non-empty corpus")
            .model;
        let row = |context: &[&str]| lm_row(&lm, &vocab, &outputs, context);
        let mut history = Vec::with_capacity(v * v);
        for prev in 0..v as TokenId {
            history.extend(row(&[vocab.token(prev)]));
        }
        let mut contexts = HashMap::new();
        for (gram, _) in lm.entries(2).iter().filter(|(_, e)| e.bow.is_some()) {
            if let (Some(a), Some(b)) = (vocab.id(&gram[0]), vocab.id(&gram[1])) {
                contexts.insert((a, b), row(&[&gram[0], &gram[1]]));
            }
        }
        let n_words = word_ids.len() as f64;
        let total: f64 = unigram_counts.iter().sum();
        let mut prior = vec![0.0; v];
        for &w in &word_ids {
            prior[w as usize] = (unigram_counts[w as usize] + 1.0) / (total + n_words);
        }
        let translation = model_one(&encoded, sources.len(), v, &word_ids);

        Ok(ToyScorer {
            vocab,
            outputs,
            history,
            pairs: contexts,
            sources,
            translation,
            prior,
            params,
        })
    }

    /// Lexicon distribution over target words for a source sentence.
    pub fn lexicon_term(&self, source: &[String]) -> Vec<f64> {
        self.known_lexicon(source).unwrap_or_else(|| {
            let mut lex = vec![0.0; self.vocab.len()];
            let n_words = (self.outputs.len() - 1) as f64;
            for &w in &self.outputs {
                if w != EOS_ID {
                    lex[w as usize] = 1.0 / n_words;
                }
            }
            lex
        })
    }

    /// `t(w | s)` for a source word seen in training.
    pub fn translation_row(&self, source_word: &str) -> Option<&[f64]> {
        self.sources.get(source_word).map(|&i| self.translation[i].as_slice())
    }

    /// Smoothed target unigram distribution over words.
    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    fn known_lexicon(&self, source: &[String]) -> Option<Vec<f64>> {
        let rows: Vec<&Vec<f64>> = source
            .iter()
            .filter_map(|s| self.sources.get(s))
            .map(|&i| &self.translation[i])
            .collect();
        if rows.is_empty() {
            return None;
        }
        let null = self.translation.last().expect("NULL row");
        let inv = 1.0 / (rows.len() + 1) as f64;
        let mut lex: Vec<f64> = null.iter().map(|p| p * inv).collect();
        for row in rows {
            for (acc, p) in lex.iter_mut().zip(row) {
                *acc += p * inv;
            }
        }
        Some(lex)
    }

    /// `γ · ln(lexicon / prior)` per target word; zero for `</s>` and
    /// without known source words.
    fn lexicon_bonus(&self, source: &[String]) -> Vec<f64> {
        let mut bonus = vec![0.0; self.vocab.len()];
        if let Some(lex) = self.known_lexicon(source) {
            for &w in &self.outputs {
                let w = w as usize;
                if w != EOS_ID as usize {
                    bonus[w] = self.params.lexicon_weight * (lex[w] / self.prior[w]).ln();
                }
            }
        }
        bonus
    }

    /// Language model log-probabilities after `prefix`, normalized over the
    /// output words.
    pub fn lm_row(&self, prefix: &[TokenId]) -> &[f64] {
        let (a, b) = match prefix {
            [] => return self.history_row(BOS_ID),
            [b] => (BOS_ID, *b),
            [.., a, b] => (*a, *b),
        };
        match self.pairs.get(&(a, b)) {
            Some(row) => row,
            None => self.history_row(b),
        }
    }

    fn history_row(&self, prev: TokenId) -> &[f64] {
        let v = self.vocab.len();
        &self.history[prev as usize * v..(prev as usize + 1) * v]
    }
}

impl Scorer for ToyScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn session<'a>(&'a self, source: &[String]) -> ScoreFn<'a> {
        let bonus = self.lexicon_bonus(source);
        let boosted: Vec<usize> = (0..bonus.len()).filter(|&w| bonus[w] != 0.0).collect();
        Box::new(move |prefix: &[TokenId]| {
            let row = self.lm_row(prefix);
            let mut out = vec![f64::NEG_INFINITY; self.vocab.len()];
            for &w in &self.outputs {
                let w = w as usize;
                out[w] = row[w] + bonus[w];
            }
            // a word's lexicon evidence is used up once it has been emitted
            for &w in &boosted {
                if prefix.contains(&(w as TokenId)) {
                    out[w] = row[w];
                }
            }
            out[EOS_ID as usize] -= self.params.eos_penalty;
            log_softmax_in_place(&mut out);
            out
        })
    }
}

/// `ln P(w | context)` for every output word, renormalized over the outputs
/// (the model also reserves mass for `<unk>`); `-inf` elsewhere.
fn lm_row(lm: &NGramModel, vocab: &Vocabulary, outputs: &[TokenId], context: &[&str]) -> Vec<f64> {
    // histories through other special tokens never occur in decoding;
    // keep only what follows the last one
    let start = context
        .iter()
        .rposition(|t| SPECIALS.contains(t) && *t != BOS)
        .map_or(0, |i| i + 1);
    let context = &context[start..];
    let mut row = vec![f64::NEG_INFINITY; vocab.len()];
    for &w in outputs {
        let lp = lm.log10_prob(context, vocab.token(w)).expect("output word in the model");
        row[w as usize] = lp * std::f64::consts::LN_10;
    }
    log_softmax_in_place(&mut row);
    row
}

/// IBM Model 1 translation tables: one row per source word plus a final
/// NULL row, each a distribution over `words`.
fn model_one(pairs: &[(Vec<usize>, Vec<usize>)], n_sources: usize, v: usize, words: &[TokenId]) -> Vec<Vec<f64>> {
    let null = n_sources;
    let uniform = 1.0 / words.len() as f64;
    let mut t = vec![vec![0.0; v]; n_sources + 1];
    for row in &mut t {
        for &w in words {
            row[w as usize] = uniform;
        }
    }
    let mut counts = vec![vec![0.0; v]; n_sources + 1];
    let mut linked = Vec::new();
    for _ in 0..ToyScorer::EM_ITERATIONS {
        counts.iter_mut().for_each(|row| row.iter_mut().for_each(|c| *c = 0.0));
        for (src, tgt) in pairs {
            linked.clear();
            linked.extend(src.iter().copied().chain([null]));
            for &w in tgt {
                let denom: f64 = linked.iter().map(|&s| t[s][w]).sum();
                for &s in &linked {
                    counts[s][w] += t[s][w] / denom;
                }
            }
        }
        let delta = ToyScorer::LEXICON_SMOOTHING;
        for (row, c) in t.iter_mut().zip(&counts) {
            let total: f64 = words.iter().map(|&w| c[w as usize]).sum();
            let norm = total + delta * words.len() as f64;
            for &w in words {
                row[w as usize] = (c[w as usize] + delta) / norm;
            }
        }
    }
    t
}
