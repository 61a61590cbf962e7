use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use super::NGramError;
use crate::text::{BOS, EOS};

/// log10 probability written for impossible events (`<s>` as a unigram).
pub const LOG10_ZERO: f64 = -99.0;

/// One ARPA entry: log10 probability and, for n-grams that are contexts of
/// longer ones, a log10 backoff weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub logp: f64,
    pub bow: Option<f64>,
}

/// A backoff n-gram model.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    tables: Vec<BTreeMap<Vec<String>, Entry>>,
}

impl NGramModel {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "n-gram order must be at least 1");
        NGramModel {
            order,
            tables: vec![BTreeMap::new(); order],
        }
    }

    /// Unigram model giving every token the same probability.
    pub fn uniform<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut model = NGramModel::new(1);
        let logp = -(tokens.len() as f64).log10();
        for t in tokens {
            model.insert(vec![t.as_ref().to_owned()], Entry { logp, bow: None });
        }
        model
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn insert(&mut self, gram: Vec<String>, entry: Entry) {
        assert!((1..=self.order).contains(&gram.len()), "n-gram length out of range");
        self.tables[gram.len() - 1].insert(gram, entry);
    }

    pub fn entry<S: AsRef<str>>(&self, gram: &[S]) -> Option<&Entry> {
        let key: Vec<String> = gram.iter().map(|t| t.as_ref().to_owned()).collect();
        self.tables.get(key.len().checked_sub(1)?)?.get(&key)
    }

    /// Entries of order `k`, sorted.
    pub fn entries(&self, k: usize) -> &BTreeMap<Vec<String>, Entry> {
        &self.tables[k - 1]
    }

    pub fn len(&self, k: usize) -> usize {
        self.tables[k - 1].len()
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.tables[0].contains_key([word.to_owned()].as_slice())
    }

    /// Unigram tokens, sorted.
    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.tables[0].keys().map(|g| g[0].as_str())
    }

    /// Backoff evaluation of log10 P(word | context); only the last
    /// `order - 1` context tokens matter. `None` for a word without a
    /// unigram entry.
    pub fn log10_prob<S: AsRef<str>>(&self, context: &[S], word: &str) -> Option<f64> {
        let keep = context.len().min(self.order - 1);
        let context: Vec<String> = context[context.len() - keep..]
            .iter()
            .map(|t| t.as_ref().to_owned())
            .collect();
        self.backoff(&context, word)
    }

    fn backoff(&self, context: &[String], word: &str) -> Option<f64> {
        let mut key = Vec::with_capacity(context.len() + 1);
        key.extend_from_slice(context);
        key.push(word.to_owned());
        if let Some(e) = self.tables[context.len()].get(&key) {
            return Some(e.logp);
        }
        if context.is_empty() {
            return None;
        }
        let bow = self.tables[context.len() - 1]
            .get(context)
            .and_then(|e| e.bow)
            .unwrap_or(0.0);
        Some(bow + self.backoff(&context[1..], word)?)
    }

    pub fn prob<S: AsRef<str>>(&self, context: &[S], word: &str) -> Option<f64> {
        self.log10_prob(context, word).map(|lp| 10f64.powf(lp))
    }

    pub fn write_arpa<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "\\data\\")?;
        for (k, table) in self.tables.iter().enumerate() {
            writeln!(out, "ngram {}={}", k + 1, table.len())?;
        }
        for (k, table) in self.tables.iter().enumerate() {
            writeln!(out)?;
            writeln!(out, "\\{}-grams:", k + 1)?;
            for (gram, e) in table {
                write!(out, "{}\t{}", fmt_log(e.logp), gram.join(" "))?;
                if let Some(b) = e.bow {
                    write!(out, "\t{}", fmt_log(b))?;
                }
                writeln!(out)?;
            }
        }
        writeln!(out)?;
        writeln!(out, "\\end\\")?;
        Ok(())
    }

    pub fn read_arpa<R: BufRead>(input: R) -> Result<Self, NGramError> {
        let mut declared: Vec<usize> = Vec::new();
        let mut tables: Vec<BTreeMap<Vec<String>, Entry>> = Vec::new();
        let mut section: Option<usize> = None;
        let mut in_data = false;
        let mut ended = false;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let err = |msg: String| NGramError::Parse { line: lineno, msg };
            let text = line.trim();
            if text.is_empty() || ended {
                continue;
            }
            if text == "\\data\\" {
                in_data = true;
                continue;
            }
            if text == "\\end\\" {
                ended = true;
                continue;
            }
            if let Some(k) = text
                .strip_prefix('\\')
                .and_then(|t| t.strip_suffix("-grams:"))
            {
                let k: usize = k.parse().map_err(|_| err(format!("bad section header {text:?}")))?;
                if k == 0 || k > declared.len() {
                    return Err(err(format!("section {k} not declared in \\data\\")));
                }
                in_data = false;
                section = Some(k);
                continue;
            }
            if in_data {
                let decl = text
                    .strip_prefix("ngram ")
                    .ok_or_else(|| err(format!("expected `ngram k=count`, got {text:?}")))?;
                let (k, c) = decl
                    .split_once('=')
                    .ok_or_else(|| err("expected `ngram k=count`".into()))?;
                let k: usize = k.trim().parse().map_err(|_| err("bad order".into()))?;
                let c: usize = c.trim().parse().map_err(|_| err("bad count".into()))?;
                if k != declared.len() + 1 {
                    return Err(err(format!("orders must be declared in sequence, got {k}")));
                }
                declared.push(c);
                tables.push(BTreeMap::new());
                continue;
            }
            let k = section.ok_or_else(|| err("entry outside an n-gram section".into()))?;
            let fields: Vec<&str> = text.split_whitespace().collect();
            if fields.len() != k + 1 && fields.len() != k + 2 {
                return Err(err(format!("expected a {k}-gram entry")));
            }
            let logp = parse_log(fields[0]).ok_or_else(|| err(format!("bad probability {:?}", fields[0])))?;
            let bow = match fields.get(k + 1) {
                Some(b) => Some(parse_log(b).ok_or_else(|| err(format!("bad backoff weight {b:?}")))?),
                None => None,
            };
            let gram: Vec<String> = fields[1..=k].iter().map(|t| (*t).to_owned()).collect();
            tables[k - 1].insert(gram, Entry { logp, bow });
        }
        if !ended {
            return Err(NGramError::Parse {
                line: 0,
                msg: "missing \\end\\".into(),
            });
        }
        if declared.is_empty() {
            return Err(NGramError::Parse {
                line: 0,
                msg: "missing \\data\\ section".into(),
            });
        }
        for (k, (table, &want)) in tables.iter().zip(&declared).enumerate() {
            if table.len() != want {
                return Err(NGramError::Parse {
                    line: 0,
                    msg: format!("{}-gram section has {} entries, header says {want}", k + 1, table.len()),
                });
            }
        }
        Ok(NGramModel {
            order: declared.len(),
            tables,
        })
    }
}

fn fmt_log(x: f64) -> String {
    if x <= LOG10_ZERO {
        "-99".to_owned()
    } else {
        format!("{x:.7}")
    }
}

fn parse_log(s: &str) -> Option<f64> {
    let x: f64 = s.parse().ok()?;
    (x.is_finite()).then_some(x)
}

/// Totals behind a perplexity figure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perplexity {
    /// Sum of natural-log probabilities.
    pub logprob: f64,
    /// Predicted tokens: every word plus one `</s>` per sentence.
    pub tokens: usize,
    pub sentences: usize,
}

impl Perplexity {
    pub fn from_logprob(logprob: f64, tokens: usize, sentences: usize) -> Self {
        Perplexity {
            logprob,
            tokens,
            sentences,
        }
    }

    pub fn ppl(&self) -> f64 {
        (-self.logprob / self.tokens as f64).exp()
    }
}

/// `exp(-(1/N) sum ln P(w_i | history))` over every token and sentence end.
/// Tokens must already be mapped into the model's vocabulary.
pub fn ppl_ngram<S: AsRef<str>>(model: &NGramModel, corpus: &[Vec<S>]) -> Result<Perplexity, NGramError> {
    let ln10 = std::f64::consts::LN_10;
    let mut logprob = 0.0;
    let mut tokens = 0;
    for sentence in corpus {
        let mut history: Vec<&str> = vec![BOS];
        let words = sentence.iter().map(AsRef::as_ref).chain(std::iter::once(EOS));
        for w in words {
            let lp = model
                .log10_prob(&history, w)
                .ok_or_else(|| NGramError::UnknownToken(w.to_owned()))?;
            if lp <= LOG10_ZERO {
                return Err(NGramError::ZeroProbability {
                    word: w.to_owned(),
                    context: history.join(" "),
                });
            }
            logprob += lp * ln10;
            tokens += 1;
            history.push(w);
        }
    }
    Ok(Perplexity::from_logprob(logprob, tokens, corpus.len()))
}
