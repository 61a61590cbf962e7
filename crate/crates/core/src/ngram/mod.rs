//! Fractional n-gram counts from text and confusion networks, expected-count
//! modified Kneser-Ney smoothing, ARPA files and perplexity.
//!
//! Occurrence probabilities replace integer counts throughout: a count of
//! an n-gram is the random number of its occurrences that really happened,
//! and discounts are applied to its expectation.

mod counts;
mod kn;
mod model;

pub use counts::{
    add_cn_counts, count_cn, count_text, poisson_binomial, CnCountOptions, FractionalCounts, DEFAULT_EPS,
};
pub use kn::{counts_of_counts, estimate_discounts, train_kn, Discounts, KnModel, FALLBACK_DISCOUNT};
pub use model::{ppl_ngram, Entry, NGramModel, Perplexity, LOG10_ZERO};

pub const DEFAULT_ORDER: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum NGramError {
    #[error("no n-gram counts to train on")]
    EmptyCounts,
    #[error("token {0:?} is not in the model vocabulary")]
    UnknownToken(String),
    #[error("zero probability for {word:?} after {context:?}")]
    ZeroProbability { word: String, context: String },
    #[error("ARPA line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
