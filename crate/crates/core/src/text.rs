//! Tokens, normalization rules, and the shared vocabulary.
//!
//! Corpus files are plain UTF-8 text, one sentence per line, tokens
//! separated by single spaces.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};

use unicode_general_category::{get_general_category, GeneralCategory};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const DIGIT: &str = "<d>";
pub const DELETE: &str = "*DELETE*";

/// Reserved tokens, in id order.
pub const SPECIALS: [&str; 6] = [PAD, BOS, EOS, UNK, DIGIT, DELETE];

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;
pub const DIGIT_ID: TokenId = 4;
pub const DELETE_ID: TokenId = 5;

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("corpus is empty, cannot build a vocabulary")]
    EmptyCorpus,
    #[error("min_count must be at least 1")]
    ZeroMinCount,
    #[error("vocabulary line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn is_special(token: &str) -> bool {
    SPECIALS.contains(&token)
}

fn is_punct(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Letter-period repeated at least twice, e.g. `p.m.` or `u.s.a.`.
fn is_dotted_acronym(token: &str) -> bool {
    let chars: Vec<char> = token.chars().collect();
    chars.len() >= 4
        && chars.len() % 2 == 0
        && chars
            .chunks(2)
            .all(|pair| pair[0].is_alphabetic() && pair[1] == '.')
}

/// Strips punctuation from a single token, returning `None` when nothing is
/// left. Special tokens pass through untouched.
pub fn strip_token(token: &str) -> Option<&str> {
    if is_special(token) || is_dotted_acronym(token) {
        return Some(token);
    }
    let trimmed = token.trim_matches(is_punct);
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed)
    }
}

/// Removes punctuation that forms a whole token or sits at a token edge.
/// Punctuation flanked by other characters (`it's`, `8:30`, `5,40`) stays.
pub fn strip_punctuation<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .filter_map(|t| strip_token(t.as_ref()))
        .map(str::to_owned)
        .collect()
}

fn is_numeric_token(token: &str) -> bool {
    let bytes = token.as_bytes();
    match (bytes.first(), bytes.last()) {
        (Some(first), Some(last)) if first.is_ascii_digit() && last.is_ascii_digit() => token
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, ':' | ',' | '.')),
        _ => false,
    }
}

/// Lowercases a token and maps numbers (digits with internal `:`, `,` or
/// `.`) to `<d>`.
pub fn normalize_token(token: &str) -> String {
    if is_special(token) {
        token.to_owned()
    } else if is_numeric_token(token) {
        DIGIT.to_owned()
    } else {
        token.to_lowercase()
    }
}

/// Full corpus-side preparation of one whitespace-split sentence:
/// punctuation stripping followed by token normalization.
pub fn normalize_sentence<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    strip_punctuation(tokens)
        .iter()
        .map(|t| normalize_token(t))
        .collect()
}

/// Bidirectional token/id map. Ids are dense from zero, the six special
/// tokens always occupy ids `0..6`.
#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary")
            .field("len", &self.tokens.len())
            .finish()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::specials_only()
    }
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            vocab.insert(s);
        }
        vocab
    }

    /// Specials followed by `tokens` in the order given, skipping duplicates.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self::specials_only();
        for t in tokens {
            vocab.insert(t.as_ref());
        }
        vocab
    }

    /// Rebuilds a vocabulary from its full id-ordered token list, which must
    /// begin with the specials and contain no duplicates.
    pub fn from_list(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err("token list does not start with the special tokens".into());
        }
        let mut vocab = Self::specials_only();
        for t in &tokens[SPECIALS.len()..] {
            if vocab.contains(t) {
                return Err(format!("duplicate token {t:?}"));
            }
            vocab.insert(t);
        }
        Ok(vocab)
    }

    /// Builds a vocabulary from an already normalized corpus. Tokens seen at
    /// least `min_count` times are kept, in lexicographic order after the
    /// specials.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Self, VocabError> {
        if min_count == 0 {
            return Err(VocabError::ZeroMinCount);
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for token in corpus.iter().flatten() {
            *counts.entry(token.as_ref()).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        Ok(Self::from_tokens(
            counts
                .into_iter()
                .filter(|&(_, c)| c >= min_count)
                .map(|(t, _)| t),
        ))
    }

    /// Adds a token if missing and returns its id.
    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    /// One token per line, in id order.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, VocabError> {
        let mut vocab = Self::specials_only();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let token = line.trim();
            if token.is_empty() {
                continue;
            }
            if token.contains(char::is_whitespace) {
                return Err(VocabError::Parse {
                    line: i + 1,
                    msg: format!("token {token:?} contains whitespace"),
                });
            }
            vocab.insert(token);
        }
        Ok(vocab)
    }
}

/// Replaces every token missing from `vocab` with `<unk>`.
pub fn map_oov<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if vocab.contains(t) {
                t.to_owned()
            } else {
                UNK.to_owned()
            }
        })
        .collect()
}

/// Splits a corpus line into tokens.
pub fn split_line(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

pub fn read_corpus<R: BufRead>(input: R) -> io::Result<Vec<Vec<String>>> {
    input.lines().map(|l| l.map(|l| split_line(&l))).collect()
}

pub fn write_corpus<W: Write, S: AsRef<str>>(mut out: W, corpus: &[Vec<S>]) -> io::Result<()> {
    for sentence in corpus {
        let mut first = true;
        for t in sentence {
            if !first {
                out.write_all(b" ")?;
            }
            out.write_all(t.as_ref().as_bytes())?;
            first = false;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}
