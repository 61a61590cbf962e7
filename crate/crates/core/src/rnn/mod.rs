//! Single-layer GRU language model with tied input/output embeddings,
//! trained on text (cross-entropy) and on confusion networks (pooled arc
//! states, KL divergence to the next bin's posteriors).
//!
//! Text is handled as a chain network, so both kinds of data share one
//! forward/backward implementation: a [`Sequence`] is a list of steps, each
//! with weighted input arcs and a sparse target distribution.
//!
//! Everything is generic over the float type: training runs in `f32`,
//! gradient checks in `f64`.

mod net;
mod train;

use std::fmt::Debug;
use std::io::{self, Read, Write};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

pub use net::{
    forward_cn, forward_text, gradient_check, gru_cell, kl_loss, log_softmax, loss_and_grad, PooledStep,
};
pub use train::{
    ppl_rnn, train_rnn, Adam, EpochRecord, Plateau, TrainConfig, TrainData, TrainMode, TrainOutcome,
};

use crate::cnbuild::ConfusionNetwork;
use crate::text::{TokenId, Vocabulary, BOS_ID, EOS_ID};

pub const DEFAULT_DIM: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum RnnError {
    #[error("no training data")]
    EmptyData,
    #[error("token {0:?} is not in the model vocabulary")]
    UnknownToken(String),
    #[error("token id {0} is out of range")]
    BadTokenId(TokenId),
    #[error("step {step}: target distribution sums to {sum}")]
    NotNormalized { step: usize, sum: f64 },
    #[error("step {0} has no input arcs")]
    EmptyBin(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Float types the network runs in.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// How the per-arc states of a bin are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Arc posteriors as weights.
    #[default]
    WeightedMean,
    Mean,
    /// Componentwise maximum.
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "weighted-mean" => Ok(Pooling::WeightedMean),
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            _ => Err(format!("unknown pooling {s:?} (weighted-mean, mean, max)")),
        }
    }
}

/// One time step: weighted input arcs and the distribution over the next
/// token the model is trained towards.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub arcs: Vec<(TokenId, f64)>,
    pub target: Vec<(TokenId, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub steps: Vec<Step>,
}

impl Sequence {
    /// `<s> w1 .. wT` predicting `w1 .. wT </s>`.
    pub fn from_text(ids: &[TokenId]) -> Self {
        let mut inputs = Vec::with_capacity(ids.len() + 1);
        inputs.push(BOS_ID);
        inputs.extend_from_slice(ids);
        let steps = inputs
            .iter()
            .zip(ids.iter().chain(std::iter::once(&EOS_ID)))
            .map(|(&x, &y)| Step {
                arcs: vec![(x, 1.0)],
                target: vec![(y, 1.0)],
            })
            .collect();
        Sequence { steps }
    }

    /// `<s>` then one step per bin; each step predicts the next bin's
    /// posteriors, the last one `</s>`.
    pub fn from_cn(cn: &ConfusionNetwork, vocab: &Vocabulary) -> Result<Self, RnnError> {
        let mut bins = Vec::with_capacity(cn.bins.len());
        for bin in &cn.bins {
            let arcs = bin
                .arcs
                .iter()
                .map(|a| {
                    vocab
                        .id(&a.token)
                        .map(|id| (id, a.score))
                        .ok_or_else(|| RnnError::UnknownToken(a.token.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            bins.push(arcs);
        }
        let mut steps = Vec::with_capacity(bins.len() + 1);
        let mut input = vec![(BOS_ID, 1.0)];
        for bin in bins {
            steps.push(Step {
                arcs: std::mem::replace(&mut input, bin.clone()),
                target: bin,
            });
        }
        steps.push(Step {
            arcs: input,
            target: vec![(EOS_ID, 1.0)],
        });
        Ok(Sequence { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Parameters: embedding `E` (`V x d`, also the output projection), GRU
/// input weights `U` and recurrent weights `W` (`3d x d`, gate blocks in
/// the order update, reset, candidate) and a bias (`3d`), stored in one
/// flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnLmParams<T> {
    vocab: Vocabulary,
    dim: usize,
    data: Vec<T>,
}

/// Offsets of the parameter blocks inside the flat buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub vocab: usize,
    pub dim: usize,
}

impl Layout {
    pub fn embedding(&self) -> std::ops::Range<usize> {
        0..self.vocab * self.dim
    }

    pub fn input(&self) -> std::ops::Range<usize> {
        let s = self.vocab * self.dim;
        s..s + 3 * self.dim * self.dim
    }

    pub fn recurrent(&self) -> std::ops::Range<usize> {
        let s = self.input().end;
        s..s + 3 * self.dim * self.dim
    }

    pub fn bias(&self) -> std::ops::Range<usize> {
        let s = self.recurrent().end;
        s..s + 3 * self.dim
    }

    pub fn total(&self) -> usize {
        self.bias().end
    }
}

impl<T: Real> RnnLmParams<T> {
    /// All-zero parameters: every prediction is uniform.
    pub fn zeros(vocab: Vocabulary, dim: usize) -> Self {
        let layout = Layout {
            vocab: vocab.len(),
            dim,
        };
        RnnLmParams {
            vocab,
            dim,
            data: vec![T::zero(); layout.total()],
        }
    }

    /// Embeddings uniform in `±0.1`, GRU weights uniform in `±1/sqrt(d)`,
    /// zero bias.
    pub fn init<R: Rng>(vocab: Vocabulary, dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(vocab, dim);
        let layout = p.layout();
        let scale = 1.0 / (dim as f64).sqrt();
        for x in &mut p.data[layout.embedding()] {
            *x = T::of(rng.gen_range(-0.1..0.1));
        }
        for x in &mut p.data[layout.input().start..layout.recurrent().end] {
            *x = T::of(rng.gen_range(-scale..scale));
        }
        p
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout {
            vocab: self.vocab.len(),
            dim: self.dim,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Every parameter, flattened.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn embedding(&self) -> &[T] {
        &self.data[self.layout().embedding()]
    }

    pub fn embedding_mut(&mut self) -> &mut [T] {
        let r = self.layout().embedding();
        &mut self.data[r]
    }

    pub fn input_weights(&self) -> &[T] {
        &self.data[self.layout().input()]
    }

    pub fn recurrent_weights(&self) -> &[T] {
        &self.data[self.layout().recurrent()]
    }

    pub fn bias(&self) -> &[T] {
        &self.data[self.layout().bias()]
    }

    pub fn cast<U: Real>(&self) -> RnnLmParams<U> {
        RnnLmParams {
            vocab: self.vocab.clone(),
            dim: self.dim,
            data: self.data.iter().map(|&x| U::of(x.f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn token_id(&self, token: &str) -> Result<TokenId, RnnError> {
        self.vocab
            .id(token)
            .ok_or_else(|| RnnError::UnknownToken(token.to_owned()))
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<TokenId>, RnnError> {
        tokens.iter().map(|t| self.token_id(t.as_ref())).collect()
    }

    fn tensors(&self) -> [(&'static str, Vec<u32>, std::ops::Range<usize>); 4] {
        let l = self.layout();
        let (v, d) = (l.vocab as u32, l.dim as u32);
        [
            ("embedding", vec![v, d], l.embedding()),
            ("gru.input", vec![3 * d, d], l.input()),
            ("gru.recurrent", vec![3 * d, d], l.recurrent()),
            ("gru.bias", vec![3 * d], l.bias()),
        ]
    }

    /// Writes the model container: magic, version, vocabulary, then named
    /// tensors as `(name, rank, dims, f32 little-endian row-major data)`.
    pub fn save<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_u32(&mut out, self.vocab.len() as u32)?;
        for t in self.vocab.tokens() {
            write_str(&mut out, t)?;
        }
        let tensors = self.tensors();
        write_u32(&mut out, tensors.len() as u32)?;
        for (name, dims, range) in tensors {
            write_str(&mut out, name)?;
            write_u32(&mut out, dims.len() as u32)?;
            for d in dims {
                write_u32(&mut out, d)?;
            }
            for &x in &self.data[range] {
                out.write_all(&(x.f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("writing to memory");
        buf
    }
}

const MAGIC: &[u8; 8] = b"CNLMGRU\0";
const FORMAT_VERSION: u32 = 1;

fn write_u32<W: Write>(out: &mut W, x: u32) -> io::Result<()> {
    out.write_all(&x.to_le_bytes())
}

fn write_str<W: Write>(out: &mut W, s: &str) -> io::Result<()> {
    write_u32(out, s.len() as u32)?;
    out.write_all(s.as_bytes())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], RnnError> {
        if self.buf.len() < n {
            return Err(RnnError::Format(format!("truncated while reading {what}")));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32, RnnError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, RnnError> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| RnnError::Format(format!("{what} is not UTF-8")))
    }
}

impl RnnLmParams<f32> {
    pub fn load<R: Read>(mut input: R) -> Result<Self, RnnError> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RnnError> {
        let mut r = Reader { buf: bytes };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(RnnError::Format("not a model file (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(RnnError::Format(format!("unsupported format version {version}")));
        }
        let n = r.u32("vocabulary size")? as usize;
        let mut tokens = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            tokens.push(r.string("vocabulary entry")?);
        }
        let vocab = Vocabulary::from_list(tokens).map_err(RnnError::Format)?;
        let count = r.u32("tensor count")?;
        let mut found: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let rank = r.u32("tensor rank")? as usize;
            if rank > 4 {
                return Err(RnnError::Format(format!("tensor {name} has rank {rank}")));
            }
            let dims: Vec<usize> = (0..rank)
                .map(|_| r.u32("tensor dims").map(|d| d as usize))
                .collect::<Result<_, _>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| RnnError::Format(format!("tensor {name} is too large")))?;
            let bytes = r.take(len * 4, &format!("tensor {name}"))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            found.push((name, dims, data));
        }
        if !r.buf.is_empty() {
            return Err(RnnError::Format("trailing bytes after the last tensor".into()));
        }
        let dim = found
            .iter()
            .find(|(n, ..)| n == "embedding")
            .and_then(|(_, d, _)| d.get(1).copied())
            .ok_or_else(|| RnnError::Format("missing embedding tensor".into()))?;
        let mut params = RnnLmParams::<f32>::zeros(vocab, dim);
        for (name, dims, range) in params.tensors() {
            let (_, got_dims, data) = found
                .iter()
                .find(|(n, ..)| n == name)
                .ok_or_else(|| RnnError::Format(format!("missing tensor {name}")))?;
            let want: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
            if *got_dims != want {
                return Err(RnnError::Format(format!(
                    "tensor {name} has shape {got_dims:?}, expected {want:?}"
                )));
            }
            params.data[range].copy_from_slice(data);
        }
        Ok(params)
    }
}
