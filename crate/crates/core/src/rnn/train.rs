//! Mini-batch training with Adam, plateau learning-rate decay and early
//! stopping on development-set perplexity.

use std::fmt;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{forward_text, loss_and_grad};
use super::{Pooling, Real, RnnError, RnnLmParams, Sequence, DEFAULT_DIM};
use crate::ngram::Perplexity;
use crate::text::{TokenId, Vocabulary, EOS_ID};

/// Which data the model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMode {
    /// N-best sentences, cross-entropy.
    NBest,
    /// Confusion networks, KL to bin posteriors.
    #[default]
    Cn,
    /// Alternating network and N-best batches, one to one.
    CnNBest,
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nbest" => Ok(TrainMode::NBest),
            "cn" => Ok(TrainMode::Cn),
            "cn+nbest" => Ok(TrainMode::CnNBest),
            _ => Err(format!("unknown training mode {s:?} (nbest, cn, cn+nbest)")),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::NBest => "nbest",
            TrainMode::Cn => "cn",
            TrainMode::CnNBest => "cn+nbest",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Learning-rate multiplier on a plateau.
    pub lr_factor: f64,
    /// Epochs without improvement before the learning rate drops.
    pub lr_patience: usize,
    /// Epochs without improvement before training stops.
    pub stop_patience: usize,
    pub max_epochs: usize,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub pooling: Pooling,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: DEFAULT_DIM,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_factor: 0.1,
            lr_patience: 10,
            stop_patience: 15,
            max_epochs: 100,
            clip_norm: None,
            seed: 1,
            pooling: Pooling::WeightedMean,
            mode: TrainMode::Cn,
        }
    }
}

/// Training material: N-best sentences and networks as sequences, and
/// development sentences (token ids) for model selection.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub nbest: Vec<Sequence>,
    pub cn: Vec<Sequence>,
    pub dev: Vec<Vec<TokenId>>,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(size: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![T::zero(); size],
            v: vec![T::zero(); size],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t));
        let c2 = T::of(1.0 - self.beta2.powi(self.t));
        let (lr, eps, one) = (T::of(self.lr), T::of(self.eps), T::one());
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p = *p - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Reduce-on-plateau schedule: after `patience` consecutive epochs without
/// a new best, the rate is multiplied by `factor` and the count restarts.
#[derive(Debug, Clone)]
pub struct Plateau {
    pub lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    bad: usize,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Plateau {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    /// Records an epoch's metric (lower is better); true if it is a new best.
    pub fn observe(&mut self, metric: f64) -> bool {
        if metric < self.best {
            self.best = metric;
            self.bad = 0;
            return true;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            self.lr *= self.factor;
            self.bad = 0;
        }
        false
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per predicted step.
    pub train_loss: f64,
    pub dev_ppl: Option<f64>,
    /// Rate used during the epoch.
    pub lr: f64,
    pub best: bool,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} train_loss={:.6}", self.epoch, self.train_loss)?;
        match self.dev_ppl {
            Some(p) => write!(f, " dev_ppl={p:.4}")?,
            None => write!(f, " dev_ppl=-")?,
        }
        write!(f, " lr={:e}{}", self.lr, if self.best { " best" } else { "" })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best epoch.
    pub params: RnnLmParams<f32>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

#[derive(Clone, Copy)]
enum Source {
    NBest,
    Cn,
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Batches for one epoch. In the alternating mode an epoch is one pass
/// over the networks; each network batch is followed by an N-best batch
/// taken from a cursor that cycles through reshuffled N-best data.
fn epoch_batches(
    data: &TrainData,
    mode: TrainMode,
    batch: usize,
    rng: &mut ChaCha8Rng,
    nbest_order: &mut Vec<usize>,
    nbest_cursor: &mut usize,
) -> Vec<(Source, Vec<usize>)> {
    let chunks = |idx: Vec<usize>, src: Source| -> Vec<(Source, Vec<usize>)> {
        idx.chunks(batch).map(|c| (src, c.to_vec())).collect()
    };
    match mode {
        TrainMode::NBest => chunks(shuffled(data.nbest.len(), rng), Source::NBest),
        TrainMode::Cn => chunks(shuffled(data.cn.len(), rng), Source::Cn),
        TrainMode::CnNBest => {
            let mut out = Vec::new();
            for cn_batch in chunks(shuffled(data.cn.len(), rng), Source::Cn) {
                out.push(cn_batch);
                let mut nb = Vec::with_capacity(batch);
                while nb.len() < batch {
                    if *nbest_cursor >= nbest_order.len() {
                        *nbest_order = shuffled(data.nbest.len(), rng);
                        *nbest_cursor = 0;
                    }
                    nb.push(nbest_order[*nbest_cursor]);
                    *nbest_cursor += 1;
                }
                out.push((Source::NBest, nb));
            }
            out
        }
    }
}

/// Trains a model from scratch. Deterministic for a given configuration
/// and data.
pub fn train_rnn(vocab: Vocabulary, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome, RnnError> {
    let needs_nbest = matches!(cfg.mode, TrainMode::NBest | TrainMode::CnNBest);
    let needs_cn = matches!(cfg.mode, TrainMode::Cn | TrainMode::CnNBest);
    if (needs_nbest && data.nbest.is_empty()) || (needs_cn && data.cn.is_empty()) {
        return Err(RnnError::EmptyData);
    }
    let batch = cfg.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = RnnLmParams::<f32>::init(vocab, cfg.dim, &mut rng);
    let size = params.as_slice().len();
    let mut adam = Adam::<f32>::new(size, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut plateau = Plateau::new(cfg.lr, cfg.lr_factor, cfg.lr_patience);
    let mut grad = vec![0f32; size];
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut log = Vec::new();
    let (mut nbest_order, mut nbest_cursor) = (Vec::new(), 0);

    for epoch in 1..=cfg.max_epochs {
        let batches = epoch_batches(data, cfg.mode, batch, &mut rng, &mut nbest_order, &mut nbest_cursor);
        let (mut epoch_loss, mut epoch_steps) = (0f64, 0usize);
        for (src, idx) in batches {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let (mut loss, mut steps) = (0f64, 0usize);
            for i in idx {
                let seq = match src {
                    Source::NBest => &data.nbest[i],
                    Source::Cn => &data.cn[i],
                };
                loss += loss_and_grad(&params, seq, cfg.pooling, &mut grad)? as f64;
                steps += seq.len();
            }
            if steps == 0 {
                continue;
            }
            let mut scale = 1.0 / steps as f64;
            if let Some(clip) = cfg.clip_norm {
                let norm = grad.iter().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt() * scale;
                if norm > clip {
                    scale *= clip / norm;
                }
            }
            let scale = scale as f32;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(params.as_mut_slice(), &grad);
            if !params.is_finite() {
                return Err(RnnError::NonFinite(format!("parameters in epoch {epoch}")));
            }
            epoch_loss += loss;
            epoch_steps += steps;
        }
        let train_loss = epoch_loss / epoch_steps.max(1) as f64;
        let dev_ppl = if data.dev.is_empty() {
            None
        } else {
            Some(ppl_ids(&params, &data.dev)?.ppl())
        };
        let metric = dev_ppl.unwrap_or(train_loss);
        if !metric.is_finite() {
            return Err(RnnError::NonFinite(format!("validation metric in epoch {epoch}")));
        }
        let lr = adam.lr;
        let improved = plateau.observe(metric);
        adam.lr = plateau.lr;
        if improved {
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_ppl,
            lr,
            best: improved,
        };
        info!("{record}");
        log.push(record);
        if since_best >= cfg.stop_patience {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best,
        log,
        best_epoch,
    })
}

fn ppl_ids<T: Real>(p: &RnnLmParams<T>, corpus: &[Vec<TokenId>]) -> Result<Perplexity, RnnError> {
    let mut logprob = 0f64;
    let mut tokens = 0;
    for ids in corpus {
        let steps = forward_text(p, ids)?;
        for (st, &y) in steps.iter().zip(ids.iter().chain(std::iter::once(&EOS_ID))) {
            logprob += st.log_q[y as usize].f64();
            tokens += 1;
        }
    }
    Ok(Perplexity::from_logprob(logprob, tokens, corpus.len()))
}

/// Perplexity over every token and sentence end. Tokens must already be
/// mapped into the model's vocabulary.
pub fn ppl_rnn<T: Real, S: AsRef<str>>(p: &RnnLmParams<T>, corpus: &[Vec<S>]) -> Result<Perplexity, RnnError> {
    let ids = corpus
        .iter()
        .map(|s| p.encode(s))
        .collect::<Result<Vec<_>, _>>()?;
    ppl_ids(p, &ids)
}
