//! Argument parsing and subcommands.
//!
//! Every option can also be set in the `--config` file under its long
//! name; flags win over the file, the file over built-in defaults.
//!
//! Exit codes: 0 success, 2 usage error or missing input, 3 invalid
//! confusion network, 4 numeric failure, 1 anything else.

use std::error::Error;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cnlm::cnbuild::{
    normalize_and_sort, read_cns, validate_cn, write_cns, CnError, CnParams, ConfusionNetwork, Validation,
};
use cnlm::decoder::{SearchParams, ToyScorer};
use cnlm::nbest::{read_nbest, write_nbest, NBestError, NBestList};
use cnlm::ngram::{ppl_ngram, train_kn, FractionalCounts, NGramError, NGramModel};
use cnlm::rnn::{ppl_rnn, train_rnn, Pooling, RnnError, RnnLmParams, Sequence, TrainConfig, TrainData, TrainMode};
use cnlm::text::Vocabulary;

use crate::config::{ConfigError, ConfigFile};
use crate::pipeline::{
    build_networks, cn_counts, decode_all, nbest_sentences, normalize_corpus, prepare_nbest, read_corpus_file,
    run_pipeline, write_training_log, PipelineConfig,
};
use crate::synth::{generate, SynthConfig};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A usage problem: missing or inconsistent inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Exit code for an error, from the first recognized cause in its chain.
pub fn exit_code(error: &anyhow::Error) -> i32 {
    for cause in error.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<io::Error>() {
            if e.kind() == io::ErrorKind::NotFound {
                return EXIT_USAGE;
            }
        }
        if let Some(e) = cause.downcast_ref::<CnError>() {
            if matches!(e, CnError::Invalid { .. } | CnError::ZeroMassBin { .. } | CnError::BadWeight(_)) {
                return EXIT_INVALID;
            }
        }
        if let Some(RnnError::NonFinite(_)) = cause.downcast_ref::<RnnError>() {
            return EXIT_NUMERIC;
        }
        if let Some(NGramError::ZeroProbability { .. }) = cause.downcast_ref::<NGramError>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_OTHER
}

/// `none` or an arc count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArcLimit(pub Option<usize>);

impl FromStr for ArcLimit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(ArcLimit(None));
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected a positive arc count or `none`, got {s:?}")),
            Ok(k) => Ok(ArcLimit(Some(k))),
        }
    }
}

/// Comma-separated list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|x| x.trim().parse::<T>().map_err(|e| format!("{x:?}: {e}")))
            .collect::<Result<_, _>>()
            .map(List)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Beam,
    Dbs,
}

impl FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "beam" => Ok(DecodeMode::Beam),
            "dbs" => Ok(DecodeMode::Dbs),
            _ => Err(format!("unknown decoding mode {s:?} (beam, dbs)")),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cnlm", version, about = "Confusion networks from N-best translations, and language models trained on them")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic parallel corpus.
    GenSynthetic(GenArgs),
    /// Train the toy translation model and write N-best lists.
    Decode(DecodeArgs),
    /// Post-process N-best lists and build confusion networks.
    BuildCn(BuildCnArgs),
    /// Train an expected-count Kneser-Ney model and write it as ARPA.
    TrainNgram(TrainNgramArgs),
    /// Train a GRU language model.
    TrainRnn(TrainRnnArgs),
    /// Perplexity of a model on held-out text.
    Ppl(PplArgs),
    /// Check every network in a file.
    ValidateCn(ValidateArgs),
    /// Run the full experiment and print the perplexity report.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    dev_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Source side of the translation model's training corpus.
    #[arg(long)]
    train_src: Option<PathBuf>,
    /// Target side of the translation model's training corpus.
    #[arg(long)]
    train_tgt: Option<PathBuf>,
    /// Source sentences to translate.
    #[arg(long)]
    input: Option<PathBuf>,
    /// N-best output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Beam graph output file.
    #[arg(long)]
    graph_out: Option<PathBuf>,
    /// `beam` or `dbs`.
    #[arg(long)]
    mode: Option<DecodeMode>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    diversity: Option<f64>,
    /// Hypotheses kept per sentence (default: the beam width).
    #[arg(long)]
    nbest: Option<usize>,
    /// Maximum output length (default: twice the source length plus 5).
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Debug, Args)]
struct NBestInput {
    /// N-best file.
    #[arg(long)]
    nbest: Option<PathBuf>,
    /// Source sentences of the N-best lists, one per list id.
    #[arg(long)]
    src: Option<PathBuf>,
    /// Hypotheses used per list (default: all).
    #[arg(long)]
    n: Option<usize>,
    /// Posterior scale.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct BuildCnArgs {
    #[command(flatten)]
    input: NBestInput,
    /// Output file of confusion networks.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Arc limit per bin, or `none`.
    #[arg(long)]
    max_arcs: Option<ArcLimit>,
    /// Vocabulary file; other words become `<unk>`.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainNgramArgs {
    /// `nbest`, `cn` or `cn+nbest`.
    #[arg(long)]
    source: Option<TrainMode>,
    #[command(flatten)]
    input: NBestInput,
    /// Confusion-network file.
    #[arg(long)]
    cn: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    order: Option<usize>,
    /// Occurrences below this probability are not counted.
    #[arg(long)]
    count_eps: Option<f64>,
    /// ARPA output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainRnnArgs {
    /// `nbest`, `cn` or `cn+nbest`.
    #[arg(long)]
    source: Option<TrainMode>,
    #[command(flatten)]
    input: NBestInput,
    #[arg(long)]
    cn: Option<PathBuf>,
    /// Development text for model selection.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Model output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log output file.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    hyper: RnnHyper,
}

#[derive(Debug, Args)]
struct RnnHyper {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_factor: Option<f64>,
    #[arg(long)]
    lr_patience: Option<usize>,
    #[arg(long)]
    stop_patience: Option<usize>,
    /// Upper bound on training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// `weighted-mean`, `mean` or `max`.
    #[arg(long)]
    pooling: Option<Pooling>,
    /// Clip the global gradient norm (off by default).
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PplArgs {
    /// Held-out text.
    #[arg(long)]
    test: Option<PathBuf>,
    /// ARPA model.
    #[arg(long, conflicts_with = "rnn")]
    arpa: Option<PathBuf>,
    /// GRU model file.
    #[arg(long)]
    rnn: Option<PathBuf>,
    /// Model name in the report line.
    #[arg(long)]
    name: Option<String>,
    /// N-best size in the report line.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    cn: Option<PathBuf>,
    /// Arc limit per bin, or `none`.
    #[arg(long)]
    max_arcs: Option<ArcLimit>,
    /// Allowed deviation of a bin total from one (the default absorbs
    /// 6-decimal score rounding).
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Directory for every artifact.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    dev_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    diversity: Option<f64>,
    /// Comma-separated N-best sizes.
    #[arg(long)]
    nbest_sizes: Option<List<usize>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_arcs: Option<ArcLimit>,
    #[arg(long)]
    order: Option<usize>,
    /// N-best size for the GRU models.
    #[arg(long)]
    rnn_n: Option<usize>,
    /// Comma-separated GRU training modes (empty list: none).
    #[arg(long)]
    rnn_modes: Option<String>,
    #[command(flatten)]
    hyper: RnnHyper,
}

fn required(cfg: &ConfigFile, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
    cfg.resolve_opt(key, flag)?
        .ok_or_else(|| usage(format!("missing required option --{}", key.replace('_', "-"))))
}

fn input_file(path: &Path) -> Result<BufReader<fs::File>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn output_file(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::read(input_file(path)?).with_context(|| format!("reading vocabulary {}", path.display()))
}

/// Bin sums of networks read from files are only exact up to the 6-decimal
/// score quantization.
pub const FILE_SUM_TOLERANCE: f64 = 1e-5;

fn read_networks(path: &Path) -> Result<Vec<ConfusionNetwork>> {
    read_cns(input_file(path)?).with_context(|| format!("reading {}", path.display()))
}

/// Reads an N-best file and attaches each list's source sentence (list ids
/// are 1-based line numbers of the source file).
fn read_nbest_with_sources(nbest: &Path, src: &Path) -> Result<Vec<NBestList>> {
    let mut lists = read_nbest(input_file(nbest)?).with_context(|| format!("reading {}", nbest.display()))?;
    let sources = read_corpus_file(src)?;
    for list in &mut lists {
        let idx = list
            .source_id
            .parse::<usize>()
            .ok()
            .filter(|&i| (1..=sources.len()).contains(&i))
            .ok_or_else(|| usage(format!("N-best id {:?} is not a line of {}", list.source_id, src.display())))?;
        list.source = sources[idx - 1].clone();
    }
    Ok(lists)
}

fn load_nbest(cfg: &ConfigFile, input: &NBestInput) -> Result<Vec<NBestList>> {
    let nbest = required(cfg, "nbest", input.nbest.clone())?;
    let src = required(cfg, "src", input.src.clone())?;
    let lists = read_nbest_with_sources(&nbest, &src)?;
    let n = cfg.resolve("n", input.n, usize::MAX)?;
    let alpha = cfg.resolve("alpha", input.alpha, 1.0)?;
    prepare_nbest(&lists, n, alpha).map_err(|e| match e.downcast::<NBestError>() {
        Ok(NBestError::AllEmpty(id)) => usage(format!("every hypothesis of list {id} is empty after post-processing")),
        Ok(other) => other.into(),
        Err(e) => e,
    })
}

fn cmd_gen(cfg: &ConfigFile, a: GenArgs, out: &mut dyn Write) -> Result<()> {
    let dir = required(cfg, "out", a.out)?;
    let d = SynthConfig::default();
    let sc = SynthConfig {
        train: cfg.resolve("train_size", a.train_size, d.train)?,
        dev: cfg.resolve("dev_size", a.dev_size, d.dev)?,
        test: cfg.resolve("test_size", a.test_size, d.test)?,
        seed: cfg.resolve("seed", a.seed, d.seed)?,
    };
    let data = generate(&sc);
    data.write_to_dir(&dir)
        .with_context(|| format!("writing corpus to {}", dir.display()))?;
    writeln!(out, "wrote {}/{}/{} sentence pairs to {}", sc.train, sc.dev, sc.test, dir.display())?;
    Ok(())
}

fn cmd_decode(cfg: &ConfigFile, a: DecodeArgs, out: &mut dyn Write) -> Result<()> {
    let train_src = read_corpus_file(&required(cfg, "train_src", a.train_src)?)?;
    let train_tgt = read_corpus_file(&required(cfg, "train_tgt", a.train_tgt)?)?;
    let input = read_corpus_file(&required(cfg, "input", a.input)?)?;
    let out_path = required(cfg, "out", a.out)?;
    if train_src.len() != train_tgt.len() {
        return Err(usage(format!(
            "training corpus sides differ in length ({} vs {})",
            train_src.len(),
            train_tgt.len()
        )));
    }
    let beam = cfg.resolve("beam", a.beam, 50)?;
    let params = match cfg.resolve("mode", a.mode, DecodeMode::Beam)? {
        DecodeMode::Beam => SearchParams::beam(beam, 1),
        DecodeMode::Dbs => SearchParams::diverse(
            beam,
            cfg.resolve("groups", a.groups, 1)?,
            cfg.resolve("diversity", a.diversity, 0.5)?,
            1,
        ),
    };
    let n = cfg.resolve("nbest", a.nbest, beam)?;
    let max_len = cfg.resolve_opt("max_len", a.max_len)?;
    let pairs: Vec<_> = train_src.into_iter().zip(train_tgt).collect();
    let scorer = ToyScorer::train(&pairs)?;

    let mut graph_out = match cfg.resolve_opt("graph_out", a.graph_out)? {
        Some(p) => Some(output_file(&p)?),
        None => None,
    };
    let lists = decode_all(
        &scorer,
        &input,
        &params,
        max_len,
        graph_out.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut g) = graph_out {
        g.flush()?;
    }
    let lists: Vec<NBestList> = lists.iter().map(|l| l.truncated(n, 1.0)).collect();
    let mut w = output_file(&out_path)?;
    write_nbest(&mut w, &lists)?;
    w.flush()?;
    writeln!(out, "decoded {} sentences into {}", lists.len(), out_path.display())?;
    Ok(())
}

fn cmd_build_cn(cfg: &ConfigFile, a: BuildCnArgs, out: &mut dyn Write) -> Result<()> {
    let lists = load_nbest(cfg, &a.input)?;
    let out_path = required(cfg, "out", a.out)?;
    let vocab = match cfg.resolve_opt("vocab", a.vocab)? {
        Some(p) => Some(read_vocab(&p)?),
        None => None,
    };
    let max_arcs = cfg.resolve("max_arcs", a.max_arcs, ArcLimit(Some(cnlm::cnbuild::DEFAULT_MAX_ARCS)))?;
    let params = CnParams {
        max_arcs: max_arcs.0,
        vocab: vocab.as_ref(),
    };
    let cns = build_networks(&lists, &params)?;
    let mut w = output_file(&out_path)?;
    write_cns(&mut w, &cns)?;
    w.flush()?;
    writeln!(out, "built {} confusion networks into {}", cns.len(), out_path.display())?;
    Ok(())
}

/// Training material of the requested kind, normalized and OOV-mapped.
fn training_inputs(
    cfg: &ConfigFile,
    source: TrainMode,
    input: &NBestInput,
    cn: Option<PathBuf>,
    vocab: Option<&Vocabulary>,
) -> Result<(Vec<Vec<String>>, Vec<ConfusionNetwork>)> {
    let sentences = if matches!(source, TrainMode::NBest | TrainMode::CnNBest) {
        nbest_sentences(&load_nbest(cfg, input)?, vocab)
    } else {
        Vec::new()
    };
    let cns = if matches!(source, TrainMode::Cn | TrainMode::CnNBest) {
        let rules = Validation {
            max_arcs: None,
            sum_tolerance: FILE_SUM_TOLERANCE,
        };
        let mut cns = Vec::new();
        for cn in read_networks(&required(cfg, "cn", cn)?)? {
            validate_cn(&cn, &rules)?;
            // undo the quantization drift
            cns.push(normalize_and_sort(cn)?);
        }
        match vocab {
            Some(v) => cns
                .into_iter()
                .map(|cn| cnlm::cnbuild::finalize(cn, &CnParams { max_arcs: None, vocab: Some(v) }))
                .collect::<Result<_, _>>()?,
            None => cns,
        }
    } else {
        Vec::new()
    };
    Ok((sentences, cns))
}

fn cmd_train_ngram(cfg: &ConfigFile, a: TrainNgramArgs, out: &mut dyn Write) -> Result<()> {
    let source = cfg.resolve("source", a.source, TrainMode::NBest)?;
    let out_path = required(cfg, "out", a.out)?;
    let order = cfg.resolve("order", a.order, 3)?;
    if order == 0 {
        return Err(usage("--order must be at least 1"));
    }
    let eps = cfg.resolve("count_eps", a.count_eps, cnlm::ngram::DEFAULT_EPS)?;
    let vocab = match cfg.resolve_opt("vocab", a.vocab)? {
        Some(p) => Some(read_vocab(&p)?),
        None => None,
    };
    let (sentences, cns) = training_inputs(cfg, source, &a.input, a.cn, vocab.as_ref())?;
    let mut counts = FractionalCounts::new(order);
    if !sentences.is_empty() {
        counts.merge(cnlm::ngram::count_text(&sentences, order));
    }
    if !cns.is_empty() {
        counts.merge(cn_counts(&cns, order, eps));
    }
    let model = train_kn(&counts, vocab.as_ref())?;
    let mut w = output_file(&out_path)?;
    model.model.write_arpa(&mut w)?;
    w.flush()?;
    writeln!(
        out,
        "trained order-{order} model from {source} data into {}",
        out_path.display()
    )?;
    Ok(())
}

fn train_config(cfg: &ConfigFile, h: &RnnHyper, base: TrainConfig) -> Result<TrainConfig> {
    let c = TrainConfig {
        dim: cfg.resolve("dim", h.dim, base.dim)?,
        batch_size: cfg.resolve("batch_size", h.batch_size, base.batch_size)?,
        lr: cfg.resolve("lr", h.lr, base.lr)?,
        lr_factor: cfg.resolve("lr_factor", h.lr_factor, base.lr_factor)?,
        lr_patience: cfg.resolve("lr_patience", h.lr_patience, base.lr_patience)?,
        stop_patience: cfg.resolve("stop_patience", h.stop_patience, base.stop_patience)?,
        max_epochs: cfg.resolve("epochs", h.epochs, base.max_epochs)?,
        pooling: cfg.resolve("pooling", h.pooling, base.pooling)?,
        clip_norm: cfg.resolve_opt("clip_norm", h.clip_norm)?.or(base.clip_norm),
        seed: cfg.resolve("seed", h.seed, base.seed)?,
        ..base
    };
    let positive = [
        c.dim,
        c.batch_size,
        c.lr_patience,
        c.stop_patience,
        c.max_epochs,
    ];
    if positive.contains(&0) || !(c.lr > 0.0) || !(c.lr_factor > 0.0) || c.clip_norm.is_some_and(|x| !(x > 0.0)) {
        return Err(usage("training hyperparameters must be positive"));
    }
    Ok(c)
}

fn cmd_train_rnn(cfg: &ConfigFile, a: TrainRnnArgs, out: &mut dyn Write) -> Result<()> {
    let source = cfg.resolve("source", a.source, TrainMode::Cn)?;
    let out_path = required(cfg, "out", a.out)?;
    let tc = TrainConfig {
        mode: source,
        ..train_config(cfg, &a.hyper, TrainConfig::default())?
    };
    let vocab_file = match cfg.resolve_opt("vocab", a.vocab)? {
        Some(p) => Some(read_vocab(&p)?),
        None => None,
    };
    let (sentences, cns) = training_inputs(cfg, source, &a.input, a.cn, vocab_file.as_ref())?;
    let vocab = match vocab_file {
        Some(v) => v,
        None => {
            let mut v = Vocabulary::build(&sentences, 1).unwrap_or_default();
            for arc in cns.iter().flat_map(|c| c.bins.iter()).flat_map(|b| b.arcs.iter()) {
                v.insert(&arc.token);
            }
            v
        }
    };
    let dev = match cfg.resolve_opt("dev", a.dev)? {
        Some(p) => normalize_corpus(&read_corpus_file(&p)?, Some(&vocab)),
        None => Vec::new(),
    };
    let data = TrainData {
        nbest: sentences.iter().map(|s| Sequence::from_text(&vocab.encode(s))).collect(),
        cn: cns
            .iter()
            .map(|c| Sequence::from_cn(c, &vocab))
            .collect::<Result<_, _>>()?,
        dev: dev.iter().map(|s| vocab.encode(s)).collect(),
    };
    let outcome = train_rnn(vocab, &data, &tc)?;
    let mut w = output_file(&out_path)?;
    outcome.params.save(&mut w)?;
    w.flush()?;
    if let Some(log_path) = cfg.resolve_opt::<PathBuf>("log", a.log)? {
        write_training_log(&log_path, &outcome)?;
    }
    for r in &outcome.log {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

fn cmd_ppl(cfg: &ConfigFile, a: PplArgs, out: &mut dyn Write) -> Result<()> {
    let test = read_corpus_file(&required(cfg, "test", a.test)?)?;
    let n = cfg.resolve("n", a.n, 0)?;
    let arpa = cfg.resolve_opt::<PathBuf>("arpa", a.arpa)?;
    let rnn = cfg.resolve_opt::<PathBuf>("rnn", a.rnn)?;
    let (default_name, ppl) = match (arpa, rnn) {
        (Some(p), None) => {
            let model = NGramModel::read_arpa(input_file(&p)?).with_context(|| format!("reading {}", p.display()))?;
            let vocab = Vocabulary::from_tokens(model.vocab());
            ("ngram", ppl_ngram(&model, &normalize_corpus(&test, Some(&vocab)))?.ppl())
        }
        (None, Some(p)) => {
            let model = RnnLmParams::load(input_file(&p)?).with_context(|| format!("reading {}", p.display()))?;
            let corpus = normalize_corpus(&test, Some(model.vocab()));
            ("rnn", ppl_rnn(&model, &corpus)?.ppl())
        }
        _ => return Err(usage("give exactly one of --arpa and --rnn")),
    };
    if !ppl.is_finite() {
        return Err(RnnError::NonFinite("perplexity".into()).into());
    }
    let name = cfg.resolve("name", a.name, default_name.to_owned())?;
    writeln!(out, "model={name} N={n} ppl={ppl:.2}")?;
    Ok(())
}

fn cmd_validate(cfg: &ConfigFile, a: ValidateArgs, out: &mut dyn Write) -> Result<()> {
    let path = required(cfg, "cn", a.cn)?;
    let cns = read_networks(&path)?;
    let rules = Validation {
        max_arcs: cfg.resolve("max_arcs", a.max_arcs, ArcLimit(Some(cnlm::cnbuild::DEFAULT_MAX_ARCS)))?.0,
        sum_tolerance: cfg.resolve("tolerance", a.tolerance, FILE_SUM_TOLERANCE)?,
    };
    for cn in &cns {
        validate_cn(cn, &rules)?;
    }
    writeln!(out, "{} confusion networks valid", cns.len())?;
    Ok(())
}

fn cmd_run(cfg: &ConfigFile, a: RunArgs, out: &mut dyn Write) -> Result<()> {
    let d = PipelineConfig::default();
    let modes = match cfg.resolve_opt("rnn_modes", a.rnn_modes)? {
        Some(s) if s.trim().is_empty() => Vec::new(),
        Some(s) => s.parse::<List<TrainMode>>().map_err(usage)?.0,
        None => d.rnn_modes.clone(),
    };
    let pc = PipelineConfig {
        work_dir: required(cfg, "work_dir", a.work_dir)?,
        seed: cfg.resolve("seed", a.hyper.seed, d.seed)?,
        train_size: cfg.resolve("train_size", a.train_size, d.train_size)?,
        dev_size: cfg.resolve("dev_size", a.dev_size, d.dev_size)?,
        test_size: cfg.resolve("test_size", a.test_size, d.test_size)?,
        beam: cfg.resolve("beam", a.beam, d.beam)?,
        groups: cfg.resolve("groups", a.groups, d.groups)?,
        diversity: cfg.resolve("diversity", a.diversity, d.diversity)?,
        max_len: None,
        nbest_sizes: cfg.resolve("nbest_sizes", a.nbest_sizes, List(d.nbest_sizes.clone()))?.0,
        alpha: cfg.resolve("alpha", a.alpha, d.alpha)?,
        max_arcs: cfg.resolve("max_arcs", a.max_arcs, ArcLimit(d.max_arcs))?.0,
        count_eps: d.count_eps,
        order: cfg.resolve("order", a.order, d.order)?,
        rnn_n: cfg.resolve("rnn_n", a.rnn_n, d.rnn_n)?,
        rnn_modes: modes,
        rnn: train_config(cfg, &a.hyper, d.rnn.clone())?,
    };
    if pc.nbest_sizes.contains(&0) || pc.rnn_n == 0 || pc.order == 0 {
        return Err(usage("N-best sizes and the n-gram order must be positive"));
    }
    let report = run_pipeline(&pc)?;
    write!(out, "{report}")?;
    Ok(())
}

/// Parses `args` (program name first), runs the command writing its
/// report to `out`, and returns the process exit code. Errors go to
/// standard error.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::GenSynthetic(a) => cmd_gen(&cfg, a, out),
        Command::Decode(a) => cmd_decode(&cfg, a, out),
        Command::BuildCn(a) => cmd_build_cn(&cfg, a, out),
        Command::TrainNgram(a) => cmd_train_ngram(&cfg, a, out),
        Command::TrainRnn(a) => cmd_train_rnn(&cfg, a, out),
        Command::Ppl(a) => cmd_ppl(&cfg, a, out),
        Command::ValidateCn(a) => cmd_validate(&cfg, a, out),
        Command::Run(a) => cmd_run(&cfg, a, out),
    }
}
