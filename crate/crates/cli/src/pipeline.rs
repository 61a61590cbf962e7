//! Stages shared by the subcommands, and the full experiment: synthetic
//! corpus → toy translation model → N-best lists → confusion networks →
//! n-gram and GRU language models → perplexity report.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};

use cnlm::cnbuild::{build_cn, validate_cn, write_cns, CnParams, ConfusionNetwork, Validation, DEFAULT_MAX_ARCS};
use cnlm::decoder::{search, SearchParams, ToyScorer};
use cnlm::nbest::{postprocess_nbest, write_nbest, NBestError, NBestList};
use cnlm::ngram::{add_cn_counts, count_text, ppl_ngram, train_kn, CnCountOptions, FractionalCounts, KnModel, DEFAULT_EPS};
use cnlm::rnn::{ppl_rnn, train_rnn, Sequence, TrainConfig, TrainData, TrainMode, TrainOutcome};
use cnlm::text::{map_oov, normalize_sentence, Vocabulary};

use crate::stage_seed;
use crate::synth::{generate, SynthConfig, SyntheticData};

/// Everything the full experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub work_dir: PathBuf,
    pub seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub beam: usize,
    pub groups: usize,
    pub diversity: f64,
    /// Maximum hypothesis length; `None` for `2 * source length + 5`.
    pub max_len: Option<usize>,
    pub nbest_sizes: Vec<usize>,
    /// Posterior scaling of N-best log-likelihoods.
    pub alpha: f64,
    pub max_arcs: Option<usize>,
    pub count_eps: f64,
    pub order: usize,
    /// N-best size the GRU models are trained at.
    pub rnn_n: usize,
    pub rnn_modes: Vec<TrainMode>,
    pub rnn: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        PipelineConfig {
            work_dir: PathBuf::from("work"),
            seed: synth.seed,
            train_size: synth.train,
            dev_size: synth.dev,
            test_size: synth.test,
            beam: 50,
            groups: 1,
            diversity: 0.5,
            max_len: None,
            nbest_sizes: vec![1, 10, 20, 50],
            alpha: 1.0,
            max_arcs: Some(DEFAULT_MAX_ARCS),
            count_eps: DEFAULT_EPS,
            order: 3,
            rnn_n: 20,
            rnn_modes: vec![TrainMode::Cn, TrainMode::CnNBest],
            rnn: TrainConfig {
                max_epochs: 40,
                ..TrainConfig::default()
            },
        }
    }
}

/// One line of the perplexity report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub n: usize,
    pub ppl: f64,
}

impl fmt::Display for ReportRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "model={} N={} ppl={:.2}", self.model, self.n, self.ppl)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn get(&self, model: &str, n: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.model == model && r.n == n).map(|r| r.ppl)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

pub fn default_max_len(source_len: usize) -> usize {
    2 * source_len + 5
}

/// Decodes every source sentence; lists are identified by line number.
pub fn decode_all(
    scorer: &ToyScorer,
    sources: &[Vec<String>],
    params: &SearchParams,
    max_len: Option<usize>,
    mut graphs: Option<&mut dyn Write>,
) -> Result<Vec<NBestList>> {
    let mut lists = Vec::with_capacity(sources.len());
    for (i, source) in sources.iter().enumerate() {
        let id = (i + 1).to_string();
        let params = SearchParams {
            max_len: max_len.unwrap_or_else(|| default_max_len(source.len())),
            ..*params
        };
        let result = search(scorer, source, &params).with_context(|| format!("decoding sentence {id}"))?;
        if let Some(out) = graphs.as_deref_mut() {
            result.graph.write(&mut *out, &id, cnlm::decoder::Scorer::vocab(scorer))?;
        }
        lists.push(NBestList::new(id, source.clone(), result.hypotheses));
    }
    Ok(lists)
}

/// Keeps the `n` best of each list and post-processes it.
pub fn prepare_nbest(lists: &[NBestList], n: usize, alpha: f64) -> Result<Vec<NBestList>> {
    lists
        .iter()
        .map(|l| postprocess_nbest(&l.truncated(n, alpha), alpha).map_err(Into::into))
        .collect()
}

/// Like [`prepare_nbest`], but drops (with a warning) lists left without
/// any hypothesis, as the toy decoder sometimes only finds punctuation.
pub fn prepare_usable_nbest(lists: &[NBestList], n: usize, alpha: f64) -> Result<Vec<NBestList>> {
    let mut kept = Vec::with_capacity(lists.len());
    let mut dropped = 0;
    for l in lists {
        match postprocess_nbest(&l.truncated(n, alpha), alpha) {
            Ok(l) => kept.push(l),
            Err(NBestError::AllEmpty(_)) => dropped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if dropped > 0 {
        warn!("N={n}: {dropped} of {} translations are empty after post-processing, skipped", lists.len());
    }
    anyhow::ensure!(!kept.is_empty(), "N={n}: no usable translation");
    Ok(kept)
}

/// Every hypothesis as a normalized training sentence, OOVs mapped.
pub fn nbest_sentences(lists: &[NBestList], vocab: Option<&Vocabulary>) -> Vec<Vec<String>> {
    lists
        .iter()
        .flat_map(|l| l.hypotheses.iter())
        .map(|h| normalize_text(&h.tokens, vocab))
        .collect()
}

pub fn normalize_text(tokens: &[String], vocab: Option<&Vocabulary>) -> Vec<String> {
    let normalized = normalize_sentence(tokens);
    match vocab {
        Some(v) => map_oov(&normalized, v),
        None => normalized,
    }
}

pub fn normalize_corpus(corpus: &[Vec<String>], vocab: Option<&Vocabulary>) -> Vec<Vec<String>> {
    corpus.iter().map(|s| normalize_text(s, vocab)).collect()
}

/// Builds and validates a network per list.
pub fn build_networks(lists: &[NBestList], params: &CnParams) -> Result<Vec<ConfusionNetwork>> {
    let rules = Validation {
        max_arcs: params.max_arcs,
        ..Validation::default()
    };
    lists
        .iter()
        .map(|l| {
            let cn = build_cn(l, params)?;
            validate_cn(&cn, &rules)?;
            Ok(cn)
        })
        .collect()
}

pub fn cn_counts(cns: &[ConfusionNetwork], order: usize, eps: f64) -> FractionalCounts {
    let opts = CnCountOptions {
        order,
        eps,
        ..CnCountOptions::default()
    };
    let mut counts = FractionalCounts::new(order);
    for cn in cns {
        add_cn_counts(&mut counts, cn, &opts);
    }
    counts
}

pub fn text_model(corpus: &[Vec<String>], order: usize, vocab: Option<&Vocabulary>) -> Result<KnModel> {
    Ok(train_kn(&count_text(corpus, order), vocab)?)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

fn rnn_sequences(
    cns: &[ConfusionNetwork],
    sentences: &[Vec<String>],
    dev: &[Vec<String>],
    vocab: &Vocabulary,
) -> Result<TrainData> {
    Ok(TrainData {
        cn: cns
            .iter()
            .map(|cn| Sequence::from_cn(cn, vocab))
            .collect::<Result<_, _>>()?,
        nbest: sentences
            .iter()
            .map(|s| Sequence::from_text(&vocab.encode(s)))
            .collect(),
        dev: dev.iter().map(|s| vocab.encode(s)).collect(),
    })
}

pub fn write_training_log(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    write_file(path, |out| {
        for r in &outcome.log {
            writeln!(out, "{r}")?;
        }
        Ok(())
    })
}

/// Runs the whole experiment, writing every artifact under `work_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Report> {
    let dir = &cfg.work_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let data = generate(&SynthConfig {
        train: cfg.train_size,
        dev: cfg.dev_size,
        test: cfg.test_size,
        seed: cfg.seed,
    });
    data.write_to_dir(&dir.join("corpus"))?;
    run_on_data(cfg, &data)
}

/// The experiment on an existing corpus.
pub fn run_on_data(cfg: &PipelineConfig, data: &SyntheticData) -> Result<Report> {
    let dir = &cfg.work_dir;
    let max_n = cfg.nbest_sizes.iter().copied().max().unwrap_or(1).max(cfg.rnn_n);
    anyhow::ensure!(max_n <= cfg.beam, "N = {max_n} exceeds the beam width {}", cfg.beam);

    info!("training translation model on {} pairs", data.train.len());
    let scorer = ToyScorer::train(&data.train.pairs())?;
    let params = SearchParams::diverse(cfg.beam, cfg.groups, cfg.diversity, 1);
    info!("decoding {} sentences, beam {}", data.train.len(), cfg.beam);
    let decoded = decode_all(&scorer, &data.train.source, &params, cfg.max_len, None)?;
    write_file(&dir.join("nbest.txt"), |out| write_nbest(out, &decoded))?;

    // one vocabulary for every model: all words of the largest lists
    let largest = prepare_usable_nbest(&decoded, max_n, cfg.alpha)?;
    let vocab = Vocabulary::build(&nbest_sentences(&largest, None), 1)?;
    write_file(&dir.join("vocab.txt"), |out| vocab.write(out))?;
    let test = normalize_corpus(&data.test.target, Some(&vocab));
    let dev = normalize_corpus(&data.dev.target, Some(&vocab));

    let cn_params = CnParams {
        max_arcs: cfg.max_arcs,
        vocab: Some(&vocab),
    };
    let mut report = Report::default();
    let mut sizes = cfg.nbest_sizes.clone();
    if !cfg.rnn_modes.is_empty() && !sizes.contains(&cfg.rnn_n) {
        sizes.push(cfg.rnn_n);
    }
    let mut rnn_inputs = None;
    for &n in &sizes {
        let lists = prepare_usable_nbest(&decoded, n, cfg.alpha)?;
        let sentences = nbest_sentences(&lists, Some(&vocab));
        let cns = build_networks(&lists, &cn_params)?;
        write_file(&dir.join(format!("cn.{n}.txt")), |out| write_cns(out, &cns))?;

        if cfg.nbest_sizes.contains(&n) {
            let nbest_lm = text_model(&sentences, cfg.order, Some(&vocab))?;
            let cn_lm = train_kn(&cn_counts(&cns, cfg.order, cfg.count_eps), Some(&vocab))?;
            for (name, lm) in [("ngram-nbest", &nbest_lm), ("ngram-cn", &cn_lm)] {
                write_file(&dir.join(format!("{name}.{n}.arpa")), |out| lm.model.write_arpa(out))?;
                let ppl = ppl_ngram(&lm.model, &test)?.ppl();
                info!("{name} N={n}: {ppl:.2}");
                report.rows.push(ReportRow {
                    model: name.to_owned(),
                    n,
                    ppl,
                });
            }
        }
        if n == cfg.rnn_n {
            rnn_inputs = Some((cns, sentences));
        }
    }

    if let Some((cns, sentences)) = rnn_inputs {
        let train_data = rnn_sequences(&cns, &sentences, &dev, &vocab)?;
        for &mode in &cfg.rnn_modes {
            let name = format!("rnn-{mode}");
            let rcfg = TrainConfig {
                mode,
                seed: stage_seed(cfg.seed, &name),
                ..cfg.rnn.clone()
            };
            info!("training {name} at N={}", cfg.rnn_n);
            let outcome = train_rnn(vocab.clone(), &train_data, &rcfg)?;
            write_file(&dir.join(format!("{name}.{}.bin", cfg.rnn_n)), |out| outcome.params.save(out))?;
            write_training_log(&dir.join(format!("{name}.{}.log", cfg.rnn_n)), &outcome)?;
            let ppl = ppl_rnn(&outcome.params, &test)?.ppl();
            info!("{name} N={}: {ppl:.2}", cfg.rnn_n);
            report.rows.push(ReportRow {
                model: name,
                n: cfg.rnn_n,
                ppl,
            });
        }
    }

    write_file(&dir.join("report.txt"), |out| write!(out, "{report}"))?;
    Ok(report)
}

/// Reads a corpus file, one whitespace-tokenized sentence per line.
pub fn read_corpus_file(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(cnlm::text::read_corpus(BufReader::new(file))?)
}
