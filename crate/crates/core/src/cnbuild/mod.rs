//! Word confusion networks from post-processed N-best lists.
//!
//! Hypotheses are aligned one at a time against a growing mesh, highest
//! posterior first, with a unit-cost edit distance. The raw mesh is then
//! finalized: `*DELETE*` clean-up, arc collapsing under token
//! normalization, arc capping and per-bin normalization.
//!
//! Text format, one network per block:
//!
//! ```text
//! name <source_id>
//! numaligns <K>
//! align <k> <token> <score> <token> <score> ...
//! ```

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use crate::nbest::NBestList;
use crate::text::{normalize_token, Vocabulary, DELETE, UNK};

pub const DEFAULT_MAX_ARCS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum CnError {
    #[error("N-best list for source {0} is empty")]
    EmptyNBest(String),
    #[error("hypothesis weight must lie in (0, 1], got {0}")]
    BadWeight(f64),
    #[error("source {source_id}: bin {bin} has no probability mass")]
    ZeroMassBin { source_id: String, bin: usize },
    #[error("source {source_id}: {reason}")]
    Invalid { source_id: String, reason: String },
    #[error("confusion network line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub token: String,
    pub score: f64,
}

impl Arc {
    pub fn new(token: impl Into<String>, score: f64) -> Self {
        Arc {
            token: token.into(),
            score,
        }
    }

    pub fn is_delete(&self) -> bool {
        self.token == DELETE
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bin {
    pub arcs: Vec<Arc>,
}

impl Bin {
    pub fn new(arcs: Vec<Arc>) -> Self {
        Bin { arcs }
    }

    pub fn total(&self) -> f64 {
        self.arcs.iter().map(|a| a.score).sum()
    }

    pub fn score_of(&self, token: &str) -> Option<f64> {
        self.arcs.iter().find(|a| a.token == token).map(|a| a.score)
    }

    fn only_deletes(&self) -> bool {
        self.arcs.iter().all(Arc::is_delete)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionNetwork {
    pub source_id: String,
    pub bins: Vec<Bin>,
}

impl ConfusionNetwork {
    /// A single path: one arc of score 1 per bin.
    pub fn chain<S: AsRef<str>>(source_id: impl Into<String>, tokens: &[S]) -> Self {
        ConfusionNetwork {
            source_id: source_id.into(),
            bins: tokens
                .iter()
                .map(|t| Bin::new(vec![Arc::new(t.as_ref(), 1.0)]))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// The top arc of every bin, skipping `*DELETE*`.
    pub fn best_path(&self) -> Vec<String> {
        self.bins
            .iter()
            .filter_map(|b| b.arcs.first())
            .filter(|a| !a.is_delete())
            .map(|a| a.token.clone())
            .collect()
    }
}

/// A confusion network under construction. Alongside the bins it keeps the
/// alignment of every hypothesis added so far: `paths[h][k]` is the token
/// hypothesis `h` contributed to bin `k`, or `None` for a gap.
#[derive(Debug, Clone, Default)]
pub struct Mesh {
    bins: Vec<BTreeMap<String, f64>>,
    paths: Vec<Vec<Option<String>>>,
    total: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Move {
    Diagonal,
    Delete,
    Insert,
}

impl Mesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Total weight aligned so far.
    pub fn mass(&self) -> f64 {
        self.total
    }

    pub fn paths(&self) -> &[Vec<Option<String>>] {
        &self.paths
    }

    pub fn bin(&self, k: usize) -> &BTreeMap<String, f64> {
        &self.bins[k]
    }

    /// Adds one hypothesis. Alignment costs: 0 for a token already in the
    /// bin, 1 for a substitution, a skipped bin or a new bin. Among optimal
    /// alignments the traceback prefers the diagonal, then skipping a bin,
    /// then opening a new one.
    pub fn align_hypothesis<S: AsRef<str>>(&mut self, tokens: &[S], weight: f64) -> Result<(), CnError> {
        if !(weight > 0.0 && weight <= 1.0 + 1e-12) {
            return Err(CnError::BadWeight(weight));
        }
        if tokens.is_empty() {
            return Ok(());
        }
        let tokens: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        if self.bins.is_empty() {
            for t in &tokens {
                self.bins.push(BTreeMap::from([((*t).to_owned(), weight)]));
            }
            self.paths
                .push(tokens.iter().map(|t| Some((*t).to_owned())).collect());
            self.total = weight;
            return Ok(());
        }

        let moves = self.align(&tokens);
        let mut path = Vec::with_capacity(moves.len());
        let (mut k, mut j) = (0usize, 0usize);
        for m in moves {
            match m {
                Move::Diagonal => {
                    *self.bins[k].entry(tokens[j].to_owned()).or_insert(0.0) += weight;
                    path.push(Some(tokens[j].to_owned()));
                    k += 1;
                    j += 1;
                }
                Move::Delete => {
                    *self.bins[k].entry(DELETE.to_owned()).or_insert(0.0) += weight;
                    path.push(None);
                    k += 1;
                }
                Move::Insert => {
                    let mut bin = BTreeMap::from([(tokens[j].to_owned(), weight)]);
                    bin.insert(DELETE.to_owned(), self.total);
                    self.bins.insert(k, bin);
                    for p in &mut self.paths {
                        p.insert(k, None);
                    }
                    path.push(Some(tokens[j].to_owned()));
                    k += 1;
                    j += 1;
                }
            }
        }
        self.paths.push(path);
        self.total += weight;
        Ok(())
    }

    /// Edit-distance alignment of `tokens` against the bins.
    fn align(&self, tokens: &[&str]) -> Vec<Move> {
        let (m, n) = (self.bins.len(), tokens.len());
        let w = n + 1;
        let mut cost = vec![0u32; (m + 1) * w];
        for i in 0..=m {
            for j in 0..=n {
                cost[i * w + j] = match (i, j) {
                    (0, 0) => 0,
                    (0, _) => cost[j - 1] + 1,
                    (_, 0) => cost[(i - 1) * w] + 1,
                    _ => {
                        let sub = cost[(i - 1) * w + j - 1] + self.sub_cost(i - 1, tokens[j - 1]);
                        let del = cost[(i - 1) * w + j] + 1;
                        let ins = cost[i * w + j - 1] + 1;
                        sub.min(del).min(ins)
                    }
                };
            }
        }
        let mut moves = Vec::with_capacity(m + n);
        let (mut i, mut j) = (m, n);
        while i > 0 || j > 0 {
            let here = cost[i * w + j];
            if i > 0 && j > 0 && cost[(i - 1) * w + j - 1] + self.sub_cost(i - 1, tokens[j - 1]) == here {
                moves.push(Move::Diagonal);
                i -= 1;
                j -= 1;
            } else if i > 0 && cost[(i - 1) * w + j] + 1 == here {
                moves.push(Move::Delete);
                i -= 1;
            } else {
                moves.push(Move::Insert);
                j -= 1;
            }
        }
        moves.reverse();
        moves
    }

    fn sub_cost(&self, bin: usize, token: &str) -> u32 {
        u32::from(token == DELETE || !self.bins[bin].contains_key(token))
    }

    /// The mesh as an unfinalized network (arcs in token order).
    pub fn to_network(&self, source_id: impl Into<String>) -> ConfusionNetwork {
        ConfusionNetwork {
            source_id: source_id.into(),
            bins: self
                .bins
                .iter()
                .map(|b| Bin::new(b.iter().map(|(t, &s)| Arc::new(t.clone(), s)).collect()))
                .collect(),
        }
    }
}

/// Finalization settings. `max_arcs: None` keeps every arc; with no
/// vocabulary, tokens are normalized but never mapped to `<unk>`.
#[derive(Debug, Clone, Copy)]
pub struct CnParams<'a> {
    pub max_arcs: Option<usize>,
    pub vocab: Option<&'a Vocabulary>,
}

impl Default for CnParams<'_> {
    fn default() -> Self {
        CnParams {
            max_arcs: Some(DEFAULT_MAX_ARCS),
            vocab: None,
        }
    }
}

/// Aligns every hypothesis with positive posterior, pivot first.
pub fn build_mesh(nbest: &NBestList) -> Result<Mesh, CnError> {
    if nbest.hypotheses.is_empty() {
        return Err(CnError::EmptyNBest(nbest.source_id.clone()));
    }
    let mut order: Vec<usize> = (0..nbest.hypotheses.len()).collect();
    order.sort_by(|&a, &b| nbest.posteriors[b].total_cmp(&nbest.posteriors[a]).then(a.cmp(&b)));
    let mut mesh = Mesh::new();
    for i in order {
        let weight = nbest.posteriors[i].min(1.0);
        if weight > 0.0 {
            mesh.align_hypothesis(&nbest.hypotheses[i].tokens, weight)?;
        }
    }
    if mesh.is_empty() {
        return Err(CnError::EmptyNBest(nbest.source_id.clone()));
    }
    Ok(mesh)
}

pub fn build_cn(nbest: &NBestList, params: &CnParams) -> Result<ConfusionNetwork, CnError> {
    let mesh = build_mesh(nbest)?;
    finalize(mesh.to_network(nbest.source_id.clone()), params)
}

pub fn finalize(cn: ConfusionNetwork, params: &CnParams) -> Result<ConfusionNetwork, CnError> {
    let cn = handle_deletes(cn);
    let cn = collapse_equivalent_arcs(cn, params.vocab);
    let cn = match params.max_arcs {
        Some(k) => cap_arcs(cn, k),
        None => cn,
    };
    normalize_and_sort(cn)
}

/// Removes bins holding nothing but `*DELETE*` and merges the `*DELETE*`
/// arcs of every other bin into one.
pub fn handle_deletes(mut cn: ConfusionNetwork) -> ConfusionNetwork {
    cn.bins.retain(|b| !b.only_deletes());
    for bin in &mut cn.bins {
        let mut deleted = None;
        bin.arcs.retain(|a| {
            if a.is_delete() {
                *deleted.get_or_insert(0.0) += a.score;
                false
            } else {
                true
            }
        });
        if let Some(score) = deleted {
            bin.arcs.push(Arc::new(DELETE, score));
        }
    }
    cn
}

/// Normalizes every arc token (case, numbers) and, given a vocabulary,
/// maps unknown tokens to `<unk>`; arcs that become equal are merged.
pub fn collapse_equivalent_arcs(mut cn: ConfusionNetwork, vocab: Option<&Vocabulary>) -> ConfusionNetwork {
    for bin in &mut cn.bins {
        let mut merged: Vec<Arc> = Vec::with_capacity(bin.arcs.len());
        for arc in bin.arcs.drain(..) {
            let mut token = normalize_token(&arc.token);
            if let Some(v) = vocab {
                if !v.contains(&token) {
                    token = UNK.to_owned();
                }
            }
            match merged.iter_mut().find(|a| a.token == token) {
                Some(a) => a.score += arc.score,
                None => merged.push(Arc::new(token, arc.score)),
            }
        }
        bin.arcs = merged;
    }
    cn
}

fn arc_order(a: &Arc, b: &Arc) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.token.cmp(&b.token))
}

/// Keeps the `max_arcs` best arcs of each bin. A bin reduced to a lone
/// `*DELETE*` arc is dropped.
pub fn cap_arcs(mut cn: ConfusionNetwork, max_arcs: usize) -> ConfusionNetwork {
    for bin in &mut cn.bins {
        if bin.arcs.len() > max_arcs {
            bin.arcs.sort_by(arc_order);
            bin.arcs.truncate(max_arcs);
        }
    }
    cn.bins.retain(|b| !b.only_deletes());
    cn
}

/// Scales each bin to sum to one and sorts arcs by descending score.
pub fn normalize_and_sort(mut cn: ConfusionNetwork) -> Result<ConfusionNetwork, CnError> {
    for (k, bin) in cn.bins.iter_mut().enumerate() {
        let total = bin.total();
        if !(total > 0.0 && total.is_finite()) {
            return Err(CnError::ZeroMassBin {
                source_id: cn.source_id.clone(),
                bin: k,
            });
        }
        for arc in &mut bin.arcs {
            arc.score /= total;
        }
        bin.arcs.sort_by(arc_order);
    }
    Ok(cn)
}

/// Checks for [`validate_cn`].
#[derive(Debug, Clone, Copy)]
pub struct Validation {
    pub max_arcs: Option<usize>,
    /// Allowed deviation of a bin total from one.
    pub sum_tolerance: f64,
}

impl Default for Validation {
    fn default() -> Self {
        Validation {
            max_arcs: Some(DEFAULT_MAX_ARCS),
            sum_tolerance: 1e-9,
        }
    }
}

/// Checks every finalized-network invariant: non-empty, bins non-empty and
/// normalized, arcs sorted and unique, scores in `[0, 1]`, at most one
/// `*DELETE*` arc and never on its own, at most `max_arcs` arcs.
pub fn validate_cn(cn: &ConfusionNetwork, rules: &Validation) -> Result<(), CnError> {
    let fail = |reason: String| {
        Err(CnError::Invalid {
            source_id: cn.source_id.clone(),
            reason,
        })
    };
    if cn.bins.is_empty() {
        return fail("network has no bins".into());
    }
    for (k, bin) in cn.bins.iter().enumerate() {
        if bin.arcs.is_empty() {
            return fail(format!("bin {k} is empty"));
        }
        if let Some(max) = rules.max_arcs {
            if bin.arcs.len() > max {
                return fail(format!("bin {k} has {} arcs, limit {max}", bin.arcs.len()));
            }
        }
        if bin.arcs.iter().any(|a| !(0.0..=1.0 + rules.sum_tolerance).contains(&a.score)) {
            return fail(format!("bin {k} has a score outside [0, 1]"));
        }
        if (bin.total() - 1.0).abs() > rules.sum_tolerance {
            return fail(format!("bin {k} sums to {}", bin.total()));
        }
        if bin.arcs.windows(2).any(|w| w[0].score < w[1].score) {
            return fail(format!("bin {k} is not sorted by score"));
        }
        let deletes = bin.arcs.iter().filter(|a| a.is_delete()).count();
        if deletes > 1 {
            return fail(format!("bin {k} has {deletes} {DELETE} arcs"));
        }
        if deletes == bin.arcs.len() {
            return fail(format!("bin {k} holds only {DELETE}"));
        }
        let mut tokens: Vec<&str> = bin.arcs.iter().map(|a| a.token.as_str()).collect();
        tokens.sort_unstable();
        if tokens.windows(2).any(|w| w[0] == w[1]) {
            return fail(format!("bin {k} repeats a token"));
        }
        if let Some(bad) = tokens.iter().find(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return fail(format!("bin {k} has malformed token {bad:?}"));
        }
    }
    Ok(())
}

pub fn write_cn<W: Write>(mut out: W, cn: &ConfusionNetwork) -> io::Result<()> {
    writeln!(out, "name {}", cn.source_id)?;
    writeln!(out, "numaligns {}", cn.bins.len())?;
    for (k, bin) in cn.bins.iter().enumerate() {
        write!(out, "align {k}")?;
        for arc in &bin.arcs {
            write!(out, " {} {:.6}", arc.token, arc.score)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes several networks, separated by blank lines.
pub fn write_cns<W: Write>(mut out: W, cns: &[ConfusionNetwork]) -> io::Result<()> {
    for (i, cn) in cns.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        write_cn(&mut out, cn)?;
    }
    Ok(())
}

pub fn cn_to_string(cn: &ConfusionNetwork) -> String {
    let mut buf = Vec::new();
    write_cn(&mut buf, cn).expect("writing to memory");
    String::from_utf8(buf).expect("tokens are UTF-8")
}

/// Reads every network in a file.
pub fn read_cns<R: BufRead>(input: R) -> Result<Vec<ConfusionNetwork>, CnError> {
    let mut cns = Vec::new();
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()));
    while let Some(first) = lines.next() {
        let (lineno, line) = first?;
        let err = |line: usize, msg: String| CnError::Parse { line, msg };
        let source_id = match line.split_once(' ') {
            Some(("name", id)) if !id.trim().is_empty() => id.trim().to_owned(),
            _ => return Err(err(lineno, "expected `name <id>`".into())),
        };
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| err(lineno + 1, "missing `numaligns` line".into()))??;
        let count: usize = match line.split_whitespace().collect::<Vec<_>>()[..] {
            ["numaligns", k] => k
                .parse()
                .map_err(|_| err(lineno, format!("bad bin count {k:?}")))?,
            _ => return Err(err(lineno, "expected `numaligns <K>`".into())),
        };
        let mut bins = Vec::with_capacity(count);
        for k in 0..count {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| err(lineno + 1 + k, format!("expected {count} align lines")))??;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 2 || fields[0] != "align" {
                return Err(err(lineno, "expected `align <k> ...`".into()));
            }
            if fields[1].parse::<usize>().ok() != Some(k) {
                return Err(err(lineno, format!("expected bin index {k}")));
            }
            let pairs = &fields[2..];
            if pairs.is_empty() || pairs.len() % 2 != 0 {
                return Err(err(lineno, "expected token/score pairs".into()));
            }
            let mut arcs = Vec::with_capacity(pairs.len() / 2);
            for pair in pairs.chunks(2) {
                let score: f64 = pair[1]
                    .parse()
                    .map_err(|_| err(lineno, format!("bad score {:?}", pair[1])))?;
                if !score.is_finite() || score < 0.0 {
                    return Err(err(lineno, format!("bad score {:?}", pair[1])));
                }
                arcs.push(Arc::new(pair[0], score));
            }
            bins.push(Bin::new(arcs));
        }
        cns.push(ConfusionNetwork { source_id, bins });
    }
    Ok(cns)
}

pub fn parse_cn(text: &str) -> Result<ConfusionNetwork, CnError> {
    let mut cns = read_cns(text.as_bytes())?;
    match cns.len() {
        1 => Ok(cns.pop().unwrap()),
        n => Err(CnError::Parse {
            line: 1,
            msg: format!("expected one network, found {n}"),
        }),
    }
}
