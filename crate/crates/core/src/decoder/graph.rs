use std::io::{self, BufRead, Write};

use crate::text::{TokenId, Vocabulary, PAD_ID};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Root,
    /// Still on the beam.
    Open,
    /// Expanded with at least one surviving child.
    Interior,
    /// Ended with `</s>`.
    Completed,
    /// Cut off by `max_len` while still on the beam.
    Truncated,
    /// Fell off the beam.
    Pruned,
}

impl NodeStatus {
    fn flag(self) -> &'static str {
        match self {
            NodeStatus::Root => "R",
            NodeStatus::Open => "O",
            NodeStatus::Interior => "I",
            NodeStatus::Completed => "C",
            NodeStatus::Truncated => "T",
            NodeStatus::Pruned => "P",
        }
    }

    fn from_flag(flag: &str) -> Option<Self> {
        Some(match flag {
            "R" => NodeStatus::Root,
            "O" => NodeStatus::Open,
            "I" => NodeStatus::Interior,
            "C" => NodeStatus::Completed,
            "T" => NodeStatus::Truncated,
            "P" => NodeStatus::Pruned,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub parent: Option<NodeId>,
    pub token: TokenId,
    pub logprob: f64,
    pub status: NodeStatus,
}

/// Search tree rooted at `<pad>`. Each non-root node is an arc carrying one
/// token and its log-probability given the path above it.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamGraph {
    nodes: Vec<GraphNode>,
}

impl Default for BeamGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl BeamGraph {
    pub fn new() -> Self {
        BeamGraph {
            nodes: vec![GraphNode {
                parent: None,
                token: PAD_ID,
                logprob: 0.0,
                status: NodeStatus::Root,
            }],
        }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn add(&mut self, parent: NodeId, token: TokenId, logprob: f64, status: NodeStatus) -> NodeId {
        self.nodes.push(GraphNode {
            parent: Some(parent),
            token,
            logprob,
            status,
        });
        self.nodes.len() - 1
    }

    pub(crate) fn set_status(&mut self, node: NodeId, status: NodeStatus) {
        if self.nodes[node].status != NodeStatus::Root {
            self.nodes[node].status = status;
        }
    }

    pub fn node(&self, id: NodeId) -> &GraphNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tokens from the root (exclusive) down to `node`, and the summed arc
    /// log-probabilities along that path.
    pub fn path(&self, node: NodeId) -> (Vec<TokenId>, f64) {
        let mut tokens = Vec::new();
        let mut arcs = Vec::new();
        let mut cur = node;
        while let Some(parent) = self.nodes[cur].parent {
            tokens.push(self.nodes[cur].token);
            arcs.push(self.nodes[cur].logprob);
            cur = parent;
        }
        tokens.reverse();
        let total = arcs.iter().rev().sum();
        (tokens, total)
    }

    /// One tab-separated record per node:
    /// `graph_id node_id parent_id token logprob flags`; the root's parent
    /// is `-1`.
    pub fn write<W: Write>(&self, mut out: W, graph_id: &str, vocab: &Vocabulary) -> io::Result<()> {
        for (id, n) in self.nodes.iter().enumerate() {
            let parent = n.parent.map_or(-1, |p| p as i64);
            writeln!(
                out,
                "{graph_id}\t{id}\t{parent}\t{}\t{:.6}\t{}",
                vocab.token(n.token),
                n.logprob,
                n.status.flag()
            )?;
        }
        Ok(())
    }
}

/// A parsed graph record, kept as strings so it can be checked against the
/// N-best file without a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphRecord {
    pub graph_id: String,
    pub node: usize,
    pub parent: Option<usize>,
    pub token: String,
    pub logprob: f64,
    pub status: NodeStatus,
}

pub fn read_graph_records<R: BufRead>(input: R) -> io::Result<Vec<GraphRecord>> {
    let bad = |line: usize, msg: &str| {
        io::Error::new(io::ErrorKind::InvalidData, format!("graph line {line}: {msg}"))
    };
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(bad(i + 1, "expected 6 tab-separated fields"));
        }
        let parent: i64 = fields[2].parse().map_err(|_| bad(i + 1, "bad parent id"))?;
        records.push(GraphRecord {
            graph_id: fields[0].to_owned(),
            node: fields[1].parse().map_err(|_| bad(i + 1, "bad node id"))?,
            parent: usize::try_from(parent).ok(),
            token: fields[3].to_owned(),
            logprob: fields[4].parse().map_err(|_| bad(i + 1, "bad logprob"))?,
            status: NodeStatus::from_flag(fields[5]).ok_or_else(|| bad(i + 1, "bad flag"))?,
        });
    }
    Ok(records)
}
