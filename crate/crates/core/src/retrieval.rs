//! Exact top-k cosine retrieval over graph nodes.
//!
//! A succession index holds every subtask node that has at least one
//! successor, so each hit comes with the subtasks observed right after it.
//! An opening index holds coarse-task nodes and pairs each hit with the
//! first subtasks recorded under it; the planner uses it for the very first
//! query of an episode, when no subtask has been completed yet.
//!
//! Index files are plain text:
//!
//! ```text
//! eventnav-index/1<TAB>256<TAB>successions<TAB>feature-hash/v1;dim=256;seed=0
//! 3 1.2500000000000000e-1 -6.2500000000000000e-2 ...
//! ```

use std::cmp::Ordering;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::embed::{embed, EmbedError, Embedder, EmbeddingVector};
use crate::kg::{EventGraph, EventNode, KgError, NodeId, NodeKind};
use crate::text::single_line;

pub const INDEX_FORMAT: &str = "eventnav-index/1";
pub const NO_KNOWLEDGE: &str = "no relevant knowledge found";

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index was built with {index:?} but queried with {query:?}")]
    EmbedderMismatch { index: String, query: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexScope {
    /// Subtask nodes with at least one sequential successor.
    Successions,
    /// Coarse-task nodes, paired with the subtasks that open their sequences.
    Openings,
}

impl IndexScope {
    fn as_str(self) -> &'static str {
        match self {
            IndexScope::Successions => "successions",
            IndexScope::Openings => "openings",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub dimension: usize,
    pub embedder: String,
    pub scope: IndexScope,
    entries: Vec<(NodeId, EmbeddingVector)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub node: EventNode,
    pub similarity: f64,
    pub successors: Vec<(EventNode, u64)>,
}

impl RetrievalIndex {
    pub fn empty(embedder: &dyn Embedder, scope: IndexScope) -> Self {
        Self {
            dimension: embedder.dimension(),
            embedder: embedder.identity(),
            scope,
            entries: Vec::new(),
        }
    }

    /// Indexes every subtask node with out-degree at least one, in id order.
    pub fn build(graph: &EventGraph, embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        let ids: Vec<NodeId> = graph
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Subtask && graph.out_degree(n.id) > 0)
            .map(|n| n.id)
            .collect();
        Self::embed_nodes(graph, embedder, IndexScope::Successions, ids)
    }

    /// Indexes every node that is the coarse task of at least one sequence.
    pub fn build_openings(graph: &EventGraph, embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        let mut ids: Vec<NodeId> = graph.sequences().iter().map(|r| r.coarse_id).collect();
        ids.sort();
        ids.dedup();
        Self::embed_nodes(graph, embedder, IndexScope::Openings, ids)
    }

    fn embed_nodes(
        graph: &EventGraph,
        embedder: &dyn Embedder,
        scope: IndexScope,
        ids: Vec<NodeId>,
    ) -> Result<Self, RetrievalError> {
        let entries = ids
            .into_par_iter()
            .map(|id| Ok((id, embed(embedder, &graph.node(id)?.text)?)))
            .collect::<Result<Vec<_>, RetrievalError>>()?;
        Ok(Self {
            dimension: embedder.dimension(),
            embedder: embedder.identity(),
            scope,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(NodeId, EmbeddingVector)] {
        &self.entries
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    /// Top-`k` nodes by cosine similarity to `text`, ties broken by node id.
    pub fn query(
        &self,
        graph: &EventGraph,
        embedder: &dyn Embedder,
        text: &str,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if embedder.identity() != self.embedder {
            return Err(RetrievalError::EmbedderMismatch {
                index: self.embedder.clone(),
                query: embedder.identity(),
            });
        }
        let q = embed(embedder, text)?;
        let mut scored: Vec<(f64, NodeId)> = self.entries.iter().map(|(id, v)| (q.cosine(v), *id)).collect();
        let by_rank = |a: &(f64, NodeId), b: &(f64, NodeId)| -> Ordering { b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)) };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_rank);
        scored
            .into_iter()
            .map(|(similarity, id)| {
                let successors = match self.scope {
                    IndexScope::Successions => graph.successors(id)?,
                    IndexScope::Openings => graph.opening_subtasks(id)?,
                };
                Ok(RetrievalHit {
                    node: graph.node(id)?.clone(),
                    similarity,
                    successors: successors.into_iter().map(|(n, w)| (n.clone(), w)).collect(),
                })
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "{INDEX_FORMAT}\t{}\t{}\t{}", self.dimension, self.scope.as_str(), self.embedder)?;
        for (id, v) in &self.entries {
            write!(out, "{id}")?;
            for x in v.values() {
                write!(out, " {x:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self, RetrievalError> {
        let mut lines = reader.lines();
        let fail = |line: usize, message: String| RetrievalError::Format { line, message };
        let header = lines.next().ok_or_else(|| fail(1, "missing header".into()))??;
        let parts: Vec<&str> = header.splitn(4, '\t').collect();
        if parts.len() != 4 || parts[0] != INDEX_FORMAT {
            return Err(fail(1, "bad header".into()));
        }
        let dimension: usize = parts[1].parse().map_err(|_| fail(1, "bad dimension".into()))?;
        let scope = match parts[2] {
            "successions" => IndexScope::Successions,
            "openings" => IndexScope::Openings,
            other => return Err(fail(1, format!("unknown scope {other:?}"))),
        };
        let mut entries: Vec<(NodeId, EmbeddingVector)> = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let id: u32 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| fail(line_no, "bad node id".into()))?;
            let values = fields
                .map(|f| f.parse::<f64>().map_err(|e| fail(line_no, e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != dimension {
                return Err(fail(line_no, format!("expected {dimension} values, found {}", values.len())));
            }
            if entries.last().is_some_and(|(prev, _)| prev.0 >= id) {
                return Err(fail(line_no, "node ids must be strictly increasing".into()));
            }
            entries.push((NodeId(id), EmbeddingVector::from_unit(values)));
        }
        Ok(Self {
            dimension,
            embedder: parts[3].to_string(),
            scope,
            entries,
        })
    }
}

/// Renders hits as prompt lines, one per (similar subtask, successor) pair:
/// `<rank>. [<similarity>] <similar> => <successor> (weight <w>)`.
pub fn format_knowledge(hits: &[RetrievalHit]) -> String {
    let lines: Vec<String> = hits
        .iter()
        .enumerate()
        .flat_map(|(rank, hit)| {
            hit.successors.iter().map(move |(succ, w)| {
                format!(
                    "{}. [{:.3}] {} => {} (weight {})",
                    rank + 1,
                    hit.similarity,
                    single_line(&hit.node.text),
                    single_line(&succ.text),
                    w
                )
            })
        })
        .collect();
    if lines.is_empty() {
        NO_KNOWLEDGE.to_string()
    } else {
        lines.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeLine {
    pub rank: usize,
    pub similar: String,
    pub successor: String,
    pub weight: u64,
}

/// Inverse of one [`format_knowledge`] line.
pub fn parse_knowledge_line(line: &str) -> Option<KnowledgeLine> {
    let (rank, rest) = line.trim().split_once(". [")?;
    let (_, rest) = rest.split_once("] ")?;
    let (body, weight) = rest.rsplit_once(" (weight ")?;
    let weight = weight.strip_suffix(')')?.parse().ok()?;
    let (similar, successor) = body.split_once(" => ")?;
    Some(KnowledgeLine {
        rank: rank.parse().ok()?,
        similar: similar.to_string(),
        successor: successor.to_string(),
        weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEmbedder;
    use crate::kg::{Dataset, TaskSequence};

    fn graph(seqs: &[(&str, &[&str])]) -> EventGraph {
        let seqs: Vec<_> = seqs
            .iter()
            .map(|(c, s)| TaskSequence::new(*c, s.iter().copied(), Dataset::R2r, "t"))
            .collect();
        EventGraph::from_sequences(&seqs).unwrap()
    }

    #[test]
    fn empty_graph_empty_index() {
        let e = HashingEmbedder::default();
        let idx = RetrievalIndex::build(&EventGraph::new(), &e).unwrap();
        assert!(idx.is_empty());
        assert!(idx.query(&EventGraph::new(), &e, "anything", 5).unwrap().is_empty());
    }

    #[test]
    fn only_nodes_with_successors() {
        let g = graph(&[("task", &["alpha step", "beta step", "gamma step"])]);
        let idx = RetrievalIndex::build(&g, &HashingEmbedder::default()).unwrap();
        let texts: Vec<_> = idx.node_ids().map(|id| g.node(id).unwrap().text.clone()).collect();
        assert_eq!(texts, vec!["alpha step", "beta step"]);
    }

    #[test]
    fn exact_text_is_first_hit() {
        let g = graph(&[
            ("task", &["exit the bedroom", "walk down the hall", "enter the kitchen"]),
            ("other", &["open the fridge", "grab the milk"]),
        ]);
        let e = HashingEmbedder::default();
        let idx = RetrievalIndex::build(&g, &e).unwrap();
        let hits = idx.query(&g, &e, "Walk down the hall.", 2).unwrap();
        assert_eq!(hits[0].node.text, "walk down the hall");
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
        assert_eq!(hits[0].successors[0].0.text, "enter the kitchen");
        assert_eq!(idx.query(&g, &e, "hall", 50).unwrap().len(), idx.len());
        assert!(matches!(idx.query(&g, &e, "hall", 0), Err(RetrievalError::InvalidK)));
        assert!(matches!(idx.query(&g, &e, " ", 1), Err(RetrievalError::Embed(EmbedError::EmptyText))));
    }

    #[test]
    fn opening_index_pairs_coarse_with_first_subtask() {
        let g = graph(&[("find the fridge", &["exit the bedroom", "enter the kitchen"])]);
        let e = HashingEmbedder::default();
        let idx = RetrievalIndex::build_openings(&g, &e).unwrap();
        let hits = idx.query(&g, &e, "find the fridge", 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].successors[0].0.text, "exit the bedroom");
    }

    #[test]
    fn embedder_mismatch_is_reported() {
        let g = graph(&[("t", &["a b", "c d"])]);
        let idx = RetrievalIndex::build(&g, &HashingEmbedder::new(64, 1)).unwrap();
        assert!(matches!(
            idx.query(&g, &HashingEmbedder::default(), "a b", 1),
            Err(RetrievalError::EmbedderMismatch { .. })
        ));
    }

    #[test]
    fn knowledge_formatting() {
        assert_eq!(format_knowledge(&[]), NO_KNOWLEDGE);
        let g = graph(&[("t", &["a", "b"]), ("t", &["a", "c"]), ("t", &["a", "c"])]);
        let e = HashingEmbedder::default();
        let idx = RetrievalIndex::build(&g, &e).unwrap();
        let hits = idx.query(&g, &e, "a", 1).unwrap();
        let text = format_knowledge(&hits);
        assert_eq!(text, "1. [1.000] a => c (weight 2)\n1. [1.000] a => b (weight 1)");
        let parsed: Vec<_> = text.lines().map(|l| parse_knowledge_line(l).unwrap()).collect();
        assert_eq!(parsed[0].successor, "c");
        assert_eq!(parsed[1].weight, 1);
        assert_eq!(format_knowledge(&hits), text);
    }

    #[test]
    fn bad_index_file() {
        let text = format!("{INDEX_FORMAT}\t2\tsuccessions\tx\n0 1.0\n");
        assert!(matches!(
            RetrievalIndex::read_from(text.as_bytes()),
            Err(RetrievalError::Format { line: 2, .. })
        ));
    }
}
