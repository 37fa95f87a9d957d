//! Event knowledge graph store.
//!
//! Nodes are deduplicated coarse-task and subtask texts keyed by their
//! normalized form. Edges record that one subtask was observed directly
//! followed by another, weighted by how often that happened. Which subtasks
//! belong to which coarse task is kept as ordered provenance records rather
//! than as edges, so every edge is a sequential-succession edge.
//!
//! The on-disk format is line-delimited JSON:
//!
//! ```text
//! {"kind":"header","format":"vln-eventkg/1"}
//! {"kind":"node","id":0,"text":"Go to the fridge","norm_text":"go to the fridge","node_kind":"coarse","sources":["R2R"]}
//! {"kind":"edge","from_id":1,"to_id":2,"weight":3}
//! {"kind":"seq","coarse_text":"Go to the fridge","subtasks":["exit the bedroom","enter the kitchen"],"dataset":"R2R","record_id":"r2r-17"}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::normalize;

pub const FORMAT_VERSION: &str = "vln-eventkg/1";

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("sequence has no subtasks after normalization")]
    EmptySequence,
    #[error("text normalizes to an empty string: {0:?}")]
    MalformedText(String),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Dense node identifier, assigned in insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dataset {
    #[serde(rename = "ALFRED")]
    Alfred,
    #[serde(rename = "R2R")]
    R2r,
    #[serde(rename = "REVERIE")]
    Reverie,
    #[serde(rename = "custom")]
    Custom,
}

impl Dataset {
    pub const ALL: [Dataset; 4] = [Dataset::Alfred, Dataset::R2r, Dataset::Reverie, Dataset::Custom];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Alfred => "ALFRED",
            Dataset::R2r => "R2R",
            Dataset::Reverie => "REVERIE",
            Dataset::Custom => "custom",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dataset::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown dataset tag {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Coarse,
    Subtask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventNode {
    pub id: NodeId,
    /// First surface form seen for this node.
    pub text: String,
    pub norm_text: String,
    /// `Subtask` once the text has been used as a subtask anywhere.
    pub kind: NodeKind,
    pub sources: BTreeSet<Dataset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequentialEdge {
    pub from_id: NodeId,
    pub to_id: NodeId,
    pub weight: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub coarse_text: String,
    pub subtasks: Vec<String>,
    pub dataset: Dataset,
    pub record_id: String,
}

impl TaskSequence {
    pub fn new(
        coarse_text: impl Into<String>,
        subtasks: impl IntoIterator<Item = impl Into<String>>,
        dataset: Dataset,
        record_id: impl Into<String>,
    ) -> Self {
        Self {
            coarse_text: coarse_text.into(),
            subtasks: subtasks.into_iter().map(Into::into).collect(),
            dataset,
            record_id: record_id.into(),
        }
    }

    /// Checks the sequence invariants without touching any graph.
    pub fn validate(&self) -> Result<(), KgError> {
        if normalize(&self.coarse_text).is_empty() {
            return Err(KgError::MalformedText(self.coarse_text.clone()));
        }
        if self.subtasks.is_empty() {
            return Err(KgError::EmptySequence);
        }
        if self.subtasks.iter().all(|s| normalize(s).is_empty()) {
            return Err(KgError::EmptySequence);
        }
        if let Some(bad) = self.subtasks.iter().find(|s| normalize(s).is_empty()) {
            return Err(KgError::MalformedText(bad.clone()));
        }
        Ok(())
    }
}

/// Provenance record: the inserted sequence plus the node ids it resolved to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceRecord {
    pub sequence: TaskSequence,
    pub coarse_id: NodeId,
    pub subtask_ids: Vec<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub sequence_count: usize,
    pub per_dataset: BTreeMap<Dataset, usize>,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes\t{}", self.node_count)?;
        writeln!(f, "edges\t{}", self.edge_count)?;
        writeln!(f, "sequences\t{}", self.sequence_count)?;
        for (dataset, count) in &self.per_dataset {
            writeln!(f, "sequences[{dataset}]\t{count}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventGraph {
    nodes: Vec<EventNode>,
    by_norm: HashMap<String, NodeId>,
    /// Out-edges per node, keyed by target id.
    out: Vec<BTreeMap<NodeId, u64>>,
    sequences: Vec<SequenceRecord>,
}

impl EventGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from scratch by inserting every sequence in order.
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a TaskSequence>) -> Result<Self, KgError> {
        let mut graph = Self::new();
        for seq in seqs {
            graph.insert_sequence(seq.clone())?;
        }
        Ok(graph)
    }

    pub fn nodes(&self) -> &[EventNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&EventNode, KgError> {
        self.nodes.get(id.index()).ok_or(KgError::UnknownNode(id))
    }

    pub fn lookup(&self, text: &str) -> Option<&EventNode> {
        self.by_norm.get(&normalize(text)).map(|id| &self.nodes[id.index()])
    }

    pub fn sequences(&self) -> &[SequenceRecord] {
        &self.sequences
    }

    pub fn out_degree(&self, id: NodeId) -> usize {
        self.out.get(id.index()).map_or(0, BTreeMap::len)
    }

    /// All edges ordered by `(from_id, to_id)`.
    pub fn edges(&self) -> impl Iterator<Item = SequentialEdge> + '_ {
        self.out.iter().enumerate().flat_map(|(from, targets)| {
            targets.iter().map(move |(&to_id, &weight)| SequentialEdge {
                from_id: NodeId(from as u32),
                to_id,
                weight,
            })
        })
    }

    fn intern(&mut self, text: &str, kind: NodeKind, dataset: Dataset) -> Result<NodeId, KgError> {
        let norm = normalize(text);
        if norm.is_empty() {
            return Err(KgError::MalformedText(text.to_string()));
        }
        if let Some(&id) = self.by_norm.get(&norm) {
            let node = &mut self.nodes[id.index()];
            node.sources.insert(dataset);
            if kind == NodeKind::Subtask {
                node.kind = NodeKind::Subtask;
            }
            return Ok(id);
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(EventNode {
            id,
            text: text.to_string(),
            norm_text: norm.clone(),
            kind,
            sources: BTreeSet::from([dataset]),
        });
        self.out.push(BTreeMap::new());
        self.by_norm.insert(norm, id);
        Ok(id)
    }

    pub fn insert_sequence(&mut self, seq: TaskSequence) -> Result<(), KgError> {
        seq.validate()?;
        let coarse_id = self.intern(&seq.coarse_text, NodeKind::Coarse, seq.dataset)?;
        let subtask_ids = seq
            .subtasks
            .iter()
            .map(|s| self.intern(s, NodeKind::Subtask, seq.dataset))
            .collect::<Result<Vec<_>, _>>()?;
        for pair in subtask_ids.windows(2) {
            *self.out[pair[0].index()].entry(pair[1]).or_insert(0) += 1;
        }
        self.sequences.push(SequenceRecord {
            sequence: seq,
            coarse_id,
            subtask_ids,
        });
        Ok(())
    }

    /// Out-edges of `id`, heaviest first, ties by target id.
    pub fn successors(&self, id: NodeId) -> Result<Vec<(&EventNode, u64)>, KgError> {
        let targets = self.out.get(id.index()).ok_or(KgError::UnknownNode(id))?;
        let mut list: Vec<_> = targets
            .iter()
            .map(|(&to, &w)| (&self.nodes[to.index()], w))
            .collect();
        list.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.id.cmp(&b.0.id)));
        Ok(list)
    }

    /// First subtasks of every sequence recorded under coarse node `id`,
    /// counted and ordered like [`EventGraph::successors`].
    pub fn opening_subtasks(&self, id: NodeId) -> Result<Vec<(&EventNode, u64)>, KgError> {
        self.node(id)?;
        let mut counts: BTreeMap<NodeId, u64> = BTreeMap::new();
        for rec in self.sequences.iter().filter(|r| r.coarse_id == id) {
            *counts.entry(rec.subtask_ids[0]).or_insert(0) += 1;
        }
        let mut list: Vec<_> = counts
            .into_iter()
            .map(|(to, w)| (&self.nodes[to.index()], w))
            .collect();
        list.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.id.cmp(&b.0.id)));
        Ok(list)
    }

    pub fn stats(&self) -> GraphStats {
        let mut per_dataset = BTreeMap::new();
        for rec in &self.sequences {
            *per_dataset.entry(rec.sequence.dataset).or_insert(0) += 1;
        }
        GraphStats {
            node_count: self.nodes.len(),
            edge_count: self.out.iter().map(BTreeMap::len).sum(),
            sequence_count: self.sequences.len(),
            per_dataset,
        }
    }

    /// Union of two graphs keyed by normalized text.
    ///
    /// Nodes of `self` keep their ids; nodes only present in `other` are
    /// appended in `other`'s id order. Edge weights add up and provenance
    /// records are concatenated.
    pub fn merge(&self, other: &EventGraph) -> EventGraph {
        let mut merged = self.clone();
        let mut remap = Vec::with_capacity(other.nodes.len());
        for node in &other.nodes {
            let id = match merged.by_norm.get(&node.norm_text) {
                Some(&id) => {
                    let existing = &mut merged.nodes[id.index()];
                    existing.sources.extend(node.sources.iter().copied());
                    if node.kind == NodeKind::Subtask {
                        existing.kind = NodeKind::Subtask;
                    }
                    id
                }
                None => {
                    let id = NodeId(merged.nodes.len() as u32);
                    merged.nodes.push(EventNode { id, ..node.clone() });
                    merged.out.push(BTreeMap::new());
                    merged.by_norm.insert(node.norm_text.clone(), id);
                    id
                }
            };
            remap.push(id);
        }
        for edge in other.edges() {
            let from = remap[edge.from_id.index()];
            let to = remap[edge.to_id.index()];
            *merged.out[from.index()].entry(to).or_insert(0) += edge.weight;
        }
        for rec in &other.sequences {
            merged.sequences.push(SequenceRecord {
                sequence: rec.sequence.clone(),
                coarse_id: remap[rec.coarse_id.index()],
                subtask_ids: rec.subtask_ids.iter().map(|id| remap[id.index()]).collect(),
            });
        }
        merged
    }

    /// Full-scan consistency check: dedup, normalization, edge endpoints and
    /// weight conservation against the provenance records.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(format!("node at position {i} has id {}", node.id));
            }
            if node.norm_text.is_empty() || node.norm_text != normalize(&node.text) {
                return Err(format!("node {} has inconsistent norm_text", node.id));
            }
            if let Some(prev) = seen.insert(node.norm_text.clone(), node.id) {
                return Err(format!("nodes {prev} and {} share norm_text", node.id));
            }
        }
        let mut pairs: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
        for rec in &self.sequences {
            for w in rec.subtask_ids.windows(2) {
                *pairs.entry((w[0], w[1])).or_insert(0) += 1;
            }
        }
        for edge in self.edges() {
            for end in [edge.from_id, edge.to_id] {
                if self.nodes[end.index()].kind != NodeKind::Subtask {
                    return Err(format!("edge endpoint {end} is not a subtask node"));
                }
            }
            if pairs.remove(&(edge.from_id, edge.to_id)) != Some(edge.weight) {
                return Err(format!("edge {}->{} weight disagrees with provenance", edge.from_id, edge.to_id));
            }
        }
        if let Some(((a, b), _)) = pairs.into_iter().next() {
            return Err(format!("provenance pair {a}->{b} has no edge"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KgError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<(), KgError> {
        let mut line = |record: &Record| -> io::Result<()> {
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n")
        };
        line(&Record::Header {
            format: FORMAT_VERSION.to_string(),
        })?;
        for node in &self.nodes {
            line(&Record::Node {
                id: node.id,
                text: node.text.clone(),
                norm_text: node.norm_text.clone(),
                node_kind: node.kind,
                sources: node.sources.clone(),
            })?;
        }
        for edge in self.edges() {
            line(&Record::Edge {
                from_id: edge.from_id,
                to_id: edge.to_id,
                weight: edge.weight,
            })?;
        }
        for rec in &self.sequences {
            line(&Record::Seq(rec.sequence.clone()))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KgError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self, KgError> {
        let mut graph = EventGraph::new();
        let mut saw_header = false;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fail = |message: String| KgError::Format { line: line_no, message };
            let record: Record = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
            if !saw_header {
                match record {
                    Record::Header { format } if format == FORMAT_VERSION => {
                        saw_header = true;
                        continue;
                    }
                    Record::Header { format } => return Err(fail(format!("unsupported format {format:?}"))),
                    _ => return Err(fail("missing header record".into())),
                }
            }
            match record {
                Record::Header { .. } => return Err(fail("duplicate header".into())),
                Record::Node {
                    id,
                    text,
                    norm_text,
                    node_kind,
                    sources,
                } => {
                    if !graph.sequences.is_empty() || graph.out.iter().any(|m| !m.is_empty()) {
                        return Err(fail("node record after edge or seq records".into()));
                    }
                    if id.index() != graph.nodes.len() {
                        return Err(fail(format!("node id {id} is not dense (expected {})", graph.nodes.len())));
                    }
                    if norm_text.is_empty() || normalize(&text) != norm_text {
                        return Err(fail(format!("node {id}: norm_text does not match text")));
                    }
                    if graph.by_norm.contains_key(&norm_text) {
                        return Err(fail(format!("node {id}: duplicate norm_text {norm_text:?}")));
                    }
                    graph.by_norm.insert(norm_text.clone(), id);
                    graph.nodes.push(EventNode {
                        id,
                        text,
                        norm_text,
                        kind: node_kind,
                        sources,
                    });
                    graph.out.push(BTreeMap::new());
                }
                Record::Edge { from_id, to_id, weight } => {
                    if !graph.sequences.is_empty() {
                        return Err(fail("edge record after seq records".into()));
                    }
                    for end in [from_id, to_id] {
                        match graph.nodes.get(end.index()) {
                            None => return Err(fail(format!("dangling edge endpoint {end}"))),
                            Some(n) if n.kind != NodeKind::Subtask => {
                                return Err(fail(format!("edge endpoint {end} is not a subtask node")))
                            }
                            Some(_) => {}
                        }
                    }
                    if weight == 0 {
                        return Err(fail("edge weight must be positive".into()));
                    }
                    if graph.out[from_id.index()].insert(to_id, weight).is_some() {
                        return Err(fail(format!("duplicate edge {from_id}->{to_id}")));
                    }
                }
                Record::Seq(seq) => {
                    seq.validate().map_err(|e| fail(e.to_string()))?;
                    let resolve = |text: &str| {
                        graph
                            .by_norm
                            .get(&normalize(text))
                            .copied()
                            .ok_or_else(|| fail(format!("sequence text {text:?} has no node")))
                    };
                    let coarse_id = resolve(&seq.coarse_text)?;
                    let subtask_ids = seq.subtasks.iter().map(|s| resolve(s)).collect::<Result<Vec<_>, _>>()?;
                    graph.sequences.push(SequenceRecord {
                        sequence: seq,
                        coarse_id,
                        subtask_ids,
                    });
                }
            }
        }
        if !saw_header {
            return Err(KgError::Format {
                line: 1,
                message: "missing header record".into(),
            });
        }
        Ok(graph)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Header {
        format: String,
    },
    Node {
        id: NodeId,
        text: String,
        norm_text: String,
        node_kind: NodeKind,
        sources: BTreeSet<Dataset>,
    },
    Edge {
        from_id: NodeId,
        to_id: NodeId,
        weight: u64,
    },
    Seq(TaskSequence),
}

/// Writes sequences one JSON object per line.
pub fn write_sequences(seqs: &[TaskSequence], out: &mut impl Write) -> io::Result<()> {
    for seq in seqs {
        serde_json::to_writer(&mut *out, seq)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a sequence file; blank lines are skipped.
pub fn read_sequences(reader: impl BufRead) -> Result<Vec<TaskSequence>, KgError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| KgError::Format {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
