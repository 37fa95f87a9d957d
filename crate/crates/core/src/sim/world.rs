use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::text::normalize;

pub const WORLD_FORMAT: &str = "eventnav-world/1";
/// Side of the square generated worlds are sampled in, meters.
pub const WORLD_SIZE: f64 = 30.0;
const CAMERA_HEIGHT: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViewpointId(pub u32);

impl std::fmt::Display for ViewpointId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub id: ViewpointId,
    pub position: [f64; 3],
    pub caption: String,
}

/// Undirected viewpoint graph; edge length is the Euclidean distance
/// between endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NavGraph {
    viewpoints: Vec<Viewpoint>,
    slot: BTreeMap<ViewpointId, usize>,
    /// Neighbor slots with edge lengths, ordered by neighbor id.
    adj: Vec<Vec<(usize, f64)>>,
    norm_captions: Vec<String>,
}

#[derive(Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn euclid(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl NavGraph {
    pub fn new(mut viewpoints: Vec<Viewpoint>, edges: &[(ViewpointId, ViewpointId)]) -> Result<Self, SimError> {
        viewpoints.sort_by_key(|v| v.id);
        let mut slot = BTreeMap::new();
        for (i, v) in viewpoints.iter().enumerate() {
            if slot.insert(v.id, i).is_some() {
                return Err(SimError::InvalidWorld(format!("duplicate viewpoint id {}", v.id)));
            }
            if v.position.iter().any(|c| !c.is_finite()) {
                return Err(SimError::InvalidWorld(format!("viewpoint {} has a non-finite position", v.id)));
            }
        }
        let mut adj = vec![Vec::new(); viewpoints.len()];
        for &(a, b) in edges {
            let (&ia, &ib) = match (slot.get(&a), slot.get(&b)) {
                (Some(ia), Some(ib)) => (ia, ib),
                _ => return Err(SimError::InvalidWorld(format!("edge {a}-{b} references an unknown viewpoint"))),
            };
            if ia == ib {
                return Err(SimError::InvalidWorld(format!("self-loop at {a}")));
            }
            let len = euclid(&viewpoints[ia].position, &viewpoints[ib].position);
            adj[ia].push((ib, len));
            adj[ib].push((ia, len));
        }
        for list in &mut adj {
            list.sort_by_key(|&(j, _)| j);
            list.dedup_by_key(|&mut (j, _)| j);
        }
        let norm_captions = viewpoints.iter().map(|v| normalize(&v.caption)).collect();
        Ok(Self {
            viewpoints,
            slot,
            adj,
            norm_captions,
        })
    }

    pub fn len(&self) -> usize {
        self.viewpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoints.is_empty()
    }

    pub fn viewpoints(&self) -> &[Viewpoint] {
        &self.viewpoints
    }

    pub fn contains(&self, id: ViewpointId) -> bool {
        self.slot.contains_key(&id)
    }

    fn slot_of(&self, id: ViewpointId) -> Result<usize, SimError> {
        self.slot.get(&id).copied().ok_or(SimError::UnknownViewpoint(id))
    }

    pub fn viewpoint(&self, id: ViewpointId) -> Result<&Viewpoint, SimError> {
        Ok(&self.viewpoints[self.slot_of(id)?])
    }

    pub fn caption(&self, id: ViewpointId) -> Result<&str, SimError> {
        Ok(&self.viewpoint(id)?.caption)
    }

    pub fn neighbors(&self, id: ViewpointId) -> Result<Vec<ViewpointId>, SimError> {
        Ok(self.adj[self.slot_of(id)?].iter().map(|&(j, _)| self.viewpoints[j].id).collect())
    }

    pub fn edge_length(&self, a: ViewpointId, b: ViewpointId) -> Option<f64> {
        let ia = *self.slot.get(&a)?;
        let ib = *self.slot.get(&b)?;
        self.adj[ia].iter().find(|&&(j, _)| j == ib).map(|&(_, len)| len)
    }

    /// Undirected edges as `(smaller id, larger id)` pairs, sorted.
    pub fn edges(&self) -> Vec<(ViewpointId, ViewpointId)> {
        let mut out = Vec::new();
        for (i, list) in self.adj.iter().enumerate() {
            for &(j, _) in list {
                if i < j {
                    out.push((self.viewpoints[i].id, self.viewpoints[j].id));
                }
            }
        }
        out
    }

    pub fn mean_degree(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.adj.iter().map(Vec::len).sum::<usize>() as f64 / self.len() as f64
    }

    /// Geodesic distance from `source` to every viewpoint (`None` when unreachable),
    /// in viewpoint id order.
    pub fn distances_from(&self, source: ViewpointId) -> Result<Vec<Option<f64>>, SimError> {
        let s = self.slot_of(source)?;
        let mut dist: Vec<Option<f64>> = vec![None; self.len()];
        let mut heap = BinaryHeap::new();
        dist[s] = Some(0.0);
        heap.push(std::cmp::Reverse((Dist(0.0), s)));
        while let Some(std::cmp::Reverse((Dist(d), u))) = heap.pop() {
            if dist[u].is_some_and(|best| d > best) {
                continue;
            }
            for &(v, len) in &self.adj[u] {
                let nd = d + len;
                if dist[v].is_none_or(|cur| nd < cur) {
                    dist[v] = Some(nd);
                    heap.push(std::cmp::Reverse((Dist(nd), v)));
                }
            }
        }
        Ok(dist)
    }

    pub fn distance(&self, a: ViewpointId, b: ViewpointId) -> Result<f64, SimError> {
        let target = self.slot_of(b)?;
        self.distances_from(a)?[target].ok_or(SimError::NoPath { from: a, to: b })
    }

    /// Minimum-length path; among equal lengths the lexicographically
    /// smallest id sequence wins.
    pub fn shortest_path(&self, a: ViewpointId, b: ViewpointId) -> Result<(Vec<ViewpointId>, f64), SimError> {
        let s = self.slot_of(a)?;
        let t = self.slot_of(b)?;
        // Slots are in id order, so comparing slot sequences compares id sequences.
        let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; self.len()];
        let mut heap = BinaryHeap::new();
        best[s] = Some((0.0, vec![s]));
        heap.push(std::cmp::Reverse((Dist(0.0), vec![s])));
        while let Some(std::cmp::Reverse((Dist(d), path))) = heap.pop() {
            let u = *path.last().expect("paths are non-empty");
            match &best[u] {
                Some((bd, bp)) if (*bd, bp) != (d, &path) => continue,
                _ => {}
            }
            if u == t {
                break;
            }
            for &(v, len) in &self.adj[u] {
                let nd = d + len;
                let better = match &best[v] {
                    None => true,
                    Some((cd, cp)) => match nd.total_cmp(cd) {
                        Ordering::Less => true,
                        Ordering::Equal => {
                            let mut cand = path.clone();
                            cand.push(v);
                            cand < *cp
                        }
                        Ordering::Greater => false,
                    },
                };
                if better {
                    let mut cand = path.clone();
                    cand.push(v);
                    best[v] = Some((nd, cand.clone()));
                    heap.push(std::cmp::Reverse((Dist(nd), cand)));
                }
            }
        }
        match &best[t] {
            Some((d, path)) => Ok((path.iter().map(|&i| self.viewpoints[i].id).collect(), *d)),
            None => Err(SimError::NoPath { from: a, to: b }),
        }
    }

    /// Total length of consecutive hops along `path`; `None` if some hop is not an edge.
    pub fn path_length(&self, path: &[ViewpointId]) -> Option<f64> {
        path.windows(2).try_fold(0.0, |acc, w| Some(acc + self.edge_length(w[0], w[1])?))
    }

    /// Viewpoint whose normalized caption is the longest substring of the
    /// normalized text; ties go to the smaller id.
    pub fn ground(&self, text: &str) -> Option<ViewpointId> {
        let norm = normalize(text);
        self.norm_captions
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_empty() && norm.contains(c.as_str()))
            .max_by(|(i, a), (j, b)| a.len().cmp(&b.len()).then(j.cmp(i)))
            .map(|(i, _)| self.viewpoints[i].id)
    }

    /// Connected components as sorted id lists, largest first (ties by smallest id).
    pub fn components(&self) -> Vec<Vec<ViewpointId>> {
        let mut seen = vec![false; self.len()];
        let mut comps = Vec::new();
        for start in 0..self.len() {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut comp = Vec::new();
            while let Some(u) = stack.pop() {
                comp.push(self.viewpoints[u].id);
                for &(v, _) in &self.adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            comp.sort();
            comps.push(comp);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        comps
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> io::Result<()> {
        let mut line = |rec: &WorldLine| -> io::Result<()> {
            serde_json::to_writer(&mut *out, rec)?;
            out.write_all(b"\n")
        };
        line(&WorldLine::Header {
            format: WORLD_FORMAT.into(),
        })?;
        for v in &self.viewpoints {
            line(&WorldLine::Viewpoint {
                id: v.id,
                x: v.position[0],
                y: v.position[1],
                z: v.position[2],
                caption: v.caption.clone(),
            })?;
        }
        for (a, b) in self.edges() {
            line(&WorldLine::Edge { a, b })?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self, SimError> {
        let mut viewpoints = Vec::new();
        let mut edges = Vec::new();
        let mut header = false;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fail = |message: String| SimError::Format { line: idx + 1, message };
            let rec: WorldLine = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
            match rec {
                WorldLine::Header { format } if !header && format == WORLD_FORMAT => header = true,
                WorldLine::Header { format } => return Err(fail(format!("unexpected header {format:?}"))),
                _ if !header => return Err(fail("missing header".into())),
                WorldLine::Viewpoint { id, x, y, z, caption } => viewpoints.push(Viewpoint {
                    id,
                    position: [x, y, z],
                    caption,
                }),
                WorldLine::Edge { a, b } => edges.push((a, b)),
            }
        }
        if !header {
            return Err(SimError::Format {
                line: 1,
                message: "missing header".into(),
            });
        }
        NavGraph::new(viewpoints, &edges)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum WorldLine {
    Header {
        format: String,
    },
    Viewpoint {
        id: ViewpointId,
        x: f64,
        y: f64,
        z: f64,
        caption: String,
    },
    Edge {
        a: ViewpointId,
        b: ViewpointId,
    },
}

const COLORS: [&str; 8] = ["red", "blue", "green", "white", "black", "wooden", "gray", "yellow"];
const OBJECTS: [&str; 12] = [
    "sofa", "table", "lamp", "bookshelf", "armchair", "rug", "painting", "plant", "cabinet", "mirror", "desk", "bench",
];
const ROOMS: [&str; 12] = [
    "kitchen", "bedroom", "bathroom", "hallway", "living room", "dining room", "office", "laundry room", "garage",
    "staircase", "closet", "balcony",
];

/// Unique captions, shuffled by `rng`. Supports up to 1152 viewpoints.
fn captions(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut all: Vec<String> = ROOMS
        .iter()
        .flat_map(|room| {
            COLORS
                .iter()
                .flat_map(move |color| OBJECTS.iter().map(move |obj| format!("{color} {obj} in the {room}")))
        })
        .collect();
    all.shuffle(rng);
    assert!(n <= all.len(), "at most {} viewpoints supported", all.len());
    all.truncate(n);
    all
}

/// Connection radius giving a mean degree of roughly five for `n` points
/// in the generation box.
pub fn default_radius(n: usize) -> f64 {
    let n = n.max(2) as f64;
    (6.0 * WORLD_SIZE * WORLD_SIZE / (std::f64::consts::PI * (n - 1.0))).sqrt()
}

/// Seeded random geometric graph; only the largest connected component is
/// kept and relabeled `0..k` in sampling order.
pub fn generate_world(n: usize, radius: f64, seed: u64) -> Result<NavGraph, SimError> {
    if n < 2 {
        return Err(SimError::DegenerateWorld(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<[f64; 3]> = (0..n)
        .map(|_| [rng.gen_range(0.0..WORLD_SIZE), rng.gen_range(0.0..WORLD_SIZE), CAMERA_HEIGHT])
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if euclid(&points[i], &points[j]) <= radius {
                edges.push((ViewpointId(i as u32), ViewpointId(j as u32)));
            }
        }
    }
    let raw: Vec<Viewpoint> = points
        .iter()
        .enumerate()
        .map(|(i, p)| Viewpoint {
            id: ViewpointId(i as u32),
            position: *p,
            caption: String::new(),
        })
        .collect();
    let full = NavGraph::new(raw, &edges)?;
    let keep = full.components().into_iter().next().unwrap_or_default();
    if keep.len() < 2 {
        return Err(SimError::DegenerateWorld(keep.len()));
    }
    let relabel: BTreeMap<ViewpointId, ViewpointId> =
        keep.iter().enumerate().map(|(i, &old)| (old, ViewpointId(i as u32))).collect();
    let names = captions(keep.len(), &mut rng);
    let viewpoints = keep
        .iter()
        .zip(names)
        .map(|(old, caption)| Viewpoint {
            id: relabel[old],
            position: points[old.0 as usize],
            caption,
        })
        .collect();
    let kept_edges: Vec<_> = edges
        .iter()
        .filter_map(|(a, b)| Some((*relabel.get(a)?, *relabel.get(b)?)))
        .collect();
    NavGraph::new(viewpoints, &kept_edges)
}
