use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{NavGraph, ViewpointId};
use super::SimError;
use crate::kg::{Dataset, TaskSequence};

pub const EPISODES_FORMAT: &str = "eventnav-episodes/1";
pub const DEFAULT_SUCCESS_RADIUS: f64 = 3.0;

/// Templates for subtask texts; `{}` is the target caption.
pub const SUBTASK_TEMPLATES: [&str; 5] = [
    "walk to the {}",
    "head to the {}",
    "move to the {}",
    "continue to the {}",
    "approach the {}",
];
/// Templates for the last subtask of a route, which names where to stop.
pub const FINAL_TEMPLATES: [&str; 3] = ["stop at the {}", "wait by the {}", "stop next to the {}"];
/// Templates for coarse instructions; disjoint from the subtask ones so a
/// coarse text never collides with a subtask text.
pub const COARSE_TEMPLATES: [&str; 3] = ["find the {}", "navigate to the {}", "bring me to the {}"];

fn templates(last: bool) -> &'static [&'static str] {
    if last {
        &FINAL_TEMPLATES
    } else {
        &SUBTASK_TEMPLATES
    }
}

fn fill(template: &str, caption: &str) -> String {
    template.replacen("{}", caption, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtSubtask {
    pub text: String,
    pub target: ViewpointId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub dataset: Dataset,
    pub start: ViewpointId,
    pub goal: ViewpointId,
    pub coarse_instruction: String,
    pub gt_subtasks: Vec<GtSubtask>,
    pub success_radius: f64,
}

impl Episode {
    pub fn validate(&self, world: &NavGraph) -> Result<(), SimError> {
        for v in [self.start, self.goal].into_iter().chain(self.gt_subtasks.iter().map(|g| g.target)) {
            world.viewpoint(v)?;
        }
        let last = self.gt_subtasks.last().map(|g| g.target);
        if last != Some(self.goal) {
            return Err(SimError::InvalidWorld(format!(
                "episode {}: last subtask target must be the goal",
                self.id
            )));
        }
        Ok(())
    }

    /// The ground-truth decomposition as a KG sequence.
    pub fn task_sequence(&self) -> TaskSequence {
        TaskSequence::new(
            &self.coarse_instruction,
            self.gt_subtasks.iter().map(|g| g.text.clone()),
            self.dataset,
            &self.id,
        )
    }

    /// `count` annotator variants of the decomposition: the first is the
    /// episode's own wording, the rest re-draw every subtask template.
    pub fn annotations(&self, world: &NavGraph, count: usize, seed: u64) -> Result<Vec<TaskSequence>, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        if count > 0 {
            out.push(self.task_sequence());
        }
        for a in 1..count {
            let mut subtasks = Vec::with_capacity(self.gt_subtasks.len());
            for (i, g) in self.gt_subtasks.iter().enumerate() {
                let template = templates(i + 1 == self.gt_subtasks.len())
                    .choose(&mut rng)
                    .expect("templates are non-empty");
                subtasks.push(fill(template, world.caption(g.target)?));
            }
            out.push(TaskSequence::new(
                &self.coarse_instruction,
                subtasks,
                self.dataset,
                format!("{}#{a}", self.id),
            ));
        }
        Ok(out)
    }

    /// Shortest path from start to goal and its length (the SPL reference).
    pub fn reference_path(&self, world: &NavGraph) -> Result<(Vec<ViewpointId>, f64), SimError> {
        world.shortest_path(self.start, self.goal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOptions {
    pub dataset: Dataset,
    pub id_prefix: String,
    pub hops_per_subtask: usize,
    pub min_distance: f64,
    pub success_radius: f64,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            dataset: Dataset::R2r,
            id_prefix: "ep".into(),
            hops_per_subtask: 3,
            min_distance: 6.0,
            success_radius: DEFAULT_SUCCESS_RADIUS,
        }
    }
}

pub fn generate_episodes(world: &NavGraph, m: usize, seed: u64) -> Result<Vec<Episode>, SimError> {
    generate_episodes_with(world, m, seed, &EpisodeOptions::default())
}

/// Seeded episodes with start and goal at least `min_distance` apart
/// (geodesic) and a waypoint every `hops_per_subtask` hops along the
/// shortest path.
pub fn generate_episodes_with(
    world: &NavGraph,
    m: usize,
    seed: u64,
    opts: &EpisodeOptions,
) -> Result<Vec<Episode>, SimError> {
    assert!(opts.hops_per_subtask >= 1, "hops_per_subtask must be positive");
    if m == 0 {
        return Ok(Vec::new());
    }
    let ids: Vec<ViewpointId> = world.viewpoints().iter().map(|v| v.id).collect();
    let mut eligible = Vec::new();
    for &start in &ids {
        let goals: Vec<ViewpointId> = world
            .distances_from(start)?
            .iter()
            .zip(&ids)
            .filter(|(d, _)| d.is_some_and(|d| d >= opts.min_distance))
            .map(|(_, &g)| g)
            .collect();
        if !goals.is_empty() {
            eligible.push((start, goals));
        }
    }
    if eligible.is_empty() {
        return Err(SimError::NoEpisodePair {
            min_distance: opts.min_distance,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = m.to_string().len().max(4);
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let (start, goals) = &eligible[rng.gen_range(0..eligible.len())];
        let goal = goals[rng.gen_range(0..goals.len())];
        let (path, _) = world.shortest_path(*start, goal)?;
        let hops = path.len() - 1;
        let mut gt_subtasks = Vec::new();
        let mut at = 0;
        while at < hops {
            at = (at + opts.hops_per_subtask).min(hops);
            let template = templates(at == hops).choose(&mut rng).expect("templates are non-empty");
            gt_subtasks.push(GtSubtask {
                text: fill(template, world.caption(path[at])?),
                target: path[at],
            });
        }
        let coarse = COARSE_TEMPLATES.choose(&mut rng).expect("templates are non-empty");
        out.push(Episode {
            id: format!("{}-{:0width$}", opts.id_prefix, i),
            dataset: opts.dataset,
            start: *start,
            goal,
            coarse_instruction: fill(coarse, world.caption(goal)?),
            gt_subtasks,
            success_radius: opts.success_radius,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum EpisodeLine {
    Header { format: String },
    Episode(Episode),
}

pub fn write_episodes(episodes: &[Episode], out: &mut impl Write) -> io::Result<()> {
    serde_json::to_writer(
        &mut *out,
        &EpisodeLine::Header {
            format: EPISODES_FORMAT.into(),
        },
    )?;
    out.write_all(b"\n")?;
    for e in episodes {
        serde_json::to_writer(&mut *out, &EpisodeLine::Episode(e.clone()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_episodes(episodes: &[Episode], path: impl AsRef<Path>) -> Result<(), SimError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_episodes(episodes, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_episodes(reader: impl BufRead) -> Result<Vec<Episode>, SimError> {
    let mut header = false;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| SimError::Format { line: idx + 1, message };
        match serde_json::from_str(&line).map_err(|e| fail(e.to_string()))? {
            EpisodeLine::Header { format } if !header && format == EPISODES_FORMAT => header = true,
            EpisodeLine::Header { format } => return Err(fail(format!("unexpected header {format:?}"))),
            EpisodeLine::Episode(_) if !header => return Err(fail("missing header".into())),
            EpisodeLine::Episode(e) => out.push(e),
        }
    }
    Ok(out)
}

pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>, SimError> {
    read_episodes(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::{default_radius, generate_world};

    #[test]
    fn episodes_are_solvable_and_well_formed() {
        let w = generate_world(100, default_radius(100), 5).unwrap();
        let eps = generate_episodes(&w, 30, 1).unwrap();
        assert_eq!(eps, generate_episodes(&w, 30, 1).unwrap());
        for e in &eps {
            e.validate(&w).unwrap();
            assert!(w.distance(e.start, e.goal).unwrap() >= 6.0);
            let (path, _) = e.reference_path(&w).unwrap();
            let mut prev = 0;
            for g in &e.gt_subtasks {
                let at = path.iter().position(|&v| v == g.target).unwrap();
                assert!(at > prev && at - prev <= 3);
                prev = at;
                assert!(g.text.ends_with(w.caption(g.target).unwrap()));
            }
            assert_eq!(prev, path.len() - 1);
        }
    }

    #[test]
    fn annotations_keep_targets() {
        let w = generate_world(60, default_radius(60), 2).unwrap();
        let e = &generate_episodes(&w, 1, 4).unwrap()[0];
        let anns = e.annotations(&w, 3, 0).unwrap();
        assert_eq!(anns[0], e.task_sequence());
        for a in &anns {
            for (text, g) in a.subtasks.iter().zip(&e.gt_subtasks) {
                assert_eq!(w.ground(text), Some(g.target));
            }
        }
    }

    #[test]
    fn episode_file_roundtrip() {
        let w = generate_world(50, default_radius(50), 8).unwrap();
        let eps = generate_episodes(&w, 5, 2).unwrap();
        let mut buf = Vec::new();
        write_episodes(&eps, &mut buf).unwrap();
        assert_eq!(read_episodes(&buf[..]).unwrap(), eps);
    }
}
