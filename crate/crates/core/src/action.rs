//! Action planning loop: agent policies that map an instruction pair and an
//! observation to a move plus the completion signals `S` and `R`.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{Episode, NavGraph, SimError, ViewpointId};
use crate::text::normalize;

/// Start value of every supervision schedule.
pub const R_START: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("window must be at least 1, got {0}")]
    InvalidW(usize),
    #[error("epsilon must lie in [0, 1], got {0}")]
    InvalidEpsilon(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub coarse: String,
    pub subtask: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub viewpoint: ViewpointId,
    pub neighbors: Vec<ViewpointId>,
    pub caption: String,
}

impl Observation {
    pub fn at(world: &NavGraph, viewpoint: ViewpointId) -> Result<Self, SimError> {
        Ok(Self {
            viewpoint,
            neighbors: world.neighbors(viewpoint)?,
            caption: world.caption(viewpoint)?.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveTo(ViewpointId),
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub action: Action,
    pub s: bool,
    pub r: f64,
}

impl StepOutput {
    pub fn new(action: Action, s: bool, r: f64) -> Self {
        assert!(r.is_finite(), "R must be finite");
        Self {
            action,
            s,
            r: r.clamp(0.0, 1.0),
        }
    }
}

/// A step policy. `step_index` counts steps within the active subtask and is
/// 0 on the first step after a new subtask is set or after a rollback.
pub trait AgentPolicy: Send {
    fn step(
        &mut self,
        instruction: &InstructionPair,
        observation: &Observation,
        history: &[Action],
        step_index: usize,
    ) -> Result<StepOutput, PolicyError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

fn schedule_value(i: usize, w: usize, polarity: Polarity) -> f64 {
    let delta = i as f64 / (2.0 * w as f64);
    match polarity {
        Polarity::Positive => R_START + delta,
        Polarity::Negative => R_START - delta,
    }
    .clamp(0.0, 1.0)
}

/// `R_i = 0.5 ± i/(2W)` for `i = 1..=W`, clamped to `[0, 1]`.
pub fn supervision_schedule(w: usize, polarity: Polarity) -> Result<Vec<f64>, PolicyError> {
    if w == 0 {
        return Err(PolicyError::InvalidW(w));
    }
    Ok((1..=w).map(|i| schedule_value(i, w, polarity)).collect())
}

fn random_neighbor(obs: &Observation, rng: &mut ChaCha8Rng) -> Action {
    obs.neighbors.choose(rng).map_or(Action::Stop, |&n| Action::MoveTo(n))
}

#[derive(Debug, Clone)]
struct ActiveSubtask {
    /// Index into the episode's ground-truth subtasks, `None` when the text
    /// does not match any remaining one.
    gt_index: Option<usize>,
    target: Option<ViewpointId>,
    window: usize,
}

/// Scripted policy that knows the episode's ground truth. A proposed subtask
/// is matched to a remaining ground-truth subtask by text, else by the
/// viewpoint its caption grounds to; it then walks the shortest path there.
/// An unmatched subtask sends it wandering with a falling `R`.
#[derive(Debug, Clone)]
pub struct OraclePolicy<'w> {
    world: &'w NavGraph,
    episode: &'w Episode,
    progress: usize,
    lost_window: usize,
    rng: ChaCha8Rng,
    active: Option<ActiveSubtask>,
}

impl<'w> OraclePolicy<'w> {
    pub fn new(world: &'w NavGraph, episode: &'w Episode, seed: u64) -> Self {
        Self {
            world,
            episode,
            progress: 0,
            lost_window: 3,
            rng: ChaCha8Rng::seed_from_u64(seed),
            active: None,
        }
    }

    /// Window of the falling `R` schedule used while wandering.
    pub fn with_lost_window(mut self, w: usize) -> Self {
        assert!(w >= 1, "lost window must be positive");
        self.lost_window = w;
        self
    }

    /// Ground-truth subtasks reached so far.
    pub fn progress(&self) -> usize {
        self.progress
    }

    fn resolve(&self, subtask: &str) -> Option<usize> {
        let remaining = &self.episode.gt_subtasks[self.progress.min(self.episode.gt_subtasks.len())..];
        let norm = normalize(subtask);
        if let Some(i) = remaining.iter().position(|g| normalize(&g.text) == norm) {
            return Some(self.progress + i);
        }
        let v = self.world.ground(subtask)?;
        remaining.iter().position(|g| g.target == v).map(|i| self.progress + i)
    }

    fn begin(&mut self, instruction: &InstructionPair, obs: &Observation) -> Result<(), PolicyError> {
        let gt_index = self.resolve(&instruction.subtask);
        let (target, window) = match gt_index {
            Some(i) => {
                let target = self.episode.gt_subtasks[i].target;
                let (path, _) = self.world.shortest_path(obs.viewpoint, target)?;
                (Some(target), path.len() - 1)
            }
            None => (None, self.lost_window),
        };
        self.active = Some(ActiveSubtask {
            gt_index,
            target,
            window,
        });
        Ok(())
    }

    fn active(&self) -> &ActiveSubtask {
        self.active.as_ref().expect("a subtask is active")
    }

    /// Output for this step without committing progress. Uses the
    /// wandering RNG when the subtask is unmatched.
    fn plan_step(&mut self, obs: &Observation, step_index: usize) -> Result<StepOutput, PolicyError> {
        let active = self.active().clone();
        let i = step_index + 1;
        let Some(target) = active.target else {
            let r = schedule_value(i, active.window, Polarity::Negative);
            return Ok(StepOutput::new(random_neighbor(obs, &mut self.rng), false, r));
        };
        if obs.viewpoint == target {
            return Ok(StepOutput::new(Action::Stop, true, 1.0));
        }
        let (path, _) = self.world.shortest_path(obs.viewpoint, target)?;
        let arrive = path.len() == 2;
        // Past the schedule (after detours) R stays at the top of the schedule.
        let r = schedule_value(i.min(active.window.max(1)), active.window.max(1), Polarity::Positive);
        Ok(StepOutput::new(Action::MoveTo(path[1]), arrive, r))
    }

    fn commit(&mut self, out: &StepOutput) {
        if out.s {
            if let Some(i) = self.active().gt_index {
                self.progress = self.progress.max(i + 1);
            }
        }
    }
}

impl AgentPolicy for OraclePolicy<'_> {
    fn step(
        &mut self,
        instruction: &InstructionPair,
        observation: &Observation,
        _history: &[Action],
        step_index: usize,
    ) -> Result<StepOutput, PolicyError> {
        if step_index == 0 || self.active.is_none() {
            self.begin(instruction, observation)?;
        }
        let out = self.plan_step(observation, step_index)?;
        self.commit(&out);
        Ok(out)
    }
}

/// Oracle with per-step failure injection: with probability `epsilon` the
/// move is replaced by a uniformly random neighbor. `R` moves by `1/(2W)`
/// up or down depending on whether the step got closer to the target.
#[derive(Debug, Clone)]
pub struct NoisyPolicy<'w> {
    inner: OraclePolicy<'w>,
    epsilon: f64,
    rng: ChaCha8Rng,
    /// `R = 0.5 + level/(2W)`, kept as an integer so that an error-free run
    /// reproduces the oracle's values bit for bit.
    level: i64,
    distances: Vec<Option<f64>>,
}

impl<'w> NoisyPolicy<'w> {
    pub fn new(inner: OraclePolicy<'w>, epsilon: f64, seed: u64) -> Result<Self, PolicyError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(PolicyError::InvalidEpsilon(epsilon));
        }
        Ok(Self {
            inner,
            epsilon,
            rng: ChaCha8Rng::seed_from_u64(seed),
            level: 0,
            distances: Vec::new(),
        })
    }

    fn distance(&self, v: ViewpointId) -> f64 {
        let slot = self.inner.world.viewpoints().partition_point(|p| p.id < v);
        self.distances.get(slot).copied().flatten().unwrap_or(f64::INFINITY)
    }
}

impl AgentPolicy for NoisyPolicy<'_> {
    fn step(
        &mut self,
        instruction: &InstructionPair,
        observation: &Observation,
        _history: &[Action],
        step_index: usize,
    ) -> Result<StepOutput, PolicyError> {
        if step_index == 0 || self.inner.active.is_none() {
            self.inner.begin(instruction, observation)?;
            self.level = 0;
            self.distances = match self.inner.active().target {
                Some(t) => self.inner.world.distances_from(t)?,
                None => Vec::new(),
            };
        }
        let planned = self.inner.plan_step(observation, step_index)?;
        let active = self.inner.active().clone();
        let Some(target) = active.target else {
            return Ok(planned);
        };
        if observation.viewpoint == target {
            self.inner.commit(&planned);
            return Ok(planned);
        }
        let action = if self.rng.gen_bool(self.epsilon) {
            random_neighbor(observation, &mut self.rng)
        } else {
            planned.action
        };
        let next = match action {
            Action::MoveTo(v) => v,
            Action::Stop => observation.viewpoint,
        };
        let w = active.window.max(1) as i64;
        self.level = if self.distance(next) < self.distance(observation.viewpoint) {
            (self.level + 1).min(w)
        } else {
            (self.level - 1).max(-w)
        };
        let r = R_START + self.level as f64 / (2.0 * w as f64);
        let out = StepOutput::new(action, next == target, r);
        self.inner.commit(&out);
        Ok(out)
    }
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub viewpoint: ViewpointId,
    pub action: Action,
    pub s: bool,
    pub r: f64,
    pub subtask: String,
}

/// Append-only record of what the agent saw and did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    actions: Vec<Action>,
    observations: Vec<Observation>,
    outputs: Vec<StepOutput>,
    subtasks: Vec<String>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_step(&mut self, output: StepOutput, observation: Observation, subtask: &str) {
        self.actions.push(output.action);
        self.outputs.push(output);
        self.observations.push(observation);
        self.subtasks.push(subtask.to_string());
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn outputs(&self) -> &[StepOutput] {
        &self.outputs
    }

    pub fn records(&self) -> Vec<StepRecord> {
        (0..self.len())
            .map(|i| StepRecord {
                step: i,
                viewpoint: self.observations[i].viewpoint,
                action: self.actions[i],
                s: self.outputs[i].s,
                r: self.outputs[i].r,
                subtask: self.subtasks[i].clone(),
            })
            .collect()
    }

    pub fn write_log(&self, out: &mut impl Write) -> io::Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Dataset;
    use crate::sim::{GtSubtask, Viewpoint};

    fn path_world(n: u32) -> NavGraph {
        let vps = (0..n)
            .map(|i| Viewpoint {
                id: ViewpointId(i),
                position: [i as f64, 0.0, 0.0],
                caption: format!("marker {}", ["zero", "one", "two", "three", "four", "five", "six"][i as usize]),
            })
            .collect();
        let edges: Vec<_> = (1..n).map(|i| (ViewpointId(i - 1), ViewpointId(i))).collect();
        NavGraph::new(vps, &edges).unwrap()
    }

    fn episode(target: u32) -> Episode {
        Episode {
            id: "t".into(),
            dataset: Dataset::Custom,
            start: ViewpointId(0),
            goal: ViewpointId(target),
            coarse_instruction: "find the end".into(),
            gt_subtasks: vec![GtSubtask {
                text: format!("walk to the marker {}", ["zero", "one", "two", "three", "four"][target as usize]),
                target: ViewpointId(target),
            }],
            success_radius: 3.0,
        }
    }

    fn instr(subtask: &str) -> InstructionPair {
        InstructionPair {
            coarse: "find the end".into(),
            subtask: subtask.into(),
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(supervision_schedule(2, Polarity::Positive).unwrap(), vec![0.75, 1.0]);
        assert_eq!(supervision_schedule(2, Polarity::Negative).unwrap(), vec![0.25, 0.0]);
        assert_eq!(supervision_schedule(1, Polarity::Positive).unwrap(), vec![1.0]);
        assert!(matches!(supervision_schedule(0, Polarity::Positive), Err(PolicyError::InvalidW(0))));
    }

    #[test]
    fn oracle_walks_three_hops() {
        let w = path_world(5);
        let ep = episode(3);
        let mut p = OraclePolicy::new(&w, &ep, 0);
        let mut at = ViewpointId(0);
        let mut rs = Vec::new();
        for i in 0..3 {
            let out = p
                .step(&instr("walk to the marker three"), &Observation::at(&w, at).unwrap(), &[], i)
                .unwrap();
            rs.push(out.r);
            assert_eq!(out.s, i == 2);
            let Action::MoveTo(v) = out.action else { panic!() };
            at = v;
        }
        assert_eq!(rs, vec![0.5 + 1.0 / 6.0, 0.5 + 2.0 / 6.0, 1.0]);
        assert_eq!(at, ViewpointId(3));
        assert_eq!(p.progress(), 1);
    }

    #[test]
    fn oracle_at_target_stops() {
        let w = path_world(3);
        let mut ep = episode(2);
        ep.start = ViewpointId(2);
        let mut p = OraclePolicy::new(&w, &ep, 0);
        let out = p
            .step(&instr("head to the marker two"), &Observation::at(&w, ViewpointId(2)).unwrap(), &[], 0)
            .unwrap();
        assert_eq!(out, StepOutput::new(Action::Stop, true, 1.0));
    }

    #[test]
    fn oracle_no_path() {
        let vps = (0..2)
            .map(|i| Viewpoint {
                id: ViewpointId(i),
                position: [i as f64, 0.0, 0.0],
                caption: ["marker zero", "marker one"][i as usize].into(),
            })
            .collect();
        let w = NavGraph::new(vps, &[]).unwrap();
        let ep = episode(1);
        let mut p = OraclePolicy::new(&w, &ep, 0);
        let err = p
            .step(&instr("walk to the marker one"), &Observation::at(&w, ViewpointId(0)).unwrap(), &[], 0)
            .unwrap_err();
        assert!(matches!(err, PolicyError::Sim(SimError::NoPath { .. })));
    }

    #[test]
    fn unmatched_subtask_wanders_with_falling_r() {
        let w = path_world(5);
        let ep = episode(3);
        let mut p = OraclePolicy::new(&w, &ep, 1).with_lost_window(2);
        let obs = Observation::at(&w, ViewpointId(2)).unwrap();
        let a = p.step(&instr("walk to the piano"), &obs, &[], 0).unwrap();
        let b = p.step(&instr("walk to the piano"), &obs, &[], 1).unwrap();
        assert_eq!((a.r, b.r), (0.25, 0.0));
        assert!(!a.s && !b.s);
    }

    #[test]
    fn noisy_with_zero_epsilon_matches_oracle() {
        let w = path_world(5);
        let ep = episode(4);
        let mut o = OraclePolicy::new(&w, &ep, 3);
        let mut n = NoisyPolicy::new(OraclePolicy::new(&w, &ep, 3), 0.0, 99).unwrap();
        let mut at = ViewpointId(0);
        for i in 0..4 {
            let obs = Observation::at(&w, at).unwrap();
            let a = o.step(&instr("walk to the marker four"), &obs, &[], i).unwrap();
            let b = n.step(&instr("walk to the marker four"), &obs, &[], i).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.r.to_bits(), b.r.to_bits());
            let Action::MoveTo(v) = a.action else { panic!() };
            at = v;
        }
    }

    #[test]
    fn noisy_r_falls_when_moving_away() {
        // From the far end every random move either leaves or stays away.
        let w = path_world(5);
        let mut ep = episode(0);
        ep.start = ViewpointId(4);
        ep.gt_subtasks[0].text = "walk to the marker zero".into();
        let mut n = NoisyPolicy::new(OraclePolicy::new(&w, &ep, 0), 1.0, 7).unwrap();
        let mut at = ViewpointId(4);
        let mut prev = R_START;
        for i in 0..6 {
            let out = n
                .step(&instr("walk to the marker zero"), &Observation::at(&w, at).unwrap(), &[], i)
                .unwrap();
            let Action::MoveTo(v) = out.action else { break };
            let d_before = w.distance(at, ViewpointId(0)).unwrap();
            let d_after = w.distance(v, ViewpointId(0)).unwrap();
            if d_after >= d_before {
                assert!(out.r < prev || out.r == 0.0);
            }
            prev = out.r;
            at = v;
        }
        assert!(NoisyPolicy::new(OraclePolicy::new(&w, &ep, 0), 1.5, 0).is_err());
    }

    #[test]
    fn trajectory_is_append_only() {
        let w = path_world(3);
        let mut t = Trajectory::new();
        let out = StepOutput::new(Action::MoveTo(ViewpointId(1)), false, 0.7);
        t.record_step(out, Observation::at(&w, ViewpointId(0)).unwrap(), "go");
        assert_eq!(t.len(), 1);
        let before = t.records();
        t.record_step(
            StepOutput::new(Action::Stop, true, 1.0),
            Observation::at(&w, ViewpointId(1)).unwrap(),
            "go",
        );
        assert_eq!(t.records()[..1], before[..]);
        assert_eq!(t.actions().len(), t.observations().len());
        let mut buf = Vec::new();
        t.write_log(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}
