//! Per-step advance / backtrack / continue decisions and rollback to the
//! start of the current subtask.

use serde::{Deserialize, Serialize};

use crate::action::{Action, AgentPolicy, InstructionPair, Observation, PolicyError, Trajectory};
use crate::kg::Dataset;
use crate::sim::{NavGraph, SimError, SimState, ViewpointId};

pub const DEFAULT_X: f64 = 0.25;
pub const DEFAULT_MAX_REPLANS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum BacktrackError {
    #[error("window multiplier must be positive, got {0}")]
    InvalidMultiplier(f64),
    #[error("average subtask length must be positive, got {0}")]
    InvalidDAvg(f64),
    #[error("threshold x must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
}

/// Average number of actions per subtask in each benchmark.
pub fn d_avg(dataset: Dataset) -> Option<f64> {
    match dataset {
        Dataset::R2r => Some(2.35),
        Dataset::Reverie => Some(3.57),
        Dataset::Alfred => Some(8.26),
        Dataset::Custom => None,
    }
}

/// Default window multiple of `d_avg` per benchmark.
pub fn default_multiplier(dataset: Dataset) -> f64 {
    match dataset {
        Dataset::R2r => 2.0,
        _ => 1.0,
    }
}

/// `W = ceil(multiplier × d_avg)`. Products within 1e-9 of an integer count
/// as that integer so float noise never adds a step.
pub fn window_for(d_avg: f64, multiplier: f64) -> Result<usize, BacktrackError> {
    if !(multiplier > 0.0 && multiplier.is_finite()) {
        return Err(BacktrackError::InvalidMultiplier(multiplier));
    }
    if !(d_avg > 0.0 && d_avg.is_finite()) {
        return Err(BacktrackError::InvalidDAvg(d_avg));
    }
    Ok(((multiplier * d_avg - 1e-9).ceil() as usize).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktrackConfig {
    /// When false, `R` is ignored and only `S` and the step cap act.
    pub enabled: bool,
    pub x: f64,
    pub w_multiplier: f64,
    pub d_avg: f64,
    pub window: usize,
    pub max_replans: usize,
    pub max_steps: usize,
}

impl BacktrackConfig {
    pub fn new(x: f64, w_multiplier: f64, d_avg: f64, max_replans: usize) -> Result<Self, BacktrackError> {
        if !(x > 0.0 && x < 1.0) {
            return Err(BacktrackError::InvalidThreshold(x));
        }
        let window = window_for(d_avg, w_multiplier)?;
        Ok(Self {
            enabled: true,
            x,
            w_multiplier,
            d_avg,
            window,
            max_replans,
            max_steps: 4 * window,
        })
    }

    pub fn for_dataset(dataset: Dataset) -> Self {
        let d = d_avg(dataset).unwrap_or(2.35);
        Self::new(DEFAULT_X, default_multiplier(dataset), d, DEFAULT_MAX_REPLANS).expect("defaults are valid")
    }

    pub fn disabled(mut self) -> Self {
        self.enabled = false;
        self
    }
}

/// State of the active subtask attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskTrace {
    pub subtask: String,
    pub start_viewpoint: ViewpointId,
    r_history: Vec<f64>,
    /// Rollbacks already spent at this planning position.
    pub replans: usize,
}

impl SubtaskTrace {
    pub fn new(subtask: impl Into<String>, start_viewpoint: ViewpointId, replans: usize) -> Self {
        Self {
            subtask: subtask.into(),
            start_viewpoint,
            r_history: Vec::new(),
            replans,
        }
    }

    pub fn push(&mut self, r: f64) {
        self.r_history.push(r);
    }

    pub fn r_history(&self) -> &[f64] {
        &self.r_history
    }

    pub fn action_count(&self) -> usize {
        self.r_history.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Advance,
    Backtrack,
    Continue,
    FailEpisode,
}

/// True when the last `w + 1` values are strictly decreasing.
pub fn falling_run(history: &[f64], w: usize) -> bool {
    history.len() > w && history[history.len() - w - 1..].windows(2).all(|p| p[1] < p[0])
}

pub fn decide(s: bool, trace: &SubtaskTrace, cfg: &BacktrackConfig) -> Verdict {
    if s {
        return Verdict::Advance;
    }
    if !cfg.enabled {
        return Verdict::Continue;
    }
    let low = trace.r_history.last().is_some_and(|&r| r < cfg.x);
    if !(low || falling_run(&trace.r_history, cfg.window)) {
        return Verdict::Continue;
    }
    if trace.replans >= cfg.max_replans {
        Verdict::FailEpisode
    } else {
        Verdict::Backtrack
    }
}

/// Teleports the agent to the trace's start, charging the return path as
/// trajectory length, and resets the trace for another attempt.
pub fn rollback(state: &mut SimState, trace: &mut SubtaskTrace, world: &NavGraph) -> Result<(), SimError> {
    world.viewpoint(trace.start_viewpoint)?;
    state.teleport(world, trace.start_viewpoint)?;
    trace.r_history.clear();
    trace.replans += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    ReplanBudget,
    StepCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskOutcome {
    Completed,
    Backtracked,
    EpisodeFailed(FailReason),
}

#[derive(Debug, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Runs policy steps for one subtask attempt until `decide` ends it. The
/// per-subtask step cap counts as a backtrack trigger; with backtracking
/// disabled it fails the episode instead.
pub fn run_subtask(
    policy: &mut dyn AgentPolicy,
    world: &NavGraph,
    state: &mut SimState,
    trajectory: &mut Trajectory,
    instruction: &InstructionPair,
    trace: &mut SubtaskTrace,
    cfg: &BacktrackConfig,
) -> Result<SubtaskOutcome, StepError> {
    loop {
        if trace.action_count() >= cfg.max_steps {
            if !cfg.enabled {
                return Ok(SubtaskOutcome::EpisodeFailed(FailReason::StepCap));
            }
            if trace.replans >= cfg.max_replans {
                return Ok(SubtaskOutcome::EpisodeFailed(FailReason::ReplanBudget));
            }
            rollback(state, trace, world)?;
            return Ok(SubtaskOutcome::Backtracked);
        }
        let obs = Observation::at(world, state.position)?;
        let out = policy.step(instruction, &obs, trajectory.actions(), trace.action_count())?;
        match out.action {
            // Stop inside a subtask means "stay"; the episode-level stop is the runner's.
            Action::Stop => state.steps += 1,
            Action::MoveTo(_) => state.apply(world, out.action)?,
        }
        trajectory.record_step(out, obs, &instruction.subtask);
        trace.push(out.r);
        match decide(out.s, trace, cfg) {
            Verdict::Advance => return Ok(SubtaskOutcome::Completed),
            Verdict::Continue => {}
            Verdict::Backtrack => {
                rollback(state, trace, world)?;
                return Ok(SubtaskOutcome::Backtracked);
            }
            Verdict::FailEpisode => return Ok(SubtaskOutcome::EpisodeFailed(FailReason::ReplanBudget)),
        }
    }
}
