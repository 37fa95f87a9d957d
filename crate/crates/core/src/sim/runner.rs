use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::episode::Episode;
use super::world::{NavGraph, ViewpointId};
use super::{SimError, SimState};
use crate::action::{Action, AgentPolicy, InstructionPair, PolicyError, StepRecord, Trajectory};
use crate::backtrack::{run_subtask, BacktrackConfig, StepError, SubtaskOutcome, SubtaskTrace};
use crate::planner::{HistoryEntry, Outcome, PlanError, PlanMode, Planner, PlanningContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub backtrack: BacktrackConfig,
    /// Completed-subtask cap; defaults to `2 × |gt| + 2`.
    pub max_subtasks: Option<usize>,
    /// Total step cap for the episode, on top of the per-subtask caps.
    pub max_episode_steps: Option<usize>,
    /// Skip planning and hand the coarse instruction to the policy as its only subtask.
    pub single_shot: bool,
}

impl RunSettings {
    pub fn new(backtrack: BacktrackConfig) -> Self {
        Self {
            backtrack,
            max_subtasks: None,
            max_episode_steps: None,
            single_shot: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The planner answered DONE.
    Stop,
    SubtaskCap,
    StepCap,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub success: bool,
    /// Set when the episode was failed by the controller or by an error.
    pub aborted: bool,
    pub termination: Termination,
    pub final_position: ViewpointId,
    pub trajectory: Vec<ViewpointId>,
    /// Walked length plus rollback penalties, meters.
    pub trajectory_length: f64,
    pub rollback_penalty: f64,
    pub navigation_error: f64,
    pub steps: usize,
    pub replans: usize,
    pub subtasks: Vec<HistoryEntry>,
    pub diagnostic: Option<String>,
    /// The planner backend failed (transport, status or cassette miss).
    pub backend_failure: bool,
    #[serde(skip)]
    pub log: Vec<StepRecord>,
}

#[derive(Debug, thiserror::Error)]
enum RunError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

struct Run<'a> {
    world: &'a NavGraph,
    state: SimState,
    trajectory: Trajectory,
    history: Vec<HistoryEntry>,
    replans: usize,
}

impl Run<'_> {
    fn attempt(
        &mut self,
        policy: &mut dyn AgentPolicy,
        instruction: &InstructionPair,
        replans: usize,
        cfg: &BacktrackConfig,
    ) -> Result<SubtaskOutcome, RunError> {
        let mut trace = SubtaskTrace::new(&instruction.subtask, self.state.position, replans);
        let outcome = run_subtask(
            policy,
            self.world,
            &mut self.state,
            &mut self.trajectory,
            instruction,
            &mut trace,
            cfg,
        )?;
        if outcome == SubtaskOutcome::Backtracked {
            self.replans += 1;
        }
        Ok(outcome)
    }
}

fn planned_loop(
    run: &mut Run<'_>,
    episode: &Episode,
    planner: &Planner<'_>,
    policy: &mut dyn AgentPolicy,
    settings: &RunSettings,
) -> Result<Termination, RunError> {
    let max_subtasks = settings.max_subtasks.unwrap_or(2 * episode.gt_subtasks.len() + 2);
    let mut ctx = PlanningContext::new(&episode.coarse_instruction);
    let mut failed: Option<String> = None;
    let mut completed = 0;
    loop {
        if completed >= max_subtasks {
            return Ok(Termination::SubtaskCap);
        }
        if settings.max_episode_steps.is_some_and(|cap| run.state.steps >= cap) {
            return Ok(Termination::StepCap);
        }
        ctx.scene_caption = run.world.caption(run.state.position)?.to_string();
        let mode = match &failed {
            Some(f) => PlanMode::Replan { failed: f },
            None => PlanMode::Fresh,
        };
        let proposal = planner.plan(&mut ctx, mode)?;
        if proposal.is_stop {
            return Ok(Termination::Stop);
        }
        let instruction = InstructionPair {
            coarse: episode.coarse_instruction.clone(),
            subtask: proposal.text.clone(),
        };
        match run.attempt(policy, &instruction, ctx.replan_attempts, &settings.backtrack)? {
            SubtaskOutcome::Completed => {
                ctx.push_history(&proposal.text, Outcome::Completed);
                failed = None;
                completed += 1;
            }
            SubtaskOutcome::Backtracked => {
                ctx.push_history(&proposal.text, Outcome::Backtracked);
                failed = Some(proposal.text);
            }
            SubtaskOutcome::EpisodeFailed(_) => {
                run.history = ctx.history().to_vec();
                return Ok(Termination::Failed);
            }
        }
        run.history = ctx.history().to_vec();
    }
}

fn single_shot(
    run: &mut Run<'_>,
    episode: &Episode,
    policy: &mut dyn AgentPolicy,
    settings: &RunSettings,
) -> Result<Termination, RunError> {
    let mut cfg = settings.backtrack.clone();
    cfg.max_steps *= episode.gt_subtasks.len().max(1);
    let instruction = InstructionPair {
        coarse: episode.coarse_instruction.clone(),
        subtask: episode.coarse_instruction.clone(),
    };
    loop {
        let outcome = run.attempt(policy, &instruction, run.replans, &cfg)?;
        let entry = |outcome| HistoryEntry {
            subtask: instruction.subtask.clone(),
            outcome,
        };
        match outcome {
            SubtaskOutcome::Completed => {
                run.history.push(entry(Outcome::Completed));
                return Ok(Termination::Stop);
            }
            SubtaskOutcome::Backtracked => run.history.push(entry(Outcome::Backtracked)),
            SubtaskOutcome::EpisodeFailed(_) => return Ok(Termination::Failed),
        }
    }
}

/// Runs the two-loop algorithm for one episode. Component errors end the
/// episode as failed with a diagnostic instead of propagating.
pub fn run_episode(
    episode: &Episode,
    world: &NavGraph,
    planner: &Planner<'_>,
    policy: &mut dyn AgentPolicy,
    settings: &RunSettings,
) -> EpisodeResult {
    let mut run = Run {
        world,
        state: SimState::new(episode.start),
        trajectory: Trajectory::new(),
        history: Vec::new(),
        replans: 0,
    };
    let outcome = if settings.single_shot {
        single_shot(&mut run, episode, policy, settings)
    } else {
        planned_loop(&mut run, episode, planner, policy, settings)
    };
    let backend_failure = matches!(outcome, Err(RunError::Plan(PlanError::Backend(_))));
    let (termination, diagnostic) = match outcome {
        Ok(t) => (t, None),
        Err(e) => (Termination::Failed, Some(e.to_string())),
    };
    if !run.state.stopped {
        run.state.apply(world, Action::Stop).expect("a running agent can always stop");
    }
    let aborted = termination == Termination::Failed;
    let navigation_error = world.distance(run.state.position, episode.goal).unwrap_or(f64::INFINITY);
    EpisodeResult {
        episode_id: episode.id.clone(),
        success: !aborted && navigation_error <= episode.success_radius,
        aborted,
        termination,
        final_position: run.state.position,
        trajectory: run.state.trajectory,
        trajectory_length: run.state.trajectory_length,
        rollback_penalty: run.state.rollback_penalty,
        navigation_error,
        steps: run.state.steps,
        replans: run.replans,
        subtasks: run.history,
        diagnostic,
        backend_failure,
        log: run.trajectory.records(),
    }
}

/// Seed for an episode's policy, derived from the suite seed and the episode id.
pub fn episode_seed(seed: u64, episode_id: &str) -> u64 {
    xxh3_64_with_seed(episode_id.as_bytes(), seed)
}

/// Runs episodes on `jobs` threads; results come back in `episodes` order
/// regardless of completion order.
pub fn run_suite<'a, P, A>(
    episodes: &'a [Episode],
    world: &'a NavGraph,
    planner_for: P,
    policy_for: A,
    settings: &RunSettings,
    jobs: usize,
) -> Result<Vec<EpisodeResult>, PolicyError>
where
    P: Fn(usize) -> Planner<'a> + Sync,
    A: Fn(&'a Episode) -> Result<Box<dyn AgentPolicy + 'a>, PolicyError> + Sync,
{
    let work = || {
        episodes
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let mut policy = policy_for(e)?;
                Ok(run_episode(e, world, &planner_for(i), policy.as_mut(), settings))
            })
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}
