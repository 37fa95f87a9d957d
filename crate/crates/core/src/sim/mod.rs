//! Graph-based navigation simulator: worlds, episodes, metrics and the
//! episode runner.

pub mod episode;
pub mod metrics;
pub mod runner;
pub mod world;

pub use episode::{generate_episodes, EpisodeOptions, Episode, GtSubtask};
pub use metrics::{compute_metrics, MetricsReport};
pub use world::{default_radius, generate_world, NavGraph, Viewpoint, ViewpointId};

use crate::action::Action;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unknown viewpoint {0}")]
    UnknownViewpoint(ViewpointId),
    #[error("no path from {from} to {to}")]
    NoPath { from: ViewpointId, to: ViewpointId },
    #[error("illegal move from {from} to {to}: not adjacent")]
    IllegalMove { from: ViewpointId, to: ViewpointId },
    #[error("the agent has already stopped")]
    AlreadyStopped,
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("world has {0} connected viewpoints; at least two are needed")]
    DegenerateWorld(usize),
    #[error("no start/goal pair at least {min_distance} m apart")]
    NoEpisodePair { min_distance: f64 },
    #[error("{results} results for {episodes} episodes")]
    LengthMismatch { results: usize, episodes: usize },
    #[error("result {index} is for episode {found:?}, expected {expected:?}")]
    EpisodeMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Agent pose and running totals for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub position: ViewpointId,
    /// Every viewpoint the agent has stood on, in order, starting at the start.
    pub trajectory: Vec<ViewpointId>,
    /// Path length walked plus rollback penalties, meters.
    pub trajectory_length: f64,
    pub rollback_penalty: f64,
    pub steps: usize,
    pub stopped: bool,
}

impl SimState {
    pub fn new(start: ViewpointId) -> Self {
        Self {
            position: start,
            trajectory: vec![start],
            trajectory_length: 0.0,
            rollback_penalty: 0.0,
            steps: 0,
            stopped: false,
        }
    }

    pub fn apply(&mut self, world: &NavGraph, action: Action) -> Result<(), SimError> {
        if self.stopped {
            return Err(SimError::AlreadyStopped);
        }
        match action {
            Action::Stop => self.stopped = true,
            Action::MoveTo(to) => {
                let len = world.edge_length(self.position, to).ok_or(SimError::IllegalMove {
                    from: self.position,
                    to,
                })?;
                self.position = to;
                self.trajectory.push(to);
                self.trajectory_length += len;
            }
        }
        self.steps += 1;
        Ok(())
    }

    /// Moves the agent back to `to`, charging the shortest-path length as
    /// trajectory length. No-op when already there.
    pub fn teleport(&mut self, world: &NavGraph, to: ViewpointId) -> Result<(), SimError> {
        if self.position == to {
            world.viewpoint(to)?;
            return Ok(());
        }
        let (_, len) = world.shortest_path(self.position, to)?;
        self.position = to;
        self.trajectory.push(to);
        self.trajectory_length += len;
        self.rollback_penalty += len;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> NavGraph {
        let vp = |i: u32| Viewpoint {
            id: ViewpointId(i),
            position: [i as f64 * 2.0, 0.0, 0.0],
            caption: format!("post {i}"),
        };
        let e = |a, b| (ViewpointId(a), ViewpointId(b));
        NavGraph::new(vec![vp(0), vp(1), vp(2)], &[e(0, 1), e(1, 2)]).unwrap()
    }

    #[test]
    fn moves_accumulate_length() {
        let w = line();
        let mut s = SimState::new(ViewpointId(0));
        s.apply(&w, Action::MoveTo(ViewpointId(1))).unwrap();
        s.apply(&w, Action::MoveTo(ViewpointId(2))).unwrap();
        assert_eq!(s.trajectory_length, 4.0);
        assert!(matches!(
            s.apply(&w, Action::MoveTo(ViewpointId(0))),
            Err(SimError::IllegalMove { .. })
        ));
        s.apply(&w, Action::Stop).unwrap();
        assert!(matches!(s.apply(&w, Action::Stop), Err(SimError::AlreadyStopped)));
        assert_eq!(s.steps, 3);
    }

    #[test]
    fn teleport_charges_path_length() {
        let w = line();
        let mut s = SimState::new(ViewpointId(2));
        s.teleport(&w, ViewpointId(0)).unwrap();
        assert_eq!((s.trajectory_length, s.rollback_penalty), (4.0, 4.0));
        let before = s.clone();
        s.teleport(&w, ViewpointId(0)).unwrap();
        assert_eq!(s, before);
    }
}
