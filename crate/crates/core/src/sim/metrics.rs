use serde::{Deserialize, Serialize};

use super::episode::Episode;
use super::runner::EpisodeResult;
use super::world::NavGraph;
use super::SimError;

/// Suite means. Fractions lie in `[0, 1]`; `ne` and `tl` are meters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub sr: f64,
    pub ne: f64,
    pub tl: f64,
    pub spl: f64,
    pub osr: f64,
    pub gc: f64,
    pub plwsr: f64,
    pub plwgc: f64,
}

/// Per-episode terms of the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub ne: f64,
    pub tl: f64,
    /// Shortest start-to-goal length.
    pub reference_length: f64,
    pub oracle_success: bool,
    pub gc: f64,
    /// `l / max(p, l)`, defined as 1 when both are zero.
    pub path_weight: f64,
}

/// `l / max(p, l)`, 1 when both lengths are zero.
pub fn path_weight(reference: f64, taken: f64) -> f64 {
    let denom = reference.max(taken);
    if denom == 0.0 {
        1.0
    } else {
        reference / denom
    }
}

/// Fraction of the episode's subtask targets visited in order along `trajectory`.
pub fn goal_conditions(episode: &Episode, trajectory: &[super::ViewpointId]) -> f64 {
    if episode.gt_subtasks.is_empty() {
        return 0.0;
    }
    let mut next = 0;
    for v in trajectory {
        if next < episode.gt_subtasks.len() && *v == episode.gt_subtasks[next].target {
            next += 1;
        }
    }
    next as f64 / episode.gt_subtasks.len() as f64
}

pub fn episode_metrics(result: &EpisodeResult, episode: &Episode, world: &NavGraph) -> Result<EpisodeMetrics, SimError> {
    let to_goal = world.distances_from(episode.goal)?;
    let dist = |v| -> Result<f64, SimError> {
        let slot = world.viewpoints().partition_point(|p| p.id < v);
        world.viewpoint(v)?;
        to_goal[slot].ok_or(SimError::NoPath { from: v, to: episode.goal })
    };
    let ne = dist(result.final_position)?;
    let (_, reference_length) = episode.reference_path(world)?;
    let tl = result.trajectory_length;
    let mut oracle_success = false;
    for &v in &result.trajectory {
        if to_goal[world.viewpoints().partition_point(|p| p.id < v)].is_some_and(|d| d <= episode.success_radius) {
            oracle_success = true;
            break;
        }
    }
    Ok(EpisodeMetrics {
        success: !result.aborted && ne <= episode.success_radius,
        ne,
        tl,
        reference_length,
        oracle_success,
        gc: goal_conditions(episode, &result.trajectory),
        path_weight: path_weight(reference_length, tl),
    })
}

fn ensure_aligned(results: &[EpisodeResult], episodes: &[Episode]) -> Result<(), SimError> {
    if results.len() != episodes.len() {
        return Err(SimError::LengthMismatch {
            results: results.len(),
            episodes: episodes.len(),
        });
    }
    for (i, (r, e)) in results.iter().zip(episodes).enumerate() {
        if r.episode_id != e.id {
            return Err(SimError::EpisodeMismatch {
                index: i,
                expected: e.id.clone(),
                found: r.episode_id.clone(),
            });
        }
    }
    Ok(())
}

pub fn compute_metrics(results: &[EpisodeResult], episodes: &[Episode], world: &NavGraph) -> Result<MetricsReport, SimError> {
    ensure_aligned(results, episodes)?;
    let per: Vec<EpisodeMetrics> = results
        .iter()
        .zip(episodes)
        .map(|(r, e)| episode_metrics(r, e, world))
        .collect::<Result<_, _>>()?;
    Ok(aggregate(&per))
}

pub fn aggregate(per: &[EpisodeMetrics]) -> MetricsReport {
    if per.is_empty() {
        return MetricsReport::default();
    }
    let n = per.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    let s = |m: &EpisodeMetrics| if m.success { 1.0 } else { 0.0 };
    let spl = mean(&|m| s(m) * m.path_weight);
    MetricsReport {
        episodes: per.len(),
        sr: mean(&s),
        ne: mean(&|m| m.ne),
        tl: mean(&|m| m.tl),
        spl,
        osr: mean(&|m| if m.oracle_success { 1.0 } else { 0.0 }),
        gc: mean(&|m| m.gc),
        plwsr: spl,
        plwgc: mean(&|m| m.gc * m.path_weight),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(success: bool, l: f64, p: f64) -> EpisodeMetrics {
        EpisodeMetrics {
            success,
            ne: 0.0,
            tl: p,
            reference_length: l,
            oracle_success: success,
            gc: 1.0,
            path_weight: path_weight(l, p),
        }
    }

    #[test]
    fn spl_arithmetic() {
        assert_eq!(aggregate(&[m(true, 2.0, 2.5)]).spl, 0.8);
        assert_eq!(aggregate(&[m(true, 2.0, 2.0)]).spl, 1.0);
        assert_eq!(path_weight(0.0, 0.0), 1.0);
        let r = aggregate(&[m(true, 2.0, 2.5), m(false, 3.0, 1.0)]);
        assert_eq!(r.sr, 0.5);
        assert!(r.spl <= r.sr && r.plwsr <= r.sr);
        assert_eq!(aggregate(&[]), MetricsReport::default());
    }
}
