//! Ablation sweeps over synthetic scenarios: the planner variants with and
//! without knowledge and backtracking, and the `(x, W multiplier)` grid.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::action::{AgentPolicy, NoisyPolicy, OraclePolicy, PolicyError};
use crate::backend::{BackendError, Cassette, ProposalBackend, Recorder};
use crate::backtrack::{d_avg, default_multiplier, BacktrackConfig, BacktrackError};
use crate::embed::HashingEmbedder;
use crate::kg::{Dataset, EventGraph, KgError, TaskSequence};
use crate::planner::{Knowledge, Planner};
use crate::retrieval::RetrievalError;
use crate::sim::episode::{generate_episodes_with, EpisodeOptions};
use crate::sim::runner::{episode_seed, run_suite, EpisodeResult, RunSettings};
use crate::sim::{compute_metrics, default_radius, generate_world, Episode, MetricsReport, NavGraph, SimError};

pub const X_GRID: [f64; 3] = [0.1, 0.25, 0.5];
pub const W_MULT_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const REPORT_COLUMNS: [&str; 9] = ["variant", "SR", "NE", "TL", "SPL", "OSR", "GC", "PLWSR", "PLWGC"];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Backtrack(#[from] BacktrackError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no evaluation episodes")]
    NoEpisodes,
}

/// Shape of a generated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub viewpoints: usize,
    pub seed: u64,
    pub episodes: usize,
    /// Training routes generated per dataset tag.
    pub train_episodes: usize,
    /// Annotator wordings per route.
    pub annotations: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            viewpoints: 100,
            seed: 0,
            episodes: 50,
            train_episodes: 60,
            annotations: 3,
        }
    }
}

/// One world, evaluation episodes and per-dataset training corpora. The
/// evaluation routes are part of the corpus of their own dataset.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub world: NavGraph,
    pub episodes: Vec<Episode>,
    pub corpora: BTreeMap<Dataset, Vec<TaskSequence>>,
}

const TRAIN_DATASETS: [(Dataset, &str, usize); 3] =
    [(Dataset::R2r, "r2r", 3), (Dataset::Reverie, "reverie", 4), (Dataset::Alfred, "alfred", 2)];

impl Scenario {
    pub fn generate(spec: &ScenarioSpec) -> Result<Self, EvalError> {
        let world = generate_world(spec.viewpoints, default_radius(spec.viewpoints), spec.seed)?;
        Self::generate_in(world, spec)
    }

    pub fn generate_in(world: NavGraph, spec: &ScenarioSpec) -> Result<Self, EvalError> {
        let episodes = generate_episodes_with(&world, spec.episodes, spec.seed.wrapping_add(1), &EpisodeOptions::default())?;
        let mut corpora: BTreeMap<Dataset, Vec<TaskSequence>> = BTreeMap::new();
        for (i, (dataset, prefix, hops)) in TRAIN_DATASETS.into_iter().enumerate() {
            let opts = EpisodeOptions {
                dataset,
                id_prefix: format!("{prefix}-train"),
                hops_per_subtask: hops,
                ..EpisodeOptions::default()
            };
            let train = generate_episodes_with(&world, spec.train_episodes, spec.seed.wrapping_add(10 + i as u64), &opts)?;
            let corpus = corpora.entry(dataset).or_default();
            for e in &train {
                corpus.extend(e.annotations(&world, spec.annotations, episode_seed(spec.seed, &e.id))?);
            }
        }
        for e in &episodes {
            let anns = e.annotations(&world, spec.annotations, episode_seed(spec.seed, &e.id))?;
            corpora.entry(e.dataset).or_default().extend(anns);
        }
        Ok(Self {
            world,
            episodes,
            corpora,
        })
    }

    /// Dataset of the evaluation episodes (the first episode's tag).
    pub fn dataset(&self) -> Dataset {
        self.episodes.first().map_or(Dataset::R2r, |e| e.dataset)
    }

    pub fn graph_for(&self, datasets: &[Dataset]) -> Result<EventGraph, KgError> {
        let mut graph = EventGraph::new();
        for d in datasets {
            let part = EventGraph::from_sequences(self.corpora.get(d).into_iter().flatten())?;
            graph = graph.merge(&part);
        }
        Ok(graph)
    }
}

/// Rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Base,
    PlanD,
    PlanS,
    PlanF,
    PlanFBacktrack,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Base, Variant::PlanD, Variant::PlanS, Variant::PlanF, Variant::PlanFBacktrack];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::PlanD => "base+planD",
            Variant::PlanS => "base+planS",
            Variant::PlanF => "base+planF",
            Variant::PlanFBacktrack => "base+planF+backtrace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub topk: usize,
    /// Per-step random-move probability; 0 runs the oracle policy.
    pub epsilon: f64,
    pub seed: u64,
    pub x: f64,
    /// `None` uses the dataset default.
    pub w_multiplier: Option<f64>,
    pub max_replans: usize,
    pub embed_dim: usize,
    pub jobs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            topk: 5,
            epsilon: 0.0,
            seed: 0,
            x: crate::backtrack::DEFAULT_X,
            w_multiplier: None,
            max_replans: crate::backtrack::DEFAULT_MAX_REPLANS,
            embed_dim: 256,
            jobs: 1,
        }
    }
}

impl EvalSettings {
    pub fn backtrack_config(&self, dataset: Dataset, x: f64, w_multiplier: Option<f64>) -> Result<BacktrackConfig, EvalError> {
        let d = d_avg(dataset).unwrap_or(2.35);
        let mult = w_multiplier.or(self.w_multiplier).unwrap_or_else(|| default_multiplier(dataset));
        Ok(BacktrackConfig::new(x, mult, d, self.max_replans)?)
    }
}

/// Knowledge for the in-domain (`planS`) and merged (`planF`) variants.
pub struct KnowledgeSet {
    pub in_domain: Knowledge,
    pub merged: Knowledge,
}

impl KnowledgeSet {
    pub fn build(scenario: &Scenario, embed_dim: usize) -> Result<Self, EvalError> {
        let in_domain = scenario.graph_for(&[scenario.dataset()])?;
        let merged = scenario.graph_for(&Dataset::ALL)?;
        let embedder = || Box::new(HashingEmbedder::new(embed_dim, 0));
        Ok(Self {
            in_domain: Knowledge::build(in_domain, embedder())?,
            merged: Knowledge::build(merged, embedder())?,
        })
    }
}

pub fn make_policy<'a>(
    world: &'a NavGraph,
    episode: &'a Episode,
    settings: &EvalSettings,
    lost_window: usize,
) -> Result<Box<dyn AgentPolicy + 'a>, PolicyError> {
    let seed = episode_seed(settings.seed, &episode.id);
    let oracle = OraclePolicy::new(world, episode, seed).with_lost_window(lost_window.max(1));
    if settings.epsilon == 0.0 {
        Ok(Box::new(oracle))
    } else {
        Ok(Box::new(NoisyPolicy::new(oracle, settings.epsilon, seed ^ 0x9e37_79b9_7f4a_7c15)?))
    }
}

/// Supplies the planner backend for a row, given the row label.
pub type BackendFactory<'a> = dyn FnMut(&str) -> Result<Box<dyn ProposalBackend>, BackendError> + 'a;

/// Results of one table row.
#[derive(Debug, Clone)]
pub struct RowRun {
    pub variant: String,
    pub report: MetricsReport,
    pub results: Vec<EpisodeResult>,
    /// Every planner exchange made while running the row.
    pub cassette: Cassette,
}

/// Runs one configuration over the scenario's episodes.
pub fn run_row(
    scenario: &Scenario,
    knowledge: Option<&Knowledge>,
    backend: &dyn ProposalBackend,
    settings: &EvalSettings,
    run: &RunSettings,
    label: &str,
) -> Result<RowRun, EvalError> {
    let recorder = Recorder::new(backend);
    let planner = |_: usize| Planner::new(knowledge, &recorder, settings.topk);
    let lost = run.backtrack.window;
    let results = run_suite(
        &scenario.episodes,
        &scenario.world,
        planner,
        |e| make_policy(&scenario.world, e, settings, lost),
        run,
        settings.jobs,
    )?;
    let report = compute_metrics(&results, &scenario.episodes, &scenario.world)?;
    Ok(RowRun {
        variant: label.to_string(),
        report,
        results,
        cassette: recorder.into_cassette(),
    })
}

fn variant_settings(variant: Variant, scenario: &Scenario, settings: &EvalSettings) -> Result<RunSettings, EvalError> {
    let cfg = settings.backtrack_config(scenario.dataset(), settings.x, settings.w_multiplier)?;
    let mut run = RunSettings::new(if variant == Variant::PlanFBacktrack { cfg } else { cfg.disabled() });
    run.single_shot = variant == Variant::Base;
    Ok(run)
}

pub fn run_variant(
    scenario: &Scenario,
    knowledge: &KnowledgeSet,
    variant: Variant,
    backend: &dyn ProposalBackend,
    settings: &EvalSettings,
) -> Result<RowRun, EvalError> {
    let k = match variant {
        Variant::Base | Variant::PlanD => None,
        Variant::PlanS => Some(&knowledge.in_domain),
        Variant::PlanF | Variant::PlanFBacktrack => Some(&knowledge.merged),
    };
    let run = variant_settings(variant, scenario, settings)?;
    run_row(scenario, k, backend, settings, &run, variant.label())
}

/// The five ablation rows in fixed order. `backend_for` supplies the
/// planner backend for each row label.
pub fn ablation(
    scenario: &Scenario,
    knowledge: &KnowledgeSet,
    settings: &EvalSettings,
    backend_for: &mut BackendFactory<'_>,
) -> Result<Vec<RowRun>, EvalError> {
    if scenario.episodes.is_empty() {
        return Err(EvalError::NoEpisodes);
    }
    Variant::ALL
        .iter()
        .map(|&v| {
            let backend = backend_for(v.label())?;
            run_variant(scenario, knowledge, v, backend.as_ref(), settings)
        })
        .collect()
}

pub fn grid_label(x: f64, w_multiplier: f64) -> String {
    format!("base+planF+backtrace[x={x},w={w_multiplier}xD]")
}

/// Merged knowledge with backtracking over `X_GRID × W_MULT_GRID`, `x`-major.
pub fn grid(
    scenario: &Scenario,
    knowledge: &KnowledgeSet,
    settings: &EvalSettings,
    backend_for: &mut BackendFactory<'_>,
) -> Result<Vec<RowRun>, EvalError> {
    if scenario.episodes.is_empty() {
        return Err(EvalError::NoEpisodes);
    }
    let mut rows = Vec::with_capacity(X_GRID.len() * W_MULT_GRID.len());
    for x in X_GRID {
        for m in W_MULT_GRID {
            let label = grid_label(x, m);
            let run = RunSettings::new(settings.backtrack_config(scenario.dataset(), x, Some(m))?);
            let backend = backend_for(&label)?;
            rows.push(run_row(scenario, Some(&knowledge.merged), backend.as_ref(), settings, &run, &label)?);
        }
    }
    Ok(rows)
}

/// Tab-separated report with a header row and fixed column order.
pub fn write_report(rows: &[(String, MetricsReport)], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{}", REPORT_COLUMNS.join("\t"))?;
    for (label, r) in rows {
        writeln!(
            out,
            "{label}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.sr, r.ne, r.tl, r.spl, r.osr, r.gc, r.plwsr, r.plwgc
        )?;
    }
    Ok(())
}

pub fn report_rows(rows: &[RowRun]) -> Vec<(String, MetricsReport)> {
    rows.iter().map(|r| (r.variant.clone(), r.report)).collect()
}

/// File-system-safe name for a row label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::MockBackend;

    #[test]
    fn small_scenario_rows() {
        let spec = ScenarioSpec {
            viewpoints: 60,
            episodes: 6,
            train_episodes: 10,
            ..ScenarioSpec::default()
        };
        let sc = Scenario::generate(&spec).unwrap();
        let ks = KnowledgeSet::build(&sc, 64).unwrap();
        assert!(ks.merged.graph.stats().edge_count > ks.in_domain.graph.stats().edge_count);
        let mut mock = |_: &str| Ok(Box::new(MockBackend) as Box<dyn ProposalBackend>);
        let rows = ablation(&sc, &ks, &EvalSettings::default(), &mut mock).unwrap();
        let labels: Vec<_> = rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(labels, Variant::ALL.map(Variant::label));
        // Without planning, the oracle walks straight to the goal.
        assert_eq!(rows[0].report.sr, 1.0);
        assert!(rows[1].cassette.entries().all(|e| e.prompt.contains("KNOWLEDGE:\nno relevant knowledge found\n")));
        let mut buf = Vec::new();
        write_report(&report_rows(&rows), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("variant\tSR\tNE\tTL\tSPL\tOSR\tGC\tPLWSR\tPLWGC\n"));
    }
}
