//! Command-line surface. Exit codes: 0 success, 2 configuration error,
//! 3 data error, 4 backend error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backend::{BackendError, Cassette, ProposalBackend, Recorder, RemoteBackend, Replay};
use crate::backtrack::{d_avg, default_multiplier, BacktrackConfig};
use crate::config::{BackendMode, ConfigError, RunConfig};
use crate::embed::HashingEmbedder;
use crate::eval::{self, EvalSettings, KnowledgeSet, Scenario};
use crate::extraction::{extract_all, ExtractionReport, FieldValue, RawRecord, Strategy};
use crate::kg::{read_sequences, write_sequences, Dataset, EventGraph};
use crate::planner::{Knowledge, MockBackend, Planner};
use crate::retrieval::{format_knowledge, IndexScope, RetrievalIndex};
use crate::sim::episode::{load_episodes, save_episodes, EpisodeOptions};
use crate::sim::runner::{run_suite, EpisodeResult, RunSettings};
use crate::sim::{compute_metrics, default_radius, generate_world, Episode, NavGraph};

#[derive(Debug, Parser)]
#[command(name = "eventnav", version, about = "Event knowledge graphs, subtask planning and backtracking navigation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub topk: Option<usize>,
    #[arg(long = "backtrack-x", global = true)]
    pub backtrack_x: Option<f64>,
    #[arg(long = "w-mult", global = true)]
    pub w_mult: Option<f64>,
    #[arg(long, global = true)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Mock,
    Replay,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Heuristic,
    Backend,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn dataset records into task sequences.
    Extract {
        #[arg(long)]
        dataset: String,
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "heuristic")]
        strategy: StrategyArg,
        /// Where to write the extraction report (JSON); stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build a knowledge graph from sequence files.
    BuildKg {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge knowledge graph files.
    Merge {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print graph statistics.
    Stats {
        #[arg(long)]
        kg: Option<PathBuf>,
    },
    /// Build and save a retrieval index.
    Index {
        #[arg(long)]
        kg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Index coarse tasks (paired with their first subtasks) instead of subtasks.
        #[arg(long)]
        openings: bool,
    },
    /// Retrieve similar subtasks and their successors.
    Query {
        #[arg(long)]
        kg: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        text: String,
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Generate a world and episodes.
    GenWorld {
        #[arg(long, default_value_t = 100)]
        viewpoints: usize,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        episodes: usize,
        #[arg(long)]
        episodes_out: Option<PathBuf>,
    },
    /// Run an episode suite.
    Run {
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        kg: Option<PathBuf>,
        /// Output directory for results, report and trajectory logs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ablation table and the (x, W-multiplier) grid on a generated scenario.
    Eval {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Backend(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<eval::EvalError> for CliError {
    fn from(e: eval::EvalError) -> Self {
        match e {
            eval::EvalError::Backend(b) => b.into(),
            eval::EvalError::Backtrack(b) => CliError::Config(b.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn data_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn required(value: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    value
        .or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Config(format!("missing {what} path (flag or [paths] entry)")))
}

/// Parses arguments and runs the command, writing human output to `out`.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(global: &GlobalOpts) -> Result<RunConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(k) = global.topk {
        cfg.retrieval.topk = k;
    }
    if let Some(x) = global.backtrack_x {
        cfg.backtrack.x = x;
    }
    if let Some(m) = global.w_mult {
        cfg.backtrack.w_multiplier = Some(m);
    }
    if let Some(mode) = global.mode {
        cfg.backend.mode = match mode {
            ModeArg::Mock => BackendMode::Mock,
            ModeArg::Replay => BackendMode::Replay,
            ModeArg::Remote => BackendMode::Remote,
        };
    }
    if let Some(j) = global.jobs {
        cfg.jobs = Some(j);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Extract {
            dataset,
            input,
            out: dest,
            strategy,
            report,
        } => cmd_extract(&cfg, &dataset, &input, &dest, strategy, report.as_deref(), out),
        Command::BuildKg { input, out: dest } => cmd_build_kg(&input, &dest, out),
        Command::Merge { input, out: dest } => cmd_merge(&input, &dest, out),
        Command::Stats { kg } => cmd_stats(&required(kg, &cfg.paths.kg, "kg")?, out),
        Command::Index { kg, out: dest, openings } => {
            cmd_index(&cfg, &required(kg, &cfg.paths.kg, "kg")?, &dest, openings, out)
        }
        Command::Query { kg, index, text, k } => {
            let kg = required(kg, &cfg.paths.kg, "kg")?;
            let index = index.or_else(|| cfg.paths.index.clone());
            cmd_query(&cfg, &kg, index.as_deref(), &text, k.unwrap_or(cfg.retrieval.topk), out)
        }
        Command::GenWorld {
            viewpoints,
            radius,
            out: dest,
            episodes,
            episodes_out,
        } => cmd_gen_world(&cfg, viewpoints, radius, &dest, episodes, episodes_out.as_deref(), out),
        Command::Run {
            world,
            episodes,
            kg,
            out: dest,
        } => {
            let world = required(world, &cfg.paths.world, "world")?;
            let episodes = required(episodes, &cfg.paths.episodes, "episodes")?;
            let kg = kg.or_else(|| cfg.paths.kg.clone());
            let dest = dest.or_else(|| cfg.paths.out.clone());
            cmd_run(&cfg, &world, &episodes, kg.as_deref(), dest.as_deref(), out)
        }
        Command::Eval { out: dest } => {
            let dest = required(dest, &cfg.paths.out, "out")?;
            cmd_eval(&cfg, &dest, out)
        }
    }
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(data_at(parent))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(data_at(path))?);
    write(&mut w).and_then(|_| w.flush()).map_err(data_at(path))
}

fn planner_backend(cfg: &RunConfig, cassette: Option<&Path>) -> Result<Box<dyn ProposalBackend>, CliError> {
    Ok(match cfg.backend.mode {
        BackendMode::Mock => Box::new(MockBackend),
        BackendMode::Replay => {
            let path = cassette.ok_or_else(|| CliError::Config("replay mode needs a cassette path".into()))?;
            Box::new(Replay::new(Cassette::load(path).map_err(|e| {
                CliError::Backend(format!("cannot load cassette {}: {e}", path.display()))
            })?))
        }
        BackendMode::Remote => {
            let endpoint = cfg.backend.endpoint.clone().expect("validated");
            Box::new(
                RemoteBackend::new(endpoint, cfg.backend.key.clone(), cfg.backend.model.clone())
                    .with_timeout(Duration::from_secs(cfg.backend.timeout_secs)),
            )
        }
    })
}

/// `(location, message)` pairs for input lines that could not be used.
pub type Rejects = Vec<(String, String)>;

/// Reads a dataset file of one JSON object per line. Lines that do not
/// parse are returned as `(line number, message)`.
pub fn read_raw_records(
    reader: impl BufRead,
    dataset: Dataset,
    id_field: &str,
    source: &str,
) -> std::io::Result<(Vec<RawRecord>, Rejects)> {
    let mut records = Vec::new();
    let mut bad = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_id = format!("{source}:{}", idx + 1);
        match serde_json::from_str::<std::collections::BTreeMap<String, serde_json::Value>>(&line) {
            Ok(map) => {
                let id = match map.get(id_field) {
                    Some(serde_json::Value::String(s)) => s.clone(),
                    Some(serde_json::Value::Number(n)) => n.to_string(),
                    _ => line_id.clone(),
                };
                let mut rec = RawRecord::new(dataset, id);
                for (k, v) in map {
                    match serde_json::from_value::<FieldValue>(v) {
                        Ok(fv) => {
                            rec.payload.insert(k, fv);
                        }
                        Err(_) if k == id_field => {}
                        Err(e) => {
                            bad.push((line_id.clone(), format!("field {k:?}: {e}")));
                            rec.payload.clear();
                            break;
                        }
                    }
                }
                if !rec.payload.is_empty() {
                    records.push(rec);
                }
            }
            Err(e) => bad.push((line_id, e.to_string())),
        }
    }
    Ok((records, bad))
}

fn cmd_extract(
    cfg: &RunConfig,
    dataset: &str,
    inputs: &[PathBuf],
    dest: &Path,
    strategy: StrategyArg,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let tag: Dataset = dataset.parse().map_err(CliError::Config)?;
    let mapping = cfg.mapping_for(tag.as_str());
    let mut records = Vec::new();
    let mut report = ExtractionReport::default();
    for path in inputs {
        let reader = BufReader::new(File::open(path).map_err(data_at(path))?);
        let (recs, bad) =
            read_raw_records(reader, tag, &mapping.id, &path.display().to_string()).map_err(data_at(path))?;
        records.extend(recs);
        for (line, msg) in bad {
            report.reject(line, msg);
        }
    }
    let backend = match strategy {
        StrategyArg::Heuristic => None,
        StrategyArg::Backend => Some(planner_backend(cfg, cfg.paths.cassettes.as_deref())?),
    };
    let strat = match &backend {
        None => Strategy::Heuristic,
        Some(b) => Strategy::Backend(b.as_ref()),
    };
    let (seqs, rep) = extract_all(&records, &mapping, strat);
    report.accepted += rep.accepted;
    report.rejected += rep.rejected;
    report.rejects.extend(rep.rejects);
    write_file(dest, |w| write_sequences(&seqs, w))?;
    let json = serde_json::to_string_pretty(&report).map_err(data)?;
    match report_path {
        Some(p) => write_file(p, |w| writeln!(w, "{json}"))?,
        None => writeln!(out, "{json}").map_err(data)?,
    }
    Ok(())
}

fn load_sequences(path: &Path) -> Result<Vec<crate::kg::TaskSequence>, CliError> {
    read_sequences(BufReader::new(File::open(path).map_err(data_at(path))?))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_kg(path: &Path) -> Result<EventGraph, CliError> {
    EventGraph::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_build_kg(inputs: &[PathBuf], dest: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let mut graph = EventGraph::new();
    for path in inputs {
        for seq in load_sequences(path)? {
            graph.insert_sequence(seq).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        }
    }
    graph.save(dest).map_err(data)?;
    write!(out, "{}", graph.stats()).map_err(data)
}

fn cmd_merge(inputs: &[PathBuf], dest: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let mut graph = EventGraph::new();
    for path in inputs {
        graph = graph.merge(&load_kg(path)?);
    }
    graph.save(dest).map_err(data)?;
    write!(out, "{}", graph.stats()).map_err(data)
}

fn cmd_stats(kg: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    write!(out, "{}", load_kg(kg)?.stats()).map_err(data)
}

fn cmd_index(cfg: &RunConfig, kg: &Path, dest: &Path, openings: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let graph = load_kg(kg)?;
    let embedder = HashingEmbedder::new(cfg.retrieval.dim, 0);
    let index = if openings {
        RetrievalIndex::build_openings(&graph, &embedder)
    } else {
        RetrievalIndex::build(&graph, &embedder)
    }
    .map_err(data)?;
    index.save(dest).map_err(data)?;
    writeln!(out, "indexed\t{}", index.len()).map_err(data)
}

fn cmd_query(
    cfg: &RunConfig,
    kg: &Path,
    index: Option<&Path>,
    text: &str,
    k: usize,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::Config("k must be at least 1".into()));
    }
    let graph = load_kg(kg)?;
    let embedder = HashingEmbedder::new(cfg.retrieval.dim, 0);
    let index = match index {
        Some(p) => RetrievalIndex::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => RetrievalIndex::build(&graph, &embedder).map_err(data)?,
    };
    if index.scope != IndexScope::Successions {
        return Err(CliError::Data("query needs a subtask index, not an openings index".into()));
    }
    let hits = index.query(&graph, &embedder, text, k).map_err(data)?;
    let mut w = |s: String| writeln!(out, "{s}").map_err(data);
    w("rank\tsimilarity\tsubtask\tsuccessor\tweight".into())?;
    for (rank, hit) in hits.iter().enumerate() {
        for (succ, weight) in &hit.successors {
            w(format!(
                "{}\t{:.3}\t{}\t{}\t{}",
                rank + 1,
                hit.similarity,
                hit.node.text,
                succ.text,
                weight
            ))?;
        }
    }
    w(String::new())?;
    w(format_knowledge(&hits))
}

fn cmd_gen_world(
    cfg: &RunConfig,
    viewpoints: usize,
    radius: Option<f64>,
    dest: &Path,
    episodes: usize,
    episodes_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let radius = radius.unwrap_or_else(|| default_radius(viewpoints));
    let world = generate_world(viewpoints, radius, cfg.seed).map_err(data)?;
    world.save(dest).map_err(data)?;
    writeln!(out, "viewpoints\t{}\nedges\t{}\nmean_degree\t{:.3}", world.len(), world.edges().len(), world.mean_degree())
        .map_err(data)?;
    if episodes > 0 {
        let path = episodes_out.ok_or_else(|| CliError::Config("--episodes needs --episodes-out".into()))?;
        let eps = crate::sim::episode::generate_episodes_with(
            &world,
            episodes,
            cfg.seed.wrapping_add(1),
            &EpisodeOptions::default(),
        )
        .map_err(data)?;
        save_episodes(&eps, path).map_err(data)?;
        writeln!(out, "episodes\t{}", eps.len()).map_err(data)?;
    }
    Ok(())
}

/// Backtracking settings from the config for episodes of `dataset`.
pub fn backtrack_config(cfg: &RunConfig, dataset: Dataset) -> Result<BacktrackConfig, CliError> {
    let b = &cfg.backtrack;
    let d = d_avg(dataset).unwrap_or(2.35);
    let mult = b.w_multiplier.unwrap_or_else(|| default_multiplier(dataset));
    let mut bc = BacktrackConfig::new(b.x, mult, d, b.max_replans).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(steps) = b.max_steps_per_subtask {
        bc.max_steps = steps;
    }
    bc.enabled = b.enabled;
    Ok(bc)
}

fn write_results(results: &[EpisodeResult], w: &mut impl Write) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn cmd_run(
    cfg: &RunConfig,
    world_path: &Path,
    episodes_path: &Path,
    kg: Option<&Path>,
    dest: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let world = NavGraph::load(world_path).map_err(|e| CliError::Data(format!("{}: {e}", world_path.display())))?;
    let mut episodes: Vec<Episode> =
        load_episodes(episodes_path).map_err(|e| CliError::Data(format!("{}: {e}", episodes_path.display())))?;
    episodes.sort_by(|a, b| a.id.cmp(&b.id));
    for e in &episodes {
        e.validate(&world).map_err(data)?;
    }
    let knowledge = match kg {
        Some(p) => Some(
            Knowledge::build(load_kg(p)?, Box::new(HashingEmbedder::new(cfg.retrieval.dim, 0))).map_err(data)?,
        ),
        None => None,
    };
    let dataset = episodes.first().map_or(Dataset::R2r, |e| e.dataset);
    let mut settings = RunSettings::new(backtrack_config(cfg, dataset)?);
    settings.max_subtasks = cfg.backtrack.max_subtasks;
    settings.max_episode_steps = cfg.backtrack.max_episode_steps;
    let recorder = Recorder::new(planner_backend(cfg, cfg.paths.cassettes.as_deref())?);
    let eval_settings = EvalSettings {
        epsilon: cfg.policy.epsilon,
        seed: cfg.seed,
        ..EvalSettings::default()
    };
    let lost = settings.backtrack.window;
    let results = run_suite(
        &episodes,
        &world,
        |_| Planner::new(knowledge.as_ref(), &recorder, cfg.retrieval.topk),
        |e| eval::make_policy(&world, e, &eval_settings, lost),
        &settings,
        cfg.jobs(),
    )
    .map_err(data)?;
    let report = compute_metrics(&results, &episodes, &world).map_err(data)?;
    let rows = [("run".to_string(), report)];
    eval::write_report(&rows, &mut &mut *out).map_err(data)?;
    if let Some(dir) = dest {
        write_file(&dir.join("results.jsonl"), |w| write_results(&results, w))?;
        write_file(&dir.join("report.tsv"), |w| eval::write_report(&rows, w))?;
        for r in &results {
            write_file(&dir.join("trajectories").join(format!("{}.jsonl", eval::slug(&r.episode_id))), |w| {
                for rec in &r.log {
                    serde_json::to_writer(&mut *w, rec)?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })?;
        }
        if cfg.backend.mode != BackendMode::Replay {
            let cassette = recorder.cassette();
            write_file(&dir.join("run.cassette"), |w| cassette.write_to(w))?;
        }
    }
    if let Some(bad) = results.iter().find(|r| r.backend_failure) {
        return Err(CliError::Backend(format!(
            "episode {}: {}",
            bad.episode_id,
            bad.diagnostic.as_deref().unwrap_or("backend failure")
        )));
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, dest: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let mut spec = cfg.scenario.clone();
    spec.seed = cfg.seed;
    let scenario = Scenario::generate(&spec)?;
    let knowledge = KnowledgeSet::build(&scenario, cfg.retrieval.dim)?;
    let settings = EvalSettings {
        topk: cfg.retrieval.topk,
        epsilon: cfg.policy.epsilon,
        seed: cfg.seed,
        x: cfg.backtrack.x,
        w_multiplier: cfg.backtrack.w_multiplier,
        max_replans: cfg.backtrack.max_replans,
        embed_dim: cfg.retrieval.dim,
        jobs: cfg.jobs(),
    };
    let replay_dir = cfg.paths.cassettes.clone().unwrap_or_else(|| dest.join("cassettes"));
    let mut backend_for = |label: &str| -> Result<Box<dyn ProposalBackend>, BackendError> {
        let path = replay_dir.join(format!("{}.cassette", eval::slug(label)));
        match cfg.backend.mode {
            BackendMode::Replay => Ok(Box::new(Replay::new(
                Cassette::load(&path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?,
            ))),
            _ => planner_backend(cfg, None).map_err(|e| BackendError::Config(e.to_string())),
        }
    };
    let ablation = eval::ablation(&scenario, &knowledge, &settings, &mut backend_for)?;
    let grid = eval::grid(&scenario, &knowledge, &settings, &mut backend_for)?;
    for (name, rows) in [("ablation", &ablation), ("grid", &grid)] {
        let table = eval::report_rows(rows);
        write_file(&dest.join(format!("{name}.tsv")), |w| eval::write_report(&table, w))?;
        eval::write_report(&table, &mut &mut *out).map_err(data)?;
        writeln!(out).map_err(data)?;
    }
    if cfg.backend.mode != BackendMode::Replay {
        for row in ablation.iter().chain(&grid) {
            let path = dest.join("cassettes").join(format!("{}.cassette", eval::slug(&row.variant)));
            write_file(&path, |w| row.cassette.write_to(w))?;
        }
    }
    let failed = ablation.iter().chain(&grid).flat_map(|r| &r.results).find(|r| r.backend_failure);
    if let Some(bad) = failed {
        return Err(CliError::Backend(format!(
            "episode {}: {}",
            bad.episode_id,
            bad.diagnostic.as_deref().unwrap_or("backend failure")
        )));
    }
    Ok(())
}
