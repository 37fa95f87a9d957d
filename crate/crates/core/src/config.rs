//! Run configuration: a TOML file, then environment, then command-line flags.
//!
//! ```toml
//! seed = 7
//! jobs = 4
//!
//! [paths]
//! kg = "kg.jsonl"
//! world = "world.jsonl"
//! episodes = "episodes.jsonl"
//! cassettes = "cassettes"
//! out = "report"
//!
//! [backend]
//! mode = "mock"            # mock | replay | remote
//! model = "planner-large"
//!
//! [retrieval]
//! topk = 5
//!
//! [backtrack]
//! x = 0.25
//! w_multiplier = 2.0
//! max_replans = 3
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{ENV_KEY, ENV_URL};
use crate::eval::ScenarioSpec;
use crate::extraction::FieldMapping;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    #[default]
    Mock,
    Replay,
    Remote,
}

impl FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(BackendMode::Mock),
            "replay" => Ok(BackendMode::Replay),
            "remote" => Ok(BackendMode::Remote),
            other => Err(format!("unknown backend mode {other:?} (expected mock, replay or remote)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub kg: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub world: Option<PathBuf>,
    pub episodes: Option<PathBuf>,
    /// Directory of per-row cassettes for `eval`, or a single cassette file for `run`.
    pub cassettes: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub mode: BackendMode,
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    /// Filled from the environment only; never read from the file.
    #[serde(skip)]
    pub key: Option<String>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            mode: BackendMode::Mock,
            endpoint: None,
            model: "default".into(),
            timeout_secs: 60,
            key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub dim: usize,
    pub topk: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self { dim: 256, topk: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktrackSettings {
    pub enabled: bool,
    pub x: f64,
    /// `None` uses the dataset default (2 for R2R, 1 otherwise).
    pub w_multiplier: Option<f64>,
    pub max_replans: usize,
    /// `None` uses `4 × W`.
    pub max_steps_per_subtask: Option<usize>,
    pub max_subtasks: Option<usize>,
    pub max_episode_steps: Option<usize>,
}

impl Default for BacktrackSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            x: crate::backtrack::DEFAULT_X,
            w_multiplier: None,
            max_replans: crate::backtrack::DEFAULT_MAX_REPLANS,
            max_steps_per_subtask: None,
            max_subtasks: None,
            max_episode_steps: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySettings {
    /// Random-move probability of the scripted policy; 0 is the pure oracle.
    pub epsilon: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub paths: Paths,
    pub backend: BackendSettings,
    pub retrieval: RetrievalSettings,
    pub backtrack: BacktrackSettings,
    pub policy: PolicySettings,
    pub scenario: ScenarioSpec,
    /// Field mappings keyed by dataset tag, for `extract`.
    pub mapping: BTreeMap<String, FieldMapping>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Endpoint and key from `BACKEND_URL` / `BACKEND_KEY`; the variable wins over the file.
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var(k).ok());
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(url) = get(ENV_URL).filter(|u| !u.is_empty()) {
            self.backend.endpoint = Some(url);
        }
        if let Some(key) = get(ENV_KEY).filter(|k| !k.is_empty()) {
            self.backend.key = Some(key);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.retrieval.topk < 1 {
            return bad("retrieval.topk must be at least 1".into());
        }
        if self.retrieval.dim < 1 {
            return bad("retrieval.dim must be at least 1".into());
        }
        if self.backend.mode == BackendMode::Remote && self.backend.endpoint.is_none() {
            return bad(format!("backend.mode = \"remote\" needs backend.endpoint or {ENV_URL}"));
        }
        let b = &self.backtrack;
        if !(b.x > 0.0 && b.x < 1.0) {
            return bad(format!("backtrack.x must lie strictly between 0 and 1, got {}", b.x));
        }
        if let Some(m) = b.w_multiplier {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("backtrack.w_multiplier must be positive, got {m}"));
            }
        }
        if b.max_steps_per_subtask == Some(0) {
            return bad("backtrack.max_steps_per_subtask must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.policy.epsilon) {
            return bad(format!("policy.epsilon must lie in [0, 1], got {}", self.policy.epsilon));
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1".into());
        }
        if self.scenario.viewpoints < 2 {
            return bad("scenario.viewpoints must be at least 2".into());
        }
        Ok(())
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1)
    }

    pub fn mapping_for(&self, dataset: &str) -> FieldMapping {
        self.mapping
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(dataset))
            .map(|(_, m)| m.clone())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_choices() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.retrieval.topk, 5);
        assert_eq!(c.backtrack.x, 0.25);
        assert_eq!(c.backtrack.max_replans, 3);
        assert_eq!(c.backend.mode, BackendMode::Mock);
        c.validate().unwrap();
    }

    #[test]
    fn parses_sections_and_mappings() {
        let c = RunConfig::from_toml(
            "seed = 4\n[backtrack]\nx = 0.1\nw_multiplier = 4.0\n[mapping.ALFRED]\ncoarse = \"task_desc\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.backtrack.w_multiplier, Some(4.0));
        assert_eq!(c.mapping_for("alfred").coarse, "task_desc");
        assert_eq!(c.mapping_for("alfred").subtasks, "subgoals");
        assert_eq!(c.mapping_for("R2R"), FieldMapping::default());
    }

    #[test]
    fn validation_errors() {
        assert!(RunConfig::from_toml("[retrieval]\ntopk = 0").unwrap().validate().is_err());
        assert!(RunConfig::from_toml("[backend]\nmode = \"remote\"").unwrap().validate().is_err());
        assert!(RunConfig::from_toml("[backtrack]\nx = 1.0").unwrap().validate().is_err());
        assert!(RunConfig::from_toml("[bogus]\na = 1").is_err());
    }

    #[test]
    fn environment_supplies_endpoint() {
        let mut c = RunConfig::from_toml("[backend]\nmode = \"remote\"").unwrap();
        c.apply_env_from(|k| (k == ENV_URL).then(|| "http://127.0.0.1:9/v1".to_string()));
        c.validate().unwrap();
        assert_eq!(c.backend.key, None);
    }
}
