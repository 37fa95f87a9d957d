//! Raw dataset records to [`TaskSequence`] values.
//!
//! Records come in three shapes: key-value records that already list their
//! subtasks, a single instruction paragraph, or a coarse goal plus a separate
//! instruction paragraph. The first shape maps straight through; the other two
//! go through a text-generation backend or the offline heuristic splitter.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ProposalBackend};
use crate::kg::{Dataset, TaskSequence};
use crate::text::{normalize, single_line};

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("record is missing field {0:?}")]
    MissingField(String),
    #[error("no non-empty subtasks")]
    EmptySubtaskList,
    #[error("record has no paragraph field")]
    NotParagraph,
    #[error("response has no TASK line")]
    NoTaskLine,
    #[error("response lists no subtasks")]
    NoSubtasks,
    #[error("list numbering is not increasing ({previous} then {found})")]
    NonMonotoneNumbering { previous: u64, found: u64 },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("extraction failed after retry: {0}")]
    ExtractionFailed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Text(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub dataset: Dataset,
    pub record_id: String,
    pub payload: BTreeMap<String, FieldValue>,
}

impl RawRecord {
    pub fn new(dataset: Dataset, record_id: impl Into<String>) -> Self {
        Self {
            dataset,
            record_id: record_id.into(),
            payload: BTreeMap::new(),
        }
    }

    pub fn with_text(mut self, key: &str, value: impl Into<String>) -> Self {
        self.payload.insert(key.to_string(), FieldValue::Text(value.into()));
        self
    }

    pub fn with_list(mut self, key: &str, values: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.payload
            .insert(key.to_string(), FieldValue::List(values.into_iter().map(Into::into).collect()));
        self
    }

    fn text(&self, key: &str) -> Option<&str> {
        match self.payload.get(key) {
            Some(FieldValue::Text(t)) if !t.trim().is_empty() => Some(t),
            _ => None,
        }
    }
}

/// Which payload keys carry the coarse goal, the subtask list and the
/// instruction paragraph for one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapping {
    pub id: String,
    pub coarse: String,
    pub subtasks: String,
    pub paragraph: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        Self {
            id: "id".into(),
            coarse: "goal".into(),
            subtasks: "subgoals".into(),
            paragraph: "instruction".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordShape {
    KeyValue,
    Unified,
    Split,
}

pub fn record_shape(record: &RawRecord, mapping: &FieldMapping) -> Option<RecordShape> {
    if record.payload.contains_key(&mapping.subtasks) {
        Some(RecordShape::KeyValue)
    } else if record.text(&mapping.paragraph).is_some() {
        if record.text(&mapping.coarse).is_some() {
            Some(RecordShape::Split)
        } else {
            Some(RecordShape::Unified)
        }
    } else {
        None
    }
}

fn clean(text: &str) -> String {
    single_line(text)
}

pub fn parse_structured(record: &RawRecord, mapping: &FieldMapping) -> Result<TaskSequence, ExtractError> {
    let coarse = record
        .text(&mapping.coarse)
        .ok_or_else(|| ExtractError::MissingField(mapping.coarse.clone()))?;
    let list = match record.payload.get(&mapping.subtasks) {
        Some(FieldValue::List(items)) => items,
        Some(FieldValue::Text(_)) | None => return Err(ExtractError::MissingField(mapping.subtasks.clone())),
    };
    let subtasks: Vec<String> = list
        .iter()
        .filter(|s| !normalize(s).is_empty())
        .map(|s| clean(s))
        .collect();
    if subtasks.is_empty() {
        return Err(ExtractError::EmptySubtaskList);
    }
    Ok(TaskSequence::new(clean(coarse), subtasks, record.dataset, record.record_id.clone()))
}

pub fn build_extraction_prompt(record: &RawRecord, mapping: &FieldMapping) -> String {
    let mut prompt = String::new();
    prompt.push_str(
        "Split the navigation instruction below into one coarse-grained task and an ordered list of atomic subtasks.\n\
         The coarse-grained task states the overall goal in one short sentence.\n\
         Each subtask is a single step the agent performs, listed in execution order.\n",
    );
    let paragraph = record.text(&mapping.paragraph).unwrap_or_default();
    match record.text(&mapping.coarse) {
        Some(coarse) => {
            prompt.push_str("The coarse-grained task is given separately; copy it unchanged and split the paragraph.\n\n");
            push_block(&mut prompt, "coarse", coarse);
            prompt.push('\n');
            push_block(&mut prompt, "paragraph", paragraph);
        }
        None => {
            prompt.push('\n');
            push_block(&mut prompt, "instruction", paragraph);
        }
    }
    prompt.push_str(
        "\nAnswer in exactly this format and nothing else:\n\
         TASK: <coarse-grained task>\n\
         1. <first subtask>\n\
         2. <second subtask>\n\
         ...\n",
    );
    prompt
}

fn push_block(prompt: &mut String, label: &str, body: &str) {
    prompt.push_str(&format!("<<<SOURCE {label}>>>\n{}\n<<<END>>>\n", body.trim()));
}

fn task_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*task\s*:\s*(.*?)\s*$").unwrap())
}

fn numbered_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)\s*[.)]\s*(.+?)\s*$").unwrap())
}

fn bullet_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*[-*]\s+(.+?)\s*$").unwrap())
}

/// Parses a `TASK:` line followed by a numbered or bulleted list.
pub fn parse_list_response(text: &str) -> Result<(String, Vec<String>), ExtractError> {
    let mut lines = text.lines();
    let coarse = lines
        .by_ref()
        .find_map(|l| task_line().captures(l).map(|c| c[1].to_string()))
        .filter(|c| !c.is_empty())
        .ok_or(ExtractError::NoTaskLine)?;
    let mut subtasks = Vec::new();
    let mut last_number: Option<u64> = None;
    for line in lines {
        if let Some(caps) = numbered_line().captures(line) {
            let n: u64 = caps[1].parse().unwrap_or(u64::MAX);
            if let Some(prev) = last_number {
                if n <= prev {
                    return Err(ExtractError::NonMonotoneNumbering { previous: prev, found: n });
                }
            }
            last_number = Some(n);
            subtasks.push(caps[2].to_string());
        } else if let Some(caps) = bullet_line().captures(line) {
            subtasks.push(caps[1].to_string());
        }
    }
    if subtasks.is_empty() {
        return Err(ExtractError::NoSubtasks);
    }
    Ok((coarse, subtasks))
}

/// Renders a sequence in the response format expected by [`parse_list_response`].
pub fn format_reference_answer(seq: &TaskSequence) -> String {
    let mut out = format!("TASK: {}\n", seq.coarse_text);
    for (i, s) in seq.subtasks.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, s));
    }
    out
}

pub fn extract_with_backend(
    record: &RawRecord,
    mapping: &FieldMapping,
    backend: &dyn ProposalBackend,
) -> Result<TaskSequence, ExtractError> {
    if record.text(&mapping.paragraph).is_none() {
        return Err(ExtractError::NotParagraph);
    }
    let prompt = build_extraction_prompt(record, mapping);
    let first = backend.complete(&prompt)?;
    let (coarse, subtasks) = match parse_list_response(&first) {
        Ok(parsed) => parsed,
        Err(err) => {
            let retry = format!(
                "{prompt}\nYour previous answer could not be parsed ({err}). Reply again using exactly the format above.\n"
            );
            let second = backend.complete(&retry)?;
            parse_list_response(&second).map_err(|e| ExtractError::ExtractionFailed(e.to_string()))?
        }
    };
    let coarse = record.text(&mapping.coarse).map(clean).unwrap_or(coarse);
    let seq = TaskSequence::new(coarse, subtasks, record.dataset, record.record_id.clone());
    seq.validate().map_err(|e| ExtractError::ExtractionFailed(e.to_string()))?;
    Ok(seq)
}

fn clause_boundary() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\.|;|\bthen\b|,\s*and\b").unwrap())
}

/// Offline fallback: the coarse field (or first sentence) becomes the task,
/// the rest is split on `.`, `;`, `then` and `, and`, and fragments shorter
/// than three words are dropped.
pub fn extract_heuristic(record: &RawRecord, mapping: &FieldMapping) -> Result<TaskSequence, ExtractError> {
    let paragraph = record.text(&mapping.paragraph).ok_or(ExtractError::NotParagraph)?;
    let (coarse, rest) = match record.text(&mapping.coarse) {
        Some(coarse) => (coarse.trim().to_string(), paragraph),
        None => match paragraph.find('.') {
            Some(pos) => (paragraph[..pos].trim().to_string(), &paragraph[pos + 1..]),
            None => (paragraph.trim().to_string(), ""),
        },
    };
    let subtasks: Vec<String> = clause_boundary()
        .split(rest)
        .map(|frag| clean(frag.trim_matches(|c: char| c == ',' || c.is_whitespace())))
        .filter(|frag| frag.split_whitespace().count() >= 3)
        .collect();
    if subtasks.is_empty() || normalize(&coarse).is_empty() {
        return Err(ExtractError::EmptySubtaskList);
    }
    Ok(TaskSequence::new(clean(&coarse), subtasks, record.dataset, record.record_id.clone()))
}

#[derive(Clone, Copy)]
pub enum Strategy<'a> {
    Heuristic,
    Backend(&'a dyn ProposalBackend),
}

/// Key-value records map straight through; paragraph records use `strategy`.
pub fn extract_record(record: &RawRecord, mapping: &FieldMapping, strategy: Strategy<'_>) -> Result<TaskSequence, ExtractError> {
    match record_shape(record, mapping) {
        Some(RecordShape::KeyValue) => parse_structured(record, mapping),
        Some(_) => match strategy {
            Strategy::Heuristic => extract_heuristic(record, mapping),
            Strategy::Backend(b) => extract_with_backend(record, mapping, b),
        },
        None => Err(ExtractError::MissingField(mapping.paragraph.clone())),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractionReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rejects: Vec<(String, String)>,
}

impl ExtractionReport {
    pub fn reject(&mut self, record_id: impl Into<String>, error: impl ToString) {
        self.rejected += 1;
        self.rejects.push((record_id.into(), error.to_string()));
    }
}

/// Extracts every record independently (in parallel) and aggregates the
/// report afterwards. Output order follows input order.
pub fn extract_all(records: &[RawRecord], mapping: &FieldMapping, strategy: Strategy<'_>) -> (Vec<TaskSequence>, ExtractionReport) {
    let outcomes: Vec<_> = match strategy {
        Strategy::Heuristic => records.iter().map(|r| extract_record(r, mapping, strategy)).collect(),
        Strategy::Backend(backend) => records
            .par_iter()
            .map(|r| extract_record(r, mapping, Strategy::Backend(backend)))
            .collect(),
    };
    let mut report = ExtractionReport::default();
    let mut seqs = Vec::new();
    for (record, outcome) in records.iter().zip(outcomes) {
        match outcome {
            Ok(seq) => {
                report.accepted += 1;
                seqs.push(seq);
            }
            Err(e) => report.reject(record.record_id.clone(), e),
        }
    }
    (seqs, report)
}
