//! Subtask planning loop: context assembly, prompts, proposal parsing and the
//! deterministic mock backend.
//!
//! Prompts are made of labeled sections in a fixed order, each header on its
//! own line followed by its body and a blank line:
//!
//! ```text
//! TASK:        coarse task
//! SCENE:       caption of the current viewpoint
//! HISTORY:     numbered subtasks with [completed] / [backtracked], or "none"
//! KNOWLEDGE:   retrieval lines, or "no relevant knowledge found"
//! FAILED:      (re-plan prompts only) subtasks rejected at this position
//! OUTPUT:      the one-line answer contract
//! ```

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ProposalBackend};
use crate::embed::Embedder;
use crate::kg::EventGraph;
use crate::retrieval::{format_knowledge, parse_knowledge_line, RetrievalError, RetrievalHit, RetrievalIndex};
use crate::text::{normalize, single_line};

pub const MOCK_IDENTITY: &str = "mock-successor/v1";

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("unparseable proposal: {0:?}")]
    UnparseableProposal(String),
    #[error("proposal repeats a failed subtask: {0:?}")]
    DuplicateProposal(String),
    #[error("re-plan requested without a failed subtask")]
    MissingFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Completed,
    Backtracked,
}

impl Outcome {
    fn label(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Backtracked => "backtracked",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub subtask: String,
    pub outcome: Outcome,
}

/// Everything the planner sees when asked for the next subtask.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningContext {
    pub coarse_task: String,
    pub scene_caption: String,
    history: Vec<HistoryEntry>,
    pub knowledge: Vec<RetrievalHit>,
    pub replan_attempts: usize,
}

impl PlanningContext {
    pub fn new(coarse_task: impl Into<String>) -> Self {
        let coarse_task = coarse_task.into();
        assert!(!normalize(&coarse_task).is_empty(), "coarse task must not be empty");
        Self {
            coarse_task,
            scene_caption: String::new(),
            history: Vec::new(),
            knowledge: Vec::new(),
            replan_attempts: 0,
        }
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// History only grows; a completion resets the re-plan counter.
    pub fn push_history(&mut self, subtask: impl Into<String>, outcome: Outcome) {
        match outcome {
            Outcome::Completed => self.replan_attempts = 0,
            Outcome::Backtracked => self.replan_attempts += 1,
        }
        self.history.push(HistoryEntry {
            subtask: subtask.into(),
            outcome,
        });
    }

    pub fn last_completed(&self) -> Option<&str> {
        self.history
            .iter()
            .rev()
            .find(|h| h.outcome == Outcome::Completed)
            .map(|h| h.subtask.as_str())
    }

    /// Subtasks backtracked since the last completion, oldest first.
    pub fn rejected_here(&self) -> Vec<&str> {
        let start = self
            .history
            .iter()
            .rposition(|h| h.outcome == Outcome::Completed)
            .map_or(0, |i| i + 1);
        self.history[start..].iter().map(|h| h.subtask.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtaskProposal {
    pub text: String,
    pub is_stop: bool,
}

impl SubtaskProposal {
    pub fn next(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            is_stop: false,
        }
    }

    pub fn stop() -> Self {
        Self {
            text: String::new(),
            is_stop: true,
        }
    }
}

const OUTPUT_CONTRACT: &str = "Reply with exactly one line: \"NEXT: <subtask>\" to continue, or \"DONE\" if the task is complete.";

fn push_section(out: &mut String, header: &str, body: &str) {
    out.push_str(header);
    out.push_str(":\n");
    out.push_str(body);
    out.push_str("\n\n");
}

fn context_sections(ctx: &PlanningContext) -> String {
    let mut out = String::from(
        "You plan navigation subtasks for an embodied agent that was given a coarse-grained task.\n\
         Each KNOWLEDGE line pairs a past subtask similar to the current one with the subtask that followed it.\n\n",
    );
    push_section(&mut out, "TASK", &single_line(&ctx.coarse_task));
    let scene = single_line(&ctx.scene_caption);
    push_section(&mut out, "SCENE", if scene.is_empty() { "none" } else { &scene });
    let history = if ctx.history.is_empty() {
        "none".to_string()
    } else {
        ctx.history
            .iter()
            .enumerate()
            .map(|(i, h)| format!("{}. {} [{}]", i + 1, single_line(&h.subtask), h.outcome.label()))
            .collect::<Vec<_>>()
            .join("\n")
    };
    push_section(&mut out, "HISTORY", &history);
    push_section(&mut out, "KNOWLEDGE", &format_knowledge(&ctx.knowledge));
    out
}

pub fn build_subtask_prompt(ctx: &PlanningContext) -> String {
    let mut out = context_sections(ctx);
    push_section(
        &mut out,
        "OUTPUT",
        &format!("Propose the next subtask toward the TASK.\n{OUTPUT_CONTRACT}"),
    );
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

fn failed_list(ctx: &PlanningContext, failed_subtask: &str) -> Vec<String> {
    let mut failed: Vec<String> = ctx.rejected_here().into_iter().map(single_line).collect();
    if !failed.iter().any(|f| normalize(f) == normalize(failed_subtask)) {
        failed.push(single_line(failed_subtask));
    }
    failed
}

pub fn build_replan_prompt(ctx: &PlanningContext, failed_subtask: &str) -> String {
    let mut out = context_sections(ctx);
    let failed = failed_list(ctx, failed_subtask)
        .iter()
        .enumerate()
        .map(|(i, f)| format!("{}. {f}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    push_section(&mut out, "FAILED", &failed);
    push_section(
        &mut out,
        "OUTPUT",
        &format!(
            "The FAILED subtasks could not be completed from the current position; the agent is back where it started them.\n\
             Propose a different subtask.\n{OUTPUT_CONTRACT}"
        ),
    );
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

pub fn parse_proposal(text: &str) -> Result<SubtaskProposal, PlanError> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let unparseable = || PlanError::UnparseableProposal(text.to_string());
    let [line] = lines[..] else {
        return Err(unparseable());
    };
    if line.eq_ignore_ascii_case("done") {
        return Ok(SubtaskProposal::stop());
    }
    let (head, rest) = line.split_once(':').ok_or_else(unparseable)?;
    if !head.trim().eq_ignore_ascii_case("next") || normalize(rest).is_empty() {
        return Err(unparseable());
    }
    Ok(SubtaskProposal::next(rest.trim()))
}

#[derive(Debug, Clone, Copy)]
pub enum PlanMode<'a> {
    Fresh,
    Replan { failed: &'a str },
}

/// One planning call: prompt, backend, parse, with a single retry.
pub fn propose_next(
    backend: &dyn ProposalBackend,
    ctx: &PlanningContext,
    mode: PlanMode<'_>,
) -> Result<SubtaskProposal, PlanError> {
    let (mut prompt, excluded) = match mode {
        PlanMode::Fresh => (build_subtask_prompt(ctx), HashSet::new()),
        PlanMode::Replan { failed } => {
            if normalize(failed).is_empty() {
                return Err(PlanError::MissingFailure);
            }
            let excluded: HashSet<String> = failed_list(ctx, failed).iter().map(|f| normalize(f)).collect();
            (build_replan_prompt(ctx, failed), excluded)
        }
    };
    let mut last_err = None;
    for attempt in 0..2 {
        let response = backend.complete(&prompt)?;
        let err = match parse_proposal(&response) {
            Ok(p) if !p.is_stop && excluded.contains(&normalize(&p.text)) => PlanError::DuplicateProposal(p.text),
            Ok(p) => return Ok(p),
            Err(e) => e,
        };
        if attempt == 0 {
            prompt.push_str(&format!(
                "\nYour previous reply was rejected ({err}). Follow the OUTPUT contract and do not repeat a FAILED subtask.\n"
            ));
        }
        last_err = Some(err);
    }
    Err(last_err.expect("loop ran twice"))
}

/// Graph plus the two retrieval indices and the embedder they were built with.
pub struct Knowledge {
    pub graph: EventGraph,
    pub successions: RetrievalIndex,
    pub openings: RetrievalIndex,
    pub embedder: Box<dyn Embedder>,
}

impl Knowledge {
    pub fn build(graph: EventGraph, embedder: Box<dyn Embedder>) -> Result<Self, RetrievalError> {
        let successions = RetrievalIndex::build(&graph, embedder.as_ref())?;
        let openings = RetrievalIndex::build_openings(&graph, embedder.as_ref())?;
        Ok(Self {
            graph,
            successions,
            openings,
            embedder,
        })
    }

    /// Retrieval for the next planning call: the last completed subtask
    /// against the succession index, or the coarse task against the opening
    /// index when nothing has been completed yet.
    pub fn retrieve(&self, ctx: &PlanningContext, k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        match ctx.last_completed() {
            Some(last) => self.successions.query(&self.graph, self.embedder.as_ref(), last, k),
            None => self.openings.query(&self.graph, self.embedder.as_ref(), &ctx.coarse_task, k),
        }
    }
}

/// The outer loop's planner: optional knowledge, a backend and `topk`.
pub struct Planner<'a> {
    pub knowledge: Option<&'a Knowledge>,
    pub backend: &'a dyn ProposalBackend,
    pub topk: usize,
}

impl<'a> Planner<'a> {
    pub fn new(knowledge: Option<&'a Knowledge>, backend: &'a dyn ProposalBackend, topk: usize) -> Self {
        Self { knowledge, backend, topk }
    }

    /// Refreshes `ctx.knowledge` and asks the backend for the next subtask.
    pub fn plan(&self, ctx: &mut PlanningContext, mode: PlanMode<'_>) -> Result<SubtaskProposal, PlanError> {
        ctx.knowledge = match self.knowledge {
            Some(k) => k.retrieve(ctx, self.topk)?,
            None => Vec::new(),
        };
        propose_next(self.backend, ctx, mode)
    }
}

fn section<'p>(prompt: &'p str, header: &str) -> Vec<&'p str> {
    let mut lines = prompt.lines();
    let target = format!("{header}:");
    if !lines.by_ref().any(|l| l == target) {
        return Vec::new();
    }
    lines.take_while(|l| !l.is_empty()).collect()
}

fn strip_number(line: &str) -> &str {
    line.split_once(". ").map_or(line, |(_, rest)| rest)
}

/// Deterministic stand-in for a language model: proposes the heaviest
/// successor of the top retrieval hit that is neither failed at this
/// position nor already completed, else `DONE`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn answer(prompt: &str) -> String {
        let mut excluded: HashSet<String> = section(prompt, "FAILED")
            .into_iter()
            .map(|l| normalize(strip_number(l)))
            .collect();
        excluded.extend(
            section(prompt, "HISTORY")
                .into_iter()
                .filter_map(|l| strip_number(l).strip_suffix(" [completed]"))
                .map(normalize),
        );
        let choice = section(prompt, "KNOWLEDGE")
            .into_iter()
            .filter_map(parse_knowledge_line)
            .filter(|k| k.rank == 1)
            .find(|k| !excluded.contains(&normalize(&k.successor)));
        match choice {
            Some(k) => format!("NEXT: {}", k.successor),
            None => "DONE".to_string(),
        }
    }
}

impl ProposalBackend for MockBackend {
    fn identity(&self) -> &str {
        MOCK_IDENTITY
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        Ok(Self::answer(prompt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Dataset, EventNode, NodeId, NodeKind};
    use std::collections::BTreeSet;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn node(id: u32, text: &str) -> EventNode {
        EventNode {
            id: NodeId(id),
            text: text.into(),
            norm_text: normalize(text),
            kind: NodeKind::Subtask,
            sources: BTreeSet::from([Dataset::R2r]),
        }
    }

    fn ctx_with(successors: &[(&str, u64)]) -> PlanningContext {
        let mut ctx = PlanningContext::new("go to the fridge");
        ctx.scene_caption = "a bedroom with a bed".into();
        if !successors.is_empty() {
            ctx.knowledge = vec![RetrievalHit {
                node: node(0, "exit the bedroom"),
                similarity: 0.9,
                successors: successors.iter().enumerate().map(|(i, (t, w))| (node(i as u32 + 1, t), *w)).collect(),
            }];
        }
        ctx
    }

    #[test]
    fn prompt_sections_in_order() {
        let ctx = ctx_with(&[]);
        let p = build_subtask_prompt(&ctx);
        let order: Vec<_> = ["TASK:", "SCENE:", "HISTORY:", "KNOWLEDGE:", "OUTPUT:"]
            .iter()
            .map(|h| p.lines().position(|l| l == *h).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(section(&p, "HISTORY"), vec!["none"]);
        assert_eq!(section(&p, "KNOWLEDGE"), vec!["no relevant knowledge found"]);
        assert_eq!(p, build_subtask_prompt(&ctx));
        assert!(!p.contains("FAILED:"));
    }

    #[test]
    fn replan_prompt_lists_failures() {
        let mut ctx = ctx_with(&[("b", 3)]);
        let p1 = build_replan_prompt(&ctx, "walk to the sofa");
        assert_eq!(section(&p1, "FAILED"), vec!["1. walk to the sofa"]);
        ctx.push_history("walk to the sofa", Outcome::Backtracked);
        let p2 = build_replan_prompt(&ctx, "go to the sofa");
        assert_eq!(section(&p2, "FAILED"), vec!["1. walk to the sofa", "2. go to the sofa"]);
        assert_eq!(p2, build_replan_prompt(&ctx, "go to the sofa"));
        assert!(p2.contains("Propose a different subtask."));
    }

    #[test]
    fn history_section_marks_outcomes() {
        let mut ctx = ctx_with(&[]);
        ctx.push_history("exit the bedroom", Outcome::Completed);
        ctx.push_history("turn left", Outcome::Backtracked);
        let p = build_subtask_prompt(&ctx);
        assert_eq!(section(&p, "HISTORY"), vec!["1. exit the bedroom [completed]", "2. turn left [backtracked]"]);
        assert_eq!(ctx.replan_attempts, 1);
        assert_eq!(ctx.rejected_here(), vec!["turn left"]);
    }

    #[test]
    fn parse_proposal_forms() {
        assert_eq!(parse_proposal("NEXT: enter the kitchen").unwrap(), SubtaskProposal::next("enter the kitchen"));
        assert!(parse_proposal(" done \n").unwrap().is_stop);
        assert_eq!(parse_proposal("next:walk").unwrap().text, "walk");
        for bad in ["I think we should walk.", "", "NEXT:   ", "NEXT: a\nNEXT: b", "LATER: x"] {
            assert!(matches!(parse_proposal(bad), Err(PlanError::UnparseableProposal(_))), "{bad:?}");
        }
    }

    #[test]
    fn mock_picks_heaviest_unused_successor() {
        let ctx = ctx_with(&[("b", 3), ("c", 1)]);
        assert_eq!(MockBackend::answer(&build_subtask_prompt(&ctx)), "NEXT: b");
        let p = build_replan_prompt(&ctx, "b");
        assert_eq!(MockBackend::answer(&p), "NEXT: c");
        let mut ctx2 = ctx.clone();
        ctx2.push_history("b", Outcome::Backtracked);
        assert_eq!(MockBackend::answer(&build_replan_prompt(&ctx2, "c")), "DONE");
        let mut ctx3 = ctx.clone();
        ctx3.push_history("B.", Outcome::Completed);
        assert_eq!(MockBackend::answer(&build_subtask_prompt(&ctx3)), "NEXT: c");
        assert_eq!(MockBackend::answer(&build_subtask_prompt(&ctx_with(&[]))), "DONE");
    }

    struct Script {
        replies: Vec<String>,
        calls: AtomicUsize,
    }

    impl Script {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: replies.iter().map(|s| s.to_string()).collect(),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl ProposalBackend for Script {
        fn identity(&self) -> &str {
            "script"
        }
        fn complete(&self, _: &str) -> Result<String, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.replies[i.min(self.replies.len() - 1)].clone())
        }
    }

    #[test]
    fn propose_next_retries_once() {
        let ctx = ctx_with(&[]);
        assert_eq!(propose_next(&Script::new(&["NEXT: x"]), &ctx, PlanMode::Fresh).unwrap().text, "x");
        let flaky = Script::new(&["hmm", "NEXT: y"]);
        assert_eq!(propose_next(&flaky, &ctx, PlanMode::Fresh).unwrap().text, "y");
        assert!(matches!(
            propose_next(&Script::new(&["hmm"]), &ctx, PlanMode::Fresh),
            Err(PlanError::UnparseableProposal(_))
        ));
        let stubborn = Script::new(&["NEXT: Walk to the sofa."]);
        assert!(matches!(
            propose_next(&stubborn, &ctx, PlanMode::Replan { failed: "walk to the sofa" }),
            Err(PlanError::DuplicateProposal(_))
        ));
        assert_eq!(stubborn.calls.load(Ordering::SeqCst), 2);
        let ok = Script::new(&["NEXT: walk to the sofa", "NEXT: go around the sofa"]);
        let p = propose_next(&ok, &ctx, PlanMode::Replan { failed: "walk to the sofa" }).unwrap();
        assert_eq!(p.text, "go around the sofa");
    }
}
