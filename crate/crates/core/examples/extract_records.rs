//! Turn raw dataset records into task sequences, offline (heuristic split)
//! and through a text-generation backend (here a canned stand-in).

use eventnav::backend::{BackendError, ProposalBackend};
use eventnav::extraction::{extract_all, FieldMapping, RawRecord, Strategy};
use eventnav::kg::Dataset;

/// Answers every extraction prompt with the same numbered list.
struct Canned;

impl ProposalBackend for Canned {
    fn identity(&self) -> &str {
        "canned"
    }

    fn complete(&self, _prompt: &str) -> Result<String, BackendError> {
        Ok("TASK: go to the front door\n1. exit the bathroom\n2. cross the living room\n3. wait by the front door\n".into())
    }
}

fn main() {
    let mapping = FieldMapping::default();
    let records = vec![
        RawRecord::new(Dataset::Alfred, "kv-1")
            .with_text("goal", "rinse a mug")
            .with_list("subgoals", ["walk to the counter", "pick up the mug", "rinse the mug in the sink"]),
        RawRecord::new(Dataset::R2r, "para-1").with_text(
            "instruction",
            "Leave the bedroom. Walk down the hallway past the painting, then turn left into the kitchen.",
        ),
        RawRecord::new(Dataset::R2r, "para-2")
            .with_text("goal", "go to the front door")
            .with_text("instruction", "Exit the bathroom and cross the living room; wait by the front door."),
        RawRecord::new(Dataset::R2r, "empty"),
    ];

    for (name, strategy) in [("heuristic", Strategy::Heuristic), ("backend", Strategy::Backend(&Canned))] {
        let (seqs, report) = extract_all(&records, &mapping, strategy);
        println!("== {name}: {} accepted, {} rejected", report.accepted, report.rejected);
        for s in &seqs {
            println!("{} [{}] {}: {}", s.dataset, s.record_id, s.coarse_text, s.subtasks.join(" | "));
        }
        for (id, why) in &report.rejects {
            println!("rejected {id}: {why}");
        }
    }
}
