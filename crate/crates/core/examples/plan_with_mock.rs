//! The subtask planning loop with the deterministic mock backend: fresh
//! proposals, a replan after a failure, and the final DONE.

use eventnav::embed::HashingEmbedder;
use eventnav::kg::{Dataset, EventGraph, TaskSequence};
use eventnav::planner::{build_subtask_prompt, Knowledge, MockBackend, Outcome, PlanMode, Planner, PlanningContext};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seqs = [
        TaskSequence::new("go to the sink", ["exit the bedroom", "walk down the hall", "enter the kitchen"], Dataset::R2r, "a"),
        TaskSequence::new("go to the sink", ["exit the bedroom", "walk down the hall", "enter the kitchen"], Dataset::R2r, "b"),
        TaskSequence::new("go outside", ["exit the bedroom", "walk down the hall", "open the front door"], Dataset::R2r, "c"),
    ];
    let knowledge = Knowledge::build(EventGraph::from_sequences(&seqs)?, Box::new(HashingEmbedder::default()))?;
    let planner = Planner::new(Some(&knowledge), &MockBackend, 5);

    let mut ctx = PlanningContext::new("go to the kitchen sink");
    ctx.scene_caption = "a bedroom with a blue rug".into();
    let mut failed: Option<String> = None;
    for round in 1..=8 {
        let mode = match &failed {
            Some(f) => PlanMode::Replan { failed: f },
            None => PlanMode::Fresh,
        };
        let proposal = planner.plan(&mut ctx, mode)?;
        if round == 1 {
            println!("--- first prompt ---\n{}", build_subtask_prompt(&ctx));
        }
        if proposal.is_stop {
            println!("round {round}: DONE");
            break;
        }
        // Pretend the agent fails "enter the kitchen" once.
        let outcome = if proposal.text == "enter the kitchen" && failed.is_none() {
            Outcome::Backtracked
        } else {
            Outcome::Completed
        };
        println!("round {round}: NEXT {} -> {outcome:?}", proposal.text);
        failed = (outcome == Outcome::Backtracked).then(|| proposal.text.clone());
        ctx.push_history(&proposal.text, outcome);
    }
    Ok(())
}
