//! Record planner traffic into a cassette, save it, and replay the same run
//! with no live backend.

use eventnav::backend::{Cassette, Recorder, Replay};
use eventnav::eval::{run_variant, EvalSettings, KnowledgeSet, Scenario, ScenarioSpec, Variant};
use eventnav::planner::MockBackend;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::generate(&ScenarioSpec {
        episodes: 10,
        ..ScenarioSpec::default()
    })?;
    let knowledge = KnowledgeSet::build(&scenario, 256)?;
    let settings = EvalSettings::default();

    let live = run_variant(&scenario, &knowledge, Variant::PlanFBacktrack, &MockBackend, &settings)?;
    let dir = std::env::temp_dir().join("eventnav-cassette-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("planF.cassette");
    live.cassette.save(&path)?;
    println!("recorded {} prompts to {}", live.cassette.len(), path.display());

    let replay = Recorder::new(Replay::new(Cassette::load(&path)?));
    let replayed = run_variant(&scenario, &knowledge, Variant::PlanFBacktrack, &replay, &settings)?;
    assert_eq!(replayed.results, live.results);
    println!("replayed run identical: SR {:.2}, SPL {:.3}", replayed.report.sr, replayed.report.spl);

    let first = live.cassette.entries().next().expect("at least one prompt");
    // Entries are keyed by prompt hash, so this is an arbitrary recorded exchange.
    println!("\nrecorded prompt ({}):\n{}\n=> {}", &first.prompt_hash[..12], first.prompt, first.response);
    Ok(())
}
