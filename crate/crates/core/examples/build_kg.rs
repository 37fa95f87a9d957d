//! Build two event graphs from task sequences, merge them and save the result.
//!
//! cargo run --example build_kg -- /tmp/kg.jsonl

use eventnav::kg::{Dataset, EventGraph, TaskSequence};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let r2r = [
        TaskSequence::new(
            "go to the refrigerator",
            ["exit the bedroom", "walk down the hallway", "enter the kitchen", "stop next to the refrigerator"],
            Dataset::R2r,
            "r2r-1",
        ),
        TaskSequence::new(
            "find the front door",
            ["exit the bedroom", "walk down the hallway", "wait by the front door"],
            Dataset::R2r,
            "r2r-2",
        ),
    ];
    let alfred = [TaskSequence::new(
        "put a chilled apple in the sink",
        ["walk to the fridge", "take the apple from the fridge", "walk to the sink", "put the apple in the sink"],
        Dataset::Alfred,
        "alfred-1",
    )];

    let merged = EventGraph::from_sequences(&r2r)?.merge(&EventGraph::from_sequences(&alfred)?);
    print!("{}", merged.stats());

    let hall = merged.lookup("Walk down the hallway.").expect("lookup normalizes text");
    for (next, weight) in merged.successors(hall.id)? {
        println!("{} -> {} (x{weight})", hall.text, next.text);
    }

    if let Some(path) = std::env::args().nth(1) {
        merged.save(&path)?;
        assert_eq!(EventGraph::load(&path)?, merged);
        println!("saved to {path}");
    }
    Ok(())
}
