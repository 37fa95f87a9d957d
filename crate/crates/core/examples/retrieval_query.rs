//! Exact top-k retrieval over an event graph and the prompt lines it produces.

use eventnav::embed::HashingEmbedder;
use eventnav::kg::{Dataset, EventGraph, TaskSequence};
use eventnav::retrieval::{format_knowledge, RetrievalIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seqs = [
        TaskSequence::new("go to the sink", ["exit the bedroom", "walk down the hallway", "enter the kitchen"], Dataset::R2r, "a"),
        TaskSequence::new("go outside", ["exit the bedroom", "walk down the hallway", "open the front door"], Dataset::R2r, "b"),
        TaskSequence::new("go to the sink", ["leave the bedroom", "walk down the hallway", "enter the kitchen"], Dataset::Reverie, "c"),
        TaskSequence::new("wash up", ["walk to the bathroom", "turn on the tap"], Dataset::Alfred, "d"),
    ];
    let graph = EventGraph::from_sequences(&seqs)?;
    let embedder = HashingEmbedder::default();

    let index = RetrievalIndex::build(&graph, &embedder)?;
    println!("{} subtasks indexed (nodes with a successor)", index.len());
    for query in ["walk along the hallway", "exit the room"] {
        println!("\nquery: {query}");
        println!("{}", format_knowledge(&index.query(&graph, &embedder, query, 3)?));
    }

    let openings = RetrievalIndex::build_openings(&graph, &embedder)?;
    println!("\nhow does 'go to the kitchen sink' usually start?");
    println!("{}", format_knowledge(&openings.query(&graph, &embedder, "go to the kitchen sink", 1)?));
    Ok(())
}
