//! Generate a world and episodes, run the oracle agent with per-episode
//! knowledge and a noisy agent with shared knowledge, and compare metrics.

use eventnav::backtrack::BacktrackConfig;
use eventnav::embed::HashingEmbedder;
use eventnav::eval::{make_policy, write_report, EvalSettings};
use eventnav::kg::{Dataset, EventGraph};
use eventnav::planner::{Knowledge, MockBackend, Planner};
use eventnav::sim::runner::{run_episode, run_suite, RunSettings};
use eventnav::sim::{compute_metrics, default_radius, generate_episodes, generate_world};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = generate_world(100, default_radius(100), 1)?;
    let episodes = generate_episodes(&world, 40, 2)?;
    println!("{} viewpoints, mean degree {:.2}, {} episodes", world.len(), world.mean_degree(), episodes.len());
    let e = &episodes[0];
    println!("e.g. {}: {:?}", e.coarse_instruction, e.gt_subtasks.iter().map(|g| &g.text).collect::<Vec<_>>());

    let run = RunSettings::new(BacktrackConfig::for_dataset(Dataset::R2r));

    let mut oracle = Vec::new();
    for ep in &episodes {
        let kg = EventGraph::from_sequences([&ep.task_sequence()])?;
        let knowledge = Knowledge::build(kg, Box::new(HashingEmbedder::default()))?;
        let planner = Planner::new(Some(&knowledge), &MockBackend, 5);
        let mut policy = eventnav::action::OraclePolicy::new(&world, ep, 0);
        oracle.push(run_episode(ep, &world, &planner, &mut policy, &run));
    }

    let shared = EventGraph::from_sequences(episodes.iter().map(|e| e.task_sequence()).collect::<Vec<_>>().iter())?;
    let knowledge = Knowledge::build(shared, Box::new(HashingEmbedder::default()))?;
    let settings = EvalSettings {
        epsilon: 0.3,
        jobs: 4,
        ..EvalSettings::default()
    };
    let noisy = run_suite(
        &episodes,
        &world,
        |_| Planner::new(Some(&knowledge), &MockBackend, 5),
        |e| make_policy(&world, e, &settings, run.backtrack.window),
        &run,
        settings.jobs,
    )?;

    let rows = [
        ("oracle, own knowledge".to_string(), compute_metrics(&oracle, &episodes, &world)?),
        ("noisy 0.3, shared knowledge".to_string(), compute_metrics(&noisy, &episodes, &world)?),
    ];
    println!();
    write_report(&rows, &mut std::io::stdout())?;
    let r = &noisy[0];
    println!("\n{}: {:?} after {} steps, {} replans", r.episode_id, r.termination, r.steps, r.replans);
    Ok(())
}
