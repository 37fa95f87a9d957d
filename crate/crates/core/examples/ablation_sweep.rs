//! The ablation table and the (x, W-multiplier) grid on a small generated
//! scenario, with the mock backend.
//!
//! cargo run --release --example ablation_sweep -- [episodes] [epsilon]

use eventnav::backend::{BackendError, ProposalBackend};
use eventnav::eval::{ablation, grid, report_rows, write_report, EvalSettings, KnowledgeSet, Scenario, ScenarioSpec};
use eventnav::planner::MockBackend;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().map_or(Ok(50), |a| a.parse())?;
    let epsilon = args.next().map_or(Ok(0.3), |a| a.parse())?;

    let scenario = Scenario::generate(&ScenarioSpec {
        episodes,
        ..ScenarioSpec::default()
    })?;
    let knowledge = KnowledgeSet::build(&scenario, 256)?;
    let settings = EvalSettings {
        epsilon,
        jobs: 4,
        ..EvalSettings::default()
    };
    let mut mock = |_: &str| -> Result<Box<dyn ProposalBackend>, BackendError> { Ok(Box::new(MockBackend)) };

    let mut out = std::io::stdout();
    write_report(&report_rows(&ablation(&scenario, &knowledge, &settings, &mut mock)?), &mut out)?;
    println!();
    write_report(&report_rows(&grid(&scenario, &knowledge, &settings, &mut mock)?), &mut out)?;
    Ok(())
}
