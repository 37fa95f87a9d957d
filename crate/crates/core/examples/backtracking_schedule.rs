//! Supervision schedules, dataset windows and the backtracking decision rule.

use eventnav::action::{supervision_schedule, Polarity};
use eventnav::backtrack::{decide, BacktrackConfig, SubtaskTrace};
use eventnav::kg::Dataset;
use eventnav::sim::ViewpointId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for dataset in [Dataset::R2r, Dataset::Reverie, Dataset::Alfred] {
        let cfg = BacktrackConfig::for_dataset(dataset);
        println!("{dataset}: d_avg {} x{} -> W = {}", cfg.d_avg, cfg.w_multiplier, cfg.window);
    }

    let fmt = |v: Vec<f64>| v.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ");
    println!("\npositive W=4: {}", fmt(supervision_schedule(4, Polarity::Positive)?));
    println!("negative W=4: {}", fmt(supervision_schedule(4, Polarity::Negative)?));

    let mut cfg = BacktrackConfig::new(0.25, 1.0, 3.0, 3)?;
    cfg.window = 3;
    let cases: [(&str, bool, &[f64]); 4] = [
        ("steady progress", false, &[0.6, 0.7, 0.8]),
        ("three drops in a row", false, &[0.50, 0.45, 0.40, 0.35]),
        ("a tie resets the run", false, &[0.50, 0.45, 0.45, 0.40]),
        ("low R, but the subtask is done", true, &[0.5, 0.1]),
    ];
    println!();
    for (name, s, history) in cases {
        let mut trace = SubtaskTrace::new("enter the kitchen", ViewpointId(0), 0);
        history.iter().for_each(|&r| trace.push(r));
        println!("{name:<32} S={} R={history:?} -> {:?}", s as u8, decide(s, &trace, &cfg));
    }
    Ok(())
}
