use eventnav::action::{NoisyPolicy, OraclePolicy};
use eventnav::backtrack::BacktrackConfig;
use eventnav::embed::HashingEmbedder;
use eventnav::eval::{make_policy, EvalSettings};
use eventnav::kg::{Dataset, EventGraph, TaskSequence};
use eventnav::planner::{Knowledge, MockBackend, PlanMode, Planner, PlanningContext};
use eventnav::sim::runner::{run_episode, run_suite, RunSettings, Termination};
use eventnav::sim::{default_radius, generate_episodes, generate_world};

#[test]
fn generated_worlds_have_moderate_degree() {
    for seed in 0..20 {
        let w = generate_world(100, default_radius(100), seed).unwrap();
        let d = w.mean_degree();
        assert!((3.0..=8.0).contains(&d), "seed {seed}: mean degree {d}");
        assert_eq!(w.components().len(), 1);
        assert_eq!(w, generate_world(100, default_radius(100), seed).unwrap());
    }
}

#[test]
fn suite_results_do_not_depend_on_thread_count() {
    let world = generate_world(100, default_radius(100), 2).unwrap();
    let episodes = generate_episodes(&world, 24, 3).unwrap();
    let seqs: Vec<TaskSequence> = episodes.iter().map(|e| e.task_sequence()).collect();
    let knowledge = Knowledge::build(EventGraph::from_sequences(&seqs).unwrap(), Box::new(HashingEmbedder::default())).unwrap();
    let settings = EvalSettings {
        epsilon: 0.3,
        ..EvalSettings::default()
    };
    let run = RunSettings::new(BacktrackConfig::for_dataset(Dataset::R2r));
    let go = |jobs| {
        run_suite(
            &episodes,
            &world,
            |_| Planner::new(Some(&knowledge), &MockBackend, 5),
            |e| make_policy(&world, e, &settings, 5),
            &run,
            jobs,
        )
        .unwrap()
    };
    let one = go(1);
    assert_eq!(one, go(4));
    assert_eq!(one.iter().map(|r| r.episode_id.as_str()).collect::<Vec<_>>(), episodes.iter().map(|e| e.id.as_str()).collect::<Vec<_>>());
}

#[test]
fn zero_epsilon_noise_is_the_oracle() {
    let world = generate_world(80, default_radius(80), 9).unwrap();
    for ep in generate_episodes(&world, 10, 1).unwrap() {
        let knowledge = Knowledge::build(EventGraph::from_sequences([&ep.task_sequence()]).unwrap(), Box::new(HashingEmbedder::default())).unwrap();
        let planner = Planner::new(Some(&knowledge), &MockBackend, 5);
        let settings = RunSettings::new(BacktrackConfig::for_dataset(Dataset::R2r));
        let mut oracle = OraclePolicy::new(&world, &ep, 7);
        let mut noisy = NoisyPolicy::new(OraclePolicy::new(&world, &ep, 7), 0.0, 99).unwrap();
        let a = run_episode(&ep, &world, &planner, &mut oracle, &settings);
        let b = run_episode(&ep, &world, &planner, &mut noisy, &settings);
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.log, b.log);
        assert!(a.success);
        assert_eq!(a.trajectory_length, ep.reference_path(&world).unwrap().1);
    }
}

#[test]
fn rollbacks_are_charged_and_bounded() {
    let world = generate_world(100, default_radius(100), 11).unwrap();
    let episodes = generate_episodes(&world, 30, 12).unwrap();
    let seqs: Vec<TaskSequence> = episodes.iter().map(|e| e.task_sequence()).collect();
    let knowledge = Knowledge::build(EventGraph::from_sequences(&seqs).unwrap(), Box::new(HashingEmbedder::default())).unwrap();
    let planner = Planner::new(Some(&knowledge), &MockBackend, 5);
    let settings = EvalSettings {
        epsilon: 0.5,
        seed: 4,
        ..EvalSettings::default()
    };
    let cfg = BacktrackConfig::for_dataset(Dataset::R2r);
    let mut rolled = 0;
    for ep in &episodes {
        let mut policy = make_policy(&world, ep, &settings, cfg.window).unwrap();
        let r = run_episode(ep, &world, &planner, policy.as_mut(), &RunSettings::new(cfg.clone()));
        assert!(r.rollback_penalty <= r.trajectory_length);
        assert!(r.replans <= r.subtasks.len());
        if r.rollback_penalty > 0.0 {
            rolled += 1;
        }
        if r.termination == Termination::Failed {
            assert!(!r.success && r.aborted);
        }

        let mut policy = make_policy(&world, ep, &settings, cfg.window).unwrap();
        let off = run_episode(ep, &world, &planner, policy.as_mut(), &RunSettings::new(cfg.clone().disabled()));
        assert_eq!(off.rollback_penalty, 0.0);
        assert_eq!(off.replans, 0);
    }
    assert!(rolled > 0, "noise this high should trigger some rollbacks");
}

#[test]
fn mock_planner_follows_heaviest_successor_and_finishes() {
    let seqs = [
        TaskSequence::new("go to the sink", ["exit the bedroom", "walk down the hall", "enter the kitchen"], Dataset::R2r, "a"),
        TaskSequence::new("go to the sink", ["exit the bedroom", "walk down the hall", "enter the kitchen"], Dataset::R2r, "b"),
        TaskSequence::new("go outside", ["exit the bedroom", "walk down the hall", "open the front door"], Dataset::R2r, "c"),
    ];
    let knowledge = Knowledge::build(EventGraph::from_sequences(&seqs).unwrap(), Box::new(HashingEmbedder::default())).unwrap();
    let planner = Planner::new(Some(&knowledge), &MockBackend, 5);
    let mut ctx = PlanningContext::new("go to the sink");
    let first = planner.plan(&mut ctx, PlanMode::Fresh).unwrap();
    assert_eq!(first.text, "exit the bedroom");
    ctx.push_history(&first.text, eventnav::planner::Outcome::Completed);
    let second = planner.plan(&mut ctx, PlanMode::Fresh).unwrap();
    assert_eq!(second.text, "walk down the hall");
    ctx.push_history(&second.text, eventnav::planner::Outcome::Completed);
    assert_eq!(planner.plan(&mut ctx, PlanMode::Fresh).unwrap().text, "enter the kitchen");
    let replan = planner.plan(&mut ctx, PlanMode::Replan { failed: "enter the kitchen" }).unwrap();
    assert_eq!(replan.text, "open the front door");
}
