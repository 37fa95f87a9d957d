use std::fs;
use std::net::TcpListener;
use std::path::Path;

use eventnav::kg::{write_sequences, EventGraph};
use eventnav::retrieval::parse_knowledge_line;
use eventnav::sim::episode::load_episodes;
use eventnav::sim::runner::EpisodeResult;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = eventnav::cli::run(std::iter::once("eventnav").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A world, its episodes and a KG built from the episodes' own decompositions.
fn fixture(dir: &Path) {
    let (code, _) = run(&[
        "--seed", "4", "gen-world", "--viewpoints", "90", "--out", s(&dir.join("world.jsonl")),
        "--episodes", "6", "--episodes-out", s(&dir.join("episodes.jsonl")),
    ]);
    assert_eq!(code, 0);
    let episodes = load_episodes(dir.join("episodes.jsonl")).unwrap();
    let seqs: Vec<_> = episodes.iter().map(|e| e.task_sequence()).collect();
    let mut buf = Vec::new();
    write_sequences(&seqs, &mut buf).unwrap();
    fs::write(dir.join("seqs.jsonl"), buf).unwrap();
    let (code, _) = run(&["build-kg", "--input", s(&dir.join("seqs.jsonl")), "--out", s(&dir.join("kg.jsonl"))]);
    assert_eq!(code, 0);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[retrieval]\ntopk = 0\n").unwrap();
    assert_eq!(run(&["--config", s(&bad), "stats", "--kg", "x"]).0, 2);
    fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(run(&["--config", s(&bad), "stats", "--kg", "x"]).0, 2);
    assert_eq!(run(&["--topk", "0", "stats", "--kg", "x"]).0, 2);
    assert_eq!(run(&["--mode", "remote", "stats", "--kg", "x"]).0, 2);
    assert_eq!(run(&["stats"]).0, 2, "no kg path anywhere");
    assert_eq!(run(&["no-such-command"]).0, 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let kg = dir.path().join("kg.jsonl");
    assert_eq!(run(&["stats", "--kg", s(&kg)]).0, 3);
    fs::write(&kg, "{\"kind\":\"header\",\"format\":\"something-else\"}\n").unwrap();
    assert_eq!(run(&["stats", "--kg", s(&kg)]).0, 3);
}

#[test]
fn extract_reports_malformed_lines_and_keeps_going() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    fs::write(
        &input,
        "{\"id\":\"a\",\"goal\":\"go to the sink\",\"subgoals\":[\"exit the room\",\"walk to the sink\"]}\n{oops\n\n",
    )
    .unwrap();
    let out = dir.path().join("seqs.jsonl");
    let (code, report) = run(&["extract", "--dataset", "R2R", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["accepted"], 1);
    assert_eq!(report["rejected"], 1);
    assert!(report["rejects"][0][0].as_str().unwrap().ends_with("in.jsonl:2"));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 1);
    assert_eq!(run(&["extract", "--dataset", "NOPE", "--input", s(&input), "--out", s(&out)]).0, 2);
}

#[test]
fn query_prints_table_and_knowledge_lines() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let kg = EventGraph::load(dir.path().join("kg.jsonl")).unwrap();
    let text = &kg.sequences()[0].sequence.subtasks[0];
    let index = dir.path().join("index.jsonl");
    assert_eq!(run(&["index", "--kg", s(&dir.path().join("kg.jsonl")), "--out", s(&index)]).0, 0);
    let (code, out) = run(&[
        "query", "--kg", s(&dir.path().join("kg.jsonl")), "--index", s(&index), "--text", text, "-k", "3",
    ]);
    assert_eq!(code, 0);
    let (table, lines) = out.split_once("\n\n").unwrap();
    assert!(table.starts_with("rank\tsimilarity"));
    let first = parse_knowledge_line(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first.rank, 1);
    assert_eq!(&first.similar, text);
    assert_eq!(first.successor, kg.sequences()[0].sequence.subtasks[1]);

    let openings = dir.path().join("openings.jsonl");
    run(&["index", "--openings", "--kg", s(&dir.path().join("kg.jsonl")), "--out", s(&openings)]);
    assert_eq!(run(&["query", "--kg", s(&dir.path().join("kg.jsonl")), "--index", s(&openings), "--text", text]).0, 3);
}

#[test]
fn run_writes_sorted_results_report_and_cassette() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let out = d.join("out");
    let (code, report) = run(&[
        "run", "--world", s(&d.join("world.jsonl")), "--episodes", s(&d.join("episodes.jsonl")),
        "--kg", s(&d.join("kg.jsonl")), "--out", s(&out), "--jobs", "3",
    ]);
    assert_eq!(code, 0);
    assert!(report.starts_with("variant\tSR\tNE"));
    let results: Vec<EpisodeResult> = fs::read_to_string(out.join("results.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(results.len(), 6);
    assert!(results.windows(2).all(|p| p[0].episode_id < p[1].episode_id));
    for r in &results {
        assert_eq!(r.success, !r.aborted && r.navigation_error <= 3.0);
        assert_eq!(r.trajectory.last(), Some(&r.final_position));
    }
    assert!(out.join("trajectories").join(format!("{}.jsonl", results[0].episode_id)).exists());

    // Replaying the recorded cassette gives the same results without a live backend.
    let cfg = d.join("replay.toml");
    fs::write(&cfg, format!("[backend]\nmode = \"replay\"\n[paths]\ncassettes = {:?}\n", s(&out.join("run.cassette")))).unwrap();
    let again = d.join("again");
    let (code, replayed) = run(&[
        "--config", s(&cfg), "run", "--world", s(&d.join("world.jsonl")),
        "--episodes", s(&d.join("episodes.jsonl")), "--kg", s(&d.join("kg.jsonl")), "--out", s(&again),
    ]);
    assert_eq!(code, 0);
    assert_eq!(replayed, report);
    assert_eq!(fs::read(out.join("results.jsonl")).unwrap(), fs::read(again.join("results.jsonl")).unwrap());
}

#[test]
fn backend_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let closed = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let cfg = d.join("remote.toml");
    fs::write(&cfg, format!("[backend]\nmode = \"remote\"\nendpoint = \"http://{closed}/\"\ntimeout_secs = 2\n")).unwrap();
    let (code, _) = run(&[
        "--config", s(&cfg), "run", "--world", s(&d.join("world.jsonl")), "--episodes", s(&d.join("episodes.jsonl")),
        "--kg", s(&d.join("kg.jsonl")),
    ]);
    assert_eq!(code, 4);

    let empty = d.join("empty.cassette");
    fs::write(&empty, "{\"kind\":\"header\",\"format\":\"eventnav-cassette/1\",\"backend\":\"mock\"}\n").unwrap();
    let cfg = d.join("replay.toml");
    fs::write(&cfg, format!("[backend]\nmode = \"replay\"\n[paths]\ncassettes = {:?}\n", s(&empty))).unwrap();
    let (code, _) = run(&[
        "--config", s(&cfg), "run", "--world", s(&d.join("world.jsonl")), "--episodes", s(&d.join("episodes.jsonl")),
        "--kg", s(&d.join("kg.jsonl")),
    ]);
    assert_eq!(code, 4, "cassette miss");
}
