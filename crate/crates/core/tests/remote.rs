//! HTTP clients against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use eventnav::backend::{BackendError, ProposalBackend, RemoteBackend};
use eventnav::embed::{embed, RemoteEmbedder};
use eventnav::planner::{PlanMode, Planner, PlanningContext};

struct Captured {
    head: String,
    body: serde_json::Value,
}

/// Serves `replies.len()` requests, answering each with `(status, body)`.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
                head.push_str(&line);
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            tx.send(Captured {
                head,
                body: serde_json::from_slice(&buf).unwrap(),
            })
            .unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

#[test]
fn remote_backend_speaks_the_wire_protocol() {
    let (url, rx) = serve(vec![(200, r#"{"response":"NEXT: enter the kitchen"}"#.into())]);
    let backend = RemoteBackend::new(url, Some("sk-test".into()), "planner-large");
    assert_eq!(backend.complete("TASK:\nfind the sink").unwrap(), "NEXT: enter the kitchen");
    let req = rx.recv().unwrap();
    assert!(req.head.starts_with("POST /v1/complete"));
    assert!(req.head.contains("Bearer sk-test"), "{}", req.head);
    assert_eq!(req.body["model"], "planner-large");
    assert_eq!(req.body["prompt"], "TASK:\nfind the sink");
    assert_eq!(req.body["temperature"], 0.0);
}

#[test]
fn remote_backend_errors_are_classified() {
    let (url, _rx) = serve(vec![(503, "overloaded".into()), (200, "{\"text\":1}".into())]);
    let backend = RemoteBackend::new(url, None, "m");
    match backend.complete("p") {
        Err(BackendError::Status { status: 503, body }) => assert_eq!(body, "overloaded"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(backend.complete("p"), Err(BackendError::Protocol(_))));

    let closed = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let dead = RemoteBackend::new(format!("http://{closed}/"), None, "m");
    assert!(matches!(dead.complete("p"), Err(BackendError::Transport(_))));
}

#[test]
fn planner_retries_once_on_garbage_then_succeeds() {
    let (url, rx) = serve(vec![
        (200, r#"{"response":"I think you should go left"}"#.into()),
        (200, r#"{"response":"NEXT: go left"}"#.into()),
    ]);
    let backend = RemoteBackend::new(url, None, "m");
    let planner = Planner::new(None, &backend, 5);
    let mut ctx = PlanningContext::new("find the sink");
    let proposal = planner.plan(&mut ctx, PlanMode::Fresh).unwrap();
    assert_eq!(proposal.text, "go left");
    assert!(!proposal.is_stop);
    let first = rx.recv().unwrap().body["prompt"].as_str().unwrap().to_string();
    let second = rx.recv().unwrap().body["prompt"].as_str().unwrap().to_string();
    assert!(first.contains("KNOWLEDGE:"));
    assert_ne!(first, second, "the retry should restate the output contract");
}

#[test]
fn remote_embedder_normalizes_and_checks_dimension() {
    let (url, rx) = serve(vec![
        (200, r#"{"embedding":[3.0,4.0]}"#.into()),
        (200, r#"{"embedding":[1.0,0.0,0.0]}"#.into()),
    ]);
    let embedder = RemoteEmbedder::new(url, Some("k".into()), "embed-small", 2);
    let v = embed(&embedder, "kitchen").unwrap();
    assert!((v.values()[0] - 0.6).abs() < 1e-12 && (v.values()[1] - 0.8).abs() < 1e-12);
    assert_eq!(rx.recv().unwrap().body["input"], "kitchen");
    assert!(embed(&embedder, "hall").is_err());
}
