use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::json;

fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn litrag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_litrag"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Builds corpus, chunks and a hashing index under `dir`.
fn build_index(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus");
    let chunks = dir.join("chunks.jsonl");
    let idx = dir.join("corpus.idx");
    let out = ok(litrag(&["ingest", "--in", s(&core_fixture("raw_corpus.jsonl")), "--out", s(&corpus)]));
    assert!(out.contains("ingested 14 of 17 records (3 dropped)"), "{out}");
    let out = ok(litrag(&["chunk", "--corpus", s(&corpus), "--out", s(&chunks)]));
    assert!(out.contains("from 14 documents"), "{out}");
    let out = ok(litrag(&["index", "--chunks", s(&chunks), "--out", s(&idx), "--embedder", "hash"]));
    assert!(out.contains("(dim 256)"), "{out}");
    idx
}

fn registry(dir: &Path, url: &str) -> PathBuf {
    let path = dir.join("models.json");
    let body = json!({"models": [
        {"name": "mock-gpt", "endpoint_url": url, "model_id": "gpt-3.5-turbo",
         "pricing": {"prompt_per_1k": 0.0005, "completion_per_1k": 0.0015}},
        {"name": "mock-local", "endpoint_url": url, "template_kind": "inst_block"}
    ]});
    std::fs::write(&path, body.to_string()).unwrap();
    path
}

fn mock_chat(server: &mut mockito::ServerGuard) {
    server
        .mock("POST", "/chat/completions")
        .with_body(
            json!({"choices": [{"message": {"content": "yes"}}],
                   "usage": {"prompt_tokens": 100, "completion_tokens": 50}})
            .to_string(),
        )
        .expect_at_least(1)
        .create();
}

#[test]
fn query_lists_retrieved_chunks() {
    let dir = tempfile::tempdir().unwrap();
    let idx = build_index(dir.path());
    let out = ok(litrag(&[
        "query", "--idx", s(&idx), "--text", "surface codes correct bit-flip and phase-flip errors",
        "--k", "2", "--threshold", "0.2",
    ]));
    assert!(out.starts_with("1. 2301.00006#0 score="), "{out}");
    let out = ok(litrag(&["query", "--idx", s(&idx), "--text", "zebra", "--threshold", "0.99"]));
    assert!(out.contains("no chunks"));
}

#[test]
fn bench_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let idx = build_index(dir.path());
    let mut server = mockito::Server::new();
    mock_chat(&mut server);
    let models = registry(dir.path(), &server.url());
    let out_dir = dir.path().join("bench");
    let text = ok(litrag(&[
        "bench", "--dataset", s(&core_fixture("qa_dataset.jsonl")), "--models", s(&models),
        "--idx", s(&idx), "--out", s(&out_dir),
    ]));
    assert!(text.contains("Binary questions"));
    let records = std::fs::read_to_string(out_dir.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 60);
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    // every binary answer is "yes": 11 of the 21 fixture items expect yes
    assert!(rows[1].starts_with("mock-gpt,21,11,21,0.5238,0.5238,9,"), "{}", rows[1]);
    // 30 answers + 4 condensations, each 100/50 tokens at 0.000125
    assert!(rows[1].ends_with(",0.004250,0.000142,0,0"), "{}", rows[1]);
    assert!(text.contains("No cost involved"));

    let ranks = dir.path().join("ranks.csv");
    std::fs::write(&ranks, "item_id,model_name,rater,rank\nqc-02,mock-gpt,ai,excellent\n").unwrap();
    let rendered = ok(litrag(&["report", "--records", s(&out_dir.join("records.jsonl")), "--ranks", s(&ranks)]));
    assert!(rendered.contains("Long-answer questions"));
    let again = dir.path().join("again");
    ok(litrag(&["report", "--records", s(&out_dir.join("records.jsonl")), "--out", s(&again)]));
    assert_eq!(std::fs::read_to_string(again.join("report.csv")).unwrap(), csv);
}

#[test]
fn ask_and_chat() {
    let dir = tempfile::tempdir().unwrap();
    let idx = build_index(dir.path());
    let mut server = mockito::Server::new();
    mock_chat(&mut server);
    let models = registry(dir.path(), &server.url());
    let out = ok(litrag(&[
        "ask", "--idx", s(&idx), "--models", s(&models), "--model", "mock-gpt", "--mode", "binary",
        "--threshold", "0.2", "Do surface codes correct phase-flip errors?",
    ]));
    assert!(out.starts_with("yes\n"), "{out}");
    assert!(out.contains("cost $0.000125"), "{out}");

    let mut child = Command::new(env!("CARGO_BIN_EXE_litrag"))
        .args(["chat", "--idx", s(&idx), "--models", s(&models), "--model", "mock-local"])
        .env("RUST_LOG", "warn")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"What limits qubits?\nAnd then?\nexit\n").unwrap();
    let out = ok(child.wait_with_output().unwrap());
    assert!(out.trim_end().ends_with("4 turns"), "{out}");
}

#[test]
fn unknown_model_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let idx = build_index(dir.path());
    let models = registry(dir.path(), "http://127.0.0.1:9");
    let out = litrag(&["ask", "--idx", s(&idx), "--models", s(&models), "--model", "nope", "q"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"nope\""));
}

#[test]
fn serve_answers_health_checks() {
    use std::io::Read;
    use std::net::{TcpListener, TcpStream};
    use std::time::{Duration, Instant};

    let dir = tempfile::tempdir().unwrap();
    let idx = build_index(dir.path());
    let models = registry(dir.path(), "http://127.0.0.1:9");
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port().to_string();
    let mut child = Command::new(env!("CARGO_BIN_EXE_litrag"))
        .args(["serve", "--idx", s(&idx), "--models", s(&models), "--port", &port])
        .args(["--rankings", s(&dir.path().join("rankings.jsonl"))])
        .env("RUST_LOG", "warn")
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let response = loop {
        if let Ok(mut stream) = TcpStream::connect(format!("127.0.0.1:{port}")) {
            stream
                .write_all(b"GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
                .unwrap();
            let mut buf = String::new();
            stream.read_to_string(&mut buf).unwrap();
            break buf;
        }
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"status\":\"ok\""), "{response}");
}
