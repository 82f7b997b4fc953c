//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion outside `KNOWN_UNATTAINABLE` fails (or one inside it starts
//! passing, so the list cannot go stale).

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use litrag::chunker::{split_text, ChunkConfig};
use litrag::clock::{StepClock, SystemClock};
use litrag::embedding::{normalize, EmbedderInfo, EmbedderKind, EmbeddingVector};
use litrag::eval::{
    accuracy, cosine_similarity, load_qa_dataset, precision, report, run_benchmark,
    synthetic_binary_records, BenchOptions, QaKind,
};
use litrag::llm::{complete, estimate_cost, render_turns, ModelConfig, Pricing, ScriptedBackend, TemplateKind};
use litrag::qa::{ChatTurn, Role};
use litrag::vector_store::{decode_vectors, Index, IndexEntry, IndexError, IndexMetadata, RetrieverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;

/// Criteria that cannot pass as stated; see the project decisions notes.
/// The published Chat-GPT accuracy 0.4761 is 10/21 truncated rather than
/// rounded (10/21 = 0.476190...), 9.05e-5 away, outside the 5e-5 tolerance.
const KNOWN_UNATTAINABLE: &[&str] = &["metric reproduction"];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let (pass, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome { name, pass, detail }
}

fn within(start: Instant, limit: Duration) -> Result<String, String> {
    let took = start.elapsed();
    if took < limit {
        Ok(format!("{:.3}s < {:?}", took.as_secs_f64(), limit))
    } else {
        Err(format!("took {:.3}s, limit {:?}", took.as_secs_f64(), limit))
    }
}

fn metric_reproduction() -> Result<String, String> {
    let start = Instant::now();
    // (correct, confident, total) -> published (accuracy, precision)
    let rows: [(&str, usize, usize, f64, f64); 6] = [
        ("GPT 3.5 + RAG", 19, 21, 0.9048, 0.9048),
        ("Orca + RAG", 17, 21, 0.8095, 0.8095),
        ("LLaMa 2 + RAG", 13, 19, 0.6190, 0.6842),
        ("Falcon + RAG", 13, 19, 0.619, 0.6842),
        ("Mistral + RAG", 18, 21, 0.8571, 0.8571),
        ("Chat-GPT", 10, 16, 0.4761, 0.625),
    ];
    let mut failures = Vec::new();
    for (name, correct, confident, want_acc, want_prec) in rows {
        let records = synthetic_binary_records(name, correct, confident, 21);
        let acc = accuracy(&records).map_err(|e| e.to_string())?;
        let prec = precision(&records).map_err(|e| e.to_string())?;
        // independent oracle: plain ratios of the counts
        let (oracle_acc, oracle_prec) = (correct as f64 / 21.0, correct as f64 / confident as f64);
        if acc != oracle_acc || prec != oracle_prec {
            failures.push(format!("{name}: metric {acc}/{prec} != ratio {oracle_acc}/{oracle_prec}"));
        }
        if (acc - want_acc).abs() > 5e-5 {
            failures.push(format!("{name}: accuracy {acc:.6} vs {want_acc} (|d|={:.2e})", (acc - want_acc).abs()));
        }
        if (prec - want_prec).abs() > 5e-5 {
            failures.push(format!("{name}: precision {prec:.6} vs {want_prec} (|d|={:.2e})", (prec - want_prec).abs()));
        }
    }
    let timing = within(start, Duration::from_secs(1))?;
    if failures.is_empty() {
        Ok(format!("6 rows within 5e-5; {timing}"))
    } else {
        Err(failures.join("; "))
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

fn metadata(dim: usize) -> IndexMetadata {
    IndexMetadata {
        embedder: EmbedderInfo {
            kind: EmbedderKind::DeterministicHash,
            dim,
            model_id: "random".into(),
            seed: None,
        },
        created_at: "2024-01-01T00:00:00Z".into(),
        corpus_fingerprint: String::new(),
    }
}

fn retrieval_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim = 32;
    let mut compared = 0usize;
    let mut hits_seen = 0usize;
    for trial in 0..50 {
        let entries: Vec<IndexEntry> = (0..500)
            .map(|i| IndexEntry {
                chunk_id: format!("d{}#{}", i % 97, i),
                text: format!("t{i}"),
                vector: random_unit(&mut rng, dim),
            })
            .collect();
        let index = Index::from_entries(dim, entries.clone(), metadata(dim)).map_err(|e| e.to_string())?;
        for q in 0..50 {
            let cfg = RetrieverConfig {
                k: [1, 5, 10][(trial + q) % 3],
                threshold: [0.0, 0.6, 0.9][(trial / 3 + q) % 3],
            };
            // half the queries sit close to a stored vector so high thresholds see hits
            let query = if q % 2 == 0 {
                let base = entries[rng.gen_range(0..500)].vector.as_slice().to_vec();
                let noisy: Vec<f32> = base.iter().map(|x| x + rng.gen_range(-0.05f32..0.05)).collect();
                normalize(&noisy).unwrap()
            } else {
                random_unit(&mut rng, dim)
            };
            let got = index.search(&query, &cfg).map_err(|e| e.to_string())?;

            let mut want: Vec<(f64, &str, &str)> = entries
                .iter()
                .map(|e| {
                    let s: f64 = e
                        .vector
                        .as_slice()
                        .iter()
                        .zip(query.as_slice())
                        .map(|(a, b)| f64::from(*a) * f64::from(*b))
                        .sum();
                    (s, e.chunk_id.as_str(), e.text.as_str())
                })
                .filter(|(s, _, _)| *s >= cfg.threshold)
                .collect();
            want.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
            want.truncate(cfg.k);

            let got_t: Vec<(f64, &str, &str)> =
                got.iter().map(|h| (h.score, h.chunk_id.as_str(), h.chunk_text.as_str())).collect();
            if got_t != want {
                return Err(format!("trial {trial} query {q}: {got_t:?} != {want:?}"));
            }
            compared += 1;
            hits_seen += got.len();
        }
    }
    let timing = within(start, Duration::from_secs(10))?;
    Ok(format!("{compared} searches identical to brute force ({hits_seen} hits); {timing}"))
}

fn random_abstract(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(10..=8000);
    let words = ["qubit", "edge", "latency", "model", "λ-calculus", "naïve", "über", "x", "transformer"];
    let mut s = String::new();
    while s.chars().count() < len {
        s.push_str(words[rng.gen_range(0..words.len())]);
        match rng.gen_range(0..20) {
            0 => s.push_str("\n\n"),
            1..=3 => s.push_str(". "),
            4 => s.push('\n'),
            5 => {
                // long run with no separators at all
                let run = rng.gen_range(100..1500);
                s.extend(std::iter::repeat_n('z', run));
            }
            _ => s.push(' '),
        }
    }
    s.chars().take(len).collect()
}

fn chunker_properties() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = ChunkConfig::default();
    let mut total = 0usize;
    for n in 0..200 {
        let text = random_abstract(&mut rng);
        let chars: Vec<char> = text.chars().collect();
        let chunks = split_text("doc", &text, &cfg);
        let mut rebuilt = String::new();
        for (i, c) in chunks.iter().enumerate() {
            if c.text.chars().count() > 1024 {
                return Err(format!("abstract {n} chunk {i} has {} chars", c.text.chars().count()));
            }
            let core: String = chars[c.core_span.0..c.core_span.1].iter().collect();
            rebuilt.push_str(&core);
            let expected_prefix: String = if i == 0 {
                String::new()
            } else {
                let prev: Vec<char> = chunks[i - 1].text.chars().collect();
                let tail = 200.min(prev.len());
                prev[prev.len() - tail..].iter().collect()
            };
            if c.text != format!("{expected_prefix}{core}") {
                return Err(format!("abstract {n} chunk {i} breaks the overlap prefix rule"));
            }
        }
        if rebuilt != text {
            return Err(format!("abstract {n}: core spans do not reconstruct the input"));
        }
        total += chunks.len();
    }
    let timing = within(start, Duration::from_secs(5))?;
    Ok(format!("200 abstracts, {total} chunks; {timing}"))
}

fn cosine_identities() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let tol = 1e-9;
    for n in 0..1000 {
        let dim = rng.gen_range(2..64);
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let cos = |a: &[f64], b: &[f64]| cosine_similarity(a, b).map_err(|e| format!("vector {n}: {e}"));
        let self_sim = cos(&v, &v)?;
        if (self_sim - 1.0).abs() > tol {
            return Err(format!("vector {n}: cos(v,v) = {self_sim}"));
        }
        // Gram-Schmidt: remove v's component from w
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let vw: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let ortho: Vec<f64> = w.iter().zip(&v).map(|(b, a)| b - vw / vv * a).collect();
        let o = cos(&v, &ortho)?;
        if o.abs() > tol {
            return Err(format!("vector {n}: orthogonal cos = {o:e}"));
        }
        let lambda = rng.gen_range(1e-3..1e3);
        let scaled: Vec<f64> = v.iter().map(|x| x * lambda).collect();
        let (a, b) = (cos(&v, &w)?, cos(&scaled, &w)?);
        if (a - b).abs() > tol {
            return Err(format!("vector {n}: scale changed cosine {a} -> {b}"));
        }
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let anti = cos(&v, &neg)?;
        if !(-1.0..=1.0).contains(&a) || !(-1.0..=1.0).contains(&self_sim) || !(-1.0..=1.0).contains(&anti) {
            return Err(format!("vector {n}: cosine outside [-1, 1]"));
        }
        if (anti + 1.0).abs() > tol {
            return Err(format!("vector {n}: cos(v,-v) = {anti}"));
        }
    }
    Ok("1000 random vectors within 1e-9".into())
}

fn end_to_end_stub_run() -> Result<String, String> {
    let start = Instant::now();
    let dataset = load_qa_dataset(&common::fixture("qa_dataset.jsonl")).map_err(|e| e.to_string())?;
    let run = || {
        let engine = common::engine_with(Arc::new(common::stub_backend()))
            .with_clock(Arc::new(StepClock::new(Duration::from_millis(10))));
        run_benchmark(&dataset, &[common::stub_model("stub")], &engine, &BenchOptions::default())
    };
    let (a, b) = (run(), run());
    if a.len() != 30 {
        return Err(format!("{} records", a.len()));
    }
    let (ra, rb) = (report(&a, &[]), report(&b, &[]));
    if ra.to_csv() != rb.to_csv() || ra.render_text() != rb.render_text() {
        return Err("reports differ between runs".into());
    }
    let follow_ups: Vec<_> = a.iter().filter(|r| r.kind == QaKind::FollowUp).collect();
    if follow_ups.iter().any(|r| r.history_turns != 2) {
        return Err("a follow-up did not see its parent's turn pair".into());
    }
    if a.iter().filter(|r| r.kind != QaKind::FollowUp).any(|r| r.history_turns != 0) {
        return Err("a non-follow-up item did not start a fresh session".into());
    }
    let timing = within(start, Duration::from_secs(5))?;
    Ok(format!(
        "30 records, identical reports, {} follow-ups at 2 prior turns; {timing}",
        follow_ups.len()
    ))
}

fn latency_and_cost() -> Result<String, String> {
    let backend = ScriptedBackend::constant("yes").with_delay(Duration::from_millis(50));
    let model = ModelConfig::new("stub", "http://127.0.0.1:9");
    let prompt = render_turns(TemplateKind::PlainChat, "S", "C", &[]);
    let result = complete(&backend, &model, &prompt, &SystemClock::new()).map_err(|e| e.to_string())?;
    if !(0.05..=0.07).contains(&result.latency_s) {
        return Err(format!("latency {:.4}s outside [0.05, 0.07]", result.latency_s));
    }
    let pricing = Pricing::new(Decimal::new(5, 4), Decimal::new(15, 4));
    let cost = estimate_cost(100, 50, &pricing);
    if cost != Decimal::new(125, 6) || cost.to_string() != "0.000125" {
        return Err(format!("cost {cost} != 0.000125"));
    }
    let free = estimate_cost(100, 50, &Pricing::default());
    let mut records = synthetic_binary_records("local", 1, 1, 1);
    records[0].cost_usd = free;
    let text = report(&records, &[]).render_text();
    if !free.is_zero() || !text.contains("No cost involved") {
        return Err(format!("zero-priced cost {free}, report lacks \"No cost involved\""));
    }
    Ok(format!("latency {:.4}s, cost {cost}, free model reports \"No cost involved\"", result.latency_s))
}

fn index_persistence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dim = 48;
    let entries: Vec<IndexEntry> = (0..1000)
        .map(|i| IndexEntry {
            chunk_id: format!("doc-{}#{}", i / 3, i % 3),
            text: format!("chunk text {i} ✓"),
            vector: random_unit(&mut rng, dim),
        })
        .collect();
    let index = Index::from_entries(dim, entries, metadata(dim)).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("idx.bin");
    index.save(&path).map_err(|e| e.to_string())?;
    let loaded = Index::load(&path).map_err(|e| e.to_string())?;
    let bits = |i: &Index| -> Vec<(String, Vec<u32>)> {
        i.entries()
            .iter()
            .map(|e| (e.chunk_id.clone(), e.vector.as_slice().iter().map(|x| x.to_bits()).collect()))
            .collect()
    };
    if bits(&loaded) != bits(&index) || loaded != index {
        return Err("loaded index differs".into());
    }
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    if loaded.encode_vectors() != bytes {
        return Err("re-encoding is not byte-identical".into());
    }
    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x40;
    std::fs::write(&path, &corrupt).map_err(|e| e.to_string())?;
    match (Index::load(&path), decode_vectors(&corrupt)) {
        (Err(IndexError::ChecksumMismatch), Err(IndexError::ChecksumMismatch)) => {
            Ok("1000 entries bit-exact; flipped byte rejected with checksum error".into())
        }
        (a, _) => Err(format!("corrupted file gave {:?}", a.map(|i| i.len()))),
    }
}

fn prompt_templates() -> Result<String, String> {
    let turns = |pairs: &[(&str, &str)]| -> Vec<ChatTurn> {
        pairs
            .iter()
            .flat_map(|(q, a)| [ChatTurn::new(Role::User, *q), ChatTurn::new(Role::Assistant, *a)])
            .collect()
    };
    let cases = [
        (turns(&[]), "<s>[INST] S\n\nC [/INST]"),
        (turns(&[("q1", "a1")]), "<s>[INST] S\n\nq1 [/INST] a1 </s>[INST] C [/INST]"),
        (
            turns(&[("q1", "a1"), ("q2", "a2")]),
            "<s>[INST] S\n\nq1 [/INST] a1 </s>[INST] q2 [/INST] a2 </s>[INST] C [/INST]",
        ),
    ];
    for (history, golden) in &cases {
        let rendered = render_turns(TemplateKind::InstBlock, "S", "C", history).text();
        if rendered != *golden {
            return Err(format!("{} turns: {rendered:?} != {golden:?}", history.len() / 2));
        }
    }
    Ok("0-, 1- and 2-turn histories match golden strings".into())
}

fn main() {
    let outcomes = [
        check("metric reproduction", metric_reproduction),
        check("retrieval oracle equivalence", retrieval_oracle),
        check("chunker properties", chunker_properties),
        check("cosine identities", cosine_identities),
        check("end-to-end stub run", end_to_end_stub_run),
        check("latency/cost accounting", latency_and_cost),
        check("index persistence", index_persistence),
        check("prompt template conformance", prompt_templates),
    ];
    for o in &outcomes {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_UNATTAINABLE.contains(&o.name) { " (known unattainable)" } else { "" };
        println!("{tag} {}{note}: {}", o.name, o.detail);
    }
    let unexpected: Vec<&str> = outcomes
        .iter()
        .filter(|o| o.pass == KNOWN_UNATTAINABLE.contains(&o.name))
        .map(|o| o.name)
        .collect();
    if !unexpected.is_empty() {
        eprintln!("criteria with unexpected outcome: {unexpected:?}");
        std::process::exit(1);
    }
}
