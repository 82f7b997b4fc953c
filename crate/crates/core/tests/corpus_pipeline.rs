mod common;

use common::fixture;
use litrag::chunker::{split, ChunkConfig};
use litrag::corpus::{file_name_for, ingest, load_corpus, read_raw, write_corpus, DropReason, Document, RawDocument};
use litrag::embedding::{Embedder, EmbedderConfig, HashEmbedder};
use litrag::vector_store::{build_index, Index, RetrieverConfig};

#[test]
fn fixture_corpus_ingest_reports_every_drop() {
    let outcome = ingest(read_raw(&fixture("raw_corpus.jsonl")).unwrap());
    assert_eq!(outcome.documents.len(), 14);
    let reasons: Vec<_> = outcome.dropped.iter().map(|d| &d.reason).collect();
    assert_eq!(reasons.len(), 3);
    assert!(matches!(reasons[0], DropReason::DuplicateId));
    assert!(matches!(reasons[1], DropReason::Invalid(_)));
    assert!(matches!(reasons[2], DropReason::Malformed(_)));
    let first = &outcome.documents[0];
    assert!(first.abstract_text.starts_with("we study quantum annealing for portfolio"));
    let lattice = outcome.documents.iter().find(|d| d.id == "2301.00004").unwrap();
    assert!(lattice.abstract_text.contains("learning with errors & related"));
}

#[test]
fn corpus_of_4929_files_round_trips() {
    let docs: Vec<Document> = (0..4929)
        .map(|i| {
            let raw = RawDocument {
                id: format!("10.1000/abs.{i:05}"),
                title: format!("Paper {i}"),
                abstract_text: format!("Abstract number {i} about <i>edge</i> inference."),
                ..Default::default()
            };
            litrag::corpus::validate(raw).unwrap()
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(write_corpus(&docs, dir.path()).unwrap(), 4929);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 4929);
    assert!(dir.path().join(file_name_for("10.1000/abs.00007")).exists());
    let mut expected = docs.clone();
    expected.sort_by(|a, b| a.id.cmp(&b.id));
    assert_eq!(load_corpus(dir.path()).unwrap(), expected);
}

#[test]
fn corpus_directory_can_be_re_ingested() {
    let outcome = ingest(read_raw(&fixture("raw_corpus.jsonl")).unwrap());
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&outcome.documents, dir.path()).unwrap();
    let again = ingest(read_raw(dir.path()).unwrap());
    assert!(again.dropped.is_empty());
    let mut a = again.documents.clone();
    let mut b = outcome.documents.clone();
    a.sort_by(|x, y| x.id.cmp(&y.id));
    b.sort_by(|x, y| x.id.cmp(&y.id));
    assert_eq!(a.iter().map(|d| &d.abstract_text).collect::<Vec<_>>(), b.iter().map(|d| &d.abstract_text).collect::<Vec<_>>());
}

#[test]
fn index_built_from_corpus_survives_save_and_load() {
    let (index, embedder) = common::fixture_index();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.idx");
    index.save(&path).unwrap();
    let loaded = Index::load(&path).unwrap();
    assert_eq!(loaded, index);

    // the loaded metadata is enough to rebuild an identical embedder
    let rebuilt = EmbedderConfig::from_info(&loaded.metadata().embedder, None).build().unwrap();
    let q = "quantum annealing portfolio";
    assert_eq!(rebuilt.embed(q).unwrap(), embedder.embed(q).unwrap());

    let hits = loaded
        .search(&embedder.embed(q).unwrap(), &RetrieverConfig { k: 2, threshold: 0.0 })
        .unwrap();
    assert_eq!(hits[0].doc_id(), "2301.00001");
}

#[test]
fn long_abstracts_split_into_bounded_chunks_before_indexing() {
    let raw = RawDocument {
        id: "long".into(),
        abstract_text: "Edge nodes schedule inference tasks. ".repeat(120),
        ..Default::default()
    };
    let doc = litrag::corpus::validate(raw).unwrap();
    let chunks = split(&doc, &ChunkConfig::default());
    assert!(chunks.len() > 4);
    assert!(chunks.iter().all(|c| c.text.chars().count() <= 1024));
    let e = HashEmbedder::new(64, 7);
    let vectors = e.embed_texts(&chunks.iter().map(|c| c.text.clone()).collect::<Vec<_>>()).unwrap();
    let index = build_index(&chunks, vectors, e.info()).unwrap();
    assert_eq!(index.len(), chunks.len());
    assert_eq!(index.get("long#0").unwrap().text, chunks[0].text);
}
