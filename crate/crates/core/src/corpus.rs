//! Abstract corpus ingestion: loading raw records, text cleaning,
//! validation, de-duplication and the one-file-per-abstract corpus layout.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

/// Version of the cleaning rules applied to `Document::abstract_text`.
pub const CLEAN_VERSION: u32 = 1;

static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^>]*>").unwrap());
static STRAY_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\s)[;:]+").unwrap());
static WHITESPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());

const ENTITIES: [(&str, &str); 5] = [
    ("&amp;", "&"),
    ("&lt;", "<"),
    ("&gt;", ">"),
    ("&quot;", "\""),
    ("&nbsp;", "\u{a0}"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Springer,
    Ieee,
    #[default]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    Llm,
    EdgeComputing,
    QuantumComputing,
    #[default]
    Other,
}

/// An abstract record as scraped, before any cleaning.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawDocument {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub published_date: Option<NaiveDate>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub abstract_text: String,
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub topic: Topic,
}

/// A validated abstract with cleaned text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub authors: Vec<String>,
    pub published_date: Option<NaiveDate>,
    pub keywords: Vec<String>,
    pub abstract_text: String,
    pub source: Source,
    pub topic: Topic,
    pub clean_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("record has no id")]
    MissingId,
    #[error("record {0} has an empty abstract after cleaning")]
    EmptyAbstract(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn null_as_empty<'de, D>(de: D) -> Result<String, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Ok(Option::<String>::deserialize(de)?.unwrap_or_default())
}

fn clean_pass(raw: &str) -> String {
    let mut text = TAG.replace_all(raw, "").into_owned();
    for (entity, literal) in ENTITIES {
        text = text.replace(entity, literal);
    }
    let text = text.to_lowercase();
    let text = STRAY_PUNCT.replace_all(&text, "$1");
    let text = WHITESPACE.replace_all(&text, " ");
    text.trim().to_string()
}

/// Cleans an abstract: strips HTML tags, decodes the common entities,
/// lowercases, drops colons/semicolons that follow whitespace, collapses
/// whitespace runs and trims.
///
/// Decoding entities can expose new tags (`&lt;b&gt;`), so the rules are
/// reapplied until the text stops changing. After the first pass every rule
/// can only shorten the text, so the loop terminates.
pub fn clean_text(raw: &str) -> String {
    let mut current = clean_pass(raw);
    loop {
        let next = clean_pass(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

pub fn validate(raw: RawDocument) -> Result<Document, ValidationError> {
    let id = raw.id.trim().to_string();
    if id.is_empty() {
        return Err(ValidationError::MissingId);
    }
    let abstract_text = clean_text(&raw.abstract_text);
    if abstract_text.is_empty() {
        return Err(ValidationError::EmptyAbstract(id));
    }
    Ok(Document {
        id,
        title: raw.title,
        authors: raw.authors,
        published_date: raw.published_date,
        keywords: raw.keywords,
        abstract_text,
        source: raw.source,
        topic: raw.topic,
        clean_version: CLEAN_VERSION,
    })
}

/// Keeps the first document for each distinct abstract text.
pub fn dedupe(docs: Vec<Document>) -> Vec<Document> {
    let mut seen = HashSet::new();
    docs.into_iter()
        .filter(|d| seen.insert(d.abstract_text.clone()))
        .collect()
}

/// Why a record did not make it into the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropReason {
    Malformed(String),
    Invalid(ValidationError),
    DuplicateId,
    DuplicateAbstract,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dropped {
    /// Record id when known, otherwise the input location (`file:line`).
    pub record: String,
    pub reason: DropReason,
}

#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub documents: Vec<Document>,
    pub dropped: Vec<Dropped>,
}

/// Reads raw records from a JSON-lines file or a directory of JSON files
/// (each holding one record or an array of records).
///
/// Unparseable records are returned as `Err` entries with their location so
/// the caller can log them and carry on.
pub fn read_raw(path: &Path) -> Result<Vec<Result<RawDocument, Dropped>>, IngestError> {
    let meta = fs::metadata(path).map_err(io_err(path))?;
    if meta.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for file in files {
            let text = fs::read_to_string(&file).map_err(io_err(&file))?;
            let location = file.display().to_string();
            match serde_json::from_str::<serde_json::Value>(&text) {
                Ok(serde_json::Value::Array(items)) => {
                    for (i, item) in items.into_iter().enumerate() {
                        out.push(parse_value(item, format!("{location}[{i}]")));
                    }
                }
                Ok(value) => out.push(parse_value(value, location)),
                Err(e) => out.push(Err(malformed(location, e))),
            }
        }
        Ok(out)
    } else {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let location = format!("{}:{}", path.display(), n + 1);
            out.push(serde_json::from_str(&line).map_err(|e| malformed(location, e)));
        }
        Ok(out)
    }
}

fn parse_value(value: serde_json::Value, location: String) -> Result<RawDocument, Dropped> {
    serde_json::from_value(value).map_err(|e| malformed(location, e))
}

fn malformed(location: String, e: serde_json::Error) -> Dropped {
    Dropped {
        record: location,
        reason: DropReason::Malformed(e.to_string()),
    }
}

/// Validates and de-duplicates raw records. Rejected records are logged and
/// reported in the outcome; they never abort the batch.
pub fn ingest(records: Vec<Result<RawDocument, Dropped>>) -> IngestOutcome {
    let mut outcome = IngestOutcome::default();
    let mut ids = HashSet::new();
    let mut abstracts = HashSet::new();
    for record in records {
        let dropped = match record {
            Err(d) => d,
            Ok(raw) => {
                let fallback = raw.id.clone();
                match validate(raw) {
                    Err(e) => Dropped {
                        record: fallback,
                        reason: DropReason::Invalid(e),
                    },
                    Ok(doc) if ids.contains(&doc.id) => Dropped {
                        record: doc.id,
                        reason: DropReason::DuplicateId,
                    },
                    Ok(doc) if abstracts.contains(&doc.abstract_text) => Dropped {
                        record: doc.id,
                        reason: DropReason::DuplicateAbstract,
                    },
                    Ok(doc) => {
                        ids.insert(doc.id.clone());
                        abstracts.insert(doc.abstract_text.clone());
                        outcome.documents.push(doc);
                        continue;
                    }
                }
            }
        };
        warn!(record = %dropped.record, reason = ?dropped.reason, "dropping record");
        outcome.dropped.push(dropped);
    }
    outcome
}

/// File name used for a document id; path separators and other characters
/// that are unsafe in file names are replaced with `_`.
pub fn file_name_for(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| match c {
            '/' | '\\' | ':' | '*' | '?' | '"' | '<' | '>' | '|' | '\0' => '_',
            c => c,
        })
        .collect();
    format!("{safe}.json")
}

/// Writes one `<id>.json` file per document and returns the number written.
pub fn write_corpus(docs: &[Document], dir: &Path) -> Result<usize, IngestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for doc in docs {
        let path = dir.join(file_name_for(&doc.id));
        let body = serde_json::to_vec_pretty(doc).expect("documents always serialize");
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(docs.len())
}

/// Loads every `*.json` document in `dir`, ordered by id.
pub fn load_corpus(dir: &Path) -> Result<Vec<Document>, IngestError> {
    let mut docs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_none_or(|ext| ext != "json") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let doc = serde_json::from_str(&text).map_err(|source| IngestError::Json {
            path: path.clone(),
            source,
        })?;
        docs.push(doc);
    }
    docs.sort_by(|a: &Document, b| a.id.cmp(&b.id));
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(id: &str, text: &str) -> RawDocument {
        RawDocument {
            id: id.into(),
            abstract_text: text.into(),
            ..Default::default()
        }
    }

    fn doc(id: &str, text: &str) -> Document {
        validate(raw(id, text)).unwrap()
    }

    #[test]
    fn clean_empty() {
        assert_eq!(clean_text(""), "");
    }

    #[test]
    fn clean_tags_entities_and_spaces() {
        assert_eq!(
            clean_text("Edge&nbsp;<b>Computing</b>  rocks "),
            "edge computing rocks"
        );
    }

    #[test]
    fn clean_stray_colons_after_whitespace() {
        assert_eq!(clean_text("results ; shown : here"), "results shown here");
        // a colon attached to a word is kept
        assert_eq!(clean_text("ratio: 3"), "ratio: 3");
    }

    #[test]
    fn clean_entity_that_decodes_to_tag() {
        assert_eq!(clean_text("a &lt;i&gt;b&lt;/i&gt; c"), "a b c");
        assert_eq!(clean_text("x &amp;lt;p&amp;gt; y"), "x y");
    }

    #[test]
    fn clean_already_clean_is_unchanged() {
        assert_eq!(clean_text("a b"), "a b");
        assert_eq!(clean_text(&clean_text("A B")), "a b");
    }

    #[test]
    fn validate_rejects_tag_only_abstract() {
        assert_eq!(
            validate(raw("x", "<p></p>")),
            Err(ValidationError::EmptyAbstract("x".into()))
        );
    }

    #[test]
    fn validate_keeps_clean_abstract() {
        let d = doc("x", "quantum speedup shown.");
        assert_eq!(d.abstract_text, "quantum speedup shown.");
        assert_eq!(d.clean_version, CLEAN_VERSION);
    }

    #[test]
    fn validate_missing_id() {
        assert_eq!(
            validate(raw("  ", "text")),
            Err(ValidationError::MissingId)
        );
    }

    #[test]
    fn null_abstract_is_dropped() {
        let r: RawDocument = serde_json::from_str(r#"{"id":"n1","abstract_text":null}"#).unwrap();
        assert!(matches!(validate(r), Err(ValidationError::EmptyAbstract(_))));
    }

    #[test]
    fn dedupe_cases() {
        assert!(dedupe(vec![]).is_empty());
        let out = dedupe(vec![doc("1", "same"), doc("2", "same")]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "1");
        let out = dedupe(vec![doc("1", "a"), doc("2", "b"), doc("3", "a")]);
        let ids: Vec<_> = out.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["1", "2"]);
    }

    #[test]
    fn ingest_drops_and_reports() {
        let out = ingest(vec![
            Ok(raw("a", "First abstract.")),
            Ok(raw("", "no id")),
            Ok(raw("b", "<br/>")),
            Ok(raw("a", "other text")),
            Ok(raw("c", "FIRST abstract.")),
            Ok(raw("d", "Second.")),
        ]);
        let ids: Vec<_> = out.documents.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "d"]);
        let reasons: Vec<_> = out.dropped.iter().map(|d| d.reason.clone()).collect();
        assert_eq!(
            reasons,
            [
                DropReason::Invalid(ValidationError::MissingId),
                DropReason::Invalid(ValidationError::EmptyAbstract("b".into())),
                DropReason::DuplicateId,
                DropReason::DuplicateAbstract,
            ]
        );
    }

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(file_name_for("10.1007/abc"), "10.1007_abc.json");
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(s in "\\PC{0,80}|[a-zA-Z <>/;:&;\\t\\n]{0,80}|(&(amp|lt|gt|quot|nbsp);|<b>|</p>| ;|: |  |X){0,20}") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once.clone());
            prop_assert!(!TAG.is_match(&once));
            prop_assert!(!once.contains("  "));
            prop_assert_eq!(once.to_lowercase(), once.clone());
            prop_assert_eq!(once.trim(), once.as_str());
        }

        #[test]
        fn dedupe_distinct_subsequence(texts in proptest::collection::vec("[abc]{1,2}", 0..20)) {
            let docs: Vec<Document> = texts.iter().enumerate().map(|(i, t)| doc(&i.to_string(), t)).collect();
            let out = dedupe(docs.clone());
            let distinct: HashSet<_> = out.iter().map(|d| &d.abstract_text).collect();
            prop_assert_eq!(distinct.len(), out.len());
            let mut it = docs.iter();
            for d in &out {
                prop_assert!(it.any(|x| x == d));
            }
        }
    }
}
