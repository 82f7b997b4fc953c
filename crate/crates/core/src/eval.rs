//! Benchmark harness: QA datasets, per-model benchmark runs, grading and
//! the accuracy / precision / cosine-similarity / latency / cost report.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::corpus::Topic;
use crate::embedding::{EmbedError, Embedder};
use crate::llm::{ModelConfig, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use crate::qa::{parse_binary, AnswerMode, BinaryLabel, ChatSession, QaEngine};
use crate::vector_store::RetrieverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaKind {
    Binary,
    LongForm,
    FollowUp,
}

impl QaKind {
    pub fn mode(self) -> AnswerMode {
        match self {
            QaKind::Binary => AnswerMode::Binary,
            QaKind::LongForm | QaKind::FollowUp => AnswerMode::LongForm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectedLabel {
    Yes,
    No,
}

impl ExpectedLabel {
    pub fn matches(self, parsed: BinaryLabel) -> bool {
        matches!(
            (self, parsed),
            (ExpectedLabel::Yes, BinaryLabel::Yes) | (ExpectedLabel::No, BinaryLabel::No)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub topic: Topic,
    pub kind: QaKind,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_label: Option<ExpectedLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_candidate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: follow-up {item} references unknown parent {parent}")]
    DanglingParent {
        line: usize,
        item: String,
        parent: String,
    },
}

fn schema(line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        line,
        message: message.into(),
    }
}

/// Parses a JSON-lines QA dataset. Follow-up parents must appear earlier in
/// the file and belong to the same topic.
pub fn parse_qa_dataset(text: &str) -> Result<Vec<QaItem>, DatasetError> {
    let mut items: Vec<QaItem> = Vec::new();
    let mut topics: HashMap<String, Topic> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: QaItem =
            serde_json::from_str(line).map_err(|e| schema(line_no, e.to_string()))?;
        if item.id.trim().is_empty() {
            return Err(schema(line_no, "empty id"));
        }
        if item.question.trim().is_empty() {
            return Err(schema(line_no, format!("{}: empty question", item.id)));
        }
        if item.topic == Topic::Other {
            return Err(schema(line_no, format!("{}: topic must be one of llm, edge_computing, quantum_computing", item.id)));
        }
        if topics.contains_key(&item.id) {
            return Err(schema(line_no, format!("duplicate id {}", item.id)));
        }
        match item.kind {
            QaKind::Binary => {
                if item.expected_label.is_none() {
                    return Err(schema(line_no, format!("{}: binary item needs expected_label", item.id)));
                }
            }
            QaKind::LongForm | QaKind::FollowUp => {
                if item.answer_candidate.as_deref().is_none_or(|a| a.trim().is_empty()) {
                    return Err(schema(line_no, format!("{}: item needs answer_candidate", item.id)));
                }
            }
        }
        match (&item.parent_id, item.kind) {
            (Some(parent), QaKind::FollowUp) => match topics.get(parent) {
                Some(topic) if *topic == item.topic => {}
                Some(_) => {
                    return Err(schema(line_no, format!("{}: parent {parent} is in another topic", item.id)))
                }
                None => {
                    return Err(DatasetError::DanglingParent {
                        line: line_no,
                        item: item.id.clone(),
                        parent: parent.clone(),
                    })
                }
            },
            (None, QaKind::FollowUp) => {
                return Err(schema(line_no, format!("{}: follow-up needs parent_id", item.id)))
            }
            (Some(_), _) => {
                return Err(schema(line_no, format!("{}: only follow-up items have a parent", item.id)))
            }
            (None, _) => {}
        }
        topics.insert(item.id.clone(), item.topic);
        items.push(item);
    }
    if items.is_empty() {
        return Err(schema(0, "dataset is empty"));
    }
    Ok(items)
}

pub fn load_qa_dataset(path: &Path) -> Result<Vec<QaItem>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_qa_dataset(&text)
}

/// One model's graded response to one dataset item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub item_id: String,
    pub model_name: String,
    pub kind: QaKind,
    pub generated_text: String,
    pub condensed_query: String,
    pub sources: Vec<String>,
    /// Session turns that preceded this question.
    pub history_turns: usize,
    pub expected_label: Option<ExpectedLabel>,
    pub parsed_label: Option<BinaryLabel>,
    pub correct: bool,
    pub confident: bool,
    pub similarity: Option<f64>,
    pub similarity_embedder: Option<String>,
    pub latency_s: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub tokens_estimated: bool,
    pub cost_usd: Decimal,
    pub degraded: bool,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_binary(&self) -> bool {
        self.kind == QaKind::Binary
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no records to evaluate")]
    EmptyRecordSet,
    #[error("no confidently answered questions; precision is undefined")]
    NoConfidentAnswers,
    #[error("record {0} is not a binary question")]
    NotBinary(String),
    #[error("cannot compute cosine similarity of a zero vector")]
    ZeroVector,
    #[error("vector dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("embedding failed: {0}")]
    Embedding(String),
}

fn binary_records(records: &[RunRecord]) -> Result<(), MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyRecordSet);
    }
    match records.iter().find(|r| !r.is_binary()) {
        Some(r) => Err(MetricError::NotBinary(r.item_id.clone())),
        None => Ok(()),
    }
}

/// Correct answers over all questions.
pub fn accuracy(records: &[RunRecord]) -> Result<f64, MetricError> {
    binary_records(records)?;
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Correct answers over confidently answered questions.
pub fn precision(records: &[RunRecord]) -> Result<f64, MetricError> {
    binary_records(records)?;
    let confident = records.iter().filter(|r| r.confident).count();
    if confident == 0 {
        return Err(MetricError::NoConfidentAnswers);
    }
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(correct as f64 / confident as f64)
}

/// `a·b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = ((*x).into(), (*y).into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean cosine similarity between embedded generated answers and their
/// answer candidates.
pub fn avg_cosine_similarity(
    pairs: &[(String, String)],
    embedder: &dyn Embedder,
) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyRecordSet);
    }
    let mut total = 0.0;
    for (generated, candidate) in pairs {
        total += pair_similarity(generated, candidate, embedder)?;
    }
    Ok(total / pairs.len() as f64)
}

fn pair_similarity(generated: &str, candidate: &str, embedder: &dyn Embedder) -> Result<f64, MetricError> {
    let embedded = embedder
        .embed_texts(&[generated.to_string(), candidate.to_string()])
        .map_err(|e: EmbedError| MetricError::Embedding(e.to_string()))?;
    cosine_similarity(embedded[0].as_slice(), embedded[1].as_slice())
}

/// Settings shared by every model in a benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub retriever: RetrieverConfig,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sleep between consecutive requests.
    pub pause: Duration,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            retriever: RetrieverConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            pause: Duration::ZERO,
        }
    }
}

fn embedder_label(embedder: &dyn Embedder) -> String {
    let info = embedder.info();
    let kind = serde_json::to_value(info.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    match info.seed {
        Some(seed) => format!("{kind}/{} (dim {}, seed {seed})", info.model_id, info.dim),
        None => format!("{kind}/{} (dim {})", info.model_id, info.dim),
    }
}

/// Runs every dataset item against every model, serially.
///
/// Binary and long-form items each get a fresh session; follow-up items are
/// asked in their parent's session. Backend failures are recorded on the
/// item's record and never stop the run, so the result always holds
/// `dataset.len() * models.len()` records.
pub fn run_benchmark(
    dataset: &[QaItem],
    models: &[ModelConfig],
    engine: &QaEngine,
    opts: &BenchOptions,
) -> Vec<RunRecord> {
    let label = embedder_label(engine.embedder.as_ref());
    let mut records = Vec::with_capacity(dataset.len() * models.len());
    for model in models {
        let mut model = model.clone();
        model.temperature = opts.temperature;
        model.max_tokens = opts.max_tokens;
        info!(model = %model.name, items = dataset.len(), "benchmarking");

        let mut sessions: Vec<ChatSession> = Vec::new();
        let mut session_of: HashMap<&str, usize> = HashMap::new();
        for (n, item) in dataset.iter().enumerate() {
            if n > 0 && !opts.pause.is_zero() {
                std::thread::sleep(opts.pause);
            }
            let parent = item
                .parent_id
                .as_deref()
                .and_then(|p| session_of.get(p).copied());
            let slot = match (item.kind, parent) {
                (QaKind::FollowUp, Some(slot)) => slot,
                _ => {
                    sessions.push(ChatSession::new(
                        format!("{}/{}", model.name, item.id),
                        model.clone(),
                        opts.retriever.clone(),
                    ));
                    sessions.len() - 1
                }
            };
            session_of.insert(item.id.as_str(), slot);
            let session = &mut sessions[slot];
            let history_turns = session.turns.len();
            let result = engine.answer(session, &item.question, item.kind.mode());
            records.push(grade(item, &model, history_turns, result, engine, &label));
        }
    }
    records
}

fn grade(
    item: &QaItem,
    model: &ModelConfig,
    history_turns: usize,
    result: Result<crate::qa::Answer, crate::qa::QaError>,
    engine: &QaEngine,
    embedder_label: &str,
) -> RunRecord {
    let mut record = RunRecord {
        item_id: item.id.clone(),
        model_name: model.name.clone(),
        kind: item.kind,
        generated_text: String::new(),
        condensed_query: String::new(),
        sources: Vec::new(),
        history_turns,
        expected_label: item.expected_label,
        parsed_label: None,
        correct: false,
        confident: false,
        similarity: None,
        similarity_embedder: None,
        latency_s: 0.0,
        prompt_tokens: 0,
        completion_tokens: 0,
        tokens_estimated: false,
        cost_usd: Decimal::ZERO,
        degraded: false,
        error: None,
    };
    if item.kind != QaKind::Binary {
        record.similarity = Some(0.0);
        record.similarity_embedder = Some(embedder_label.to_string());
    }
    let answer = match result {
        Ok(a) => a,
        Err(e) => {
            warn!(model = %model.name, item = %item.id, error = %e, "answer failed");
            record.degraded = true;
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.condensed_query = answer.condensed_query;
    record.sources = answer.sources.into_iter().map(|h| h.chunk_id).collect();
    record.latency_s = answer.latency_s;
    record.prompt_tokens = answer.prompt_tokens;
    record.completion_tokens = answer.completion_tokens;
    record.tokens_estimated = answer.tokens_estimated;
    record.cost_usd = answer.cost_usd;
    record.degraded = answer.degraded;
    match item.kind {
        QaKind::Binary => {
            let parsed = parse_binary(&answer.text);
            record.parsed_label = Some(parsed);
            record.confident = parsed.is_confident();
            record.correct = item.expected_label.is_some_and(|e| e.matches(parsed));
        }
        QaKind::LongForm | QaKind::FollowUp => {
            record.confident = true;
            let candidate = item.answer_candidate.as_deref().unwrap_or_default();
            match pair_similarity(&answer.text, candidate, engine.embedder.as_ref()) {
                Ok(s) => record.similarity = Some(s),
                Err(e) => {
                    warn!(item = %item.id, error = %e, "similarity unavailable, scoring 0");
                    record.degraded = true;
                }
            }
        }
    }
    record.generated_text = answer.text;
    record
}

pub fn write_records(records: &[RunRecord], path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| schema(n + 1, e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rater {
    Human,
    Ai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rank {
    Poor,
    Average,
    Excellent,
}

impl std::str::FromStr for Rank {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poor" => Ok(Rank::Poor),
            "average" => Ok(Rank::Average),
            "excellent" => Ok(Rank::Excellent),
            other => Err(format!("unknown rank {other:?} (expected poor, average or excellent)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankAnnotation {
    pub item_id: String,
    pub model_name: String,
    pub rater: Rater,
    pub rank: Rank,
}

impl RankAnnotation {
    pub fn key(&self) -> (String, String, Rater) {
        (self.item_id.clone(), self.model_name.clone(), self.rater)
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("cannot read annotations: {0}")]
    Io(#[from] std::io::Error),
    #[error("annotations row {row}: {message}")]
    Row { row: usize, message: String },
}

/// Keeps one annotation per (item, model, rater); a later entry replaces an
/// earlier one in place.
pub fn dedupe_annotations(annotations: impl IntoIterator<Item = RankAnnotation>) -> Vec<RankAnnotation> {
    let mut out: Vec<RankAnnotation> = Vec::new();
    let mut pos: HashMap<(String, String, Rater), usize> = HashMap::new();
    for a in annotations {
        match pos.get(&a.key()) {
            Some(&i) => out[i] = a,
            None => {
                pos.insert(a.key(), out.len());
                out.push(a);
            }
        }
    }
    out
}

/// Reads `item_id,model_name,rater,rank` CSV.
pub fn read_annotations(reader: impl std::io::Read) -> Result<Vec<RankAnnotation>, AnnotationError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in csv.deserialize().enumerate() {
        let row: RankAnnotation = row.map_err(|e| AnnotationError::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(dedupe_annotations(out))
}

pub fn load_annotations(path: &Path) -> Result<Vec<RankAnnotation>, AnnotationError> {
    read_annotations(fs::File::open(path)?)
}

pub fn annotations_csv(annotations: &[RankAnnotation]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for a in annotations {
        w.serialize(a).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RankTally {
    pub poor: usize,
    pub average: usize,
    pub excellent: usize,
}

impl RankTally {
    fn add(&mut self, rank: Rank) {
        match rank {
            Rank::Poor => self.poor += 1,
            Rank::Average => self.average += 1,
            Rank::Excellent => self.excellent += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.poor + self.average + self.excellent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model_name: String,
    pub binary_total: usize,
    pub binary_correct: usize,
    pub binary_confident: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub long_total: usize,
    pub avg_cosine_similarity: Option<f64>,
    pub ai_ranks: RankTally,
    pub human_ranks: RankTally,
    pub questions: usize,
    pub mean_latency_s: Option<f64>,
    pub total_cost_usd: Decimal,
    pub mean_cost_usd: Decimal,
    pub errors: usize,
    pub degraded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Embedders used for long-answer similarity, in first-seen order.
    pub similarity_embedders: Vec<String>,
    pub models: Vec<ModelReport>,
}

/// Aggregates graded records and rank annotations per model. Models appear
/// in the order they first occur in `records`, then `annotations`.
pub fn report(records: &[RunRecord], annotations: &[RankAnnotation]) -> EvalReport {
    let mut order: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for name in records
        .iter()
        .map(|r| r.model_name.as_str())
        .chain(annotations.iter().map(|a| a.model_name.as_str()))
    {
        if seen.insert(name) {
            order.push(name);
        }
    }
    let mut similarity_embedders: Vec<String> = Vec::new();
    for e in records.iter().filter_map(|r| r.similarity_embedder.as_ref()) {
        if !similarity_embedders.contains(e) {
            similarity_embedders.push(e.clone());
        }
    }
    let annotations = dedupe_annotations(annotations.iter().cloned());

    let models = order
        .into_iter()
        .map(|name| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| r.model_name == name).collect();
            let binary: Vec<RunRecord> = mine.iter().filter(|r| r.is_binary()).map(|r| (*r).clone()).collect();
            let long: Vec<&RunRecord> = mine.iter().copied().filter(|r| !r.is_binary()).collect();
            let answered: Vec<&RunRecord> = mine.iter().copied().filter(|r| r.error.is_none()).collect();
            let similarities: Vec<f64> = long.iter().filter_map(|r| r.similarity).collect();

            let mut ai_ranks = RankTally::default();
            let mut human_ranks = RankTally::default();
            for a in annotations.iter().filter(|a| a.model_name == name) {
                match a.rater {
                    Rater::Ai => ai_ranks.add(a.rank),
                    Rater::Human => human_ranks.add(a.rank),
                }
            }
            let total_cost_usd: Decimal = mine.iter().map(|r| r.cost_usd).sum();
            let mut mean_cost_usd = if mine.is_empty() {
                Decimal::ZERO
            } else {
                (total_cost_usd / Decimal::from(mine.len())).round_dp(6)
            };
            mean_cost_usd.rescale(6);
            let mut total_cost_usd = total_cost_usd;
            total_cost_usd.rescale(6);

            ModelReport {
                model_name: name.to_string(),
                binary_total: binary.len(),
                binary_correct: binary.iter().filter(|r| r.correct).count(),
                binary_confident: binary.iter().filter(|r| r.confident).count(),
                accuracy: accuracy(&binary).ok(),
                precision: precision(&binary).ok(),
                long_total: long.len(),
                avg_cosine_similarity: (!similarities.is_empty())
                    .then(|| similarities.iter().sum::<f64>() / similarities.len() as f64),
                ai_ranks,
                human_ranks,
                questions: mine.len(),
                mean_latency_s: (!answered.is_empty())
                    .then(|| answered.iter().map(|r| r.latency_s).sum::<f64>() / answered.len() as f64),
                total_cost_usd,
                mean_cost_usd,
                errors: mine.len() - answered.len(),
                degraded: mine.iter().filter(|r| r.degraded).count(),
            }
        })
        .collect();
    EvalReport {
        similarity_embedders,
        models,
    }
}

fn fixed4(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    let _ = writeln!(out, "{}", line(&header));
    let rule = widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ");
    let _ = writeln!(out, "{rule}");
    for row in rows {
        let _ = writeln!(out, "{}", line(row));
    }
}

impl EvalReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model_name == name)
    }

    /// Aligned plain-text tables: binary metrics, long-answer metrics, and
    /// latency/cost.
    pub fn render_text(&self) -> String {
        let na = |s: String| if s.is_empty() { "n/a".to_string() } else { s };
        let mut out = String::new();
        let embedders = if self.similarity_embedders.is_empty() {
            "n/a".to_string()
        } else {
            self.similarity_embedders.join(", ")
        };
        let _ = writeln!(out, "Similarity embedder: {embedders}\n");

        let _ = writeln!(out, "Binary questions");
        let rows: Vec<Vec<String>> = self
            .models
            .iter()
            .map(|m| {
                vec![
                    m.model_name.clone(),
                    na(fixed4(m.accuracy)),
                    na(fixed4(m.precision)),
                    m.binary_correct.to_string(),
                    m.binary_confident.to_string(),
                    m.binary_total.to_string(),
                ]
            })
            .collect();
        table(&mut out, &["LLM", "Accuracy", "Precision", "Correct", "Confident", "Total"], &rows);

        let _ = writeln!(out, "\nLong-answer questions");
        let rows: Vec<Vec<String>> = self
            .models
            .iter()
            .map(|m| {
                vec![
                    m.model_name.clone(),
                    na(fixed4(m.avg_cosine_similarity)),
                    m.ai_ranks.poor.to_string(),
                    m.ai_ranks.average.to_string(),
                    m.ai_ranks.excellent.to_string(),
                    m.human_ranks.poor.to_string(),
                    m.human_ranks.average.to_string(),
                    m.human_ranks.excellent.to_string(),
                ]
            })
            .collect();
        table(
            &mut out,
            &[
                "LLM",
                "Cosine Similarity",
                "AI Poor",
                "AI Average",
                "AI Excellent",
                "Human Poor",
                "Human Average",
                "Human Excellent",
            ],
            &rows,
        );

        let _ = writeln!(out, "\nLatency and cost");
        let rows: Vec<Vec<String>> = self
            .models
            .iter()
            .map(|m| {
                let (mean, total) = if m.total_cost_usd.is_zero() {
                    ("No cost involved".to_string(), "No cost involved".to_string())
                } else {
                    (m.mean_cost_usd.to_string(), m.total_cost_usd.to_string())
                };
                vec![
                    m.model_name.clone(),
                    na(fixed4(m.mean_latency_s)),
                    mean,
                    total,
                    m.errors.to_string(),
                    m.degraded.to_string(),
                ]
            })
            .collect();
        table(
            &mut out,
            &["LLM", "Average Latency (s)", "Average Cost (USD)", "Total Cost (USD)", "Errors", "Degraded"],
            &rows,
        );
        out
    }

    /// One CSV row per model. Undefined metrics are empty cells.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "binary_total",
            "binary_correct",
            "binary_confident",
            "accuracy",
            "precision",
            "long_total",
            "avg_cosine_similarity",
            "ai_poor",
            "ai_average",
            "ai_excellent",
            "human_poor",
            "human_average",
            "human_excellent",
            "questions",
            "mean_latency_s",
            "total_cost_usd",
            "mean_cost_usd",
            "errors",
            "degraded",
        ])
        .expect("in-memory csv write");
        for m in &self.models {
            w.write_record([
                m.model_name.clone(),
                m.binary_total.to_string(),
                m.binary_correct.to_string(),
                m.binary_confident.to_string(),
                fixed4(m.accuracy),
                fixed4(m.precision),
                m.long_total.to_string(),
                fixed4(m.avg_cosine_similarity),
                m.ai_ranks.poor.to_string(),
                m.ai_ranks.average.to_string(),
                m.ai_ranks.excellent.to_string(),
                m.human_ranks.poor.to_string(),
                m.human_ranks.average.to_string(),
                m.human_ranks.excellent.to_string(),
                m.questions.to_string(),
                fixed4(m.mean_latency_s),
                m.total_cost_usd.to_string(),
                m.mean_cost_usd.to_string(),
                m.errors.to_string(),
                m.degraded.to_string(),
            ])
            .expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }
}

/// Builds binary records with the given counts: the first `correct` are
/// right, the next `confident - correct` are confidently wrong, the rest are
/// "do not know". Used to check metrics against published count pairs.
pub fn synthetic_binary_records(model: &str, correct: usize, confident: usize, total: usize) -> Vec<RunRecord> {
    assert!(correct <= confident && confident <= total);
    (0..total)
        .map(|i| {
            let (parsed, text) = if i < correct {
                (BinaryLabel::Yes, "yes")
            } else if i < confident {
                (BinaryLabel::No, "no")
            } else {
                (BinaryLabel::DoNotKnow, "do not know")
            };
            RunRecord {
                item_id: format!("b{i:02}"),
                model_name: model.to_string(),
                kind: QaKind::Binary,
                generated_text: text.to_string(),
                condensed_query: String::new(),
                sources: Vec::new(),
                history_turns: 0,
                expected_label: Some(ExpectedLabel::Yes),
                parsed_label: Some(parsed),
                correct: i < correct,
                confident: i < confident,
                similarity: None,
                similarity_embedder: None,
                latency_s: 0.0,
                prompt_tokens: 0,
                completion_tokens: 0,
                tokens_estimated: false,
                cost_usd: Decimal::ZERO,
                degraded: false,
                error: None,
            }
        })
        .collect()
}
