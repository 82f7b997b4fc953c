use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use litrag::chunker::{split, Chunk, ChunkConfig};
use litrag::corpus::{ingest, load_corpus, read_raw, write_corpus};
use litrag::embedding::{Embedder, EmbedderConfig};
use litrag::eval::{load_annotations, load_qa_dataset, read_records, report, run_benchmark, write_records, BenchOptions};
use litrag::llm::{HttpChatBackend, ModelRegistry};
use litrag::qa::{AnswerMode, ChatSession, PromptSet, QaEngine};
use litrag::vector_store::{build_index, Index, RetrieverConfig};
use litrag_service::{AppState, RankingStore, ServerOptions};
use tracing::info;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "litrag", version, about = "Retrieval-augmented QA over research abstracts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, validate and de-duplicate raw abstracts into a corpus directory.
    Ingest {
        /// JSON-lines file or directory of JSON files.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus into overlapping chunks (JSON lines).
    Chunk {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        max_chars: usize,
        #[arg(long, default_value_t = 200)]
        overlap: usize,
    },
    /// Embed chunks and write an index file.
    Index {
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        embedder: EmbedderArgs,
    },
    /// Show the chunks retrieved for a query.
    Query {
        #[arg(long)]
        idx: PathBuf,
        #[arg(long)]
        text: String,
        #[command(flatten)]
        retriever: RetrieverArgs,
        #[arg(long)]
        embedding_url: Option<String>,
    },
    /// Answer one question.
    Ask {
        #[command(flatten)]
        qa: QaArgs,
        #[arg(long, value_enum, default_value_t = Mode::LongForm)]
        mode: Mode,
        question: String,
    },
    /// Interactive conversation; one question per line, `exit` or EOF to quit.
    Chat {
        #[command(flatten)]
        qa: QaArgs,
    },
    /// Run a QA dataset against models and write records plus reports.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        idx: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to these models (repeatable); all registry models by default.
        #[arg(long = "model")]
        only: Vec<String>,
        #[arg(long)]
        ranks: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        pause_ms: u64,
        #[command(flatten)]
        retriever: RetrieverArgs,
        #[arg(long)]
        embedding_url: Option<String>,
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Render reports from saved records and rank annotations.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        ranks: Option<PathBuf>,
        /// Also write report.txt and report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        idx: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Append log for submitted rankings.
        #[arg(long, default_value = "rankings.jsonl")]
        rankings: PathBuf,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        cors_origin: Option<String>,
        #[arg(long, default_value_t = 3600)]
        session_ttl_s: u64,
        #[command(flatten)]
        retriever: RetrieverArgs,
        #[arg(long)]
        embedding_url: Option<String>,
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Binary,
    LongForm,
}

impl From<Mode> for AnswerMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Binary => AnswerMode::Binary,
            Mode::LongForm => AnswerMode::LongForm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderChoice {
    Remote,
    Hash,
}

#[derive(Args)]
struct EmbedderArgs {
    #[arg(long, value_enum, default_value_t = EmbedderChoice::Remote)]
    embedder: EmbedderChoice,
    /// Vector size; 768 for the remote encoder, 256 for the hashing embedder.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Remote encoder base URL; falls back to LITRAG_EMBEDDING_URL.
    #[arg(long)]
    embedding_url: Option<String>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    timeout_s: u64,
}

#[derive(Args, Clone)]
struct RetrieverArgs {
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.6)]
    threshold: f64,
}

impl From<&RetrieverArgs> for RetrieverConfig {
    fn from(a: &RetrieverArgs) -> Self {
        RetrieverConfig {
            k: a.k,
            threshold: a.threshold,
        }
    }
}

#[derive(Args)]
struct QaArgs {
    #[arg(long)]
    idx: PathBuf,
    #[arg(long, default_value = "models.json")]
    models: PathBuf,
    #[arg(long)]
    model: String,
    #[command(flatten)]
    retriever: RetrieverArgs,
    #[arg(long)]
    embedding_url: Option<String>,
    /// Directory overriding the bundled prompt files.
    #[arg(long)]
    prompts: Option<PathBuf>,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, out } => {
            let records = read_raw(&input)?;
            let total = records.len();
            let outcome = ingest(records);
            let written = write_corpus(&outcome.documents, &out)?;
            println!("ingested {written} of {total} records ({} dropped) into {}", outcome.dropped.len(), out.display());
        }
        Command::Chunk { corpus, out, max_chars, overlap } => {
            let cfg = ChunkConfig {
                max_chars,
                overlap_chars: overlap,
                ..ChunkConfig::default()
            };
            cfg.validate()?;
            let docs = load_corpus(&corpus)?;
            let mut w = BufWriter::new(fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            let mut n = 0;
            for doc in &docs {
                for chunk in split(doc, &cfg) {
                    serde_json::to_writer(&mut w, &chunk)?;
                    w.write_all(b"\n")?;
                    n += 1;
                }
            }
            w.flush()?;
            println!("wrote {n} chunks from {} documents to {}", docs.len(), out.display());
        }
        Command::Index { chunks, out, embedder } => {
            let chunks = read_chunks(&chunks)?;
            let cfg = match embedder.embedder {
                EmbedderChoice::Hash => EmbedderConfig {
                    seed: embedder.seed,
                    ..EmbedderConfig::hash(embedder.dim.unwrap_or(256))
                },
                EmbedderChoice::Remote => {
                    let mut cfg = EmbedderConfig::remote(embedder.embedding_url.clone());
                    cfg.dim = embedder.dim.unwrap_or(cfg.dim);
                    cfg
                }
            };
            let cfg = EmbedderConfig {
                batch_size: embedder.batch_size,
                timeout_s: embedder.timeout_s,
                ..cfg
            };
            let e = cfg.build()?;
            let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
            info!(chunks = texts.len(), "embedding");
            let vectors = e.embed_texts(&texts)?;
            let index = build_index(&chunks, vectors, e.info())?;
            index.save(&out)?;
            println!("indexed {} chunks (dim {}) into {}", index.len(), index.dim(), out.display());
        }
        Command::Query { idx, text, retriever, embedding_url } => {
            let (index, embedder) = open_index(&idx, embedding_url)?;
            let hits = index.search(&embedder.embed(&text)?, &RetrieverConfig::from(&retriever))?;
            if hits.is_empty() {
                println!("no chunks at or above threshold {}", retriever.threshold);
            }
            for (i, h) in hits.iter().enumerate() {
                println!("{}. {} score={:.4}\n   {}", i + 1, h.chunk_id, h.score, h.chunk_text);
            }
        }
        Command::Ask { qa, mode, question } => {
            let (engine, mut session) = qa_setup(&qa)?;
            let answer = engine.answer(&mut session, &question, mode.into())?;
            println!("{}", answer.text);
            print_sources(&answer.sources);
            println!("latency {:.2}s, cost ${}", answer.latency_s, answer.cost_usd);
        }
        Command::Chat { qa } => {
            let (engine, mut session) = qa_setup(&qa)?;
            let stdin = std::io::stdin();
            let mut stdout = std::io::stdout();
            loop {
                write!(stdout, "> ")?;
                stdout.flush()?;
                let mut line = String::new();
                if stdin.lock().read_line(&mut line)? == 0 {
                    break;
                }
                let question = line.trim();
                if question.is_empty() {
                    continue;
                }
                if question == "exit" || question == "quit" {
                    break;
                }
                match engine.answer(&mut session, question, AnswerMode::LongForm) {
                    Ok(answer) => {
                        println!("{}", answer.text);
                        print_sources(&answer.sources);
                    }
                    Err(e) => println!("error: {e}"),
                }
            }
            println!("{} turns", session.turns.len());
        }
        Command::Bench { dataset, models, idx, out, only, ranks, pause_ms, retriever, embedding_url, prompts } => {
            let dataset = load_qa_dataset(&dataset)?;
            let registry = ModelRegistry::load(&models)?;
            let selected: Vec<_> = if only.is_empty() {
                registry.models.clone()
            } else {
                only.iter()
                    .map(|name| registry.get(name).cloned().with_context(|| format!("unknown model {name:?}")))
                    .collect::<Result<_>>()?
            };
            let engine = engine(&idx, embedding_url, prompts.as_deref())?;
            let opts = BenchOptions {
                retriever: RetrieverConfig::from(&retriever),
                pause: Duration::from_millis(pause_ms),
                ..BenchOptions::default()
            };
            let records = run_benchmark(&dataset, &selected, &engine, &opts);
            fs::create_dir_all(&out)?;
            write_records(&records, &out.join("records.jsonl"))?;
            let annotations = match ranks {
                Some(p) => load_annotations(&p)?,
                None => Vec::new(),
            };
            write_reports(&report(&records, &annotations), &out)?;
        }
        Command::Report { records, ranks, out } => {
            let records = read_records(&records)?;
            let annotations = match ranks {
                Some(p) => load_annotations(&p)?,
                None => Vec::new(),
            };
            let r = report(&records, &annotations);
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    write_reports(&r, &dir)?;
                }
                None => print!("{}", r.render_text()),
            }
        }
        Command::Serve { idx, models, port, host, rankings, static_dir, cors_origin, session_ttl_s, retriever, embedding_url, prompts } => {
            let engine = engine(&idx, embedding_url, prompts.as_deref())?;
            let registry = ModelRegistry::load(&models)?;
            let rankings = RankingStore::open(&rankings).with_context(|| format!("opening {}", rankings.display()))?;
            let mut state = AppState::new(engine, registry, rankings).with_session_ttl(Duration::from_secs(session_ttl_s));
            state.retriever = RetrieverConfig::from(&retriever);
            state.retriever.validate()?;
            let addr: SocketAddr = format!("{host}:{port}").parse().context("invalid host/port")?;
            let opts = ServerOptions { static_dir, cors_origin };
            tokio::runtime::Runtime::new()?.block_on(litrag_service::serve(Arc::new(state), addr, opts))?;
        }
    }
    Ok(())
}

fn read_chunks(path: &Path) -> Result<Vec<Chunk>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

/// Loads an index and rebuilds the embedder recorded in its metadata.
fn open_index(path: &Path, embedding_url: Option<String>) -> Result<(Index, Box<dyn Embedder>)> {
    let index = Index::load(path).with_context(|| format!("loading index {}", path.display()))?;
    let embedder = EmbedderConfig::from_info(&index.metadata().embedder, embedding_url).build()?;
    Ok((index, embedder))
}

fn engine(idx: &Path, embedding_url: Option<String>, prompts: Option<&Path>) -> Result<QaEngine> {
    let (index, embedder) = open_index(idx, embedding_url)?;
    let mut engine = QaEngine::new(Arc::new(index), Arc::from(embedder), Arc::new(HttpChatBackend::new()));
    if let Some(dir) = prompts {
        engine = engine.with_prompts(PromptSet::load_dir(dir)?);
    }
    Ok(engine)
}

fn qa_setup(qa: &QaArgs) -> Result<(QaEngine, ChatSession)> {
    let registry = ModelRegistry::load(&qa.models)?;
    let Some(model) = registry.get(&qa.model).cloned() else {
        bail!("model {:?} is not in {}", qa.model, qa.models.display());
    };
    let retriever = RetrieverConfig::from(&qa.retriever);
    retriever.validate()?;
    let engine = engine(&qa.idx, qa.embedding_url.clone(), qa.prompts.as_deref())?;
    Ok((engine, ChatSession::new("cli", model, retriever)))
}

fn print_sources(sources: &[litrag::vector_store::RetrievalHit]) {
    for (i, h) in sources.iter().enumerate() {
        println!("  [{}] {} ({:.4})", i + 1, h.doc_id(), h.score);
    }
}

fn write_reports(r: &litrag::eval::EvalReport, dir: &Path) -> Result<()> {
    let text = r.render_text();
    fs::write(dir.join("report.txt"), &text)?;
    fs::write(dir.join("report.csv"), r.to_csv())?;
    print!("{text}");
    Ok(())
}
