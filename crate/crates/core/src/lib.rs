//! Retrieval-augmented question answering over research-paper abstracts.
//!
//! The crate is organised along the data flow of the system:
//!
//! - [`corpus`]: load raw abstract records, clean them, and write a corpus of
//!   one JSON file per abstract.
//! - [`chunker`]: split cleaned abstracts into overlapping, bounded chunks.
//! - [`embedding`]: unit-norm embedding vectors from a remote encoder service
//!   or a deterministic hashing embedder.
//! - [`vector_store`]: exact flat index with threshold + top-k cosine search
//!   and a checksummed binary file format.
//! - [`llm`]: OpenAI-compatible chat completion client, prompt templates,
//!   latency and cost accounting.
//! - [`qa`]: the conversational QA chain (query condensation, retrieval,
//!   context stuffing, answer generation).
//! - [`eval`]: QA datasets, benchmark runs over several models and the
//!   accuracy / precision / cosine-similarity report.

pub mod chunker;
pub mod clock;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod llm;
pub mod qa;
pub mod vector_store;

pub use chunker::{split, Chunk, ChunkConfig};
pub use clock::{Clock, StepClock, SystemClock};
pub use corpus::{clean_text, dedupe, validate, Document, RawDocument};
pub use embedding::{normalize, Embedder, EmbedderConfig, EmbeddingVector, HashEmbedder};
pub use llm::{complete, estimate_cost, render_prompt, ChatBackend, ModelConfig, Prompt};
pub use qa::{parse_binary, AnswerMode, BinaryLabel, ChatSession, QaEngine};
pub use vector_store::{build_index, Index, RetrievalHit, RetrieverConfig};
