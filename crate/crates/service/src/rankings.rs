use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use litrag::eval::{dedupe_annotations, RankAnnotation};
use tracing::warn;

use crate::error::ApiError;

/// Rankings keyed by (item, model, rater), last write wins. When backed by a
/// file every submission is appended to it as a JSON line, and the log is
/// replayed on open.
pub struct RankingStore {
    log: Option<PathBuf>,
    rows: Mutex<Vec<RankAnnotation>>,
}

impl RankingStore {
    pub fn in_memory() -> Self {
        Self {
            log: None,
            rows: Mutex::new(Vec::new()),
        }
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut rows = Vec::new();
        if path.exists() {
            for (n, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(&line) {
                    Ok(row) => rows.push(row),
                    Err(e) => warn!(line = n + 1, error = %e, "skipping bad ranking log line"),
                }
            }
        }
        Ok(Self {
            log: Some(path.to_path_buf()),
            rows: Mutex::new(dedupe_annotations(rows)),
        })
    }

    pub fn submit(&self, annotation: RankAnnotation) -> Result<(), ApiError> {
        let mut rows = self.rows.lock().map_err(|_| ApiError::internal("ranking lock poisoned"))?;
        if let Some(path) = &self.log {
            let mut line = serde_json::to_string(&annotation).expect("annotations serialize");
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|e| ApiError::internal(format!("cannot append ranking: {e}")))?;
        }
        let merged = dedupe_annotations(rows.drain(..).chain(std::iter::once(annotation)));
        *rows = merged;
        Ok(())
    }

    pub fn all(&self) -> Vec<RankAnnotation> {
        self.rows.lock().expect("ranking lock").clone()
    }
}
