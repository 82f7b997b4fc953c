use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use litrag::llm::ModelConfig;
use litrag::qa::ChatSession;
use litrag::vector_store::RetrieverConfig;
use tracing::debug;

pub type SessionSlot = Arc<Mutex<ChatSession>>;

struct Entry {
    session: SessionSlot,
    last_used: Instant,
}

/// In-memory sessions that expire after `ttl` without use.
pub struct SessionStore {
    ttl: Duration,
    inner: Mutex<HashMap<String, Entry>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            inner: Mutex::new(HashMap::new()),
        }
    }

    fn purge(&self, map: &mut HashMap<String, Entry>, now: Instant) {
        let before = map.len();
        map.retain(|_, e| now.duration_since(e.last_used) < self.ttl);
        if map.len() < before {
            debug!(expired = before - map.len(), "sessions expired");
        }
    }

    pub fn create(&self, model: ModelConfig, retriever: RetrieverConfig) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        let now = Instant::now();
        let mut map = self.inner.lock().expect("session map lock");
        self.purge(&mut map, now);
        map.insert(
            id.clone(),
            Entry {
                session: Arc::new(Mutex::new(ChatSession::new(id.clone(), model, retriever))),
                last_used: now,
            },
        );
        id
    }

    /// Looks up a live session and refreshes its expiry.
    pub fn get(&self, id: &str) -> Option<SessionSlot> {
        let now = Instant::now();
        let mut map = self.inner.lock().expect("session map lock");
        self.purge(&mut map, now);
        let entry = map.get_mut(id)?;
        entry.last_used = now;
        Some(entry.session.clone())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
