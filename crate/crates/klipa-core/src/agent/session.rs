use std::collections::HashMap;
use std::sync::{Arc, Mutex, TryLockError};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};

use super::{run, AgentAnswer, AgentContext, AgentError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub user_text: String,
    pub answer: AgentAnswer,
}

/// History is append-only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: String,
    pub created_at: String,
    pub history: Vec<ChatTurn>,
}

/// In-memory sessions. Runs on one session are serialized; a concurrent run
/// on a busy session is refused rather than queued.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Arc<Mutex<ChatSession>>>>,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self) -> ChatSession {
        let session = ChatSession {
            id: uuid::Uuid::new_v4().simple().to_string(),
            created_at: humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
            history: Vec::new(),
        };
        self.sessions
            .lock()
            .unwrap()
            .insert(session.id.clone(), Arc::new(Mutex::new(session.clone())));
        session
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<ChatSession>>, AgentError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| AgentError::SessionNotFound(id.to_string()))
    }

    /// Current state; waits for a run in progress to finish.
    pub fn get(&self, id: &str) -> Result<ChatSession, AgentError> {
        let h = self.handle(id)?;
        let s = h.lock().unwrap_or_else(|e| e.into_inner()).clone();
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Run the agent with this session's history and append the turn on
    /// success. On failure the session is left unchanged.
    pub fn ask(&self, id: &str, text: &str, ctx: &AgentContext) -> Result<AgentAnswer, AgentError> {
        let h = self.handle(id)?;
        let mut session = match h.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(AgentError::SessionBusy(id.to_string())),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let answer = run(text, &session.history, ctx)?;
        session.history.push(ChatTurn {
            user_text: text.trim().to_string(),
            answer: answer.clone(),
        });
        Ok(answer)
    }
}
