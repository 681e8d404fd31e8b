//! Live agent: sessions, the per-turn action loop and API dispatch.

mod engine;
mod executor;
mod session;

use std::path::Path;

use thiserror::Error;

pub use engine::{
    run_turn, tag_utterance, Chosen, ExecutedAction, RuntimeConfig, Selection, StepTrace,
    TurnOutcome, TurnTrace,
};
pub use executor::{ApiExecutor, ApiOutcome, Executor, ExecutorMode, Handler};
pub use session::{Agent, LogLine, Session, SessionStatus, TurnResult};

use crate::models::ModelError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Render(#[from] SimError),
    #[error("session {0} has ended")]
    SessionEnded(String),
    #[error("bundle was trained for schema {expected}, found {found}")]
    Fingerprint { expected: String, found: String },
    #[error("no handler for APIs: {}", .0.join(", "))]
    MissingHandlers(Vec<String>),
    #[error("session log: {0}")]
    Log(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RuntimeError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        RuntimeError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
