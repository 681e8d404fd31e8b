use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dml::{AnnotatedDialogue, DialogueEvent, DomainSchema, Variable};
use crate::models::Models;

use super::engine::{run_turn, tag_utterance, ExecutedAction, RuntimeConfig, Selection, TurnTrace};
use super::{ApiExecutor, RuntimeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Ended,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub fingerprint: String,
    pub seed: u64,
    pub history: AnnotatedDialogue,
    /// `(entity type, value)` pairs mentioned by the agent or returned by
    /// an API in this session.
    pub dynamic_catalog: BTreeSet<(String, String)>,
    pub status: SessionStatus,
    log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnResult {
    pub actions: Vec<ExecutedAction>,
    /// Agent responses of the turn joined by spaces.
    pub text: String,
    pub ended: bool,
    pub debug: TurnTrace,
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Session {
        session_id: String,
        fingerprint: String,
        seed: u64,
        ts_ms: u64,
    },
    Event {
        seq: usize,
        ts_ms: u64,
        event: DialogueEvent,
        /// Variables first bound by this event.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        variables: BTreeMap<String, Variable>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        debug: Option<serde_json::Value>,
    },
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn turn_rng(seed: u64, turn: usize) -> ChaCha8Rng {
    crate::sim::dialogue_rng(seed, turn as u64)
}

impl Session {
    pub fn is_active(&self) -> bool {
        self.status == SessionStatus::Active
    }

    /// Log lines as written to disk.
    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_deref()
    }

    fn sync_catalog(&mut self, from: usize) {
        for ev in &self.history.events[from..] {
            match ev {
                DialogueEvent::Api {
                    returns: Some(r), ..
                } => {
                    if let Some(v) = self.history.variables.get(r) {
                        self.dynamic_catalog
                            .insert((v.entity_type.clone(), v.value.clone()));
                    }
                }
                DialogueEvent::Nlg { args, .. } => {
                    for value in args.values() {
                        for var in value.vars() {
                            if let Some(v) = self.history.variables.get(var) {
                                self.dynamic_catalog
                                    .insert((v.entity_type.clone(), v.value.clone()));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }

    fn append_log(
        &self,
        from: usize,
        before: &BTreeSet<String>,
        debug: Option<serde_json::Value>,
    ) -> Result<(), RuntimeError> {
        let Some(path) = &self.log else {
            return Ok(());
        };
        let mut file = OpenOptions::new()
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| RuntimeError::io(path, e))?;
        let ts = now_ms();
        let last = self.history.events.len().saturating_sub(1);
        let mut out = String::new();
        for (i, ev) in self.history.events.iter().enumerate().skip(from) {
            let bound: Vec<&str> = match ev {
                DialogueEvent::User { spans, .. } => spans.iter().map(|s| s.var.as_str()).collect(),
                DialogueEvent::Api {
                    returns: Some(r), ..
                } => vec![r.as_str()],
                _ => Vec::new(),
            };
            let variables = bound
                .into_iter()
                .filter(|v| !before.contains(*v))
                .filter_map(|v| {
                    self.history
                        .variables
                        .get(v)
                        .map(|x| (v.to_string(), x.clone()))
                })
                .collect();
            let line = LogLine::Event {
                seq: i,
                ts_ms: ts,
                event: ev.clone(),
                variables,
                debug: if i == last { debug.clone() } else { None },
            };
            out.push_str(&serde_json::to_string(&line).expect("log lines serialize"));
            out.push('\n');
        }
        file.write_all(out.as_bytes())
            .map_err(|e| RuntimeError::io(path, e))
    }

    /// Rebuild a session from its log.
    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        let file = File::open(path).map_err(|e| RuntimeError::io(path, e))?;
        let mut session: Option<Session> = None;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| RuntimeError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line)
                .map_err(|e| RuntimeError::Log(format!("{}:{}: {e}", path.display(), n + 1)))?;
            match (parsed, session.as_mut()) {
                (
                    LogLine::Session {
                        session_id,
                        fingerprint,
                        seed,
                        ..
                    },
                    None,
                ) => {
                    session = Some(Session {
                        id: session_id,
                        fingerprint,
                        seed,
                        history: AnnotatedDialogue::default(),
                        dynamic_catalog: BTreeSet::new(),
                        status: SessionStatus::Active,
                        log: Some(path.to_path_buf()),
                    });
                }
                (
                    LogLine::Event {
                        event, variables, ..
                    },
                    Some(s),
                ) => {
                    s.history.variables.extend(variables);
                    if matches!(event, DialogueEvent::EndDialogue) {
                        s.status = SessionStatus::Ended;
                    }
                    s.history.events.push(event);
                }
                _ => {
                    return Err(RuntimeError::Log(format!(
                        "{}:{}: unexpected record",
                        path.display(),
                        n + 1
                    )))
                }
            }
        }
        let mut s =
            session.ok_or_else(|| RuntimeError::Log(format!("{}: empty log", path.display())))?;
        s.history.id = Some(s.id.clone());
        s.sync_catalog(0);
        Ok(s)
    }
}

/// A trained bundle bound to a schema and an API executor; creates and
/// drives sessions. Shared read-only across sessions.
#[derive(Debug, Clone)]
pub struct Agent {
    pub models: Arc<Models>,
    pub executor: ApiExecutor,
    pub config: RuntimeConfig,
}

impl Agent {
    pub fn new(
        schema: &DomainSchema,
        models: Arc<Models>,
        executor: ApiExecutor,
        config: RuntimeConfig,
    ) -> Result<Self, RuntimeError> {
        let (expected, found) = (models.schema.fingerprint(), schema.fingerprint());
        if expected != found {
            return Err(RuntimeError::Fingerprint { expected, found });
        }
        let missing = executor.missing_handlers(schema);
        if !missing.is_empty() {
            return Err(RuntimeError::MissingHandlers(missing));
        }
        let executor = executor.with_timeout(Duration::from_millis(config.api_timeout_ms));
        Ok(Agent {
            models,
            executor,
            config,
        })
    }

    pub fn schema(&self) -> &DomainSchema {
        &self.models.schema
    }

    /// Start a session, emitting the schema's `welcome` response when it
    /// has one. With `log_dir` the session is persisted to
    /// `<log_dir>/<id>.jsonl`.
    pub fn create_session(
        &self,
        id: &str,
        seed: u64,
        log_dir: Option<&Path>,
    ) -> Result<(Session, Option<String>), RuntimeError> {
        let mut session = Session {
            id: id.to_string(),
            fingerprint: self.schema().fingerprint(),
            seed,
            history: AnnotatedDialogue {
                id: Some(id.to_string()),
                ..AnnotatedDialogue::default()
            },
            dynamic_catalog: BTreeSet::new(),
            status: SessionStatus::Active,
            log: log_dir.map(|d| d.join(format!("{id}.jsonl"))),
        };
        if let Some(path) = &session.log {
            let header = LogLine::Session {
                session_id: id.to_string(),
                fingerprint: session.fingerprint.clone(),
                seed,
                ts_ms: now_ms(),
            };
            let line = serde_json::to_string(&header).expect("log lines serialize") + "\n";
            std::fs::write(path, line).map_err(|e| RuntimeError::io(path, e))?;
        }
        let mut welcome = None;
        if let Some(nlg) = self.schema().nlg("welcome") {
            let mut rng = turn_rng(seed, 0);
            let text = crate::sim::realize_nlg(nlg, &BTreeMap::new(), &mut rng)?;
            session.history.events.push(DialogueEvent::Nlg {
                name: nlg.name.clone(),
                args: BTreeMap::new(),
                acts: nlg.acts.clone(),
                text: Some(text.clone()),
            });
            session.history.events.push(DialogueEvent::EndTurn);
            welcome = Some(text);
            session.append_log(0, &BTreeSet::new(), None)?;
        }
        Ok((session, welcome))
    }

    /// Tag the utterance, then predict and execute actions until the
    /// agent ends its turn.
    pub fn handle_utterance(
        &self,
        session: &mut Session,
        text: &str,
    ) -> Result<TurnResult, RuntimeError> {
        if !session.is_active() {
            return Err(RuntimeError::SessionEnded(session.id.clone()));
        }
        let from = session.history.events.len();
        let before: BTreeSet<String> = session.history.variables.keys().cloned().collect();
        let turn = session
            .history
            .events
            .iter()
            .filter(|e| e.is_user())
            .count()
            + 1;
        let mut rng = turn_rng(session.seed, turn);
        let mentions = tag_utterance(&self.models, &mut session.history, text)?;
        let mut executor = self.executor.clone();
        let mut outcome = run_turn(
            &self.models,
            &self.config,
            &mut session.history,
            &mut executor,
            &mut rng,
            Selection::Thresholds,
            &mut |_, _| true,
        )?;
        outcome.trace.mentions = mentions;
        if outcome.ended {
            session.status = SessionStatus::Ended;
        }
        session.sync_catalog(from);
        let debug = serde_json::to_value(&outcome.trace).ok();
        session.append_log(from, &before, debug)?;
        let text = outcome
            .actions
            .iter()
            .filter_map(|a| a.text.as_deref())
            .collect::<Vec<_>>()
            .join(" ");
        Ok(TurnResult {
            actions: outcome.actions,
            text,
            ended: outcome.ended,
            debug: outcome.trace,
        })
    }
}
