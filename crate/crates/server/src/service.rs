//! Async session registry. Each session runs as one task that owns its
//! [`GameSession`]; connections talk to it through a command queue.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use quizhost_core::game::LockInStrategy;
use quizhost_core::policy::DEFAULT_THRESHOLD;
use quizhost_core::trivia::{fetch_questions, Fixture, QuestionSource};
use quizhost_core::{PolicyError, PolicyModel, SpeakerId, TriviaError};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};
use tokio::time::Instant;
use tracing::{info, warn};

use crate::session::{GameSession, Outgoing, Recipient, SessionError, SessionSettings, Shared};
use crate::wire::{ErrorCode, ServerMessage};

pub const ROUND_QUESTIONS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("could not load model: {0}")]
    ModelLoad(#[source] PolicyError),
    #[error(transparent)]
    SourceUnavailable(#[from] TriviaError),
    #[error("no session `{0}`")]
    SessionNotFound(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("session `{0}` has shut down")]
    Closed(String),
    #[error("game log {path}: {source}")]
    Log {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ServiceError {
    pub fn code(&self) -> ErrorCode {
        match self {
            Self::SessionNotFound(_) | Self::Closed(_) => ErrorCode::SessionNotFound,
            Self::Session(e) => e.code(),
            _ => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Model used by sessions that do not name their own.
    pub model: Option<PathBuf>,
    pub strategy: LockInStrategy,
    pub questions: QuestionSource,
    pub threshold: f64,
    pub idle_threshold_ms: u64,
    /// How often idle prompts are checked; `None` disables them.
    pub tick_interval: Option<Duration>,
    /// Sessions with no traffic for this long are dropped.
    pub gc_after: Duration,
    /// Append-only JSONL log of every server message.
    pub log: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            model: None,
            strategy: LockInStrategy::default(),
            questions: QuestionSource::default(),
            threshold: DEFAULT_THRESHOLD,
            idle_threshold_ms: 15_000,
            tick_interval: Some(Duration::from_secs(1)),
            gc_after: Duration::from_secs(600),
            log: None,
        }
    }
}

/// Body of `POST /sessions`. Unset fields fall back to the service config.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SessionRequest {
    #[serde(default)]
    pub strategy: Option<LockInStrategy>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Path to a question fixture file.
    #[serde(default)]
    pub questions: Option<PathBuf>,
    /// Questions in the round, 1 to 10.
    #[serde(default)]
    pub question_count: Option<usize>,
}

enum Command {
    Join {
        token: Option<String>,
        reply: oneshot::Sender<Result<Joined, SessionError>>,
    },
    Utterance {
        player: SpeakerId,
        text: String,
        t_ms: Option<u64>,
    },
    Reject {
        player: SpeakerId,
        message: String,
    },
    Leave {
        player: SpeakerId,
    },
}

struct Joined {
    player: SpeakerId,
    token: String,
    rx: mpsc::UnboundedReceiver<ServerMessage>,
}

struct Inner {
    config: ServiceConfig,
    model: Option<Arc<PolicyModel>>,
    model_sha256: Option<String>,
    shared: Shared,
    sessions: Mutex<HashMap<String, mpsc::UnboundedSender<Command>>>,
    log: Option<Mutex<BufWriter<File>>>,
}

#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

fn load_model(path: &Path) -> Result<Arc<PolicyModel>, ServiceError> {
    PolicyModel::load(path)
        .map(Arc::new)
        .map_err(ServiceError::ModelLoad)
}

impl Service {
    /// Loads the default model up front so a bad path fails at startup.
    pub fn new(config: ServiceConfig) -> Result<Self, ServiceError> {
        let model = config.model.as_deref().map(load_model).transpose()?;
        let model_sha256 = model
            .as_ref()
            .map(|m| m.sha256())
            .transpose()
            .map_err(ServiceError::ModelLoad)?;
        let log = match &config.log {
            Some(path) => {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| ServiceError::Log {
                        path: path.clone(),
                        source,
                    })?;
                Some(Mutex::new(BufWriter::new(f)))
            }
            None => None,
        };
        Ok(Self {
            inner: Arc::new(Inner {
                config,
                model,
                model_sha256,
                shared: Shared::default(),
                sessions: Mutex::new(HashMap::new()),
                log,
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn model_sha256(&self) -> Option<&str> {
        self.inner.model_sha256.as_deref()
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.lock().unwrap().len()
    }

    /// Loads the model and questions, then starts the session task. Returns
    /// the new session id.
    pub async fn create_session(&self, req: SessionRequest) -> Result<String, ServiceError> {
        let cfg = &self.inner.config;
        let model = match &req.model {
            Some(path) => {
                let path = path.clone();
                Some(
                    tokio::task::spawn_blocking(move || load_model(&path))
                        .await
                        .expect("model loader panicked")?,
                )
            }
            None => self.inner.model.clone(),
        };
        let seed = req.seed.unwrap_or_else(rand_seed);
        let source = match &req.questions {
            Some(p) => QuestionSource::Fixture(Fixture::Path(p.clone())),
            None => cfg.questions.clone(),
        };
        let count = req
            .question_count
            .unwrap_or(ROUND_QUESTIONS)
            .min(ROUND_QUESTIONS);
        let questions = tokio::task::spawn_blocking(move || fetch_questions(count, &source, seed))
            .await
            .expect("question fetch panicked")?;
        let settings = SessionSettings {
            strategy: req.strategy.unwrap_or(cfg.strategy),
            seed,
            idle_threshold_ms: cfg.idle_threshold_ms,
            threshold: cfg.threshold,
            model,
            ..SessionSettings::default()
        };
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = GameSession::new(id.clone(), questions, settings, self.inner.shared.clone())?;
        let (tx, rx) = mpsc::unbounded_channel();
        self.inner.sessions.lock().unwrap().insert(id.clone(), tx);
        info!(session = %id, seed, "session created");
        tokio::spawn(run_session(self.clone(), session, rx));
        Ok(id)
    }

    fn handle(&self, session: &str) -> Result<mpsc::UnboundedSender<Command>, ServiceError> {
        self.inner
            .sessions
            .lock()
            .unwrap()
            .get(session)
            .cloned()
            .ok_or_else(|| ServiceError::SessionNotFound(session.to_string()))
    }

    /// Joins a session, or rejoins it with a token from an earlier `joined`.
    pub async fn join(
        &self,
        session: &str,
        token: Option<String>,
    ) -> Result<Connection, ServiceError> {
        let tx = self.handle(session)?;
        let (reply, wait) = oneshot::channel();
        tx.send(Command::Join { token, reply })
            .map_err(|_| ServiceError::Closed(session.to_string()))?;
        let joined = wait
            .await
            .map_err(|_| ServiceError::Closed(session.to_string()))??;
        Ok(Connection {
            session: session.to_string(),
            player: joined.player,
            token: joined.token,
            tx,
            rx: joined.rx,
        })
    }

    fn log(&self, out: &Outgoing) {
        let Some(log) = &self.inner.log else { return };
        let line = match serde_json::to_string(&out.message) {
            Ok(l) => l,
            Err(e) => {
                warn!("game log: {e}");
                return;
            }
        };
        let mut w = log.lock().unwrap();
        if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
            warn!("game log: {e}");
        }
    }

    fn remove(&self, session: &str) {
        self.inner.sessions.lock().unwrap().remove(session);
    }
}

fn rand_seed() -> u64 {
    let id = uuid::Uuid::new_v4();
    u64::from_le_bytes(id.as_bytes()[..8].try_into().unwrap())
}

/// One player's link to a running session.
pub struct Connection {
    pub session: String,
    pub player: SpeakerId,
    pub token: String,
    tx: mpsc::UnboundedSender<Command>,
    rx: mpsc::UnboundedReceiver<ServerMessage>,
}

impl Connection {
    pub fn say(&self, text: impl Into<String>, t_ms: Option<u64>) -> Result<(), ServiceError> {
        self.tx
            .send(Command::Utterance {
                player: self.player,
                text: text.into(),
                t_ms,
            })
            .map_err(|_| ServiceError::Closed(self.session.clone()))
    }

    /// Reports an unparseable client message; the session answers with an error.
    pub fn reject(&self, message: impl Into<String>) -> Result<(), ServiceError> {
        self.tx
            .send(Command::Reject {
                player: self.player,
                message: message.into(),
            })
            .map_err(|_| ServiceError::Closed(self.session.clone()))
    }

    pub async fn recv(&mut self) -> Option<ServerMessage> {
        self.rx.recv().await
    }

    pub fn split(self) -> (ConnectionSender, mpsc::UnboundedReceiver<ServerMessage>) {
        (
            ConnectionSender {
                session: self.session,
                player: self.player,
                tx: self.tx,
            },
            self.rx,
        )
    }
}

/// Sending half of a [`Connection`]. Dropping it tells the session the
/// player left.
pub struct ConnectionSender {
    session: String,
    player: SpeakerId,
    tx: mpsc::UnboundedSender<Command>,
}

impl ConnectionSender {
    pub fn say(&self, text: impl Into<String>, t_ms: Option<u64>) -> Result<(), ServiceError> {
        self.tx
            .send(Command::Utterance {
                player: self.player,
                text: text.into(),
                t_ms,
            })
            .map_err(|_| ServiceError::Closed(self.session.clone()))
    }

    pub fn reject(&self, message: impl Into<String>) -> Result<(), ServiceError> {
        self.tx
            .send(Command::Reject {
                player: self.player,
                message: message.into(),
            })
            .map_err(|_| ServiceError::Closed(self.session.clone()))
    }
}

impl Drop for ConnectionSender {
    fn drop(&mut self) {
        let _ = self.tx.send(Command::Leave {
            player: self.player,
        });
    }
}

async fn run_session(
    service: Service,
    mut session: GameSession,
    mut rx: mpsc::UnboundedReceiver<Command>,
) {
    let cfg = service.config().clone();
    let started = Instant::now();
    let mut last_traffic = Instant::now();
    let mut clients: [Option<mpsc::UnboundedSender<ServerMessage>>; 2] = [None, None];
    let tick_every = cfg.tick_interval.unwrap_or(cfg.gc_after);
    let mut ticker = tokio::time::interval_at(Instant::now() + tick_every, tick_every);

    let dispatch = |clients: &[Option<mpsc::UnboundedSender<ServerMessage>>; 2],
                    out: Vec<Outgoing>| {
        for o in out {
            service.log(&o);
            let targets: &[usize] = match o.to {
                Recipient::All => &[0, 1],
                Recipient::Player(SpeakerId::User1) => &[0],
                Recipient::Player(SpeakerId::User2) => &[1],
                Recipient::Player(SpeakerId::Host) => &[],
            };
            for &i in targets {
                if let Some(tx) = &clients[i] {
                    let _ = tx.send(o.message.clone());
                }
            }
        }
    };

    loop {
        tokio::select! {
            cmd = rx.recv() => {
                let Some(cmd) = cmd else { break };
                last_traffic = Instant::now();
                match cmd {
                    Command::Join { token, reply } => {
                        let new_token = || uuid::Uuid::new_v4().simple().to_string();
                        match session.join(token.as_deref(), new_token) {
                            Ok((player, out)) => {
                                let (tx, crx) = mpsc::unbounded_channel();
                                let idx = if player == SpeakerId::User1 { 0 } else { 1 };
                                clients[idx] = Some(tx);
                                let token = out
                                    .iter()
                                    .find_map(|o| match &o.message.body {
                                        crate::wire::ServerBody::Joined { token, .. } => Some(token.clone()),
                                        _ => None,
                                    })
                                    .unwrap_or_default();
                                if reply.send(Ok(Joined { player, token, rx: crx })).is_err() {
                                    clients[idx] = None;
                                }
                                dispatch(&clients, out);
                            }
                            Err(e) => {
                                let _ = reply.send(Err(e));
                            }
                        }
                    }
                    Command::Utterance { player, text, t_ms } => {
                        let t = t_ms.unwrap_or_else(|| started.elapsed().as_millis() as u64);
                        let out = session.utterance(player, &text, Some(t));
                        dispatch(&clients, out);
                    }
                    Command::Reject { player, message } => {
                        let out = session.reject_with(player, ErrorCode::BadMessage, message);
                        dispatch(&clients, vec![out]);
                    }
                    Command::Leave { player } => {
                        let idx = if player == SpeakerId::User1 { 0 } else { 1 };
                        if clients[idx].as_ref().is_some_and(|c| c.is_closed()) {
                            clients[idx] = None;
                        }
                    }
                }
            }
            _ = ticker.tick() => {
                if last_traffic.elapsed() >= cfg.gc_after {
                    info!(session = %session.id(), "session expired");
                    break;
                }
                if cfg.tick_interval.is_some() {
                    let now = started.elapsed().as_millis() as u64;
                    let out = session.tick(now);
                    dispatch(&clients, out);
                }
            }
        }
    }
    service.remove(session.id());
}
