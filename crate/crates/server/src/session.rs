//! Synchronous session core: two player slots, the game engine, NLG and
//! sequence numbering. The async service wraps one of these per session.

use std::sync::Arc;

use quizhost_core::engine::{winnings, Engine, EngineError};
use quizhost_core::game::{DialogueManager, GameConfig, HostAction, LockInStrategy};
use quizhost_core::nlg::{Realizer, TemplateBank};
use quizhost_core::nlu::{Classifier, CrosstalkFilter, CrosstalkFilterConfig};
use quizhost_core::policy::DEFAULT_THRESHOLD;
use quizhost_core::{GameError, Intent, NlgError, PolicyModel, QuestionRecord, SpeakerId};
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::wire::{ErrorCode, ServerBody, ServerMessage, Snapshot};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session already has two players")]
    SessionFull,
    #[error("unknown reconnect token")]
    BadToken,
    #[error("{0:?} has not joined this session")]
    NotJoined(SpeakerId),
    #[error("the game starts once both players have joined")]
    NotStarted,
    #[error("the game is over")]
    GameOver,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Nlg(#[from] NlgError),
}

impl SessionError {
    pub fn code(&self) -> ErrorCode {
        match self {
            Self::SessionFull => ErrorCode::SessionFull,
            Self::BadToken => ErrorCode::BadToken,
            Self::NotJoined(_) => ErrorCode::NotJoined,
            Self::NotStarted => ErrorCode::NotStarted,
            Self::GameOver => ErrorCode::GameOverReject,
            Self::Engine(_) | Self::Game(_) | Self::Nlg(_) => ErrorCode::Internal,
        }
    }
}

/// Read-only pieces shared by every session.
#[derive(Debug, Clone)]
pub struct Shared {
    pub classifier: Arc<Classifier>,
    pub bank: Arc<TemplateBank>,
}

impl Default for Shared {
    fn default() -> Self {
        Self {
            classifier: Arc::new(Classifier::default()),
            bank: Arc::new(TemplateBank::bundled()),
        }
    }
}

/// Per-session settings, fixed at creation.
#[derive(Debug, Clone)]
pub struct SessionSettings {
    pub strategy: LockInStrategy,
    pub seed: u64,
    pub idle_threshold_ms: u64,
    pub threshold: f64,
    pub crosstalk: CrosstalkFilterConfig,
    pub model: Option<Arc<PolicyModel>>,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            strategy: LockInStrategy::default(),
            seed: 0,
            idle_threshold_ms: GameConfig::default().idle_threshold_ms,
            threshold: DEFAULT_THRESHOLD,
            crosstalk: CrosstalkFilterConfig::default(),
            model: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    All,
    Player(SpeakerId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: Recipient,
    pub message: ServerMessage,
}

/// One realized host line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostLine {
    pub intent: Intent,
    pub text: String,
}

#[derive(Debug)]
struct Slot {
    token: String,
}

enum Stage {
    Lobby(DialogueManager),
    Playing(Box<Engine>),
}

pub struct GameSession {
    id: String,
    settings: SessionSettings,
    shared: Shared,
    slots: [Option<Slot>; 2],
    stage: Stage,
    realizer: Realizer,
    filter: CrosstalkFilter,
    seq: u64,
    clock_ms: u64,
    last_activity_ms: u64,
    host_lines: Vec<HostLine>,
}

fn slot_index(p: SpeakerId) -> Option<usize> {
    match p {
        SpeakerId::User1 => Some(0),
        SpeakerId::User2 => Some(1),
        SpeakerId::Host => None,
    }
}

const PLAYERS: [SpeakerId; 2] = [SpeakerId::User1, SpeakerId::User2];

impl GameSession {
    /// A session in the lobby with its questions already chosen.
    pub fn new(
        id: impl Into<String>,
        questions: Vec<QuestionRecord>,
        settings: SessionSettings,
        shared: Shared,
    ) -> Result<Self, SessionError> {
        let config = GameConfig {
            strategy: settings.strategy,
            idle_threshold_ms: settings.idle_threshold_ms,
            ..GameConfig::default()
        };
        let dm = DialogueManager::new(config, questions)?;
        Ok(Self {
            id: id.into(),
            realizer: Realizer::new((*shared.bank).clone(), settings.seed),
            filter: CrosstalkFilter::new(settings.crosstalk),
            settings,
            shared,
            slots: [None, None],
            stage: Stage::Lobby(dm),
            seq: 0,
            clock_ms: 0,
            last_activity_ms: 0,
            host_lines: Vec::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn settings(&self) -> &SessionSettings {
        &self.settings
    }

    pub fn started(&self) -> bool {
        matches!(self.stage, Stage::Playing(_))
    }

    pub fn is_over(&self) -> bool {
        matches!(&self.stage, Stage::Playing(e) if e.is_over())
    }

    pub fn engine(&self) -> Option<&Engine> {
        match &self.stage {
            Stage::Playing(e) => Some(e),
            Stage::Lobby(_) => None,
        }
    }

    /// Every host line spoken so far, in order.
    pub fn host_transcript(&self) -> &[HostLine] {
        &self.host_lines
    }

    pub fn last_seq(&self) -> u64 {
        self.seq
    }

    pub fn players(&self) -> Vec<SpeakerId> {
        PLAYERS
            .iter()
            .zip(&self.slots)
            .filter(|(_, s)| s.is_some())
            .map(|(p, _)| *p)
            .collect()
    }

    fn message(&mut self, to: Recipient, body: ServerBody) -> Outgoing {
        self.seq += 1;
        Outgoing {
            to,
            message: ServerMessage {
                seq: self.seq,
                session: self.id.clone(),
                body,
            },
        }
    }

    /// An error addressed to one player. It still takes a sequence number.
    pub fn reject(&mut self, player: SpeakerId, err: &SessionError) -> Outgoing {
        self.message(
            Recipient::Player(player),
            ServerBody::Error {
                code: err.code(),
                message: err.to_string(),
            },
        )
    }

    pub fn reject_with(&mut self, player: SpeakerId, code: ErrorCode, message: String) -> Outgoing {
        self.message(
            Recipient::Player(player),
            ServerBody::Error { code, message },
        )
    }

    /// Claims a free slot, or reclaims the slot a token was issued for. The
    /// game starts as soon as the second slot fills.
    pub fn join(
        &mut self,
        token: Option<&str>,
        new_token: impl FnOnce() -> String,
    ) -> Result<(SpeakerId, Vec<Outgoing>), SessionError> {
        if let Some(tok) = token {
            let idx = self
                .slots
                .iter()
                .position(|s| s.as_ref().is_some_and(|s| s.token == tok))
                .ok_or(SessionError::BadToken)?;
            let player = PLAYERS[idx];
            let mut out = vec![self.message(
                Recipient::Player(player),
                ServerBody::Joined {
                    player,
                    token: tok.to_string(),
                    started: self.started(),
                },
            )];
            if self.started() {
                let snap = self.snapshot();
                out.push(
                    self.message(Recipient::Player(player), ServerBody::State { state: snap }),
                );
            }
            return Ok((player, out));
        }
        let idx = self
            .slots
            .iter()
            .position(Option::is_none)
            .ok_or(SessionError::SessionFull)?;
        let player = PLAYERS[idx];
        let token = new_token();
        self.slots[idx] = Some(Slot {
            token: token.clone(),
        });
        let ready = self.slots.iter().all(Option::is_some);
        let mut out = vec![self.message(
            Recipient::Player(player),
            ServerBody::Joined {
                player,
                token,
                started: ready,
            },
        )];
        if ready {
            out.extend(self.start()?);
        }
        Ok((player, out))
    }

    fn start(&mut self) -> Result<Vec<Outgoing>, SessionError> {
        let Stage::Lobby(dm) = &self.stage else {
            return Ok(Vec::new());
        };
        let model = self
            .settings
            .model
            .clone()
            .map(|m| (m, self.settings.threshold));
        let (engine, opening) = Engine::start(dm.clone(), self.shared.classifier.clone(), model)?;
        let before = engine.state().clone();
        self.stage = Stage::Playing(Box::new(engine));
        self.last_activity_ms = self.clock_ms;
        self.broadcast_actions(&opening, &before)
    }

    fn engine_mut(&mut self) -> Option<&mut Engine> {
        match &mut self.stage {
            Stage::Playing(e) => Some(e),
            Stage::Lobby(_) => None,
        }
    }

    /// Handles one utterance. Every accepted utterance ends in a state
    /// snapshot, even when the crosstalk filter drops it; rejections come
    /// back as a single error message addressed to the sender.
    pub fn utterance(&mut self, player: SpeakerId, text: &str, t_ms: Option<u64>) -> Vec<Outgoing> {
        match self.try_utterance(player, text, t_ms) {
            Ok(out) => out,
            Err(e) => vec![self.reject(player, &e)],
        }
    }

    fn try_utterance(
        &mut self,
        player: SpeakerId,
        text: &str,
        t_ms: Option<u64>,
    ) -> Result<Vec<Outgoing>, SessionError> {
        match slot_index(player) {
            Some(i) if self.slots[i].is_some() => {}
            _ => return Err(SessionError::NotJoined(player)),
        }
        if !self.started() {
            return Err(SessionError::NotStarted);
        }
        if self.is_over() {
            return Err(SessionError::GameOver);
        }
        let t = t_ms.unwrap_or(self.clock_ms).max(self.clock_ms);
        self.clock_ms = t;
        self.last_activity_ms = t;
        if !self.filter.admit(player.channel(), text, t) {
            debug!(session = %self.id, ?player, text, "dropped as crosstalk");
            let snap = self.snapshot();
            return Ok(vec![
                self.message(Recipient::All, ServerBody::State { state: snap })
            ]);
        }
        let engine = self.engine_mut().expect("started");
        let before = engine.state().clone();
        let turn = engine.handle_utterance(player, text, t)?;
        self.broadcast_actions(&turn.actions, &before)
    }

    /// Advances the session clock and issues an idle prompt when due.
    pub fn tick(&mut self, now_ms: u64) -> Vec<Outgoing> {
        self.clock_ms = self.clock_ms.max(now_ms);
        if !self.started() || self.is_over() {
            return Vec::new();
        }
        let idle = self.clock_ms - self.last_activity_ms;
        let engine = self.engine_mut().expect("started");
        let before = engine.state().clone();
        let actions = engine.idle(idle);
        if actions.is_empty() {
            return Vec::new();
        }
        self.last_activity_ms = self.clock_ms;
        self.broadcast_actions(&actions, &before)
            .unwrap_or_default()
    }

    pub fn snapshot(&self) -> Snapshot {
        let engine = self.engine().expect("started");
        Snapshot::new(engine.manager(), engine.state(), self.players())
    }

    /// host_say for each action, then one state snapshot, then game_over
    /// if the game just ended.
    fn broadcast_actions(
        &mut self,
        actions: &[HostAction],
        before: &quizhost_core::GameState,
    ) -> Result<Vec<Outgoing>, SessionError> {
        let mut out = Vec::with_capacity(actions.len() + 2);
        let mut lines = Vec::with_capacity(actions.len());
        if let Stage::Playing(engine) = &self.stage {
            for a in actions {
                let slots = engine.slots(a, before);
                let text = self.realizer.realize(a.intent, &slots)?;
                lines.push((
                    a.origin,
                    HostLine {
                        intent: a.intent,
                        text,
                    },
                ));
            }
        }
        for (origin, line) in lines {
            out.push(self.message(
                Recipient::All,
                ServerBody::HostSay {
                    intent: line.intent,
                    text: line.text.clone(),
                    origin,
                },
            ));
            self.host_lines.push(line);
        }
        let snap = self.snapshot();
        out.push(self.message(Recipient::All, ServerBody::State { state: snap }));
        if self.is_over() {
            let engine = self.engine().expect("started");
            let state = engine.state();
            let body = ServerBody::GameOver {
                score: state.correct_count,
                total: state.round_length,
                winnings: winnings(engine.manager(), state),
            };
            out.push(self.message(Recipient::All, body));
        }
        Ok(out)
    }
}
