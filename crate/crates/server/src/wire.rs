//! JSON messages exchanged over the session WebSocket.

use std::collections::BTreeMap;

use quizhost_core::engine::winnings;
use quizhost_core::game::{DialogueManager, GamePhase, GameState, Origin};
use quizhost_core::{Intent, OptionKey, SpeakerId};
use serde::{Deserialize, Serialize};

/// Sent by a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// First message on a connection. A token reclaims an existing slot.
    Join {
        session: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<String>,
    },
    Utterance {
        text: String,
        /// Milliseconds since session start; the server clock is used when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_ms: Option<u64>,
    },
}

/// Sent by the server. `seq` increases by one for every message a session
/// emits, whoever it is addressed to; messages not tied to a session carry 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub seq: u64,
    pub session: String,
    #[serde(flatten)]
    pub body: ServerBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerBody {
    Joined {
        player: SpeakerId,
        token: String,
        started: bool,
    },
    HostSay {
        intent: Intent,
        text: String,
        origin: Origin,
    },
    State {
        state: Snapshot,
    },
    GameOver {
        score: usize,
        total: usize,
        winnings: u64,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    SessionNotFound,
    SessionFull,
    BadToken,
    NotJoined,
    NotStarted,
    GameOverReject,
    BadMessage,
    Internal,
}

/// Client-facing view of the game state. The correct option is withheld.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub phase: GamePhase,
    pub question_index: usize,
    pub round_length: usize,
    pub question: String,
    pub options: BTreeMap<OptionKey, String>,
    pub offered: Option<OptionKey>,
    pub offered_by: Option<SpeakerId>,
    pub rejected: Vec<OptionKey>,
    pub locked: Option<OptionKey>,
    pub correct_count: usize,
    pub prize: u64,
    pub winnings: u64,
    pub last_result: Option<bool>,
    pub players: Vec<SpeakerId>,
}

impl Snapshot {
    pub fn new(dm: &DialogueManager, state: &GameState, players: Vec<SpeakerId>) -> Self {
        Self {
            phase: state.phase,
            question_index: state.question_index,
            round_length: state.round_length,
            question: state.question.text.clone(),
            options: state.question.options.clone(),
            offered: state.offered,
            offered_by: state.offered_by,
            rejected: state.rejected.iter().copied().collect(),
            locked: state.locked,
            correct_count: state.correct_count,
            prize: dm.prize(state),
            winnings: winnings(dm, state),
            last_result: state.last_result,
            players,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let join: ClientMessage =
            serde_json::from_str(r#"{"type":"join","session":"abc"}"#).unwrap();
        assert_eq!(
            join,
            ClientMessage::Join {
                session: "abc".into(),
                token: None
            }
        );
        let utt: ClientMessage =
            serde_json::from_str(r#"{"type":"utterance","text":"B","t_ms":40}"#).unwrap();
        assert_eq!(
            utt,
            ClientMessage::Utterance {
                text: "B".into(),
                t_ms: Some(40)
            }
        );
    }

    #[test]
    fn server_message_layout_is_flat() {
        let m = ServerMessage {
            seq: 3,
            session: "s".into(),
            body: ServerBody::HostSay {
                intent: Intent::SayCorrect,
                text: "Yes!".into(),
                origin: Origin::StateMachine,
            },
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["type"], "host_say");
        assert_eq!(v["seq"], 3);
        assert_eq!(v["intent"], "say-correct");
        assert_eq!(v["origin"], "state_machine");
        let back: ServerMessage = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn error_codes_are_snake_case() {
        let v = serde_json::to_value(ErrorCode::GameOverReject).unwrap();
        assert_eq!(v, "game_over_reject");
    }
}
