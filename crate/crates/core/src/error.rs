use std::path::PathBuf;

use thiserror::Error;

use crate::game::GamePhase;
use crate::intent::{Intent, SpeakerId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("unknown intent `{0}`")]
    UnknownIntent(String),
    #[error("unknown speaker `{0}`")]
    UnknownSpeaker(String),
    #[error("unknown answer option `{0}`")]
    UnknownOption(String),
    #[error("host action index {0} out of range")]
    OutOfRange(usize),
    #[error("intent `{0}` cannot carry an answer payload")]
    IllegalPayload(Intent),
    #[error("{speaker} cannot produce `{intent}`")]
    SpeakerMismatch { speaker: SpeakerId, intent: Intent },
    #[error("intent registry is empty")]
    EmptyRegistry,
    #[error("intent `{0}` listed twice in registry")]
    DuplicateIntent(String),
}

#[derive(Debug, Error)]
pub enum NluError {
    #[error("cue lexicon: {0}")]
    Lexicon(String),
    #[error("crosstalk filter config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("step has width {got}, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("event arrived in phase {0:?}")]
    IllegalPhase(GamePhase),
    #[error("no offered answer to resolve against")]
    NoOfferedAnswer,
    #[error("no locked answer to resolve")]
    NoLockedAnswer,
    #[error("a round needs between 1 and 10 questions, got {0}")]
    RoundLength(usize),
    #[error("prize ladder has {got} entries, need {need}")]
    PrizeLadder { need: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum TriviaError {
    #[error("no question source available: {0}")]
    SourceUnavailable(String),
    #[error("malformed question {id}: {reason}")]
    MalformedQuestion { id: String, reason: String },
    #[error("requested {0} questions, allowed range is 1..=50")]
    Count(usize),
    #[error("fixture holds only {available} usable questions, {requested} requested")]
    NotEnough { requested: usize, available: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NlgError {
    #[error("no templates for `{0}`")]
    MissingTemplate(Intent),
    #[error("template for `{intent}` needs slot `{slot}`")]
    MissingSlot { intent: Intent, slot: String },
    #[error("template bank: {0}")]
    Bank(String),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown intent `{intent}`")]
    UnknownIntent { line: usize, intent: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("a trained model is required")]
    UntrainedModel,
    #[error("script {name}: {message}")]
    Script { name: String, message: String },
    #[error("confusion matrix has no counted cells")]
    EmptyMatrix,
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
