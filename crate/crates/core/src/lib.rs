//! Core of the two-player quiz host: intent schema, language understanding,
//! the recurrent host policy, the game state machine, question supply and
//! response generation.

pub mod corpus;
pub mod engine;
pub mod error;
pub mod eval;
pub mod game;
pub mod intent;
pub mod nlg;
pub mod nlu;
pub mod policy;
pub mod trivia;

pub use error::*;
pub use game::{DialogueManager, GameConfig, GamePhase, GameState, HostAction, LockInStrategy};
pub use intent::{
    Channel, DialogueEvent, Intent, IntentRegistry, OptionKey, PolicyStep, SpeakerId,
};
pub use policy::{PolicyModel, TrainConfig};
pub use trivia::QuestionRecord;
