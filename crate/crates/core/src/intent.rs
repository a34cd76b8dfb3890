//! Intent vocabulary, speakers, dialogue events and the one-hot step encoding
//! consumed by the host policy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SchemaError;

/// Who produced an utterance. The discriminant is the one-hot speaker slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeakerId {
    User1,
    User2,
    Host,
}

impl SpeakerId {
    pub const ALL: [SpeakerId; 3] = [SpeakerId::User1, SpeakerId::User2, SpeakerId::Host];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            SpeakerId::User1 => 0,
            SpeakerId::User2 => 1,
            SpeakerId::Host => 2,
        }
    }

    pub fn is_user(self) -> bool {
        !matches!(self, SpeakerId::Host)
    }

    /// The other player. Host maps to itself.
    pub fn partner(self) -> SpeakerId {
        match self {
            SpeakerId::User1 => SpeakerId::User2,
            SpeakerId::User2 => SpeakerId::User1,
            SpeakerId::Host => SpeakerId::Host,
        }
    }

    pub fn channel(self) -> Channel {
        match self {
            SpeakerId::User1 => Channel::Channel1,
            SpeakerId::User2 => Channel::Channel2,
            SpeakerId::Host => Channel::HostChannel,
        }
    }
}

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpeakerId::User1 => "user1",
            SpeakerId::User2 => "user2",
            SpeakerId::Host => "host",
        })
    }
}

impl FromStr for SpeakerId {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "user1" | "1" => Ok(SpeakerId::User1),
            "user2" | "2" => Ok(SpeakerId::User2),
            "host" => Ok(SpeakerId::Host),
            _ => Err(SchemaError::UnknownSpeaker(s.to_string())),
        }
    }
}

/// Input channel an utterance arrived on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Channel1,
    Channel2,
    HostChannel,
}

impl Channel {
    pub fn speaker(self) -> SpeakerId {
        match self {
            Channel::Channel1 => SpeakerId::User1,
            Channel::Channel2 => SpeakerId::User2,
            Channel::HostChannel => SpeakerId::Host,
        }
    }
}

/// One of the four answer slots on screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptionKey {
    A,
    B,
    C,
    D,
}

impl OptionKey {
    pub const ALL: [OptionKey; 4] = [OptionKey::A, OptionKey::B, OptionKey::C, OptionKey::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<OptionKey> {
        OptionKey::ALL.get(i).copied()
    }

    pub fn letter(self) -> char {
        (b'A' + self as u8) as char
    }
}

impl fmt::Display for OptionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for OptionKey {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(OptionKey::A),
            "B" => Ok(OptionKey::B),
            "C" => Ok(OptionKey::C),
            "D" => Ok(OptionKey::D),
            _ => Err(SchemaError::UnknownOption(s.to_string())),
        }
    }
}

/// Which part of the vocabulary an intent belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntentGroup {
    User,
    HostCore,
    HostExtended,
    Sentinel,
}

macro_rules! intents {
    ($($variant:ident => $name:literal, $group:ident;)*) => {
        /// Closed intent vocabulary: annotated user and host intents, the
        /// state-machine host intents, and the `no-response` sentinel.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Intent {
            $($variant,)*
        }

        impl Intent {
            pub const ALL: &'static [Intent] = &[$(Intent::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(Intent::$variant => $name,)*
                }
            }

            pub fn group(self) -> IntentGroup {
                match self {
                    $(Intent::$variant => IntentGroup::$group,)*
                }
            }
        }

        impl FromStr for Intent {
            type Err = SchemaError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(Intent::$variant),)*
                    _ => Err(SchemaError::UnknownIntent(s.to_string())),
                }
            }
        }
    };
}

intents! {
    ChitChat => "chit-chat", User;
    OfferAnswer => "offer-answer", User;
    OfferToAnswer => "offer-to-answer", User;
    Agreement => "agreement", User;
    AskAgreement => "ask-agreement", User;
    FinalAnswer => "final-answer", User;
    ConfirmFinalAnswer => "confirm-final-answer", User;
    Question => "question", HostCore;
    Options => "options", HostCore;
    ConfirmAgreement => "confirm-agreement", HostCore;
    AcceptAnswer => "accept-answer", HostCore;
    AcknowledgeRejectOption => "acknowledge-reject-option", HostExtended;
    EndOfGame => "end-of-game", HostExtended;
    OfferGenericGuidance => "offer-generic-guidance", HostExtended;
    QuestionBrief => "question-brief", HostExtended;
    RepeatAnswer => "repeat-answer", HostExtended;
    ReturnToQuestion => "return-to-question", HostExtended;
    SayCorrect => "say-correct", HostExtended;
    SayIncorrect => "say-incorrect", HostExtended;
    SeekConfirmation => "seek-confirmation", HostExtended;
    SeekDirectAnswer => "seek-direct-answer", HostExtended;
    NoResponse => "no-response", Sentinel;
}

/// Host-core intents in policy output order.
pub const HOST_CORE: [Intent; 4] = [
    Intent::Question,
    Intent::Options,
    Intent::ConfirmAgreement,
    Intent::AcceptAnswer,
];

/// Width of the policy output: the host-core actions plus no-response.
pub const POLICY_OUTPUT_DIM: usize = HOST_CORE.len() + 1;

impl Intent {
    pub fn is_user(self) -> bool {
        self.group() == IntentGroup::User
    }

    pub fn is_host(self) -> bool {
        matches!(
            self.group(),
            IntentGroup::HostCore | IntentGroup::HostExtended
        )
    }

    pub fn is_host_core(self) -> bool {
        self.group() == IntentGroup::HostCore
    }

    /// Only `offer-answer` and `final-answer` may carry an answer.
    pub fn takes_payload(self) -> bool {
        matches!(self, Intent::OfferAnswer | Intent::FinalAnswer)
    }

    pub fn host_core_index(self) -> Option<usize> {
        HOST_CORE.iter().position(|&i| i == self)
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Intent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Intent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps a policy output index to its host-core intent.
///
/// Index 4 is the no-response slot, which the network reports through its
/// separate sigmoid head; it decodes to the sentinel.
pub fn decode_host_action(index: usize) -> Result<Intent, SchemaError> {
    match index {
        0..=3 => Ok(HOST_CORE[index]),
        4 => Ok(Intent::NoResponse),
        _ => Err(SchemaError::OutOfRange(index)),
    }
}

/// An option a player explicitly ruled out, or a bare decline ("no, not yet").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    Option(OptionKey),
    Unspecified,
}

/// One utterance turn after understanding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueEvent {
    pub speaker: SpeakerId,
    pub intent: Intent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<OptionKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
    pub text: String,
    pub channel: Channel,
    pub timestamp_ms: u64,
}

impl DialogueEvent {
    /// Builds an event on the speaker's own channel, checking the payload rule.
    pub fn new(
        speaker: SpeakerId,
        intent: Intent,
        answer: Option<OptionKey>,
        text: impl Into<String>,
        timestamp_ms: u64,
    ) -> Result<Self, SchemaError> {
        if answer.is_some() && !intent.takes_payload() {
            return Err(SchemaError::IllegalPayload(intent));
        }
        if speaker == SpeakerId::Host && !intent.is_host() {
            return Err(SchemaError::SpeakerMismatch { speaker, intent });
        }
        if speaker.is_user() && !intent.is_user() {
            return Err(SchemaError::SpeakerMismatch { speaker, intent });
        }
        Ok(Self {
            speaker,
            intent,
            answer,
            rejection: None,
            text: text.into(),
            channel: speaker.channel(),
            timestamp_ms,
        })
    }

    pub fn host(intent: Intent, timestamp_ms: u64) -> Self {
        debug_assert!(intent.is_host());
        Self {
            speaker: SpeakerId::Host,
            intent,
            answer: None,
            rejection: None,
            text: String::new(),
            channel: Channel::HostChannel,
            timestamp_ms,
        }
    }
}

/// Names of reserved encoder slots in the default registry.
pub const RESERVED_SLOTS: [&str; 3] = ["reserved-a", "reserved-b", "reserved-c"];

/// Ordered list of intent names admitted to the policy input encoding.
///
/// The order is part of the model artifact: a model only accepts steps
/// encoded with the registry it was trained with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct IntentRegistry {
    names: Vec<String>,
}

impl IntentRegistry {
    pub fn new<I, S>(names: I) -> Result<Self, SchemaError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(SchemaError::EmptyRegistry);
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(SchemaError::DuplicateIntent(n.clone()));
            }
            let known = n.parse::<Intent>().is_ok() || n.starts_with("reserved-");
            if !known {
                return Err(SchemaError::UnknownIntent(n.clone()));
            }
        }
        Ok(Self { names })
    }

    /// Seven user intents, four host-core intents, three reserved slots:
    /// a 14-wide intent one-hot and a 17-wide step.
    pub fn standard() -> Self {
        let mut names: Vec<String> = Intent::ALL
            .iter()
            .filter(|i| i.is_user())
            .chain(HOST_CORE.iter())
            .map(|i| i.name().to_string())
            .collect();
        names.extend(RESERVED_SLOTS.iter().map(|s| s.to_string()));
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Width of an encoded step: intent slots plus speaker slots.
    pub fn input_dim(&self) -> usize {
        self.names.len() + SpeakerId::COUNT
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, intent: Intent) -> Option<usize> {
        self.names.iter().position(|n| n == intent.name())
    }

    pub fn contains(&self, intent: Intent) -> bool {
        self.index_of(intent).is_some()
    }

    pub fn name_at(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }
}

impl Default for IntentRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl TryFrom<Vec<String>> for IntentRegistry {
    type Error = SchemaError;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<IntentRegistry> for Vec<String> {
    fn from(r: IntentRegistry) -> Self {
        r.names
    }
}

/// A single encoded policy input: intent one-hot followed by speaker one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep(pub Vec<f64>);

impl PolicyStep {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Encodes `(intent, speaker)`; any answer payload is ignored.
pub fn encode(
    intent: Intent,
    speaker: SpeakerId,
    registry: &IntentRegistry,
) -> Result<PolicyStep, SchemaError> {
    let slot = registry
        .index_of(intent)
        .ok_or_else(|| SchemaError::UnknownIntent(intent.name().to_string()))?;
    let mut v = vec![0.0; registry.input_dim()];
    v[slot] = 1.0;
    v[registry.len() + speaker.index()] = 1.0;
    Ok(PolicyStep(v))
}

pub fn encode_step(
    event: &DialogueEvent,
    registry: &IntentRegistry,
) -> Result<PolicyStep, SchemaError> {
    encode(event.intent, event.speaker, registry)
}
