//! Game-rule state machine around the host policy.
//!
//! The policy proposes at most one host-core action per event. The state
//! machine works out which core action the rules require at that point (if
//! any), emits it whether or not the policy agreed, and drops proposals the
//! rules do not allow. It also emits the extended host intents (rejection
//! acknowledgements, re-prompts, results, end of game) on its own.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::GameError;
use crate::intent::{DialogueEvent, Intent, OptionKey, Rejection, SpeakerId};
use crate::trivia::QuestionRecord;

pub const ROUND_LENGTH: usize = 10;

/// Default prize ladder, one value per question.
pub const DEFAULT_PRIZES: [u64; ROUND_LENGTH] = [
    100, 200, 500, 1_000, 2_000, 5_000, 10_000, 25_000, 50_000, 100_000,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GamePhase {
    AwaitingQuestion,
    Deliberation,
    SeekConfirmation,
    AnswerLocked,
    GameOver,
}

impl GamePhase {
    /// Legal phase changes. Staying put is always allowed.
    /// `Deliberation -> AnswerLocked` only happens when a question expires
    /// under the deliberation cap.
    pub fn can_transition(self, to: GamePhase) -> bool {
        use GamePhase::*;
        self == to
            || matches!(
                (self, to),
                (AwaitingQuestion, Deliberation)
                    | (Deliberation, SeekConfirmation)
                    | (SeekConfirmation, Deliberation)
                    | (SeekConfirmation, AnswerLocked)
                    | (Deliberation, AnswerLocked)
                    | (AnswerLocked, AwaitingQuestion)
                    | (AnswerLocked, GameOver)
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LockInStrategy {
    /// Lock in after a rejection unless the rejected option is the one on offer.
    LastOfferedMatch,
    /// Lock in after a rejection only once every other option has been ruled out.
    #[default]
    AllRuledOut,
}

impl std::fmt::Display for LockInStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LastOfferedMatch => "last-offered",
            Self::AllRuledOut => "all-ruled-out",
        })
    }
}

impl std::str::FromStr for LockInStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "last-offered" | "last-offered-match" => Ok(Self::LastOfferedMatch),
            "all-ruled-out" => Ok(Self::AllRuledOut),
            other => Err(format!(
                "unknown strategy `{other}` (last-offered | all-ruled-out)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameConfig {
    pub strategy: LockInStrategy,
    pub prize_ladder: Vec<u64>,
    pub idle_threshold_ms: u64,
    /// Player utterances allowed per question before it expires unanswered.
    pub deliberation_cap: Option<u32>,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            strategy: LockInStrategy::default(),
            prize_ladder: DEFAULT_PRIZES.to_vec(),
            idle_threshold_ms: 15_000,
            deliberation_cap: None,
        }
    }
}

/// Which layer produced a host action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Policy,
    StateMachine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostAction {
    pub intent: Intent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<OptionKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub player: Option<SpeakerId>,
    pub origin: Origin,
    /// The policy proposal this action replaced, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrode: Option<Intent>,
}

impl HostAction {
    pub fn machine(intent: Intent) -> Self {
        Self {
            intent,
            answer: None,
            player: None,
            origin: Origin::StateMachine,
            overrode: None,
        }
    }

    fn with_answer(mut self, answer: Option<OptionKey>) -> Self {
        self.answer = answer;
        self
    }

    fn with_player(mut self, player: SpeakerId) -> Self {
        self.player = Some(player);
        self
    }

    pub fn is_override(&self) -> bool {
        self.overrode.is_some()
    }
}

/// Snapshot of one game; serialized for state broadcasts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameState {
    pub question_index: usize,
    pub round_length: usize,
    pub question: QuestionRecord,
    pub offered: Option<OptionKey>,
    pub offered_by: Option<SpeakerId>,
    pub rejected: BTreeSet<OptionKey>,
    pub locked: Option<OptionKey>,
    pub phase: GamePhase,
    pub correct_count: usize,
    pub prize_level: usize,
    pub awaiting_direct_answer: bool,
    pub idle_triggers: u32,
    pub user_events: u32,
    /// Outcome of the most recently resolved question.
    pub last_result: Option<bool>,
}

impl GameState {
    /// Checks the structural invariants; returns the first violation.
    pub fn check(&self) -> Result<(), String> {
        if !(1..=ROUND_LENGTH).contains(&self.question_index)
            || self.question_index > self.round_length
        {
            return Err(format!(
                "question index {} out of range",
                self.question_index
            ));
        }
        if let Some(o) = self.offered {
            if self.rejected.contains(&o) {
                return Err(format!("offered {o} is also rejected"));
            }
        }
        if self.correct_count > self.question_index {
            return Err("more correct answers than questions".into());
        }
        if self.phase == GamePhase::SeekConfirmation && self.offered.is_none() {
            return Err("seeking confirmation without an offered answer".into());
        }
        Ok(())
    }
}

/// Result of one [`DialogueManager::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: GameState,
    pub actions: Vec<HostAction>,
    /// Policy proposal dropped without a replacement action.
    pub suppressed: Option<Intent>,
}

type Required = Option<(Intent, Option<OptionKey>)>;

#[derive(Debug, Clone)]
pub struct DialogueManager {
    config: GameConfig,
    questions: Vec<QuestionRecord>,
}

impl DialogueManager {
    pub fn new(config: GameConfig, questions: Vec<QuestionRecord>) -> Result<Self, GameError> {
        if questions.is_empty() || questions.len() > ROUND_LENGTH {
            return Err(GameError::RoundLength(questions.len()));
        }
        if config.prize_ladder.len() < questions.len() {
            return Err(GameError::PrizeLadder {
                need: questions.len(),
                got: config.prize_ladder.len(),
            });
        }
        Ok(Self { config, questions })
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn questions(&self) -> &[QuestionRecord] {
        &self.questions
    }

    pub fn prize(&self, state: &GameState) -> u64 {
        self.config.prize_ladder[state.prize_level]
    }

    fn fresh_question(&self, mut st: GameState, index: usize) -> GameState {
        st.question_index = index;
        st.question = self.questions[index - 1].clone();
        st.offered = None;
        st.offered_by = None;
        st.rejected.clear();
        st.locked = None;
        st.phase = GamePhase::AwaitingQuestion;
        st.prize_level = index - 1;
        st.awaiting_direct_answer = false;
        st.idle_triggers = 0;
        st.user_events = 0;
        st
    }

    /// Opening state plus the first question-brief and question.
    pub fn start(&self) -> (GameState, Vec<HostAction>) {
        let st = GameState {
            question_index: 1,
            round_length: self.questions.len(),
            question: self.questions[0].clone(),
            offered: None,
            offered_by: None,
            rejected: BTreeSet::new(),
            locked: None,
            phase: GamePhase::AwaitingQuestion,
            correct_count: 0,
            prize_level: 0,
            awaiting_direct_answer: false,
            idle_triggers: 0,
            user_events: 0,
            last_result: None,
        };
        let st = self.fresh_question(st, 1);
        (st, question_actions())
    }

    /// Advances the game by one understood event and the policy's proposal for it.
    pub fn step(
        &self,
        state: &GameState,
        event: &DialogueEvent,
        decision: Option<Intent>,
    ) -> Result<Step, GameError> {
        if state.phase == GamePhase::GameOver {
            return Err(GameError::IllegalPhase(GamePhase::GameOver));
        }
        let decision = decision.filter(|d| *d != Intent::NoResponse);
        let mut st = state.clone();
        let mut extra = Vec::new();

        let required: Required = if event.speaker == SpeakerId::Host {
            match (st.phase, event.intent) {
                (GamePhase::AwaitingQuestion, Intent::Question) => {
                    st.phase = GamePhase::Deliberation;
                    Some((Intent::Options, None))
                }
                _ => None,
            }
        } else {
            match st.phase {
                GamePhase::Deliberation => {
                    st.user_events += 1;
                    st.idle_triggers = 0;
                    let req = self.deliberate(&mut st, event, &mut extra);
                    if req.is_none() && st.phase == GamePhase::Deliberation {
                        if let Some(cap) = self.config.deliberation_cap {
                            if st.user_events >= cap {
                                st.locked = None;
                                st.phase = GamePhase::AnswerLocked;
                            }
                        }
                    }
                    req
                }
                GamePhase::SeekConfirmation => {
                    st.user_events += 1;
                    st.idle_triggers = 0;
                    self.confirm(&mut st, event, &mut extra)?
                }
                // Players talking over the question, or between lock-in and result.
                GamePhase::AwaitingQuestion | GamePhase::AnswerLocked => None,
                GamePhase::GameOver => unreachable!(),
            }
        };

        let mut actions = extra;
        let mut suppressed = None;
        match required {
            Some((intent, answer)) => {
                let mut a = HostAction::machine(intent).with_answer(answer);
                if decision == Some(intent) {
                    a.origin = Origin::Policy;
                } else {
                    a.overrode = decision;
                }
                actions.push(a);
            }
            None => {
                if let Some(d) = decision {
                    let reprompt = event.speaker.is_user()
                        && st.phase == GamePhase::SeekConfirmation
                        && state.phase == GamePhase::SeekConfirmation
                        && actions.is_empty();
                    if reprompt {
                        let mut a =
                            HostAction::machine(Intent::SeekConfirmation).with_answer(st.offered);
                        a.overrode = Some(d);
                        actions.push(a);
                    } else {
                        suppressed = Some(d);
                    }
                }
            }
        }
        Ok(Step {
            state: st,
            actions,
            suppressed,
        })
    }

    fn deliberate(
        &self,
        st: &mut GameState,
        ev: &DialogueEvent,
        extra: &mut Vec<HostAction>,
    ) -> Required {
        let speaker = ev.speaker;
        if let Some(Rejection::Option(x)) = ev.rejection {
            if st.offered == Some(x) {
                st.offered = None;
                st.offered_by = None;
            }
            st.rejected.insert(x);
            extra.push(
                HostAction::machine(Intent::AcknowledgeRejectOption)
                    .with_answer(Some(x))
                    .with_player(speaker),
            );
        }
        let mut required = None;
        match (ev.intent, ev.answer) {
            (Intent::OfferAnswer | Intent::FinalAnswer, Some(x)) => {
                st.rejected.remove(&x);
                if st.awaiting_direct_answer {
                    extra.push(
                        HostAction::machine(Intent::RepeatAnswer)
                            .with_answer(Some(x))
                            .with_player(speaker),
                    );
                    required = Some(x);
                } else if ev.intent == Intent::FinalAnswer
                    || (st.offered == Some(x) && st.offered_by != Some(speaker))
                {
                    required = Some(x);
                }
                st.offered = Some(x);
                st.offered_by = Some(speaker);
            }
            (Intent::Agreement | Intent::ConfirmFinalAnswer, _) => match st.offered {
                Some(x)
                    if st.offered_by != Some(speaker)
                        || ev.intent == Intent::ConfirmFinalAnswer =>
                {
                    required = Some(x);
                }
                Some(_) => {}
                None => {
                    st.awaiting_direct_answer = true;
                    extra.push(HostAction::machine(Intent::SeekDirectAnswer));
                }
            },
            _ => {}
        }
        required.map(|x| {
            st.awaiting_direct_answer = false;
            st.phase = GamePhase::SeekConfirmation;
            (Intent::ConfirmAgreement, Some(x))
        })
    }

    fn confirm(
        &self,
        st: &mut GameState,
        ev: &DialogueEvent,
        extra: &mut Vec<HostAction>,
    ) -> Result<Required, GameError> {
        let offered = st.offered.ok_or(GameError::NoOfferedAnswer)?;
        match ev.rejection {
            Some(Rejection::Option(x)) => {
                let (next, action) = self.resolve_rejection(st, x)?;
                *st = next;
                if action.intent == Intent::AcceptAnswer {
                    return Ok(Some((Intent::AcceptAnswer, action.answer)));
                }
                extra.push(action.with_player(ev.speaker));
                if st.phase == GamePhase::Deliberation {
                    if let (Intent::OfferAnswer | Intent::FinalAnswer, Some(y)) =
                        (ev.intent, ev.answer)
                    {
                        st.rejected.remove(&y);
                        st.offered = Some(y);
                        st.offered_by = Some(ev.speaker);
                    }
                }
                return Ok(None);
            }
            Some(Rejection::Unspecified) => {
                st.offered = None;
                st.offered_by = None;
                st.phase = GamePhase::Deliberation;
                extra
                    .push(HostAction::machine(Intent::ReturnToQuestion).with_answer(Some(offered)));
                return Ok(None);
            }
            None => {}
        }
        let lock = |st: &mut GameState| {
            st.locked = Some(offered);
            st.phase = GamePhase::AnswerLocked;
            Some((Intent::AcceptAnswer, Some(offered)))
        };
        Ok(match (ev.intent, ev.answer) {
            (Intent::Agreement | Intent::ConfirmFinalAnswer, _) => lock(st),
            (Intent::OfferAnswer | Intent::FinalAnswer, Some(y)) if y == offered => lock(st),
            (Intent::FinalAnswer, Some(y)) => {
                st.rejected.remove(&y);
                st.offered = Some(y);
                st.offered_by = Some(ev.speaker);
                extra.push(HostAction::machine(Intent::SeekConfirmation).with_answer(Some(y)));
                None
            }
            (Intent::OfferAnswer, Some(y)) => {
                st.rejected.remove(&y);
                st.offered = Some(y);
                st.offered_by = Some(ev.speaker);
                st.phase = GamePhase::Deliberation;
                extra
                    .push(HostAction::machine(Intent::ReturnToQuestion).with_answer(Some(offered)));
                None
            }
            _ => None,
        })
    }

    /// A player ruled out `rejected` while the host was asking to lock in
    /// the offered answer. The strategy decides whether that still means
    /// "lock in the offered answer".
    pub fn resolve_rejection(
        &self,
        state: &GameState,
        rejected: OptionKey,
    ) -> Result<(GameState, HostAction), GameError> {
        resolve_rejection(state, rejected, self.config.strategy)
    }

    /// Announces the result of the locked answer and moves to the next
    /// question or ends the game.
    pub fn resolve_answer(
        &self,
        state: &GameState,
    ) -> Result<(GameState, Vec<HostAction>), GameError> {
        if state.phase != GamePhase::AnswerLocked {
            return Err(GameError::NoLockedAnswer);
        }
        let mut st = state.clone();
        let mut actions = Vec::new();
        let correct = state.locked == Some(state.question.correct);
        if correct {
            st.correct_count += 1;
            actions.push(HostAction::machine(Intent::SayCorrect).with_answer(state.locked));
        } else {
            actions.push(HostAction::machine(Intent::SayIncorrect).with_answer(state.locked));
        }
        st.last_result = Some(correct);
        if st.question_index >= st.round_length {
            st.phase = GamePhase::GameOver;
            actions.push(HostAction::machine(Intent::EndOfGame));
            return Ok((st, actions));
        }
        let next = st.question_index + 1;
        let st = self.fresh_question(st, next);
        actions.extend(question_actions());
        Ok((st, actions))
    }

    /// Gives up on the current question without a locked answer.
    pub fn expire_question(
        &self,
        state: &GameState,
    ) -> Result<(GameState, Vec<HostAction>), GameError> {
        match state.phase {
            GamePhase::Deliberation | GamePhase::SeekConfirmation | GamePhase::AwaitingQuestion => {
                let mut st = state.clone();
                st.locked = None;
                st.phase = GamePhase::AnswerLocked;
                self.resolve_answer(&st)
            }
            GamePhase::AnswerLocked => self.resolve_answer(state),
            GamePhase::GameOver => Err(GameError::IllegalPhase(GamePhase::GameOver)),
        }
    }

    /// Prompt after `idle_ms` without player speech: guidance, then a
    /// question-brief on every second trigger.
    pub fn idle_prompt(&self, state: &GameState, idle_ms: u64) -> (GameState, Option<HostAction>) {
        if state.phase != GamePhase::Deliberation || idle_ms < self.config.idle_threshold_ms {
            return (state.clone(), None);
        }
        let mut st = state.clone();
        st.idle_triggers += 1;
        let intent = if st.idle_triggers % 2 == 0 {
            Intent::QuestionBrief
        } else {
            Intent::OfferGenericGuidance
        };
        (st, Some(HostAction::machine(intent)))
    }
}

fn question_actions() -> Vec<HostAction> {
    vec![
        HostAction::machine(Intent::QuestionBrief),
        HostAction::machine(Intent::Question),
    ]
}

pub fn resolve_rejection(
    state: &GameState,
    rejected: OptionKey,
    strategy: LockInStrategy,
) -> Result<(GameState, HostAction), GameError> {
    let offered = state.offered.ok_or(GameError::NoOfferedAnswer)?;
    if state.phase != GamePhase::SeekConfirmation {
        return Err(GameError::IllegalPhase(state.phase));
    }
    let mut st = state.clone();
    st.rejected.insert(rejected);
    if rejected == offered {
        st.offered = None;
        st.offered_by = None;
        st.phase = GamePhase::Deliberation;
        return Ok((
            st,
            HostAction::machine(Intent::ReturnToQuestion).with_answer(Some(offered)),
        ));
    }
    let lock = match strategy {
        LockInStrategy::LastOfferedMatch => true,
        LockInStrategy::AllRuledOut => OptionKey::ALL
            .iter()
            .filter(|&&k| k != offered)
            .all(|k| st.rejected.contains(k)),
    };
    if lock {
        st.locked = Some(offered);
        st.phase = GamePhase::AnswerLocked;
        Ok((
            st,
            HostAction::machine(Intent::AcceptAnswer).with_answer(Some(offered)),
        ))
    } else {
        Ok((
            st,
            HostAction::machine(Intent::AcknowledgeRejectOption).with_answer(Some(rejected)),
        ))
    }
}
