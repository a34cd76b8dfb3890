//! The per-game pipeline: understanding, policy proposal, state-machine
//! arbitration, and feeding host actions back into the policy.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GameError, PolicyError};
use crate::game::{DialogueManager, GamePhase, GameState, HostAction};
use crate::intent::{DialogueEvent, Intent, OptionKey, SpeakerId};
use crate::nlg::Slots;
use crate::nlu::{Classifier, NluContext};
use crate::policy::{PolicyModel, PolicyOutput, PolicyRunner};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// One row of the running transcript, in corpus form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRow {
    pub question: usize,
    pub speaker: SpeakerId,
    pub intent: Intent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<OptionKey>,
    pub text: String,
}

/// Everything that happened in response to one player utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub event: DialogueEvent,
    pub question_index: usize,
    pub proposal: Intent,
    /// Raw policy scores behind `proposal`, when a policy is attached.
    pub scores: Option<PolicyOutput>,
    pub actions: Vec<HostAction>,
    pub suppressed: Vec<Intent>,
    /// Answer locked in by this turn, if any, with the question it belonged to.
    pub locked: Option<(usize, OptionKey)>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    dm: DialogueManager,
    classifier: Arc<Classifier>,
    policy: Option<PolicyRunner>,
    state: GameState,
    transcript: Vec<TranscriptRow>,
}

impl Engine {
    /// Starts a game and returns the opening host actions.
    pub fn start(
        dm: DialogueManager,
        classifier: Arc<Classifier>,
        policy: Option<(Arc<PolicyModel>, f64)>,
    ) -> Result<(Self, Vec<HostAction>), EngineError> {
        let (state, opening) = dm.start();
        let mut engine = Self {
            dm,
            classifier,
            policy: policy.map(|(m, t)| PolicyRunner::new(m, t)),
            state,
            transcript: Vec::new(),
        };
        let mut suppressed = Vec::new();
        let actions = engine.run_host(opening, &mut suppressed)?;
        Ok((engine, actions))
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn manager(&self) -> &DialogueManager {
        &self.dm
    }

    pub fn transcript(&self) -> &[TranscriptRow] {
        &self.transcript
    }

    pub fn is_over(&self) -> bool {
        self.state.phase == GamePhase::GameOver
    }

    pub fn nlu_context(&self) -> NluContext {
        NluContext {
            question: self.state.question.clone(),
            offered: self.state.offered,
            phase: self.state.phase,
        }
    }

    pub fn classify(&self, speaker: SpeakerId, text: &str, timestamp_ms: u64) -> DialogueEvent {
        self.classifier
            .classify(text, speaker, timestamp_ms, &self.nlu_context())
    }

    pub fn handle_utterance(
        &mut self,
        speaker: SpeakerId,
        text: &str,
        timestamp_ms: u64,
    ) -> Result<Turn, EngineError> {
        let event = self.classify(speaker, text, timestamp_ms);
        self.handle_event(event)
    }

    pub fn handle_event(&mut self, event: DialogueEvent) -> Result<Turn, EngineError> {
        if self.is_over() {
            return Err(GameError::IllegalPhase(GamePhase::GameOver).into());
        }
        let question_index = self.state.question_index;
        self.record(&event);
        let (proposal, scores) = self.propose(&event)?;
        let step = self.dm.step(&self.state, &event, Some(proposal))?;
        self.state = step.state;
        let mut suppressed: Vec<Intent> = step.suppressed.into_iter().collect();
        let locked = step
            .actions
            .iter()
            .find(|a| a.intent == Intent::AcceptAnswer)
            .and_then(|a| a.answer)
            .map(|k| (question_index, k));
        let mut actions = self.run_host(step.actions, &mut suppressed)?;
        if self.state.phase == GamePhase::AnswerLocked {
            let (next, more) = self.dm.resolve_answer(&self.state)?;
            self.state = next;
            actions.extend(self.run_host(more, &mut suppressed)?);
        }
        Ok(Turn {
            event,
            question_index,
            proposal,
            scores,
            actions,
            suppressed,
            locked,
        })
    }

    /// Abandons the current question without a lock-in and moves on.
    pub fn expire(&mut self) -> Result<Vec<HostAction>, EngineError> {
        let (next, actions) = self.dm.expire_question(&self.state)?;
        self.state = next;
        let mut suppressed = Vec::new();
        self.run_host(actions, &mut suppressed)
    }

    /// Host prompt after a stretch without player speech.
    pub fn idle(&mut self, idle_ms: u64) -> Vec<HostAction> {
        let (next, action) = self.dm.idle_prompt(&self.state, idle_ms);
        self.state = next;
        let mut suppressed = Vec::new();
        match action {
            Some(a) => self.run_host(vec![a], &mut suppressed).unwrap_or_default(),
            None => Vec::new(),
        }
    }

    fn propose(
        &mut self,
        event: &DialogueEvent,
    ) -> Result<(Intent, Option<PolicyOutput>), EngineError> {
        match self.policy.as_mut() {
            Some(runner) if runner.model().registry.contains(event.intent) => {
                let (intent, out) = runner.observe(event)?;
                Ok((intent, Some(out)))
            }
            _ => Ok((Intent::NoResponse, None)),
        }
    }

    /// Emits host actions in order. A question resets the policy memory and
    /// is stepped through the state machine, which may add follow-ups.
    fn run_host(
        &mut self,
        initial: Vec<HostAction>,
        suppressed: &mut Vec<Intent>,
    ) -> Result<Vec<HostAction>, EngineError> {
        let mut queue: VecDeque<HostAction> = initial.into();
        let mut out = Vec::new();
        while let Some(action) = queue.pop_front() {
            if action.intent == Intent::Question {
                if let Some(r) = self.policy.as_mut() {
                    r.reset_memory();
                }
            }
            let mut ev = DialogueEvent::host(action.intent, 0);
            ev.answer = action.answer;
            self.record(&ev);
            let (proposal, _) = self.propose(&ev)?;
            if action.intent == Intent::Question {
                let step = self.dm.step(&self.state, &ev, Some(proposal))?;
                self.state = step.state;
                suppressed.extend(step.suppressed);
                queue.extend(step.actions);
            }
            out.push(action);
        }
        Ok(out)
    }

    fn record(&mut self, ev: &DialogueEvent) {
        self.transcript.push(TranscriptRow {
            question: self.state.question_index,
            speaker: ev.speaker,
            intent: ev.intent,
            answer: ev.answer,
            text: ev.text.clone(),
        });
    }

    /// Slot values for realizing `action` against the current state. Called
    /// after the turn, so results refer to the question just resolved via
    /// `previous`.
    pub fn slots(&self, action: &HostAction, previous: &GameState) -> Slots {
        slots_for(&self.dm, action, previous, &self.state)
    }
}

/// Fills every slot a host template might reference. `before` is the state
/// the action was decided in, `after` the state once the turn completed.
pub fn slots_for(
    dm: &DialogueManager,
    action: &HostAction,
    before: &GameState,
    after: &GameState,
) -> Slots {
    let mut s = Slots::new();
    let q = match action.intent {
        Intent::Question | Intent::Options | Intent::QuestionBrief | Intent::ReturnToQuestion => {
            &after.question
        }
        _ => &before.question,
    };
    let index = match action.intent {
        Intent::Question | Intent::QuestionBrief => after.question_index,
        _ => before.question_index,
    };
    s.insert("question", q.text.clone());
    for k in OptionKey::ALL {
        let slot = match k {
            OptionKey::A => "option_a",
            OptionKey::B => "option_b",
            OptionKey::C => "option_c",
            OptionKey::D => "option_d",
        };
        s.insert(slot, q.option(k).to_string());
    }
    s.insert("number", index.to_string());
    s.insert("total", after.round_length.to_string());
    s.insert("score", after.correct_count.to_string());
    let prize_level = (index - 1).min(dm.config().prize_ladder.len() - 1);
    let prize = match action.intent {
        Intent::EndOfGame => winnings(dm, after),
        _ => dm.config().prize_ladder[prize_level],
    };
    s.insert("prize", format_prize(prize));
    let key = action.answer.or(before.offered).or(after.locked);
    if let Some(k) = key {
        s.insert("answer", q.option(k).to_string());
        s.insert("answer_key", k.to_string());
        s.insert("rejected", q.option(k).to_string());
    } else {
        s.insert("answer", "no answer".to_string());
        s.insert("answer_key", "-".to_string());
        s.insert("rejected", "that one".to_string());
    }
    s.insert("correct", q.correct_text().to_string());
    let player = action
        .player
        .or(before.offered_by)
        .unwrap_or(SpeakerId::User1);
    s.insert("player", player_name(player).to_string());
    s
}

/// Prize for the highest question answered correctly.
pub fn winnings(dm: &DialogueManager, state: &GameState) -> u64 {
    match state.correct_count {
        0 => 0,
        n => dm.config().prize_ladder[n - 1],
    }
}

pub fn format_prize(amount: u64) -> String {
    let digits = amount.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    format!("£{out}")
}

pub fn player_name(s: SpeakerId) -> &'static str {
    match s {
        SpeakerId::User1 => "Player one",
        SpeakerId::User2 => "Player two",
        SpeakerId::Host => "Host",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameConfig;
    use crate::trivia::{load_fixture, Fixture};

    fn engine(n: usize) -> (Engine, Vec<HostAction>) {
        let qs = load_fixture(&Fixture::Bundled).unwrap();
        let dm = DialogueManager::new(GameConfig::default(), qs[..n].to_vec()).unwrap();
        Engine::start(dm, Arc::new(Classifier::default()), None).unwrap()
    }

    fn intents(actions: &[HostAction]) -> Vec<Intent> {
        actions.iter().map(|a| a.intent).collect()
    }

    #[test]
    fn opening_reads_question_and_options() {
        let (e, acts) = engine(2);
        assert_eq!(
            intents(&acts),
            [Intent::QuestionBrief, Intent::Question, Intent::Options]
        );
        assert_eq!(e.state().phase, GamePhase::Deliberation);
    }

    #[test]
    fn full_question_cycle() {
        let (mut e, _) = engine(2);
        let correct = e.state().question.correct;
        let label = e.state().question.option(correct).to_string();
        let t = e
            .handle_utterance(SpeakerId::User1, &format!("I think it's {label}"), 10)
            .unwrap();
        assert_eq!(t.event.intent, Intent::OfferAnswer);
        assert!(t.actions.is_empty());
        let t = e
            .handle_utterance(SpeakerId::User2, "yes I agree", 20)
            .unwrap();
        assert_eq!(intents(&t.actions), [Intent::ConfirmAgreement]);
        let t = e.handle_utterance(SpeakerId::User1, "yes", 30).unwrap();
        assert_eq!(t.locked, Some((1, correct)));
        assert_eq!(
            intents(&t.actions),
            [
                Intent::AcceptAnswer,
                Intent::SayCorrect,
                Intent::QuestionBrief,
                Intent::Question,
                Intent::Options
            ]
        );
        assert_eq!(e.state().question_index, 2);
        assert_eq!(e.state().correct_count, 1);
    }

    #[test]
    fn slots_cover_every_template() {
        let (e, acts) = engine(1);
        let bank = crate::nlg::TemplateBank::bundled();
        for a in &acts {
            let slots = e.slots(a, e.state());
            for i in 0..bank.count(a.intent) {
                bank.fill(a.intent, i, &slots).unwrap();
            }
        }
    }

    #[test]
    fn prize_formatting() {
        assert_eq!(format_prize(0), "£0");
        assert_eq!(format_prize(500), "£500");
        assert_eq!(format_prize(1000), "£1,000");
        assert_eq!(format_prize(1_000_000), "£1,000,000");
    }

    #[test]
    fn transcript_starts_each_question_with_host_question() {
        let (e, _) = engine(1);
        let rows = e.transcript();
        assert_eq!(rows[0].intent, Intent::QuestionBrief);
        assert_eq!(rows[1].intent, Intent::Question);
        assert_eq!(rows[2].intent, Intent::Options);
    }
}
