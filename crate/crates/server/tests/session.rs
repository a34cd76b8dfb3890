use quizhost_core::game::GamePhase;
use quizhost_core::trivia::{fetch_questions, QuestionSource};
use quizhost_core::{Intent, SpeakerId};
use quizhost_server::{
    ErrorCode, GameSession, Outgoing, Recipient, ServerBody, SessionSettings, Shared,
};

const P1: SpeakerId = SpeakerId::User1;
const P2: SpeakerId = SpeakerId::User2;

fn session(seed: u64) -> GameSession {
    let qs = fetch_questions(10, &QuestionSource::default(), seed).unwrap();
    let settings = SessionSettings {
        seed,
        ..SessionSettings::default()
    };
    GameSession::new(format!("s{seed}"), qs, settings, Shared::default()).unwrap()
}

fn token_source() -> impl FnMut() -> String {
    let mut n = 0;
    move || {
        n += 1;
        format!("tok{n}")
    }
}

fn started(seed: u64) -> (GameSession, Vec<Outgoing>) {
    let mut s = session(seed);
    let mut tokens = token_source();
    let (a, mut out) = s.join(None, &mut tokens).unwrap();
    let (b, more) = s.join(None, &mut tokens).unwrap();
    assert_eq!((a, b), (P1, P2));
    out.extend(more);
    (s, out)
}

fn host_intents(out: &[Outgoing]) -> Vec<Intent> {
    out.iter()
        .filter_map(|o| match &o.message.body {
            ServerBody::HostSay { intent, .. } => Some(*intent),
            _ => None,
        })
        .collect()
}

/// One question's worth of play: offer, partner agrees, offerer confirms.
fn play_question(s: &mut GameSession, letter: char, t: &mut u64) -> Vec<Outgoing> {
    let mut out = Vec::new();
    for (p, text) in [
        (P1, format!("I think it's {letter}")),
        (P2, "yes I agree".to_string()),
        (P1, "yes".to_string()),
    ] {
        *t += 2_000;
        out.extend(s.utterance(p, &text, Some(*t)));
    }
    out
}

#[test]
fn lobby_then_start_on_second_join() {
    let mut s = session(1);
    let mut tokens = token_source();
    let (p, out) = s.join(None, &mut tokens).unwrap();
    assert_eq!(p, P1);
    assert!(!s.started());
    assert_eq!(out.len(), 1);
    assert!(matches!(
        out[0].message.body,
        ServerBody::Joined { started: false, .. }
    ));
    let early = s.utterance(P1, "hello", Some(0));
    assert!(matches!(
        early[0].message.body,
        ServerBody::Error {
            code: ErrorCode::NotStarted,
            ..
        }
    ));
    let (p, out) = s.join(None, &mut tokens).unwrap();
    assert_eq!(p, P2);
    assert!(s.started());
    assert_eq!(
        host_intents(&out),
        [Intent::QuestionBrief, Intent::Question, Intent::Options]
    );
    assert!(matches!(
        out.last().unwrap().message.body,
        ServerBody::State { .. }
    ));
    assert!(matches!(
        s.join(None, &mut tokens),
        Err(quizhost_server::SessionError::SessionFull)
    ));
}

#[test]
fn agreed_final_answer_is_accepted_then_next_question() {
    let (mut s, _) = started(3);
    s.utterance(P1, "I think it's B", Some(1_000));
    let out = s.utterance(P2, "yes I agree", Some(2_000));
    assert_eq!(host_intents(&out), [Intent::ConfirmAgreement]);
    assert_eq!(
        s.engine().unwrap().state().phase,
        GamePhase::SeekConfirmation
    );
    assert_eq!(
        s.engine().unwrap().state().offered,
        Some(quizhost_core::OptionKey::B)
    );
    let out = s.utterance(P2, "we agree, B final answer", Some(3_000));
    let intents = host_intents(&out);
    assert_eq!(intents[0], Intent::AcceptAnswer);
    assert!(matches!(
        intents[1],
        Intent::SayCorrect | Intent::SayIncorrect
    ));
    assert_eq!(
        &intents[2..],
        [Intent::QuestionBrief, Intent::Question, Intent::Options]
    );
    match &out.last().unwrap().message.body {
        ServerBody::State { state } => {
            assert_eq!(state.question_index, 2);
            assert_eq!(state.phase, GamePhase::Deliberation);
        }
        other => panic!("expected state, got {other:?}"),
    }
}

#[test]
fn full_game_ends_and_later_utterances_are_rejected_to_sender() {
    let (mut s, mut all) = started(5);
    let mut t = 0;
    let letters = ['A', 'B', 'C', 'D'];
    for q in 0..10 {
        all.extend(play_question(&mut s, letters[q % 4], &mut t));
    }
    assert!(s.is_over());
    let over = all
        .iter()
        .filter(|o| matches!(o.message.body, ServerBody::GameOver { .. }))
        .count();
    assert_eq!(over, 1);
    let intents = host_intents(&all);
    let count = |i: Intent| intents.iter().filter(|x| **x == i).count();
    assert_eq!(count(Intent::Question), 10);
    assert_eq!(count(Intent::Options), 10);
    assert_eq!(count(Intent::SayCorrect) + count(Intent::SayIncorrect), 10);
    assert_eq!(*intents.last().unwrap(), Intent::EndOfGame);

    let reply = s.utterance(P2, "hello?", Some(t + 1));
    assert_eq!(reply.len(), 1);
    assert_eq!(reply[0].to, Recipient::Player(P2));
    assert!(matches!(
        reply[0].message.body,
        ServerBody::Error {
            code: ErrorCode::GameOverReject,
            ..
        }
    ));
}

#[test]
fn sequence_numbers_are_gap_free() {
    let (mut s, mut all) = started(8);
    let mut t = 0;
    for q in 0..4 {
        all.extend(play_question(&mut s, ['C', 'A', 'D', 'B'][q], &mut t));
        all.extend(s.utterance(P2, "hmm not sure", Some(t + 10)));
    }
    for (i, o) in all.iter().enumerate() {
        assert_eq!(o.message.seq, i as u64 + 1);
    }
    assert_eq!(s.last_seq(), all.len() as u64);
}

#[test]
fn same_seed_same_transcript() {
    let run = |seed| {
        let (mut s, _) = started(seed);
        let mut t = 0;
        for q in 0..10 {
            play_question(&mut s, ['B', 'D', 'A', 'C'][q % 4], &mut t);
        }
        s.host_transcript().to_vec()
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

#[test]
fn every_host_line_comes_from_the_template_bank() {
    let (mut s, _) = started(2);
    let mut t = 0;
    for q in 0..10 {
        play_question(&mut s, ['A', 'B', 'C', 'D'][q % 4], &mut t);
    }
    let bank = quizhost_core::nlg::TemplateBank::bundled();
    for line in s.host_transcript() {
        let n = bank.count(line.intent);
        let fits = (0..n).any(|i| {
            let tpl = bank.template(line.intent, i).unwrap();
            let fixed: Vec<&str> = tpl
                .split(['{', '}'])
                .step_by(2)
                .filter(|p| !p.is_empty())
                .collect();
            let mut rest = line.text.as_str();
            fixed.iter().all(|part| match rest.find(part) {
                Some(at) => {
                    rest = &rest[at + part.len()..];
                    true
                }
                None => false,
            })
        });
        assert!(fits, "{:?}: {}", line.intent, line.text);
    }
}

#[test]
fn crosstalk_duplicate_is_dropped_but_acknowledged() {
    let (mut s, _) = started(4);
    s.utterance(P1, "I think it's B", Some(1_000));
    let before = s.host_transcript().len();
    let out = s.utterance(P2, "I think it's B", Some(1_150));
    assert_eq!(out.len(), 1);
    assert!(matches!(out[0].message.body, ServerBody::State { .. }));
    assert_eq!(s.host_transcript().len(), before);
}

#[test]
fn idle_prompts_alternate_guidance_and_brief() {
    let (mut s, _) = started(6);
    assert!(s.tick(5_000).is_empty());
    let first = s.tick(20_000);
    assert_eq!(host_intents(&first), [Intent::OfferGenericGuidance]);
    assert!(s.tick(25_000).is_empty());
    let second = s.tick(36_000);
    assert_eq!(host_intents(&second), [Intent::QuestionBrief]);
}

#[test]
fn reconnect_with_token_keeps_the_slot() {
    let mut s = session(9);
    let mut tokens = token_source();
    let (_, out) = s.join(None, &mut tokens).unwrap();
    let token = match &out[0].message.body {
        ServerBody::Joined { token, .. } => token.clone(),
        _ => unreachable!(),
    };
    s.join(None, &mut tokens).unwrap();
    let (p, out) = s.join(Some(&token), &mut tokens).unwrap();
    assert_eq!(p, P1);
    assert!(out.iter().all(|o| o.to == Recipient::Player(P1)));
    assert!(matches!(
        out.last().unwrap().message.body,
        ServerBody::State { .. }
    ));
    assert!(matches!(
        s.join(Some("nope"), &mut tokens),
        Err(quizhost_server::SessionError::BadToken)
    ));
}

#[test]
fn snapshot_does_not_reveal_the_answer() {
    let (_, out) = started(1);
    let last = serde_json::to_value(&out.last().unwrap().message).unwrap();
    assert_eq!(last["type"], "state");
    assert!(last["state"].get("correct").is_none());
    assert_eq!(last["state"]["options"].as_object().unwrap().len(), 4);
}
