use std::sync::Arc;

use proptest::prelude::*;
use quizhost_core::game::{
    resolve_rejection, DialogueManager, GameConfig, GamePhase, GameState, HostAction,
    LockInStrategy,
};
use quizhost_core::intent::{decode_host_action, encode, Rejection, HOST_CORE};
use quizhost_core::nlu::{filter_crosstalk, CrosstalkFilterConfig};
use quizhost_core::policy::{Lstm, PolicyModel, RecurrentState, TrainConfig};
use quizhost_core::trivia::{load_fixture, Fixture};
use quizhost_core::{Channel, DialogueEvent, Intent, IntentRegistry, OptionKey, SpeakerId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const USER_INTENTS: [Intent; 7] = [
    Intent::ChitChat,
    Intent::OfferAnswer,
    Intent::OfferToAnswer,
    Intent::Agreement,
    Intent::AskAgreement,
    Intent::FinalAnswer,
    Intent::ConfirmFinalAnswer,
];

fn option() -> impl Strategy<Value = OptionKey> {
    (0usize..4).prop_map(|i| OptionKey::from_index(i).unwrap())
}

fn speaker() -> impl Strategy<Value = SpeakerId> {
    prop_oneof![Just(SpeakerId::User1), Just(SpeakerId::User2)]
}

fn user_event() -> impl Strategy<Value = DialogueEvent> {
    (
        speaker(),
        0usize..USER_INTENTS.len(),
        option(),
        prop_oneof![
            6 => Just(None),
            2 => option().prop_map(|k| Some(Rejection::Option(k))),
            1 => Just(Some(Rejection::Unspecified)),
        ],
    )
        .prop_map(|(s, i, k, rejection)| {
            let intent = USER_INTENTS[i];
            let answer = intent.takes_payload().then_some(k);
            let mut ev = DialogueEvent::new(s, intent, answer, "", 0).unwrap();
            ev.rejection = rejection;
            ev
        })
}

fn proposal() -> impl Strategy<Value = Option<Intent>> {
    prop_oneof![
        Just(None),
        Just(Some(Intent::NoResponse)),
        (0usize..4).prop_map(|i| Some(HOST_CORE[i])),
    ]
}

fn manager(strategy: LockInStrategy, cap: Option<u32>) -> DialogueManager {
    let qs = load_fixture(&Fixture::Bundled).unwrap();
    let cfg = GameConfig {
        strategy,
        deliberation_cap: cap,
        ..GameConfig::default()
    };
    DialogueManager::new(cfg, qs[..10].to_vec()).unwrap()
}

#[derive(Default)]
struct Tally {
    questions: usize,
    options: usize,
    results: usize,
}

impl Tally {
    fn count(&mut self, actions: &[HostAction]) {
        for a in actions {
            match a.intent {
                Intent::Question => self.questions += 1,
                Intent::Options => self.options += 1,
                Intent::SayCorrect | Intent::SayIncorrect => self.results += 1,
                _ => {}
            }
        }
    }
}

/// Steps a host question through the manager, as the engine does.
fn feed_host(dm: &DialogueManager, st: &mut GameState, actions: &[HostAction], tally: &mut Tally) {
    for a in actions {
        if a.intent == Intent::Question {
            let ev = DialogueEvent::host(Intent::Question, 0);
            let step = dm.step(st, &ev, Some(Intent::Options)).unwrap();
            assert!(st.phase.can_transition(step.state.phase));
            *st = step.state;
            tally.count(&step.actions);
        }
    }
}

fn check_step(
    prev: &GameState,
    ev: &DialogueEvent,
    next: &GameState,
    actions: &[HostAction],
    strategy: LockInStrategy,
) {
    assert!(
        prev.phase.can_transition(next.phase),
        "{:?} -> {:?}",
        prev.phase,
        next.phase
    );
    next.check().unwrap();
    for a in actions {
        if a.intent == Intent::AcceptAnswer {
            let offered = prev
                .offered
                .expect("accept-answer without an offered answer");
            assert_eq!(a.answer, Some(offered));
            assert_eq!(prev.phase, GamePhase::SeekConfirmation);
            if let Some(Rejection::Option(r)) = ev.rejection {
                if strategy == LockInStrategy::AllRuledOut {
                    let mut rejected = prev.rejected.clone();
                    rejected.insert(r);
                    assert!(OptionKey::ALL
                        .iter()
                        .filter(|k| **k != offered)
                        .all(|k| rejected.contains(k)));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    /// Random event streams with random (often illegal) policy proposals.
    #[test]
    fn state_machine_is_safe(
        events in prop::collection::vec((user_event(), proposal()), 0..160),
        all_ruled_out in any::<bool>(),
        cap in prop_oneof![Just(None), (3u32..10).prop_map(Some)],
    ) {
        let strategy = if all_ruled_out { LockInStrategy::AllRuledOut } else { LockInStrategy::LastOfferedMatch };
        let dm = manager(strategy, cap);
        let mut tally = Tally::default();
        let (mut st, opening) = dm.start();
        tally.count(&opening);
        feed_host(&dm, &mut st, &opening, &mut tally);
        for (ev, prop) in &events {
            if st.phase == GamePhase::GameOver {
                prop_assert!(dm.step(&st, ev, *prop).is_err());
                break;
            }
            let step = dm.step(&st, ev, *prop).unwrap();
            prop_assert_eq!(&step, &dm.step(&st, ev, *prop).unwrap());
            check_step(&st, ev, &step.state, &step.actions, strategy);
            tally.count(&step.actions);
            let prev = st.clone();
            st = step.state;
            if st.phase == GamePhase::AnswerLocked {
                let (next, actions) = dm.resolve_answer(&st).unwrap();
                prop_assert!(st.phase.can_transition(next.phase));
                st = next;
                tally.count(&actions);
                feed_host(&dm, &mut st, &actions, &mut tally);
            }
            prop_assert!(st.question_index >= prev.question_index);
        }
        if st.phase == GamePhase::GameOver {
            prop_assert_eq!(tally.questions, 10);
            prop_assert_eq!(tally.options, 10);
            prop_assert_eq!(tally.results, 10);
        } else {
            prop_assert_eq!(tally.questions, st.question_index);
            prop_assert_eq!(tally.results, st.question_index - 1);
        }
    }

    /// Under all-ruled-out, a rejection during confirmation locks in exactly
    /// when the three other options have all been rejected.
    #[test]
    fn all_ruled_out_iff(offered in option(), rejections in prop::collection::vec(option(), 1..8)) {
        let dm = manager(LockInStrategy::AllRuledOut, None);
        let (mut st, _) = dm.start();
        st.phase = GamePhase::SeekConfirmation;
        st.offered = Some(offered);
        let mut seen = std::collections::BTreeSet::new();
        for r in rejections {
            let (next, action) = resolve_rejection(&st, r, LockInStrategy::AllRuledOut).unwrap();
            if r == offered {
                prop_assert_eq!(action.intent, Intent::ReturnToQuestion);
                prop_assert_eq!(next.phase, GamePhase::Deliberation);
                break;
            }
            seen.insert(r);
            let all = seen.len() == 3;
            prop_assert_eq!(action.intent == Intent::AcceptAnswer, all);
            if all {
                break;
            }
            st = next;
        }
    }

    #[test]
    fn encoding_is_injective_and_round_trips(n in 1usize..=14) {
        let names: Vec<&str> = Intent::ALL.iter().filter(|i| **i != Intent::NoResponse).take(n).map(|i| i.name()).collect();
        let reg = IntentRegistry::new(names.iter().copied()).unwrap();
        prop_assert_eq!(reg.input_dim(), n + 3);
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            let intent: Intent = name.parse().unwrap();
            for s in SpeakerId::ALL {
                let v = encode(intent, s, &reg).unwrap();
                prop_assert_eq!(v.len(), n + 3);
                let bits: Vec<u64> = v.0.iter().map(|x| x.to_bits()).collect();
                prop_assert!(seen.insert(bits));
                let argmax = v.0[..n].iter().position(|&x| x == 1.0).unwrap();
                prop_assert_eq!(reg.name_at(argmax), Some(*name));
            }
        }
    }

    #[test]
    fn decode_covers_every_output(i in 0usize..8) {
        match decode_host_action(i) {
            Ok(intent) if i < 4 => prop_assert_eq!(intent, HOST_CORE[i]),
            Ok(intent) => { prop_assert_eq!(i, 4); prop_assert_eq!(intent, Intent::NoResponse) }
            Err(_) => prop_assert!(i > 4),
        }
    }

    #[test]
    fn forward_is_shape_consistent(n in 1usize..30, u in 1usize..6, hidden in 1usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Lstm::init(n + u, hidden, &mut rng);
        let mut st = RecurrentState::zeros(hidden);
        for t in 0..4 {
            let mut x = vec![0.0; n + u];
            x[t % n] = 1.0;
            x[n + t % u] = 1.0;
            let (out, next) = net.step(&st, &x);
            prop_assert!((out.actions.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(out.actions.iter().chain([&out.no_response]).all(|v| v.is_finite()));
            prop_assert_eq!(next.hidden.len(), hidden);
            st = next;
        }
    }

    #[test]
    fn crosstalk_filter_is_idempotent_and_conservative(
        raw in prop::collection::vec((0u8..3, 0usize..5, 0u64..900), 0..40),
    ) {
        let texts = ["yes", "yes!", "I think it's Paris", "hmm", "no wait"];
        let mut t = 0;
        let events: Vec<DialogueEvent> = raw
            .iter()
            .map(|&(ch, ti, dt)| {
                t += dt;
                let mut ev = match ch {
                    0 => DialogueEvent::new(SpeakerId::User1, Intent::ChitChat, None, texts[ti], t).unwrap(),
                    1 => DialogueEvent::new(SpeakerId::User2, Intent::ChitChat, None, texts[ti], t).unwrap(),
                    _ => DialogueEvent::host(Intent::OfferGenericGuidance, t),
                };
                if ch == 2 {
                    ev.text = texts[ti].to_string();
                }
                ev
            })
            .collect();
        let cfg = CrosstalkFilterConfig::default();
        let once = filter_crosstalk(&events, cfg);
        prop_assert_eq!(&filter_crosstalk(&once, cfg), &once);
        let host_in = events.iter().filter(|e| e.channel == Channel::HostChannel).count();
        let host_out = once.iter().filter(|e| e.channel == Channel::HostChannel).count();
        prop_assert_eq!(host_in, host_out);
        for ch in [Channel::Channel1, Channel::Channel2] {
            let only: Vec<_> = events.iter().filter(|e| e.channel == ch).cloned().collect();
            prop_assert_eq!(filter_crosstalk(&only, cfg), only);
        }
    }
}

#[test]
fn every_complete_game_has_ten_triples() {
    // A driver that always gets to the end: offer, partner agrees, confirm.
    let dm = manager(LockInStrategy::AllRuledOut, None);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    use rand::Rng;
    for _ in 0..50 {
        let mut tally = Tally::default();
        let (mut st, opening) = dm.start();
        tally.count(&opening);
        feed_host(&dm, &mut st, &opening, &mut tally);
        while st.phase != GamePhase::GameOver {
            let k = OptionKey::from_index(rng.random_range(0..4)).unwrap();
            let evs = [
                DialogueEvent::new(SpeakerId::User1, Intent::OfferAnswer, Some(k), "", 0).unwrap(),
                DialogueEvent::new(SpeakerId::User2, Intent::Agreement, None, "", 0).unwrap(),
                DialogueEvent::new(SpeakerId::User1, Intent::Agreement, None, "", 0).unwrap(),
            ];
            for ev in &evs {
                let step = dm.step(&st, ev, None).unwrap();
                tally.count(&step.actions);
                st = step.state;
            }
            assert_eq!(st.phase, GamePhase::AnswerLocked);
            let (next, actions) = dm.resolve_answer(&st).unwrap();
            st = next;
            tally.count(&actions);
            feed_host(&dm, &mut st, &actions, &mut tally);
        }
        assert_eq!(
            (tally.questions, tally.options, tally.results),
            (10, 10, 10)
        );
    }
}

#[test]
fn memory_reset_isolates_questions() {
    use quizhost_core::engine::Engine;
    use quizhost_core::nlu::Classifier;

    let pool = load_fixture(&Fixture::Bundled).unwrap();
    let model = Arc::new(PolicyModel::new(
        IntentRegistry::standard(),
        TrainConfig {
            hidden: 16,
            seed: 99,
            ..TrainConfig::default()
        },
    ));
    let classifier = Arc::new(Classifier::default());
    let scripts: Vec<Vec<(SpeakerId, String)>> = (0..4)
        .map(|i| {
            let q = &pool[i];
            let label = q.option(q.correct).to_string();
            let mut s = vec![(SpeakerId::User1, "hmm".to_string()); i];
            s.push((SpeakerId::User2, format!("maybe {label}")));
            s.push((SpeakerId::User2, "what do you think?".into()));
            s.push((SpeakerId::User1, "yes".into()));
            s.push((SpeakerId::User2, "yes".into()));
            s
        })
        .collect();
    let run = |order: &[usize]| {
        let qs = order.iter().map(|&i| pool[i].clone()).collect();
        let dm = DialogueManager::new(GameConfig::default(), qs).unwrap();
        let (mut engine, _) =
            Engine::start(dm, classifier.clone(), Some((model.clone(), 0.5))).unwrap();
        let mut last = Vec::new();
        for &i in order {
            last.clear();
            for (s, text) in &scripts[i] {
                let turn = engine.handle_utterance(*s, text, 0).unwrap();
                let out = turn.scores.unwrap();
                last.push(
                    out.actions
                        .iter()
                        .chain([&out.no_response])
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>(),
                );
            }
        }
        last
    };
    let reference = run(&[3]);
    assert_eq!(run(&[0, 1, 2, 3]), reference);
    assert_eq!(run(&[2, 0, 1, 3]), reference);
    assert_eq!(run(&[1, 3]), reference);
}

#[test]
fn artifact_forward_is_bit_identical_after_reload() {
    let model = PolicyModel::new(
        IntentRegistry::standard(),
        TrainConfig {
            hidden: 12,
            seed: 5,
            ..TrainConfig::default()
        },
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let back = PolicyModel::load(&path).unwrap();
    let reg = IntentRegistry::standard();
    let (mut a, mut b) = (model.initial_state(), back.initial_state());
    for (i, s) in [(7, 2), (8, 2), (1, 0), (3, 1), (9, 2)] {
        let step = encode(Intent::ALL[i], SpeakerId::ALL[s], &reg).unwrap();
        let (oa, na) = model.forward(&a, &step).unwrap();
        let (ob, nb) = back.forward(&b, &step).unwrap();
        assert_eq!(oa, ob);
        assert_eq!(na, nb);
        a = na;
        b = nb;
    }
}
