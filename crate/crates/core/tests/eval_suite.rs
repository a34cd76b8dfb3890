use std::path::Path;
use std::sync::Arc;

use quizhost_core::eval::{
    load_scripts, metrics, run_scripts, ConfusionMatrix, EvalConfig, Label, BUNDLED_SCRIPTS_DIR,
};
use quizhost_core::policy::{PolicyModel, TrainConfig};
use quizhost_core::{Intent, IntentRegistry};

fn config(crosstalk: bool, dedup: bool, seed: u64) -> EvalConfig {
    let model = PolicyModel::new(
        IntentRegistry::standard(),
        TrainConfig {
            hidden: 8,
            ..TrainConfig::default()
        },
    );
    EvalConfig {
        crosstalk,
        dedup,
        seed,
        model: Some(Arc::new(model)),
        ..EvalConfig::default()
    }
}

#[test]
fn suite_is_large_and_covers_user_intents() {
    let scripts = load_scripts(Path::new(BUNDLED_SCRIPTS_DIR)).unwrap();
    assert!(scripts.len() >= 20);
    let classifier = quizhost_core::nlu::Classifier::default();
    let pool =
        quizhost_core::trivia::load_fixture(&quizhost_core::trivia::Fixture::Bundled).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for s in &scripts {
        let qs = s.resolve_questions(&pool).unwrap();
        for u in &s.utterances {
            let ctx = quizhost_core::nlu::NluContext {
                question: qs[u.question - 1].clone(),
                offered: None,
                phase: quizhost_core::GamePhase::Deliberation,
            };
            seen.insert(
                classifier
                    .classify(&u.text, u.channel.speaker(), 0, &ctx)
                    .intent,
            );
        }
    }
    for i in Intent::ALL.iter().filter(|i| i.is_user()) {
        assert!(seen.contains(i), "no script utterance is understood as {i}");
    }
    let strategies: std::collections::BTreeSet<_> = scripts
        .iter()
        .filter_map(|s| s.strategy)
        .map(|s| s.to_string())
        .collect();
    assert_eq!(strategies.len(), 2);
}

#[test]
fn crosstalk_off_is_perfect() {
    let scripts = load_scripts(Path::new(BUNDLED_SCRIPTS_DIR)).unwrap();
    let r = run_scripts(&scripts, &config(false, true, 1)).unwrap();
    print!("{}", r.table());
    assert_eq!(r.matrix.fp, 0);
    assert_eq!(r.matrix.fp_crosstalk, 0);
    assert_eq!(r.matrix.fn_, 0);
    assert_eq!(metrics(&r.matrix, false).unwrap().accuracy, 1.0);
    // Dedup is a no-op without crosstalk.
    let nodedup = run_scripts(&scripts, &config(false, false, 1)).unwrap();
    assert_eq!(nodedup.matrix, r.matrix);
}

#[test]
fn crosstalk_without_dedup_causes_false_lock_ins() {
    let scripts = load_scripts(Path::new(BUNDLED_SCRIPTS_DIR)).unwrap();
    let baseline = run_scripts(&scripts, &config(false, true, 0))
        .unwrap()
        .matrix;
    for seed in 0..8 {
        let bad = run_scripts(&scripts, &config(true, false, seed)).unwrap();
        if seed == 0 {
            print!("{}", bad.table());
        }
        assert!(
            bad.matrix.fp_crosstalk >= 1,
            "seed {seed}: {:?}",
            bad.matrix
        );
        let good = run_scripts(&scripts, &config(true, true, seed)).unwrap();
        assert_eq!(good.matrix.fp_crosstalk, 0);
        assert_eq!(good.matrix, baseline, "seed {seed}");
        assert_eq!(
            metrics(&good.matrix, false).unwrap(),
            metrics(&baseline, false).unwrap()
        );
    }
}

#[test]
fn matrices_are_conserved_per_script() {
    let scripts = load_scripts(Path::new(BUNDLED_SCRIPTS_DIR)).unwrap();
    for (crosstalk, dedup) in [(false, true), (true, false), (true, true)] {
        let r = run_scripts(&scripts, &config(crosstalk, dedup, 3)).unwrap();
        for (s, res) in scripts.iter().zip(&r.scripts) {
            let positives = s.truth.iter().filter(|t| t.answer.is_some()).count() as u64;
            let withholds = s.truth.len() as u64 - positives;
            let m = res.matrix;
            assert_eq!(m.tp + m.fn_, positives, "{}", s.name);
            assert_eq!(
                m.tp + m.fp + m.fp_crosstalk,
                res.lock_ins as u64,
                "{}",
                s.name
            );
            assert!(m.tn <= withholds);
            let labelled = res
                .decisions
                .iter()
                .filter(|d| d.label == Label::Tn)
                .count() as u64;
            assert_eq!(labelled, m.tn);
        }
        let sum = r
            .scripts
            .iter()
            .fold(ConfusionMatrix::default(), |a, s| a + s.matrix);
        assert_eq!(sum, r.matrix);
    }
}

#[test]
fn runs_are_deterministic() {
    let scripts = load_scripts(Path::new(BUNDLED_SCRIPTS_DIR)).unwrap();
    let a = run_scripts(&scripts, &config(true, false, 9)).unwrap();
    let b = run_scripts(&scripts, &config(true, false, 9)).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}
