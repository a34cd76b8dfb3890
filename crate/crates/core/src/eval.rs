//! Agreement-detection evaluation: replays scripted dialogues through the
//! full pipeline, optionally injecting microphone crosstalk, and scores each
//! lock-in decision against ground truth.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::ops::Add;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineError};
use crate::error::EvalError;
use crate::game::{DialogueManager, GameConfig, LockInStrategy};
use crate::intent::{Channel, OptionKey, SpeakerId};
use crate::nlu::{Classifier, CrosstalkFilter, CrosstalkFilterConfig};
use crate::policy::{PolicyModel, DEFAULT_THRESHOLD};
use crate::trivia::{load_fixture, Fixture, QuestionRecord};

pub const DEFAULT_CROSSTALK_DELAY_MS: u64 = 150;
pub const DEFAULT_CROSSTALK_PROBABILITY: f64 = 0.3;
/// The scripted suite shipped with the crate.
pub const BUNDLED_SCRIPTS_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/scripts");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptUtterance {
    pub question: usize,
    pub channel: Channel,
    pub text: String,
    pub t_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthKind {
    /// The players genuinely commit to `answer` by utterance `at`.
    LockIn,
    /// No lock-in should have happened up to and including utterance `at`.
    Withhold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthAnnotation {
    pub question: usize,
    pub kind: TruthKind,
    /// Index into the script's utterance list.
    pub at: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<OptionKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedDialogue {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Overrides the run's lock-in strategy for this script.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<LockInStrategy>,
    /// Fixture question ids, in play order.
    pub questions: Vec<String>,
    pub utterances: Vec<ScriptUtterance>,
    pub truth: Vec<TruthAnnotation>,
}

impl ScriptedDialogue {
    pub fn validate(&self) -> Result<(), EvalError> {
        let err = |message: String| EvalError::Script {
            name: self.name.clone(),
            message,
        };
        let nq = self.questions.len();
        if nq == 0 || nq > crate::game::ROUND_LENGTH {
            return Err(err(format!("needs 1..=10 questions, has {nq}")));
        }
        let mut last = (0, 0);
        for (i, u) in self.utterances.iter().enumerate() {
            if u.channel == Channel::HostChannel {
                return Err(err(format!("utterance {i} is on the host channel")));
            }
            if u.question == 0 || u.question > nq {
                return Err(err(format!("utterance {i} names question {}", u.question)));
            }
            if (u.question, u.t_ms) < last {
                return Err(err(format!("utterance {i} is out of order")));
            }
            last = (u.question, u.t_ms);
        }
        for (i, t) in self.truth.iter().enumerate() {
            let u = self
                .utterances
                .get(t.at)
                .ok_or_else(|| err(format!("annotation {i} points past the script")))?;
            if u.question != t.question {
                return Err(err(format!(
                    "annotation {i} is for question {} but utterance {} is not",
                    t.question, t.at
                )));
            }
            if (t.kind == TruthKind::LockIn) != t.answer.is_some() {
                return Err(err(format!(
                    "annotation {i}: lock-ins need an answer, withholds must not have one"
                )));
            }
        }
        Ok(())
    }

    pub fn resolve_questions(
        &self,
        pool: &[QuestionRecord],
    ) -> Result<Vec<QuestionRecord>, EvalError> {
        self.questions
            .iter()
            .map(|id| {
                pool.iter()
                    .find(|q| &q.id == id)
                    .cloned()
                    .ok_or_else(|| EvalError::Script {
                        name: self.name.clone(),
                        message: format!("unknown question id `{id}`"),
                    })
            })
            .collect()
    }
}

pub fn load_scripts(dir: &Path) -> Result<Vec<ScriptedDialogue>, EvalError> {
    let io = |source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|source| EvalError::Io {
                path: p.clone(),
                source,
            })?;
            let s: ScriptedDialogue =
                serde_json::from_str(&text).map_err(|e| EvalError::Script {
                    name: p.display().to_string(),
                    message: e.to_string(),
                })?;
            s.validate()?;
            Ok(s)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fp_crosstalk: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Add for ConfusionMatrix {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fp_crosstalk: self.fp_crosstalk + o.fp_crosstalk,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fp_crosstalk + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy, precision, recall and F1. With `exclude_crosstalk` the
/// crosstalk column is left out entirely; otherwise it counts as false
/// positives. A ratio with an empty denominator is reported as 0.
pub fn metrics(m: &ConfusionMatrix, exclude_crosstalk: bool) -> Result<Metrics, EvalError> {
    let fp = if exclude_crosstalk {
        m.fp
    } else {
        m.fp + m.fp_crosstalk
    };
    let (tp, tn, fn_) = (m.tp as f64, m.tn as f64, m.fn_ as f64);
    let fp = fp as f64;
    let all = tp + tn + fp + fn_;
    if all == 0.0 {
        return Err(EvalError::EmptyMatrix);
    }
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    Ok(Metrics {
        accuracy: (tp + tn) / all,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Tp,
    Fp,
    FpCrosstalk,
    Fn,
    Tn,
}

/// One scored decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub question: usize,
    pub label: Label,
    /// Script utterance index of the lock-in or annotation.
    pub at: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<OptionKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptResult {
    pub name: String,
    pub matrix: ConfusionMatrix,
    pub decisions: Vec<Decision>,
    pub injected: usize,
    pub filtered: usize,
    pub lock_ins: usize,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub crosstalk: bool,
    pub dedup: bool,
    pub crosstalk_delay_ms: u64,
    pub crosstalk_probability: f64,
    pub filter: CrosstalkFilterConfig,
    pub model: Option<Arc<PolicyModel>>,
    pub threshold: f64,
    pub strategy: LockInStrategy,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            crosstalk: false,
            dedup: true,
            crosstalk_delay_ms: DEFAULT_CROSSTALK_DELAY_MS,
            crosstalk_probability: DEFAULT_CROSSTALK_PROBABILITY,
            filter: CrosstalkFilterConfig::default(),
            model: None,
            threshold: DEFAULT_THRESHOLD,
            strategy: LockInStrategy::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct StreamItem {
    index: usize,
    question: usize,
    channel: Channel,
    text: String,
    t_ms: u64,
    injected: bool,
}

fn partner(ch: Channel) -> Channel {
    match ch {
        Channel::Channel1 => Channel::Channel2,
        Channel::Channel2 => Channel::Channel1,
        Channel::HostChannel => Channel::HostChannel,
    }
}

/// Script utterances plus any injected cross-channel copies, in arrival order.
fn build_stream(
    script: &ScriptedDialogue,
    cfg: &EvalConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<StreamItem> {
    let mut items = Vec::with_capacity(script.utterances.len() * 2);
    for (index, u) in script.utterances.iter().enumerate() {
        items.push(StreamItem {
            index,
            question: u.question,
            channel: u.channel,
            text: u.text.clone(),
            t_ms: u.t_ms,
            injected: false,
        });
        if cfg.crosstalk && rng.random_bool(cfg.crosstalk_probability) {
            items.push(StreamItem {
                index,
                question: u.question,
                channel: partner(u.channel),
                text: u.text.clone(),
                t_ms: u.t_ms + cfg.crosstalk_delay_ms,
                injected: true,
            });
        }
    }
    items.sort_by_key(|i| (i.question, i.t_ms));
    items
}

fn engine_err(e: EngineError) -> EvalError {
    match e {
        EngineError::Game(g) => EvalError::Game(g),
        EngineError::Policy(p) => EvalError::Policy(p),
    }
}

struct LockIn {
    question: usize,
    at: usize,
    answer: OptionKey,
    tainted: bool,
}

pub fn run_script(
    script: &ScriptedDialogue,
    pool: &[QuestionRecord],
    classifier: &Arc<Classifier>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<ScriptResult, EvalError> {
    script.validate()?;
    let model = cfg.model.clone().ok_or(EvalError::UntrainedModel)?;
    let questions = script.resolve_questions(pool)?;
    let game = GameConfig {
        strategy: script.strategy.unwrap_or(cfg.strategy),
        ..GameConfig::default()
    };
    let dm = DialogueManager::new(game, questions)?;
    let (mut engine, _) =
        Engine::start(dm, classifier.clone(), Some((model, cfg.threshold))).map_err(engine_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = build_stream(script, cfg, &mut rng);
    let mut filter = CrosstalkFilter::new(cfg.filter);
    let mut tainted: HashMap<usize, bool> = HashMap::new();
    let mut lock_ins = Vec::new();
    let (mut injected, mut filtered) = (0, 0);

    for item in &stream {
        if item.injected {
            injected += 1;
        }
        if engine.is_over() {
            break;
        }
        while engine.state().question_index < item.question && !engine.is_over() {
            engine.expire().map_err(engine_err)?;
        }
        if engine.is_over() || engine.state().question_index > item.question {
            continue;
        }
        if cfg.dedup && !filter.admit(item.channel, &item.text, item.t_ms) {
            filtered += 1;
            continue;
        }
        if item.injected {
            tainted.insert(item.question, true);
        }
        let speaker: SpeakerId = item.channel.speaker();
        let turn = engine
            .handle_utterance(speaker, &item.text, item.t_ms)
            .map_err(engine_err)?;
        if let Some((q, answer)) = turn.locked {
            lock_ins.push(LockIn {
                question: q,
                at: item.index,
                answer,
                tainted: tainted.get(&q).copied().unwrap_or(false),
            });
        }
    }

    let (matrix, decisions) = score(&script.truth, &lock_ins);
    Ok(ScriptResult {
        name: script.name.clone(),
        matrix,
        decisions,
        injected,
        filtered,
        lock_ins: lock_ins.len(),
    })
}

/// One-to-one, earliest-first matching of system lock-ins to annotations.
fn score(truth: &[TruthAnnotation], lock_ins: &[LockIn]) -> (ConfusionMatrix, Vec<Decision>) {
    let mut m = ConfusionMatrix::default();
    let mut decisions = Vec::new();
    let mut positives: Vec<(usize, &TruthAnnotation)> = truth
        .iter()
        .enumerate()
        .filter(|(_, t)| t.kind == TruthKind::LockIn)
        .collect();
    positives.sort_by_key(|(i, t)| (t.question, t.at, *i));
    let mut consumed = vec![false; positives.len()];

    for l in lock_ins {
        let hit = positives
            .iter()
            .enumerate()
            .find(|(j, (_, t))| {
                !consumed[*j]
                    && t.question == l.question
                    && t.at <= l.at
                    && t.answer == Some(l.answer)
            })
            .map(|(j, _)| j);
        let label = match hit {
            Some(j) => {
                consumed[j] = true;
                m.tp += 1;
                Label::Tp
            }
            None if l.tainted => {
                m.fp_crosstalk += 1;
                Label::FpCrosstalk
            }
            None => {
                m.fp += 1;
                Label::Fp
            }
        };
        decisions.push(Decision {
            question: l.question,
            label,
            at: l.at,
            answer: Some(l.answer),
        });
    }
    for (j, (_, t)) in positives.iter().enumerate() {
        if !consumed[j] {
            m.fn_ += 1;
            decisions.push(Decision {
                question: t.question,
                label: Label::Fn,
                at: t.at,
                answer: t.answer,
            });
        }
    }
    for t in truth.iter().filter(|t| t.kind == TruthKind::Withhold) {
        let violated = lock_ins
            .iter()
            .any(|l| l.question == t.question && l.at <= t.at);
        if !violated {
            m.tn += 1;
            decisions.push(Decision {
                question: t.question,
                label: Label::Tn,
                at: t.at,
                answer: None,
            });
        }
    }
    (m, decisions)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub crosstalk: bool,
    pub dedup: bool,
    pub seed: u64,
    pub strategy: LockInStrategy,
    pub scripts: Vec<ScriptResult>,
    pub matrix: ConfusionMatrix,
    pub metrics: Option<Metrics>,
    pub metrics_excluding_crosstalk: Option<Metrics>,
}

/// Runs every script in its own session and sums the matrices.
pub fn run_scripts(
    scripts: &[ScriptedDialogue],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if cfg.model.is_none() {
        return Err(EvalError::UntrainedModel);
    }
    let pool = load_fixture(&Fixture::Bundled).map_err(|e| EvalError::Script {
        name: "fixture".into(),
        message: e.to_string(),
    })?;
    let classifier = Arc::new(Classifier::default());
    let mut results = Vec::with_capacity(scripts.len());
    for (i, s) in scripts.iter().enumerate() {
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        results.push(run_script(s, &pool, &classifier, cfg, seed)?);
    }
    let matrix = results
        .iter()
        .fold(ConfusionMatrix::default(), |acc, r| acc + r.matrix);
    Ok(EvalReport {
        crosstalk: cfg.crosstalk,
        dedup: cfg.dedup,
        seed: cfg.seed,
        strategy: cfg.strategy,
        scripts: results,
        matrix,
        metrics: metrics(&matrix, false).ok(),
        metrics_excluding_crosstalk: metrics(&matrix, true).ok(),
    })
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "crosstalk={} dedup={} strategy={} seed={}",
            self.crosstalk, self.dedup, self.strategy, self.seed
        );
        let _ = writeln!(
            s,
            "{:<36} {:>4} {:>4} {:>6} {:>4} {:>4}",
            "script", "TP", "FP", "FP-xt", "FN", "TN"
        );
        for r in &self.scripts {
            let m = r.matrix;
            let _ = writeln!(
                s,
                "{:<36} {:>4} {:>4} {:>6} {:>4} {:>4}",
                r.name, m.tp, m.fp, m.fp_crosstalk, m.fn_, m.tn
            );
        }
        let m = self.matrix;
        let _ = writeln!(
            s,
            "{:<36} {:>4} {:>4} {:>6} {:>4} {:>4}",
            "TOTAL", m.tp, m.fp, m.fp_crosstalk, m.fn_, m.tn
        );
        for (label, mm) in [
            ("all", self.metrics),
            ("excl. crosstalk", self.metrics_excluding_crosstalk),
        ] {
            if let Some(x) = mm {
                let _ = writeln!(
                    s,
                    "{label:<16} accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}",
                    x.accuracy, x.precision, x.recall, x.f1
                );
            }
        }
        s
    }

    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for d in self.scripts.iter().flat_map(|r| &r.decisions) {
            *out.entry(format!("{:?}", d.label)).or_insert(0) += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(tp: u64, fp: u64, fp_crosstalk: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix {
            tp,
            fp,
            fp_crosstalk,
            fn_,
            tn,
        }
    }

    #[test]
    fn worked_example() {
        let m = metrics(&matrix(7, 1, 0, 1, 0), true).unwrap();
        assert_eq!(m.precision, 0.875);
        assert_eq!(m.recall, 0.875);
        assert_eq!(m.f1, 0.875);
        assert_eq!(m.accuracy, 7.0 / 9.0);
    }

    #[test]
    fn perfect_detector() {
        let m = metrics(&matrix(5, 0, 0, 0, 0), false).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn crosstalk_folding() {
        let m = matrix(4, 1, 3, 1, 2);
        let incl = metrics(&m, false).unwrap();
        assert_eq!(incl.precision, 4.0 / 8.0);
        let excl = metrics(&m, true).unwrap();
        let zeroed = metrics(&matrix(4, 1, 0, 1, 2), false).unwrap();
        assert_eq!(excl, zeroed);
    }

    #[test]
    fn empty_matrix() {
        assert!(matches!(
            metrics(&ConfusionMatrix::default(), false),
            Err(EvalError::EmptyMatrix)
        ));
        assert!(matches!(
            metrics(&matrix(0, 0, 3, 0, 0), true),
            Err(EvalError::EmptyMatrix)
        ));
    }

    #[test]
    fn earliest_first_one_to_one_matching() {
        let truth = vec![
            TruthAnnotation {
                question: 1,
                kind: TruthKind::LockIn,
                at: 3,
                answer: Some(OptionKey::B),
            },
            TruthAnnotation {
                question: 1,
                kind: TruthKind::Withhold,
                at: 1,
                answer: None,
            },
            TruthAnnotation {
                question: 2,
                kind: TruthKind::LockIn,
                at: 7,
                answer: Some(OptionKey::C),
            },
        ];
        let locks = vec![
            LockIn {
                question: 1,
                at: 4,
                answer: OptionKey::B,
                tainted: false,
            },
            LockIn {
                question: 2,
                at: 6,
                answer: OptionKey::C,
                tainted: true,
            },
        ];
        let (m, d) = score(&truth, &locks);
        assert_eq!(m, matrix(1, 0, 1, 1, 1));
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn untrained_model_is_rejected() {
        assert!(matches!(
            run_scripts(&[], &EvalConfig::default()),
            Err(EvalError::UntrainedModel)
        ));
    }

    #[test]
    fn empty_script_list_gives_zero_matrix() {
        let cfg = EvalConfig {
            model: Some(Arc::new(PolicyModel::zeros(
                crate::IntentRegistry::standard(),
                2,
            ))),
            ..EvalConfig::default()
        };
        let r = run_scripts(&[], &cfg).unwrap();
        assert_eq!(r.matrix, ConfusionMatrix::default());
        assert!(r.metrics.is_none());
    }
}
