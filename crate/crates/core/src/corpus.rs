//! Annotated dialogue corpus: JSONL loading, statistics, conversion into
//! policy training sequences, and a synthetic generator.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::CorpusError;
use crate::game::{DialogueManager, GameConfig, GamePhase, ROUND_LENGTH};
use crate::intent::{encode, DialogueEvent, Intent, IntentRegistry, OptionKey, SpeakerId};
use crate::nlu::Classifier;
use crate::policy::TrainingSequence;
use crate::trivia::{fetch_questions, QuestionRecord, QuestionSource};

/// One annotated turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRow {
    pub episode: String,
    pub question: usize,
    pub speaker: SpeakerId,
    pub intent: Intent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<OptionKey>,
    #[serde(default)]
    pub text: String,
}

#[derive(Deserialize)]
struct RawRow {
    episode: String,
    question: usize,
    speaker: String,
    intent: String,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    text: String,
}

/// All turns of one question within one episode, starting at the host
/// reading the question.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub episode: String,
    pub question: usize,
    pub rows: Vec<CorpusRow>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<Sequence>,
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    let mut sequences: Vec<Sequence> = Vec::new();
    let mut accepts = 0;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line, line_no)?;
        let same = sequences
            .last()
            .is_some_and(|s| s.episode == row.episode && s.question == row.question);
        if !same {
            if row.speaker != SpeakerId::Host || row.intent != Intent::Question {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: "a question sequence must open with the host reading the question"
                        .into(),
                });
            }
            accepts = 0;
            sequences.push(Sequence {
                episode: row.episode.clone(),
                question: row.question,
                rows: Vec::new(),
            });
        }
        if row.intent == Intent::AcceptAnswer {
            accepts += 1;
            if accepts > 1 {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: "more than one accept-answer in a question".into(),
                });
            }
        }
        sequences.last_mut().expect("pushed above").rows.push(row);
    }
    if sequences.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(Corpus { sequences })
}

fn parse_row(line: &str, line_no: usize) -> Result<CorpusRow, CorpusError> {
    let parse_err = |message: String| CorpusError::Parse {
        line: line_no,
        message,
    };
    let raw: RawRow = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let intent: Intent = raw.intent.parse().map_err(|_| CorpusError::UnknownIntent {
        line: line_no,
        intent: raw.intent.clone(),
    })?;
    if intent == Intent::NoResponse {
        return Err(parse_err("no-response is not an annotation".into()));
    }
    let speaker: SpeakerId = raw
        .speaker
        .parse()
        .map_err(|e: crate::SchemaError| parse_err(e.to_string()))?;
    let answer = match raw.answer {
        Some(a) => Some(
            a.parse::<OptionKey>()
                .map_err(|e| parse_err(e.to_string()))?,
        ),
        None => None,
    };
    if raw.question == 0 {
        return Err(parse_err("question numbers start at 1".into()));
    }
    if speaker.is_user() {
        DialogueEvent::new(speaker, intent, answer, "", 0).map_err(|e| parse_err(e.to_string()))?;
    } else if !intent.is_host() {
        return Err(parse_err(format!("host cannot produce `{intent}`")));
    }
    Ok(CorpusRow {
        episode: raw.episode,
        question: raw.question,
        speaker,
        intent,
        answer,
        text: raw.text,
    })
}

pub fn write_corpus<W: Write>(rows: &[CorpusRow], mut out: W) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

impl Corpus {
    pub fn rows(&self) -> impl Iterator<Item = &CorpusRow> {
        self.sequences.iter().flat_map(|s| s.rows.iter())
    }

    /// Splits off the last `n` sequences as a held-out set.
    pub fn split_holdout(&self, n: usize) -> (Corpus, Corpus) {
        let cut = self.sequences.len().saturating_sub(n);
        (
            Corpus {
                sequences: self.sequences[..cut].to_vec(),
            },
            Corpus {
                sequences: self.sequences[cut..].to_vec(),
            },
        )
    }
}

/// Turns each question sequence into policy inputs and targets. Rows whose
/// intent the registry does not know are invisible to the policy and are
/// dropped first; each remaining step is labelled with the following event
/// when that is a host-core action, and with silence otherwise.
pub fn training_sequences(
    corpus: &Corpus,
    registry: &IntentRegistry,
) -> Result<Vec<TrainingSequence>, CorpusError> {
    let mut out = Vec::with_capacity(corpus.sequences.len());
    for seq in &corpus.sequences {
        let visible: Vec<&CorpusRow> = seq
            .rows
            .iter()
            .filter(|r| registry.contains(r.intent))
            .collect();
        let mut steps = Vec::with_capacity(visible.len());
        let mut targets = Vec::with_capacity(visible.len());
        for (i, row) in visible.iter().enumerate() {
            let step =
                encode(row.intent, row.speaker, registry).map_err(|e| CorpusError::Parse {
                    line: 0,
                    message: e.to_string(),
                })?;
            steps.push(step);
            let target = visible
                .get(i + 1)
                .filter(|next| next.speaker == SpeakerId::Host && next.intent.is_host_core())
                .map(|next| next.intent);
            targets.push(target);
        }
        if !steps.is_empty() {
            out.push(TrainingSequence { steps, targets });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub episodes: usize,
    pub sequences: usize,
    pub rows: usize,
    pub mean_sequence_length: f64,
    pub intents: BTreeMap<String, usize>,
    pub speakers: BTreeMap<String, usize>,
    /// Policy targets after conversion with the given registry.
    pub targets: BTreeMap<String, usize>,
}

pub fn corpus_stats(
    corpus: &Corpus,
    registry: &IntentRegistry,
) -> Result<CorpusStats, CorpusError> {
    let mut intents = BTreeMap::new();
    let mut speakers = BTreeMap::new();
    let mut episodes = std::collections::BTreeSet::new();
    let mut rows = 0;
    for r in corpus.rows() {
        rows += 1;
        *intents.entry(r.intent.name().to_string()).or_insert(0) += 1;
        *speakers.entry(r.speaker.to_string()).or_insert(0) += 1;
        episodes.insert(r.episode.clone());
    }
    let mut targets = BTreeMap::new();
    for seq in training_sequences(corpus, registry)? {
        for t in seq.targets {
            *targets
                .entry(t.unwrap_or(Intent::NoResponse).name().to_string())
                .or_insert(0) += 1;
        }
    }
    let sequences = corpus.sequences.len();
    Ok(CorpusStats {
        episodes: episodes.len(),
        sequences,
        rows,
        mean_sequence_length: if sequences == 0 {
            0.0
        } else {
            rows as f64 / sequences as f64
        },
        intents,
        speakers,
        targets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub episodes: usize,
    pub seed: u64,
    pub episode_prefix: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            episodes: 60,
            seed: 2024,
            episode_prefix: "syn".into(),
        }
    }
}

/// What a simulated player means to say; rendered to text and then run
/// through the real classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Chat,
    OfferToAnswer,
    AskAgreement,
    Offer(OptionKey),
    Final(OptionKey),
    Agree,
    ConfirmFinal,
    Reject(OptionKey),
    Decline,
}

impl Move {
    /// The label the classifier is expected to assign.
    pub fn expected(self) -> (Intent, Option<OptionKey>) {
        match self {
            Move::Chat | Move::Reject(_) | Move::Decline => (Intent::ChitChat, None),
            Move::OfferToAnswer => (Intent::OfferToAnswer, None),
            Move::AskAgreement => (Intent::AskAgreement, None),
            Move::Offer(k) => (Intent::OfferAnswer, Some(k)),
            Move::Final(k) => (Intent::FinalAnswer, Some(k)),
            Move::Agree => (Intent::Agreement, None),
            Move::ConfirmFinal => (Intent::ConfirmFinalAnswer, None),
        }
    }
}

const CHAT: &[&str] = &[
    "hmm",
    "this is a tricky one",
    "ooh that's hard",
    "I'm stumped",
    "good question",
    "interesting one",
    "I was hoping for an easier one",
    "let me see",
];
const OFFER_TO_ANSWER: &[&str] = &[
    "I know this one",
    "oh I know",
    "I think I know",
    "let me answer",
    "I've got this",
];
const ASK: &[&str] = &[
    "what do you think?",
    "do you agree?",
    "any ideas?",
    "what about you?",
    "do you reckon?",
];
const AGREE: &[&str] = &[
    "yes",
    "yeah I agree",
    "sounds good",
    "good call",
    "me too",
    "yep let's do it",
    "fine by me",
];
const CONFIRM_FINAL: &[&str] = &[
    "final answer",
    "that's our final answer",
    "we're sure",
    "I confirm",
];
const DECLINE: &[&str] = &[
    "no wait",
    "hold on",
    "hang on, not yet",
    "let me think",
    "wait",
];

fn letter_phrase(k: OptionKey) -> String {
    format!("option {}", k.letter())
}

pub fn render(mv: Move, q: &QuestionRecord, rng: &mut ChaCha8Rng) -> String {
    let pick =
        |pool: &[&str], rng: &mut ChaCha8Rng| pool.choose(rng).expect("non-empty pool").to_string();
    match mv {
        Move::Chat => pick(CHAT, rng),
        Move::OfferToAnswer => pick(OFFER_TO_ANSWER, rng),
        Move::AskAgreement => pick(ASK, rng),
        Move::Agree => pick(AGREE, rng),
        Move::ConfirmFinal => pick(CONFIRM_FINAL, rng),
        Move::Decline => pick(DECLINE, rng),
        Move::Offer(k) => {
            let label = q.option(k);
            match rng.random_range(0..5) {
                0 => format!("I think it's {label}"),
                1 => format!("maybe {label}"),
                2 => format!("how about {label}"),
                3 => format!("could be {}", letter_phrase(k)),
                _ => format!("I'd go with {label}"),
            }
        }
        Move::Final(k) => {
            let label = q.option(k);
            match rng.random_range(0..3) {
                0 => format!("final answer {label}"),
                1 => format!("{label}, final answer"),
                _ => format!("we're sure it's {label}"),
            }
        }
        Move::Reject(k) => {
            let label = q.option(k);
            match rng.random_range(0..3) {
                0 => format!("it's not {label}"),
                1 => format!("can't be {label}"),
                _ => format!("rule out {label}"),
            }
        }
    }
}

fn weighted<T: Copy>(rng: &mut ChaCha8Rng, table: &[(u32, T)]) -> T {
    let total: u32 = table.iter().map(|(w, _)| w).sum();
    let mut r = rng.random_range(0..total);
    for &(w, v) in table {
        if r < w {
            return v;
        }
        r -= w;
    }
    table[table.len() - 1].1
}

/// Picks the next move of a simulated player from the visible game state.
pub fn choose_move(
    engine: &Engine,
    speaker: SpeakerId,
    turns: usize,
    rng: &mut ChaCha8Rng,
) -> Move {
    let st = engine.state();
    let q = &st.question;
    let pick_key = |rng: &mut ChaCha8Rng| {
        // Players are right most of the time.
        if rng.random_bool(0.7) {
            q.correct
        } else {
            *OptionKey::ALL.choose(rng).expect("four options")
        }
    };
    let other_key = |rng: &mut ChaCha8Rng, not: Option<OptionKey>| {
        let pool: Vec<OptionKey> = OptionKey::ALL
            .iter()
            .copied()
            .filter(|k| Some(*k) != not && !st.rejected.contains(k))
            .collect();
        pool.choose(rng).copied()
    };
    if turns >= 12 {
        return match st.phase {
            GamePhase::SeekConfirmation => Move::Agree,
            _ => Move::Final(st.offered.unwrap_or(q.correct)),
        };
    }
    match (st.phase, st.offered) {
        (GamePhase::SeekConfirmation, Some(x)) => weighted(
            rng,
            &[
                (55, Move::Agree),
                (15, Move::ConfirmFinal),
                (8, Move::Offer(x)),
                (7, Move::Final(x)),
                (15, Move::Decline),
            ],
        ),
        (_, None) if st.awaiting_direct_answer => Move::Offer(pick_key(rng)),
        (_, None) => {
            let reject = other_key(rng, None).map(Move::Reject).unwrap_or(Move::Chat);
            let offer = Move::Offer(pick_key(rng));
            let final_answer = Move::Final(pick_key(rng));
            weighted(
                rng,
                &[
                    (15, Move::Chat),
                    (10, Move::OfferToAnswer),
                    (10, Move::AskAgreement),
                    (8, reject),
                    (45, offer),
                    (6, final_answer),
                    (6, Move::Agree),
                ],
            )
        }
        (_, Some(x)) if st.offered_by == Some(speaker) => {
            let reject = other_key(rng, Some(x))
                .map(Move::Reject)
                .unwrap_or(Move::Chat);
            let switch = other_key(rng, Some(x))
                .map(Move::Offer)
                .unwrap_or(Move::Chat);
            weighted(
                rng,
                &[
                    (30, Move::AskAgreement),
                    (20, Move::Chat),
                    (10, Move::Agree),
                    (15, Move::ConfirmFinal),
                    (10, switch),
                    (5, Move::OfferToAnswer),
                    (10, reject),
                ],
            )
        }
        (_, Some(x)) => {
            let reject = other_key(rng, Some(x))
                .map(Move::Reject)
                .unwrap_or(Move::Chat);
            weighted(
                rng,
                &[
                    (50, Move::Agree),
                    (15, Move::Offer(x)),
                    (10, Move::Final(x)),
                    (10, Move::Chat),
                    (5, Move::AskAgreement),
                    (10, reject),
                ],
            )
        }
    }
}

/// Simulated two-player games run through the real understanding and state
/// machine, recorded as corpus rows. Host rows before each question is read
/// are omitted so every sequence opens with the question.
pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<Vec<CorpusRow>, CorpusError> {
    let classifier = Arc::new(Classifier::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for ep in 0..cfg.episodes {
        let episode = format!("{}-{:04}", cfg.episode_prefix, ep + 1);
        let questions = fetch_questions(ROUND_LENGTH, &QuestionSource::default(), rng.random())
            .map_err(|e| CorpusError::Parse {
                line: 0,
                message: e.to_string(),
            })?;
        let dm = DialogueManager::new(GameConfig::default(), questions).map_err(|e| {
            CorpusError::Parse {
                line: 0,
                message: e.to_string(),
            }
        })?;
        let (mut engine, _) =
            Engine::start(dm, classifier.clone(), None).map_err(|e| CorpusError::Parse {
                line: 0,
                message: e.to_string(),
            })?;
        let mut t_ms = 0;
        let mut turns = 0;
        let mut current = engine.state().question_index;
        while !engine.is_over() {
            let speaker = if rng.random_bool(0.5) {
                SpeakerId::User1
            } else {
                SpeakerId::User2
            };
            let mv = choose_move(&engine, speaker, turns, &mut rng);
            let text = render(mv, &engine.state().question, &mut rng);
            t_ms += 2_000;
            engine
                .handle_utterance(speaker, &text, t_ms)
                .map_err(|e| CorpusError::Parse {
                    line: 0,
                    message: e.to_string(),
                })?;
            turns += 1;
            if engine.state().question_index != current || engine.is_over() {
                current = engine.state().question_index;
                turns = 0;
            }
        }
        let mut opened = std::collections::HashSet::new();
        for r in engine.transcript() {
            if r.speaker == SpeakerId::Host && r.intent == Intent::Question {
                opened.insert(r.question);
            }
            if opened.contains(&r.question) {
                rows.push(CorpusRow {
                    episode: episode.clone(),
                    question: r.question,
                    speaker: r.speaker,
                    intent: r.intent,
                    answer: r.answer,
                    text: r.text.clone(),
                });
            }
        }
    }
    Ok(rows)
}
