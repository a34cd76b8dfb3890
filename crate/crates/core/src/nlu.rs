//! Rule-based understanding of player utterances and the cross-channel
//! duplicate filter.
//!
//! Classification runs in layers over normalized text:
//!
//! 1. option rejections ("not {option}") are found and cut out of the text,
//! 2. the remaining text is matched against the four answer options,
//! 3. cue phrases from the lexicon are matched longest-first without overlap,
//! 4. intent precedence picks one label; anything unmatched is chit-chat.

use std::collections::{BTreeMap, VecDeque};

use serde::Deserialize;

use crate::error::NluError;
use crate::game::GamePhase;
use crate::intent::{Channel, DialogueEvent, Intent, OptionKey, Rejection, SpeakerId};
use crate::trivia::QuestionRecord;

pub const DEFAULT_LEXICON: &str = include_str!("../data/cues.json");

const OPTION_SLOT: &str = "{option}";

/// Lowercases, drops apostrophes, turns other punctuation into spaces and
/// collapses whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch == '\'' || ch == '\u{2019}' {
            continue;
        }
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn tokens(s: &str) -> Vec<String> {
    normalize(s)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Everything the classifier needs to resolve answer mentions.
#[derive(Debug, Clone)]
pub struct NluContext {
    pub question: QuestionRecord,
    pub offered: Option<OptionKey>,
    pub phase: GamePhase,
}

#[derive(Debug, Deserialize)]
struct LexiconFile {
    version: u32,
    cues: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum CueGroup {
    Final,
    Agreement,
    AskAgreement,
    OfferToAnswer,
    Decline,
}

/// Cue phrases per group, pre-tokenized.
#[derive(Debug, Clone)]
pub struct CueLexicon {
    pub version: u32,
    phrases: Vec<(CueGroup, Vec<String>)>,
    rejections: Vec<Vec<String>>,
}

impl CueLexicon {
    pub fn from_json(raw: &str) -> Result<Self, NluError> {
        let file: LexiconFile =
            serde_json::from_str(raw).map_err(|e| NluError::Lexicon(e.to_string()))?;
        let mut phrases = Vec::new();
        let mut rejections = Vec::new();
        for (key, list) in &file.cues {
            let group = match key.as_str() {
                "final-answer" => CueGroup::Final,
                "agreement" => CueGroup::Agreement,
                "ask-agreement" => CueGroup::AskAgreement,
                "offer-to-answer" => CueGroup::OfferToAnswer,
                "decline" => CueGroup::Decline,
                "reject-option" => {
                    for p in list {
                        if !p.trim_end().ends_with(OPTION_SLOT) {
                            return Err(NluError::Lexicon(format!(
                                "reject pattern `{p}` must end with {OPTION_SLOT}"
                            )));
                        }
                        let prefix = tokens(p.trim_end().trim_end_matches(OPTION_SLOT));
                        if prefix.is_empty() {
                            return Err(NluError::Lexicon(format!(
                                "reject pattern `{p}` has no prefix"
                            )));
                        }
                        rejections.push(prefix);
                    }
                    continue;
                }
                other => return Err(NluError::Lexicon(format!("unknown cue group `{other}`"))),
            };
            for p in list {
                let toks = tokens(p);
                if toks.is_empty() {
                    return Err(NluError::Lexicon(format!("empty phrase in `{key}`")));
                }
                phrases.push((group, toks));
            }
        }
        // Longest phrases claim their span first.
        phrases.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.cmp(b)));
        rejections.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        Ok(Self {
            version: file.version,
            phrases,
            rejections,
        })
    }
}

impl Default for CueLexicon {
    fn default() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

fn find_at(hay: &[String], needle: &[String], start: usize) -> bool {
    start + needle.len() <= hay.len() && hay[start..start + needle.len()] == *needle
}

fn contains_seq(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && (0..hay.len()).any(|i| find_at(hay, needle, i))
}

/// Whether token `i` is a standalone mention of an option letter.
fn is_letter_mention(toks: &[String], i: usize) -> Option<OptionKey> {
    match toks[i].as_str() {
        "b" => Some(OptionKey::B),
        "c" => Some(OptionKey::C),
        "d" => Some(OptionKey::D),
        // "a" is an article far more often than an option.
        "a" => {
            let last = i + 1 == toks.len();
            let after_marker =
                i > 0 && matches!(toks[i - 1].as_str(), "option" | "letter" | "answer");
            (last || after_marker).then_some(OptionKey::A)
        }
        _ => None,
    }
}

fn option_scores(
    toks: &[String],
    options: &[(OptionKey, Vec<String>)],
) -> BTreeMap<OptionKey, u32> {
    let mut scores = BTreeMap::new();
    for (key, label) in options {
        let mut s = 0;
        if contains_seq(toks, label) {
            s += 2;
        }
        if (0..toks.len()).any(|i| is_letter_mention(toks, i) == Some(*key)) {
            s += 1;
        }
        if s > 0 {
            scores.insert(*key, s);
        }
    }
    scores
}

fn label_tokens(options: &[(OptionKey, &str)]) -> Vec<(OptionKey, Vec<String>)> {
    options.iter().map(|(k, l)| (*k, tokens(l))).collect()
}

fn best_option(scores: &BTreeMap<OptionKey, u32>) -> Option<OptionKey> {
    let max = *scores.values().max()?;
    let mut top = scores.iter().filter(|(_, &s)| s == max);
    let first = top.next()?;
    top.next().is_none().then_some(*first.0)
}

/// Finds the option mentioned in `text`, by label (stronger) or letter.
/// Ties between distinct options yield `None`.
pub fn match_answer_option(text: &str, options: &[(OptionKey, &str)]) -> Option<OptionKey> {
    best_option(&option_scores(&tokens(text), &label_tokens(options)))
}

/// Option mention starting exactly at token `i`; returns the key and span length.
fn mention_at(
    toks: &[String],
    i: usize,
    options: &[(OptionKey, Vec<String>)],
) -> Option<(OptionKey, usize)> {
    let by_label = options
        .iter()
        .filter(|(_, l)| find_at(toks, l, i))
        .max_by_key(|(_, l)| l.len())
        .map(|(k, l)| (*k, l.len()));
    by_label.or_else(|| is_letter_mention(toks, i).map(|k| (k, 1)))
}

#[derive(Debug, Clone)]
pub struct Classifier {
    lexicon: CueLexicon,
}

impl Default for Classifier {
    fn default() -> Self {
        Self::new(CueLexicon::default())
    }
}

impl Classifier {
    pub fn new(lexicon: CueLexicon) -> Self {
        Self { lexicon }
    }

    pub fn lexicon(&self) -> &CueLexicon {
        &self.lexicon
    }

    /// Labels one player utterance. Total: unmatched text is chit-chat.
    pub fn classify(
        &self,
        text: &str,
        speaker: SpeakerId,
        timestamp_ms: u64,
        ctx: &NluContext,
    ) -> DialogueEvent {
        debug_assert!(speaker.is_user(), "host speech is never classified");
        let options: Vec<(OptionKey, &str)> = OptionKey::ALL
            .iter()
            .map(|&k| (k, ctx.question.option(k)))
            .collect();
        let labels = label_tokens(&options);
        let toks = tokens(text);
        let mut used = vec![false; toks.len()];

        let mut rejected = None;
        for prefix in &self.lexicon.rejections {
            for i in 0..toks.len() {
                if used[i..].iter().take(prefix.len()).any(|&u| u) || !find_at(&toks, prefix, i) {
                    continue;
                }
                if let Some((key, len)) = mention_at(&toks, i + prefix.len(), &labels) {
                    rejected.get_or_insert(key);
                    used[i..i + prefix.len() + len]
                        .iter_mut()
                        .for_each(|u| *u = true);
                }
            }
        }

        // Cut rejected spans so "not London, Paris" offers only Paris.
        let rest: Vec<String> = toks
            .iter()
            .zip(&used)
            .filter(|(_, &u)| !u)
            .map(|(t, _)| t.clone())
            .collect();
        let offered = best_option(&option_scores(&rest, &labels));

        let mut claimed = vec![false; rest.len()];
        let mut fired = Vec::new();
        for (group, phrase) in &self.lexicon.phrases {
            for i in 0..rest.len() {
                if find_at(&rest, phrase, i) && !claimed[i..i + phrase.len()].iter().any(|&c| c) {
                    claimed[i..i + phrase.len()]
                        .iter_mut()
                        .for_each(|c| *c = true);
                    fired.push(*group);
                }
            }
        }
        let has = |g: CueGroup| fired.contains(&g);

        let (intent, answer) = if has(CueGroup::Final) {
            match offered {
                Some(k) => (Intent::FinalAnswer, Some(k)),
                None => (Intent::ConfirmFinalAnswer, None),
            }
        } else if has(CueGroup::Agreement) {
            (Intent::Agreement, None)
        } else if has(CueGroup::AskAgreement) {
            (Intent::AskAgreement, None)
        } else if let Some(k) = offered {
            (Intent::OfferAnswer, Some(k))
        } else if has(CueGroup::OfferToAnswer) {
            (Intent::OfferToAnswer, None)
        } else {
            (Intent::ChitChat, None)
        };

        let rejection = match rejected {
            Some(k) => Some(Rejection::Option(k)),
            None if has(CueGroup::Decline)
                && matches!(intent, Intent::ChitChat | Intent::OfferToAnswer) =>
            {
                Some(Rejection::Unspecified)
            }
            None => None,
        };

        DialogueEvent {
            speaker,
            intent,
            answer,
            rejection,
            text: text.to_string(),
            channel: speaker.channel(),
            timestamp_ms,
        }
    }
}

pub fn classify_utterance(text: &str, speaker: SpeakerId, ctx: &NluContext) -> DialogueEvent {
    Classifier::default().classify(text, speaker, 0, ctx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrosstalkFilterConfig {
    pub window_ms: u64,
    pub threshold: f64,
}

impl Default for CrosstalkFilterConfig {
    fn default() -> Self {
        Self {
            window_ms: 1500,
            threshold: 0.85,
        }
    }
}

impl CrosstalkFilterConfig {
    pub fn new(window_ms: u64, threshold: f64) -> Result<Self, NluError> {
        if window_ms == 0 {
            return Err(NluError::Config("window must be positive".into()));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(NluError::Config(format!(
                "threshold {threshold} outside (0, 1]"
            )));
        }
        Ok(Self {
            window_ms,
            threshold,
        })
    }
}

pub fn similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(&normalize(a), &normalize(b))
}

/// Streaming duplicate detector. An utterance is dropped when a retained
/// utterance from the other player channel, no older than the window, has
/// near-identical text.
#[derive(Debug, Clone)]
pub struct CrosstalkFilter {
    cfg: CrosstalkFilterConfig,
    recent: VecDeque<(Channel, String, u64)>,
}

impl CrosstalkFilter {
    pub fn new(cfg: CrosstalkFilterConfig) -> Self {
        Self {
            cfg,
            recent: VecDeque::new(),
        }
    }

    pub fn config(&self) -> CrosstalkFilterConfig {
        self.cfg
    }

    /// Returns whether the utterance should be kept.
    pub fn admit(&mut self, channel: Channel, text: &str, timestamp_ms: u64) -> bool {
        if channel == Channel::HostChannel {
            return true;
        }
        while let Some((_, _, t)) = self.recent.front() {
            if timestamp_ms.saturating_sub(*t) > self.cfg.window_ms {
                self.recent.pop_front();
            } else {
                break;
            }
        }
        let norm = normalize(text);
        let duplicate = self.recent.iter().any(|(ch, prev, t)| {
            *ch != channel
                && timestamp_ms.saturating_sub(*t) <= self.cfg.window_ms
                && strsim::normalized_levenshtein(prev, &norm) >= self.cfg.threshold
        });
        if !duplicate {
            self.recent.push_back((channel, norm, timestamp_ms));
        }
        !duplicate
    }
}

/// Batch form of [`CrosstalkFilter`] over a time-ordered event list.
pub fn filter_crosstalk(
    events: &[DialogueEvent],
    cfg: CrosstalkFilterConfig,
) -> Vec<DialogueEvent> {
    let mut f = CrosstalkFilter::new(cfg);
    events
        .iter()
        .filter(|e| f.admit(e.channel, &e.text, e.timestamp_ms))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trivia::Difficulty;

    fn question() -> QuestionRecord {
        QuestionRecord {
            id: "t".into(),
            text: "Capital of France?".into(),
            options: [
                (OptionKey::A, "London"),
                (OptionKey::B, "Paris"),
                (OptionKey::C, "Rome"),
                (OptionKey::D, "Madrid"),
            ]
            .into_iter()
            .map(|(k, v)| (k, v.to_string()))
            .collect(),
            correct: OptionKey::B,
            difficulty: Difficulty::Easy,
            category: "Geography".into(),
        }
    }

    fn ctx(offered: Option<OptionKey>) -> NluContext {
        NluContext {
            question: question(),
            offered,
            phase: GamePhase::Deliberation,
        }
    }

    fn opts() -> Vec<(OptionKey, &'static str)> {
        vec![
            (OptionKey::A, "London"),
            (OptionKey::B, "Paris"),
            (OptionKey::C, "Rome"),
            (OptionKey::D, "Madrid"),
        ]
    }

    fn classify(text: &str, offered: Option<OptionKey>) -> DialogueEvent {
        Classifier::default().classify(text, SpeakerId::User1, 0, &ctx(offered))
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  It's   PARIS!!  "), "its paris");
        assert_eq!(normalize("lock-in, ok?"), "lock in ok");
    }

    #[test]
    fn matcher_examples() {
        assert_eq!(
            match_answer_option("definitely paris", &opts()),
            Some(OptionKey::B)
        );
        assert_eq!(match_answer_option("either London or Rome", &opts()), None);
        assert_eq!(
            match_answer_option("the answer is d", &opts()),
            Some(OptionKey::D)
        );
        assert_eq!(match_answer_option("it's a good question", &opts()), None);
        assert_eq!(
            match_answer_option("I'd say option a", &opts()),
            Some(OptionKey::A)
        );
        // Label beats a stray letter for another option.
        assert_eq!(match_answer_option("b, Paris", &opts()), Some(OptionKey::B));
    }

    #[test]
    fn matcher_tie_oracle() {
        // Brute force: every pair of distinct labels in one utterance ties.
        for (i, (_, a)) in opts().iter().enumerate() {
            for (j, (_, b)) in opts().iter().enumerate() {
                let got = match_answer_option(&format!("maybe {a} or {b}"), &opts());
                if i == j {
                    assert_eq!(got, Some(opts()[i].0));
                } else {
                    assert_eq!(got, None, "{a} / {b}");
                }
            }
        }
    }

    #[test]
    fn classify_examples() {
        let e = classify("I think it's B, Paris", None);
        assert_eq!(
            (e.intent, e.answer),
            (Intent::OfferAnswer, Some(OptionKey::B))
        );
        assert_eq!(
            classify("yeah I agree, lock it in", None).intent,
            Intent::Agreement
        );
        assert_eq!(
            classify("yeah I agree, lock it in", Some(OptionKey::C)).intent,
            Intent::Agreement
        );
        let e = classify("final answer", Some(OptionKey::B));
        assert_eq!((e.intent, e.answer), (Intent::ConfirmFinalAnswer, None));
        assert_eq!(
            classify("nice weather today", None).intent,
            Intent::ChitChat
        );
    }

    #[test]
    fn classify_other_intents() {
        let e = classify("we agree, B final answer", Some(OptionKey::B));
        assert_eq!(
            (e.intent, e.answer),
            (Intent::FinalAnswer, Some(OptionKey::B))
        );
        assert_eq!(classify("do you agree?", None).intent, Intent::AskAgreement);
        assert_eq!(
            classify("Oh I know this one!", None).intent,
            Intent::OfferToAnswer
        );
        assert_eq!(classify("I'm not sure", None).intent, Intent::ChitChat);
    }

    #[test]
    fn rejections() {
        let e = classify("it's not London", None);
        assert_eq!(e.intent, Intent::ChitChat);
        assert_eq!(e.rejection, Some(Rejection::Option(OptionKey::A)));
        let e = classify("not London, I think Paris", None);
        assert_eq!(
            (e.intent, e.answer),
            (Intent::OfferAnswer, Some(OptionKey::B))
        );
        assert_eq!(e.rejection, Some(Rejection::Option(OptionKey::A)));
        let e = classify("no, not yet", Some(OptionKey::B));
        assert_eq!(e.rejection, Some(Rejection::Unspecified));
        assert_eq!(
            classify("not sure about this", None).rejection,
            Some(Rejection::Unspecified)
        );
        assert_eq!(classify("yes", None).rejection, None);
    }

    fn ev(ch: Channel, text: &str, t: u64) -> DialogueEvent {
        DialogueEvent {
            speaker: ch.speaker(),
            intent: Intent::ChitChat,
            answer: None,
            rejection: None,
            text: text.into(),
            channel: ch,
            timestamp_ms: t,
        }
    }

    #[test]
    fn crosstalk_examples() {
        let cfg = CrosstalkFilterConfig::new(500, 0.9).unwrap();
        let out = filter_crosstalk(
            &[
                ev(Channel::Channel1, "it's paris", 1000),
                ev(Channel::Channel2, "it's paris", 1150),
            ],
            cfg,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].channel, Channel::Channel1);

        let out = filter_crosstalk(
            &[
                ev(Channel::Channel1, "paris", 0),
                ev(Channel::Channel2, "rome", 100),
            ],
            cfg,
        );
        assert_eq!(out.len(), 2);

        let out = filter_crosstalk(
            &[
                ev(Channel::Channel1, "paris", 0),
                ev(Channel::Channel2, "paris", 900),
            ],
            cfg,
        );
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn crosstalk_window_boundary_sweep() {
        let cfg = CrosstalkFilterConfig::new(500, 0.9).unwrap();
        for dt in (0..=2000).step_by(10) {
            let out = filter_crosstalk(
                &[
                    ev(Channel::Channel1, "paris", 0),
                    ev(Channel::Channel2, "paris", dt),
                ],
                cfg,
            );
            assert_eq!(out.len() == 2, dt > 500, "dt={dt}");
        }
    }

    #[test]
    fn same_channel_and_host_never_dropped() {
        let cfg = CrosstalkFilterConfig::default();
        let events = vec![
            ev(Channel::Channel1, "paris", 0),
            ev(Channel::Channel1, "paris", 10),
            ev(Channel::HostChannel, "paris", 20),
        ];
        assert_eq!(filter_crosstalk(&events, cfg).len(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(CrosstalkFilterConfig::new(0, 0.5).is_err());
        assert!(CrosstalkFilterConfig::new(10, 0.0).is_err());
        assert!(CrosstalkFilterConfig::new(10, 1.1).is_err());
        assert!(CrosstalkFilterConfig::new(10, 1.0).is_ok());
    }

    #[test]
    fn lexicon_rejects_bad_groups() {
        assert!(CueLexicon::from_json(r#"{"version":1,"cues":{"bogus":["x"]}}"#).is_err());
        assert!(
            CueLexicon::from_json(r#"{"version":1,"cues":{"reject-option":["not"]}}"#).is_err()
        );
    }
}
