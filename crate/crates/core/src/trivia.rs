//! Question supply: a remote OpenTrivia-style endpoint with a bundled offline
//! fixture as fallback.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::error::TriviaError;
use crate::intent::OptionKey;

pub const BUNDLED_FIXTURE: &str = include_str!("../data/questions.json");

pub const OPENTDB_URL: &str = "https://opentdb.com/api.php";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub text: String,
    pub options: BTreeMap<OptionKey, String>,
    pub correct: OptionKey,
    pub difficulty: Difficulty,
    pub category: String,
}

impl QuestionRecord {
    /// Label shown for `key`. Valid records have all four keys.
    pub fn option(&self, key: OptionKey) -> &str {
        self.options.get(&key).map(String::as_str).unwrap_or("")
    }

    pub fn correct_text(&self) -> &str {
        self.option(self.correct)
    }

    pub fn validate(&self) -> Result<(), TriviaError> {
        let bad = |reason: &str| TriviaError::MalformedQuestion {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.text.trim().is_empty() {
            return Err(bad("empty question text"));
        }
        if self.options.len() != 4 {
            return Err(bad("needs exactly four options"));
        }
        let distinct: BTreeSet<String> = self
            .options
            .values()
            .map(|s| s.trim().to_lowercase())
            .collect();
        if distinct.len() != 4 || distinct.iter().any(|s| s.is_empty()) {
            return Err(bad("options must be four distinct non-empty strings"));
        }
        if !self.options.contains_key(&self.correct) {
            return Err(bad("correct key missing from options"));
        }
        let decoded = |s: &str| html_escape::decode_html_entities(s) == s;
        if !decoded(&self.text) || !self.options.values().all(|o| decoded(o)) {
            return Err(bad("undecoded HTML entities"));
        }
        Ok(())
    }

    fn decode_entities(mut self) -> Self {
        self.text = decode(&self.text);
        self.category = decode(&self.category);
        for v in self.options.values_mut() {
            *v = decode(v);
        }
        self
    }

    /// Places the four answers into A–D in a random order.
    pub fn shuffled(&self, rng: &mut ChaCha8Rng) -> QuestionRecord {
        let correct_text = self.correct_text().to_string();
        let mut texts: Vec<String> = OptionKey::ALL
            .iter()
            .map(|&k| self.option(k).to_string())
            .collect();
        texts.shuffle(rng);
        let pos = texts.iter().position(|t| *t == correct_text).unwrap_or(0);
        QuestionRecord {
            options: OptionKey::ALL.iter().copied().zip(texts).collect(),
            correct: OptionKey::ALL[pos],
            ..self.clone()
        }
    }
}

fn decode(s: &str) -> String {
    // Some payloads arrive double-encoded ("&amp;quot;").
    let mut cur = s.to_string();
    for _ in 0..3 {
        let next = html_escape::decode_html_entities(&cur).into_owned();
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

/// Where fixture questions come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fixture {
    Bundled,
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuestionSource {
    Remote {
        url: String,
        fallback: Option<Fixture>,
    },
    Fixture(Fixture),
}

impl Default for QuestionSource {
    fn default() -> Self {
        QuestionSource::Fixture(Fixture::Bundled)
    }
}

/// Minimal HTTP GET used for the remote source; swapped out in tests.
pub trait RemoteFetch {
    fn get(&self, url: &str) -> Result<String, String>;
}

pub struct HttpFetch {
    timeout: Duration,
}

impl HttpFetch {
    pub fn new(timeout: Duration) -> Self {
        Self { timeout }
    }
}

impl Default for HttpFetch {
    fn default() -> Self {
        Self::new(Duration::from_secs(5))
    }
}

impl RemoteFetch for HttpFetch {
    fn get(&self, url: &str) -> Result<String, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| e.to_string())?;
        let resp = client.get(url).send().map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status()));
        }
        resp.text().map_err(|e| e.to_string())
    }
}

pub fn load_fixture(fixture: &Fixture) -> Result<Vec<QuestionRecord>, TriviaError> {
    let raw = match fixture {
        Fixture::Bundled => BUNDLED_FIXTURE.to_string(),
        Fixture::Path(p) => std::fs::read_to_string(p)
            .map_err(|e| TriviaError::SourceUnavailable(format!("{}: {e}", p.display())))?,
    };
    parse_fixture(&raw)
}

/// Parses a fixture file, skipping (and logging) invalid records.
pub fn parse_fixture(raw: &str) -> Result<Vec<QuestionRecord>, TriviaError> {
    let records: Vec<QuestionRecord> = serde_json::from_str(raw)
        .map_err(|e| TriviaError::SourceUnavailable(format!("fixture: {e}")))?;
    Ok(records
        .into_iter()
        .map(QuestionRecord::decode_entities)
        .filter(|r| match r.validate() {
            Ok(()) => true,
            Err(e) => {
                warn!("skipping fixture question: {e}");
                false
            }
        })
        .collect())
}

#[derive(Debug, Deserialize)]
struct OtdbResponse {
    response_code: i64,
    results: Vec<OtdbQuestion>,
}

#[derive(Debug, Deserialize)]
struct OtdbQuestion {
    #[serde(rename = "type")]
    kind: String,
    difficulty: String,
    category: String,
    question: String,
    correct_answer: String,
    incorrect_answers: Vec<String>,
}

impl OtdbQuestion {
    fn into_record(self) -> Result<QuestionRecord, TriviaError> {
        let text = decode(&self.question);
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let id = format!("otdb-{}", &hex::encode(hasher.finalize())[..12]);
        let bad = |reason: String| TriviaError::MalformedQuestion {
            id: id.clone(),
            reason,
        };
        if self.kind != "multiple" {
            return Err(bad(format!("type `{}`", self.kind)));
        }
        if self.incorrect_answers.len() != 3 {
            return Err(bad(format!(
                "{} incorrect answers",
                self.incorrect_answers.len()
            )));
        }
        let difficulty = match self.difficulty.as_str() {
            "easy" => Difficulty::Easy,
            "medium" => Difficulty::Medium,
            "hard" => Difficulty::Hard,
            other => return Err(bad(format!("difficulty `{other}`"))),
        };
        let mut options = BTreeMap::new();
        options.insert(OptionKey::A, decode(&self.correct_answer));
        for (k, t) in OptionKey::ALL[1..].iter().zip(&self.incorrect_answers) {
            options.insert(*k, decode(t));
        }
        let rec = QuestionRecord {
            id: id.clone(),
            text,
            options,
            correct: OptionKey::A,
            difficulty,
            category: decode(&self.category),
        };
        rec.validate()?;
        Ok(rec)
    }
}

/// Parses an OpenTrivia response body; invalid records are skipped with a warning.
pub fn parse_remote(body: &str) -> Result<Vec<QuestionRecord>, TriviaError> {
    let resp: OtdbResponse = serde_json::from_str(body)
        .map_err(|e| TriviaError::SourceUnavailable(format!("remote payload: {e}")))?;
    if resp.response_code != 0 {
        return Err(TriviaError::SourceUnavailable(format!(
            "remote response_code {}",
            resp.response_code
        )));
    }
    Ok(resp
        .results
        .into_iter()
        .filter_map(|q| match q.into_record() {
            Ok(r) => Some(r),
            Err(e) => {
                warn!("skipping remote question: {e}");
                None
            }
        })
        .collect())
}

/// Difficulty for position `pos` of a round of `count`: the first 40% easy,
/// the next 30% medium, the rest hard. A 10-question round gets 4/3/3.
pub fn ramp(pos: usize, count: usize) -> Difficulty {
    let scaled = pos * 10;
    if scaled < 4 * count {
        Difficulty::Easy
    } else if scaled < 7 * count {
        Difficulty::Medium
    } else {
        Difficulty::Hard
    }
}

fn select_from_pool(
    pool: Vec<QuestionRecord>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<QuestionRecord>, TriviaError> {
    if pool.len() < count {
        return Err(TriviaError::NotEnough {
            requested: count,
            available: pool.len(),
        });
    }
    let mut by_level: BTreeMap<Difficulty, Vec<QuestionRecord>> = BTreeMap::new();
    for r in pool {
        by_level.entry(r.difficulty).or_default().push(r);
    }
    for v in by_level.values_mut() {
        v.shuffle(rng);
    }
    let mut out = Vec::with_capacity(count);
    for pos in 0..count {
        let want = ramp(pos, count);
        let pick = match by_level.get_mut(&want).and_then(Vec::pop) {
            Some(r) => r,
            // Pool for this level ran dry: take from the nearest non-empty level.
            None => by_level
                .values_mut()
                .find_map(Vec::pop)
                .expect("pool size checked above"),
        };
        out.push(pick);
    }
    Ok(out.iter().map(|r| r.shuffled(rng)).collect())
}

fn order_remote(
    mut recs: Vec<QuestionRecord>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<QuestionRecord>, TriviaError> {
    if recs.len() < count {
        return Err(TriviaError::NotEnough {
            requested: count,
            available: recs.len(),
        });
    }
    recs.truncate(count);
    recs.sort_by_key(|r| r.difficulty);
    Ok(recs.iter().map(|r| r.shuffled(rng)).collect())
}

pub fn fetch_questions(
    count: usize,
    source: &QuestionSource,
    seed: u64,
) -> Result<Vec<QuestionRecord>, TriviaError> {
    fetch_questions_with(count, source, seed, &HttpFetch::default())
}

/// Returns exactly `count` validated questions, options shuffled under `seed`.
pub fn fetch_questions_with(
    count: usize,
    source: &QuestionSource,
    seed: u64,
    fetcher: &dyn RemoteFetch,
) -> Result<Vec<QuestionRecord>, TriviaError> {
    if !(1..=50).contains(&count) {
        return Err(TriviaError::Count(count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match source {
        QuestionSource::Fixture(f) => select_from_pool(load_fixture(f)?, count, &mut rng),
        QuestionSource::Remote { url, fallback } => {
            let sep = if url.contains('?') { '&' } else { '?' };
            let full = format!("{url}{sep}amount={count}&type=multiple");
            let remote = fetcher
                .get(&full)
                .map_err(TriviaError::SourceUnavailable)
                .and_then(|body| parse_remote(&body))
                .and_then(|recs| order_remote(recs, count, &mut rng));
            match (remote, fallback) {
                (Ok(recs), _) => Ok(recs),
                (Err(e), Some(f)) => {
                    warn!("remote question source failed ({e}); falling back to fixture");
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    select_from_pool(load_fixture(f)?, count, &mut rng)
                }
                (Err(e), None) => Err(TriviaError::SourceUnavailable(e.to_string())),
            }
        }
    }
}

pub fn fixture_from_path(path: Option<&Path>) -> Fixture {
    match path {
        Some(p) => Fixture::Path(p.to_path_buf()),
        None => Fixture::Bundled,
    }
}
