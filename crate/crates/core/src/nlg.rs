//! Template-based realization of host intents.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::NlgError;
use crate::intent::{Intent, IntentGroup};

pub const BUNDLED_TEMPLATES: &str = include_str!("../data/templates.json");
pub const MIN_TEMPLATES: usize = 3;

/// Slots each host intent may reference.
pub fn allowed_slots(intent: Intent) -> &'static [&'static str] {
    match intent {
        Intent::Question => &["question", "number", "total"],
        Intent::Options => &["option_a", "option_b", "option_c", "option_d"],
        Intent::ConfirmAgreement | Intent::RepeatAnswer | Intent::SeekConfirmation => {
            &["answer", "answer_key", "player"]
        }
        Intent::AcceptAnswer => &["answer", "answer_key"],
        Intent::AcknowledgeRejectOption => &["rejected"],
        Intent::EndOfGame => &["score", "total", "prize"],
        Intent::OfferGenericGuidance => &[],
        Intent::QuestionBrief => &["number", "total", "prize"],
        Intent::ReturnToQuestion => &["question"],
        Intent::SayCorrect => &["answer", "prize"],
        Intent::SayIncorrect => &["answer", "correct"],
        Intent::SeekDirectAnswer => &["player"],
        _ => &[],
    }
}

/// Values available to fill template slots.
pub type Slots = BTreeMap<&'static str, String>;

#[derive(Debug, Clone)]
struct Template {
    text: String,
    slots: Vec<String>,
}

fn slot_names(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| format!("unclosed slot in `{text}`"))?;
        let name = &after[..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Err(format!("bad slot name `{name}` in `{text}`"));
        }
        out.push(name.to_string());
        rest = &after[close + 1..];
    }
    if rest.contains('}') {
        return Err(format!("stray `}}` in `{text}`"));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TemplateBank {
    templates: HashMap<Intent, Vec<Template>>,
}

#[derive(Deserialize)]
struct BankFile {
    version: u32,
    templates: BTreeMap<String, Vec<String>>,
}

impl TemplateBank {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_TEMPLATES).expect("bundled template bank is valid")
    }

    /// Parses and validates a bank: every host intent needs at least three
    /// templates, and every slot must be one the intent can supply.
    pub fn from_json(text: &str) -> Result<Self, NlgError> {
        let file: BankFile =
            serde_json::from_str(text).map_err(|e| NlgError::Bank(e.to_string()))?;
        if file.version != 1 {
            return Err(NlgError::Bank(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let mut templates = HashMap::new();
        for (name, texts) in file.templates {
            let intent: Intent = name
                .parse()
                .map_err(|_| NlgError::Bank(format!("unknown intent `{name}`")))?;
            if !intent.is_host() {
                return Err(NlgError::Bank(format!("`{name}` is not a host intent")));
            }
            let allowed = allowed_slots(intent);
            let mut parsed = Vec::with_capacity(texts.len());
            for t in texts {
                let slots = slot_names(&t).map_err(NlgError::Bank)?;
                if let Some(bad) = slots.iter().find(|s| !allowed.contains(&s.as_str())) {
                    return Err(NlgError::MissingSlot {
                        intent,
                        slot: bad.clone(),
                    });
                }
                parsed.push(Template { text: t, slots });
            }
            templates.insert(intent, parsed);
        }
        for &intent in Intent::ALL {
            if !intent.is_host() {
                continue;
            }
            match templates.get(&intent) {
                None => return Err(NlgError::MissingTemplate(intent)),
                Some(v) if v.len() < MIN_TEMPLATES => {
                    return Err(NlgError::Bank(format!(
                        "`{intent}` has {} templates, need at least {MIN_TEMPLATES}",
                        v.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { templates })
    }

    pub fn count(&self, intent: Intent) -> usize {
        self.templates.get(&intent).map_or(0, Vec::len)
    }

    pub fn template(&self, intent: Intent, index: usize) -> Option<&str> {
        self.templates
            .get(&intent)?
            .get(index)
            .map(|t| t.text.as_str())
    }

    pub fn fill(&self, intent: Intent, index: usize, slots: &Slots) -> Result<String, NlgError> {
        let t = self
            .templates
            .get(&intent)
            .and_then(|v| v.get(index))
            .ok_or(NlgError::MissingTemplate(intent))?;
        let mut out = t.text.clone();
        for name in &t.slots {
            let value = slots
                .get(name.as_str())
                .ok_or_else(|| NlgError::MissingSlot {
                    intent,
                    slot: name.clone(),
                })?;
            out = out.replacen(&format!("{{{name}}}"), value, 1);
        }
        Ok(out)
    }
}

/// Picks templates at random without repeating the previous choice for the
/// same intent.
#[derive(Debug, Clone)]
pub struct Realizer {
    bank: TemplateBank,
    rng: ChaCha8Rng,
    last: HashMap<Intent, usize>,
}

impl Realizer {
    pub fn new(bank: TemplateBank, seed: u64) -> Self {
        Self {
            bank,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: HashMap::new(),
        }
    }

    pub fn bank(&self) -> &TemplateBank {
        &self.bank
    }

    pub fn choose(&mut self, intent: Intent) -> Result<usize, NlgError> {
        let n = self.bank.count(intent);
        if n == 0 {
            return Err(NlgError::MissingTemplate(intent));
        }
        let idx = match self.last.get(&intent) {
            Some(&prev) if n > 1 => {
                let r = self.rng.random_range(0..n - 1);
                if r >= prev {
                    r + 1
                } else {
                    r
                }
            }
            _ => self.rng.random_range(0..n),
        };
        self.last.insert(intent, idx);
        Ok(idx)
    }

    pub fn realize(&mut self, intent: Intent, slots: &Slots) -> Result<String, NlgError> {
        if intent.group() == IntentGroup::Sentinel || !intent.is_host() {
            return Err(NlgError::MissingTemplate(intent));
        }
        let idx = self.choose(intent)?;
        self.bank.fill(intent, idx, slots)
    }
}
