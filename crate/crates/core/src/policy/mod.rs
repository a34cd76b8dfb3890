//! Recurrent dialogue policy: predicts the next host-core action, or silence,
//! from the stream of encoded dialogue events.

mod net;
mod train;

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::PolicyError;
use crate::intent::{
    decode_host_action, encode_step, DialogueEvent, Intent, IntentRegistry, PolicyStep, HOST_CORE,
};

pub use net::{gradient_check, masked_loss, Layout, Lstm, PolicyOutput, RecurrentState, ACTIONS};
pub use train::{
    accuracy, train, Accuracy, EpochReport, TrainConfig, TrainReport, TrainingSequence,
};

pub const ARTIFACT_FORMAT: &str = "quizhost-policy";
pub const ARTIFACT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// The network plus the vocabulary its input layer was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub registry: IntentRegistry,
    pub net: Lstm,
    pub config: TrainConfig,
}

impl PolicyModel {
    pub fn new(registry: IntentRegistry, config: TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = Lstm::init(registry.input_dim(), config.hidden, &mut rng);
        Self {
            registry,
            net,
            config,
        }
    }

    /// Every weight and bias zero. Outputs are uniform and 0.5 everywhere.
    pub fn zeros(registry: IntentRegistry, hidden: usize) -> Self {
        let net = Lstm::zeros(registry.input_dim(), hidden);
        Self {
            registry,
            net,
            config: TrainConfig {
                hidden,
                ..TrainConfig::default()
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.layout.input
    }

    pub fn hidden(&self) -> usize {
        self.net.layout.hidden
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState::zeros(self.hidden())
    }

    pub fn forward(
        &self,
        state: &RecurrentState,
        step: &PolicyStep,
    ) -> Result<(PolicyOutput, RecurrentState), PolicyError> {
        if step.len() != self.input_dim() {
            return Err(PolicyError::ShapeMismatch {
                expected: self.input_dim(),
                got: step.len(),
            });
        }
        Ok(self.net.step(state, step.as_slice()))
    }

    pub fn observe(
        &self,
        state: &RecurrentState,
        event: &DialogueEvent,
    ) -> Result<(PolicyOutput, RecurrentState), PolicyError> {
        let step = encode_step(event, &self.registry)?;
        self.forward(state, &step)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json()?).map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String, PolicyError> {
        let l = self.net.layout;
        let t = &self.net.theta;
        let artifact = Artifact {
            format: ARTIFACT_FORMAT.to_string(),
            version: ARTIFACT_VERSION,
            registry: self.registry.clone(),
            input_dim: l.input,
            hidden_size: l.hidden,
            outputs: HOST_CORE
                .iter()
                .map(|i| i.name().to_string())
                .chain(std::iter::once(Intent::NoResponse.name().to_string()))
                .collect(),
            gate_order: "input,forget,cell,output".to_string(),
            loss_reduction: "mean-per-sequence".to_string(),
            config: self.config.clone(),
            params: Params {
                lstm_weight: t[l.w()].to_vec(),
                lstm_bias: t[l.b()].to_vec(),
                action_weight: t[l.wa()].to_vec(),
                action_bias: t[l.ba()].to_vec(),
                no_response_weight: t[l.wn()].to_vec(),
                no_response_bias: t[l.bn()],
            },
        };
        serde_json::to_string_pretty(&artifact).map_err(|e| PolicyError::Artifact(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let a: Artifact =
            serde_json::from_str(text).map_err(|e| PolicyError::Artifact(e.to_string()))?;
        if a.format != ARTIFACT_FORMAT {
            return Err(PolicyError::Artifact(format!(
                "unexpected format `{}`",
                a.format
            )));
        }
        if a.version != ARTIFACT_VERSION {
            return Err(PolicyError::Artifact(format!(
                "unsupported version {}",
                a.version
            )));
        }
        if a.input_dim != a.registry.input_dim() {
            return Err(PolicyError::ShapeMismatch {
                expected: a.registry.input_dim(),
                got: a.input_dim,
            });
        }
        let l = Layout {
            input: a.input_dim,
            hidden: a.hidden_size,
        };
        let p = &a.params;
        let blocks: [(&str, usize, usize); 5] = [
            ("lstm_weight", p.lstm_weight.len(), l.w().len()),
            ("lstm_bias", p.lstm_bias.len(), l.b().len()),
            ("action_weight", p.action_weight.len(), l.wa().len()),
            ("action_bias", p.action_bias.len(), l.ba().len()),
            (
                "no_response_weight",
                p.no_response_weight.len(),
                l.wn().len(),
            ),
        ];
        for (name, got, want) in blocks {
            if got != want {
                return Err(PolicyError::Artifact(format!(
                    "{name} has {got} values, expected {want}"
                )));
            }
        }
        let mut theta = Vec::with_capacity(l.len());
        theta.extend_from_slice(&p.lstm_weight);
        theta.extend_from_slice(&p.lstm_bias);
        theta.extend_from_slice(&p.action_weight);
        theta.extend_from_slice(&p.action_bias);
        theta.extend_from_slice(&p.no_response_weight);
        theta.push(p.no_response_bias);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::Artifact("non-finite parameter".into()));
        }
        Ok(Self {
            registry: a.registry,
            net: Lstm { layout: l, theta },
            config: a.config,
        })
    }

    /// Hex SHA-256 of the serialized artifact.
    pub fn sha256(&self) -> Result<String, PolicyError> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Artifact {
    format: String,
    version: u32,
    registry: IntentRegistry,
    input_dim: usize,
    hidden_size: usize,
    outputs: Vec<String>,
    gate_order: String,
    loss_reduction: String,
    config: TrainConfig,
    params: Params,
}

#[derive(Debug, Serialize, Deserialize)]
struct Params {
    lstm_weight: Vec<f64>,
    lstm_bias: Vec<f64>,
    action_weight: Vec<f64>,
    action_bias: Vec<f64>,
    no_response_weight: Vec<f64>,
    no_response_bias: f64,
}

/// Silence when the no-response score reaches the threshold, otherwise the
/// highest-scoring host-core action (lowest index on ties).
pub fn decide(out: &PolicyOutput, threshold: f64) -> Intent {
    if out.no_response >= threshold {
        Intent::NoResponse
    } else {
        decode_host_action(out.argmax()).expect("argmax is within the host-core range")
    }
}

/// Stateful wrapper that feeds events one at a time and clears its memory at
/// question boundaries.
#[derive(Debug, Clone)]
pub struct PolicyRunner {
    model: Arc<PolicyModel>,
    state: RecurrentState,
    threshold: f64,
}

impl PolicyRunner {
    pub fn new(model: Arc<PolicyModel>, threshold: f64) -> Self {
        Self {
            state: model.initial_state(),
            model,
            threshold,
        }
    }

    pub fn reset_memory(&mut self) {
        self.state.reset();
    }

    pub fn state(&self) -> &RecurrentState {
        &self.state
    }

    pub fn model(&self) -> &PolicyModel {
        &self.model
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn observe(
        &mut self,
        event: &DialogueEvent,
    ) -> Result<(Intent, PolicyOutput), PolicyError> {
        let (out, next) = self.model.observe(&self.state, event)?;
        self.state = next;
        Ok((decide(&out, self.threshold), out))
    }

    /// Feeds a host action back as input if the registry knows it.
    pub fn feed_host(&mut self, event: &DialogueEvent) -> Result<(), PolicyError> {
        if self.model.registry.contains(event.intent) {
            self.observe(event)?;
        }
        Ok(())
    }
}
