use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::net::{Lstm, RecurrentState};
use super::{decide, PolicyModel};
use crate::error::PolicyError;
use crate::intent::{Intent, IntentRegistry, PolicyStep};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub seed: u64,
    pub threshold: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 5e-4,
            hidden: super::DEFAULT_HIDDEN,
            seed: 7,
            threshold: super::DEFAULT_THRESHOLD,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One question's worth of encoded events with the host-core action that
/// should follow each (or `None` for silence).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub steps: Vec<PolicyStep>,
    pub targets: Vec<Option<Intent>>,
}

impl TrainingSequence {
    /// Plain vectors and head-index targets, as the network consumes them.
    pub fn raw(&self) -> (Vec<Vec<f64>>, Vec<Option<usize>>) {
        (
            self.steps.iter().map(|s| s.0.clone()).collect(),
            self.targets
                .iter()
                .map(|t| t.and_then(|i| i.host_core_index()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub priming_hits: usize,
    pub priming_total: usize,
}

impl Accuracy {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn priming_rate(&self) -> f64 {
        if self.priming_total == 0 {
            0.0
        } else {
            self.priming_hits as f64 / self.priming_total as f64
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub train_accuracy: Accuracy,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn update(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for p in 0..theta.len() {
            let g = grad[p];
            self.m[p] = cfg.beta1 * self.m[p] + (1.0 - cfg.beta1) * g;
            self.v[p] = cfg.beta2 * self.v[p] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[p] / c1;
            let v_hat = self.v[p] / c2;
            theta[p] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Trains a fresh model with teacher forcing, one Adam update per sequence,
/// visiting sequences in a seeded shuffled order each epoch.
pub fn train(
    registry: IntentRegistry,
    sequences: &[TrainingSequence],
    config: TrainConfig,
) -> Result<(PolicyModel, TrainReport), PolicyError> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(PolicyError::EmptyCorpus);
    }
    let dim = registry.input_dim();
    for s in sequences {
        if let Some(bad) = s.steps.iter().find(|st| st.len() != dim) {
            return Err(PolicyError::ShapeMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if s.steps.len() != s.targets.len() {
            return Err(PolicyError::Config(
                "steps and targets differ in length".into(),
            ));
        }
    }

    let mut model = PolicyModel::new(registry, config.clone());
    let raw: Vec<_> = sequences.iter().map(TrainingSequence::raw).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(model.net.theta.len());
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (steps, targets) = &raw[i];
            let (loss, grad) = model.net.loss_and_grad(steps, targets);
            total += loss;
            adam.update(&mut model.net.theta, &grad, &config);
        }
        let mean_loss = total / raw.len() as f64;
        debug!(epoch, mean_loss, "epoch done");
        epochs.push(EpochReport { epoch, mean_loss });
    }

    let train_accuracy = accuracy(&model, sequences, config.threshold);
    Ok((
        model,
        TrainReport {
            epochs,
            train_accuracy,
        },
    ))
}

/// Replays each sequence from a zero state and counts steps where the
/// thresholded decision equals the target.
pub fn accuracy(model: &PolicyModel, sequences: &[TrainingSequence], threshold: f64) -> Accuracy {
    let mut acc = Accuracy {
        correct: 0,
        total: 0,
        priming_hits: 0,
        priming_total: 0,
    };
    for s in sequences {
        let mut state = RecurrentState::zeros(model.hidden());
        for (t, (step, target)) in s.steps.iter().zip(&s.targets).enumerate() {
            let (out, next) = model.net.step(&state, step.as_slice());
            state = next;
            let want = target.unwrap_or(Intent::NoResponse);
            let got = decide(&out, threshold);
            acc.total += 1;
            if got == want {
                acc.correct += 1;
            }
            if t == 0 && want == Intent::Options {
                acc.priming_total += 1;
                if got == Intent::Options {
                    acc.priming_hits += 1;
                }
            }
        }
    }
    acc
}

impl Lstm {
    pub fn parameter_count(&self) -> usize {
        self.theta.len()
    }
}
