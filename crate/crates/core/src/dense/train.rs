use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{EncoderModel, TrainingBatch};
use super::DenseError;

/// Stream id for the shuffling rng, so it never overlaps initialization.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl Optimizer {
    pub fn adamw() -> Self {
        Optimizer::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub epochs: usize,
    pub seed: u64,
    pub use_context: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    UseqaStyle,
    BertStyle,
}

impl std::str::FromStr for Preset {
    type Err = DenseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "useqa-style" => Ok(Preset::UseqaStyle),
            "bert-style" => Ok(Preset::BertStyle),
            other => Err(DenseError::InvalidConfig(format!(
                "unknown preset {other:?} (expected useqa-style or bert-style)"
            ))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::UseqaStyle => "useqa-style",
            Preset::BertStyle => "bert-style",
        })
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        match preset {
            Preset::UseqaStyle => Self {
                batch_size: 64,
                optimizer: Optimizer::Sgd,
                lr_initial: 0.01,
                lr_final: 0.001,
                epochs: 10,
                seed,
                use_context: true,
            },
            Preset::BertStyle => Self {
                batch_size: 128,
                optimizer: Optimizer::adamw(),
                lr_initial: 1e-4,
                lr_final: 1e-4,
                epochs: 10,
                seed,
                use_context: true,
            },
        }
    }

    pub fn validate(&self) -> Result<(), DenseError> {
        if self.epochs == 0 {
            return Err(DenseError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(DenseError::InvalidConfig("batch size must be >= 2".into()));
        }
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_initial && self.lr_initial.is_finite()) {
            return Err(DenseError::InvalidConfig(format!(
                "learning rates must satisfy 0 < final ({}) <= initial ({})",
                self.lr_final, self.lr_initial
            )));
        }
        Ok(())
    }

    /// Exponential decay from `lr_initial` at step 0 to exactly `lr_final`
    /// at the last step.
    pub fn learning_rate(&self, step: usize, total_steps: usize) -> f64 {
        let last = total_steps.saturating_sub(1);
        if last == 0 || self.lr_initial == self.lr_final {
            return self.lr_initial;
        }
        if step >= last {
            return self.lr_final;
        }
        self.lr_initial * (self.lr_final / self.lr_initial).powf(step as f64 / last as f64)
    }
}

/// One training example as token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub question: Vec<u32>,
    pub answer: Vec<u32>,
    pub context: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub epoch_losses: Vec<f64>,
    pub final_lr: f64,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    let full = n / batch_size;
    full + usize::from(n % batch_size >= 2)
}

fn apply_update(
    params: &mut [f64],
    grad: &[f64],
    lr: f64,
    optimizer: &Optimizer,
    adam: &mut Option<AdamState>,
) {
    match *optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
        } => {
            let st = adam.get_or_insert_with(|| AdamState {
                m: vec![0.0; params.len()],
                v: vec![0.0; params.len()],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            for i in 0..params.len() {
                let g = grad[i];
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                let mhat = st.m[i] / c1;
                let vhat = st.v[i] / c2;
                params[i] -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * params[i]);
            }
        }
    }
}

/// Minibatch training with in-batch negatives. Pairs are reshuffled every
/// epoch; a trailing batch with fewer than two pairs is skipped.
pub fn train(model: &mut EncoderModel, pairs: &[EncodedPair], config: &TrainConfig) -> Result<TrainReport, DenseError> {
    config.validate()?;
    if pairs.len() < config.batch_size {
        return Err(DenseError::InsufficientData {
            have: pairs.len(),
            need: config.batch_size,
        });
    }
    let per_epoch = batches_per_epoch(pairs.len(), config.batch_size);
    let total = per_epoch * config.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut adam = None;
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut lr = config.lr_initial;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut n = 0;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = TrainingBatch {
                questions: chunk.iter().map(|&i| pairs[i].question.clone()).collect(),
                answers: chunk.iter().map(|&i| pairs[i].answer.clone()).collect(),
                contexts: chunk.iter().map(|&i| pairs[i].context.clone()).collect(),
                use_context: config.use_context,
            };
            let (out, grad) = model.batch_gradients(&batch)?;
            lr = config.learning_rate(step, total);
            apply_update(model.params_mut(), &grad, lr, &config.optimizer, &mut adam);
            sum += out.loss;
            n += 1;
            step += 1;
        }
        let mean = sum / n as f64;
        log::info!("epoch {} loss {:.6} lr {:.6}", epoch + 1, mean, lr);
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        steps: step,
        epoch_losses,
        final_lr: lr,
    })
}

/// Splits off a seeded `fraction` for validation; both halves keep their
/// original relative order.
pub fn split_validation<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let n_valid = ((items.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_valid = vec![false; items.len()];
    for &i in &idx[..n_valid] {
        is_valid[i] = true;
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (i, item) in items.iter().enumerate() {
        if is_valid[i] {
            valid.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    (train, valid)
}
