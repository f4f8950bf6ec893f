//! Training loops: the fact checker on depth-0 queries, the unifier through
//! the frozen fact checker, and the end-to-end baseline.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unifier_core::datagen::DatasetRecord;
use unifier_core::seeds::derive_seed;

use crate::model::{self, Dropout};
use crate::optim::{Adam, AdamConfig};
use crate::params::{EncoderConfig, EncoderParams};
use crate::splice;
use crate::vocab::{tokenize, TokenSeq, Vocab};
use crate::NeuralError;

pub const LR_RANGE: (f64, f64) = (1e-6, 1e-2);
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Optimizer steps over which the learning rate ramps linearly from
    /// zero; 0 disables the ramp.
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            max_epochs: 20,
            patience: 3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            warmup_steps: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.batch_size == 0 {
            return Err(NeuralError::Config("batch size must be at least 1".into()));
        }
        if !(LR_RANGE.0..=LR_RANGE.1).contains(&self.learning_rate) {
            return Err(NeuralError::Config(format!(
                "learning rate {} outside [{}, {}]",
                self.learning_rate, LR_RANGE.0, LR_RANGE.1
            )));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(NeuralError::Config("max_epochs and patience must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for the update following `steps` completed ones.
    pub fn learning_rate_at(&self, steps: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * ((steps + 1) as f64 / self.warmup_steps as f64).min(1.0)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// A tokenized record.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub seq: TokenSeq,
    pub label: bool,
    pub depth: usize,
    pub provable: bool,
}

pub fn prepare(records: &[DatasetRecord], vocab: &Vocab, max_len: usize) -> Result<Vec<Example>, NeuralError> {
    records
        .iter()
        .map(|r| {
            Ok(Example {
                seq: tokenize(&r.context, &r.question, vocab, max_len)?,
                label: r.label,
                depth: r.depth,
                provable: r.provable,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

impl TrainLog {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tval_accuracy\tlr\twall_seconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:e}\t{:.1}",
                e.epoch, e.train_loss, e.val_accuracy, e.learning_rate, e.wall_seconds
            );
        }
        out
    }
}

/// A trained predictor: one encoder, or a unifier feeding a frozen fact
/// checker.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Single(EncoderParams<f32>),
    Unified {
        fact_checker: EncoderParams<f32>,
        unifier: EncoderParams<f32>,
    },
}

impl Model {
    pub fn predict_seqs(&self, seqs: &[&TokenSeq]) -> Result<Vec<f32>, NeuralError> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(EVAL_BATCH) {
            out.extend(match self {
                Model::Single(p) => model::predict_probs(p, chunk)?,
                Model::Unified {
                    fact_checker,
                    unifier,
                } => splice::predict_probs(fact_checker, unifier, chunk)?,
            });
        }
        Ok(out)
    }

    pub fn predict(&self, examples: &[Example]) -> Result<Vec<f32>, NeuralError> {
        let seqs: Vec<&TokenSeq> = examples.iter().map(|e| &e.seq).collect();
        self.predict_seqs(&seqs)
    }

    /// Probability for a single context and question.
    pub fn predict_text(&self, vocab: &Vocab, context: &str, question: &str) -> Result<f32, NeuralError> {
        let max_len = match self {
            Model::Single(p) => p.config.max_len,
            Model::Unified { unifier, .. } => unifier.config.max_len,
        };
        let seq = tokenize(context, question, vocab, max_len)?;
        Ok(self.predict_seqs(&[&seq])?[0])
    }
}

pub fn accuracy(probs: &[f32], examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return f64::NAN;
    }
    let correct = probs
        .iter()
        .zip(examples)
        .filter(|(p, e)| (**p >= 0.5) == e.label)
        .count();
    correct as f64 / examples.len() as f64
}

type LossFn<'a> =
    dyn Fn(&EncoderParams<f32>, &[&TokenSeq], &[bool], Option<&mut Dropout>, &mut [f32]) -> Result<f32, NeuralError> + 'a;
type PredictFn<'a> = dyn Fn(&EncoderParams<f32>) -> Result<Model, NeuralError> + 'a;

/// Mini-batch Adam with early stopping on validation accuracy; the
/// parameters of the best epoch are restored at the end.
fn fit(
    params: &mut EncoderParams<f32>,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
    loss_fn: &LossFn<'_>,
    as_model: &PredictFn<'_>,
    tag: &str,
) -> Result<TrainLog, NeuralError> {
    config.validate()?;
    if train.is_empty() {
        return Err(NeuralError::Input("no training examples".into()));
    }
    let start = Instant::now();
    let mut adam = Adam::new(config.adam(), params.len());
    let mut grads = params.zeros_like();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut dropout = Dropout {
            rate: params.config.dropout,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[epoch as u64, 1])),
        };
        let mut total = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let seqs: Vec<&TokenSeq> = batch.iter().map(|i| &train[*i].seq).collect();
            let labels: Vec<bool> = batch.iter().map(|i| train[*i].label).collect();
            grads.iter_mut().for_each(|g| *g = 0.0);
            let loss = loss_fn(params, &seqs, &labels, Some(&mut dropout), &mut grads)?;
            if !loss.is_finite() {
                return Err(NeuralError::Input(format!("{tag}: loss diverged in epoch {epoch}")));
            }
            total += f64::from(loss) * batch.len() as f64;
            adam.config.learning_rate = config.learning_rate_at(adam.steps());
            adam.step(params, &grads)?;
        }
        let val_accuracy = if val.is_empty() {
            f64::NAN
        } else {
            accuracy(&as_model(params)?.predict(val)?, val)
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_accuracy,
            learning_rate: config.learning_rate,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{tag} epoch {epoch}: loss {:.4}, val accuracy {:.4}, {:.0}s",
            entry.train_loss,
            entry.val_accuracy,
            entry.wall_seconds
        );
        log.epochs.push(entry);
        if val.is_empty() {
            best = params.clone();
            log.best_epoch = epoch;
            continue;
        }
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best = params.clone();
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    log.best_val_accuracy = best_acc;
    *params = best;
    Ok(log)
}

fn single_loss(
    p: &EncoderParams<f32>,
    seqs: &[&TokenSeq],
    labels: &[bool],
    dropout: Option<&mut Dropout>,
    grads: &mut [f32],
) -> Result<f32, NeuralError> {
    model::loss_and_grads(p, seqs, labels, dropout, grads)
}

/// Fact checker on depth-0 queries only; returned frozen.
pub fn train_fu(
    train: &[Example],
    val: &[Example],
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Result<(EncoderParams<f32>, TrainLog), NeuralError> {
    if let Some(e) = train.iter().chain(val).find(|e| e.depth != 0) {
        return Err(NeuralError::Input(format!(
            "the fact checker trains on depth-0 queries only, found depth {}",
            e.depth
        )));
    }
    let mut params = EncoderParams::init(encoder)?;
    let log = fit(
        &mut params,
        train,
        val,
        config,
        &single_loss,
        &|p| Ok(Model::Single(p.clone())),
        "fact checker",
    )?;
    params.frozen = true;
    Ok((params, log))
}

/// End-to-end baseline on whatever depths `train` holds.
pub fn train_rt(
    train: &[Example],
    val: &[Example],
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Result<(EncoderParams<f32>, TrainLog), NeuralError> {
    let mut params = EncoderParams::init(encoder)?;
    let log = fit(
        &mut params,
        train,
        val,
        config,
        &single_loss,
        &|p| Ok(Model::Single(p.clone())),
        "baseline",
    )?;
    Ok((params, log))
}

/// Unifier trained through the frozen fact checker.
pub fn train_uu(
    train: &[Example],
    val: &[Example],
    fact_checker: &EncoderParams<f32>,
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Result<(EncoderParams<f32>, TrainLog), NeuralError> {
    if !fact_checker.frozen {
        return Err(NeuralError::NotFrozen);
    }
    let mut params = EncoderParams::init(encoder)?;
    splice::check_pair(fact_checker, &params)?;
    let loss = |p: &EncoderParams<f32>,
                seqs: &[&TokenSeq],
                labels: &[bool],
                dropout: Option<&mut Dropout>,
                grads: &mut [f32]| {
        splice::loss_and_grads(fact_checker, p, seqs, labels, dropout, grads)
    };
    let log = fit(
        &mut params,
        train,
        val,
        config,
        &loss,
        &|p| {
            Ok(Model::Unified {
                fact_checker: fact_checker.clone(),
                unifier: p.clone(),
            })
        },
        "unifier",
    )?;
    Ok((params, log))
}
