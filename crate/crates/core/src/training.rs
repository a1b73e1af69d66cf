//! Fold splitting, Adam, gradient clipping and the epoch loop with early
//! stopping on validation AUC.
//!
//! A run draws everything from one `ChaCha8Rng` seeded with `seed`, in this
//! order: parameter initialization, then per epoch the batch shuffle followed
//! by the dropout masks of each batch in turn.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::akt::{AktConfig, AktModel, DecayMode};
use crate::bkt::{BktModel, FitMethod};
use crate::checkpoint::Model;
use crate::data::InteractionSequence;
use crate::dkt::{Cell, DktConfig, DktModel};
use crate::error::{KtError, Result};
use crate::evaluation::{auc, teacher_forced_set, Granularity};
use crate::model::KnowledgeTracer;
use crate::nn::{Differentiable, ParamSet};
use crate::tensor::{Tape, Tensor};

pub const NUM_FOLDS: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bkt,
    #[default]
    Dkt,
    Akt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub fold: u8,
    pub bkt_fit: FitMethod,
    pub dkt_hidden: usize,
    pub dkt_cell: Cell,
    pub akt_d_model: usize,
    pub akt_heads: usize,
    pub akt_layers: usize,
    pub akt_ff: usize,
    pub akt_decay: DecayMode,
    pub akt_dropout: f64,
    pub akt_rasch_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Dkt,
            lr: 1e-3,
            batch_size: 32,
            epochs: 50,
            patience: 5,
            clip_norm: 5.0,
            seed: 0,
            fold: 0,
            bkt_fit: FitMethod::Em,
            dkt_hidden: 64,
            dkt_cell: Cell::Lstm,
            akt_d_model: 64,
            akt_heads: 4,
            akt_layers: 1,
            akt_ff: 64,
            akt_decay: DecayMode::IndexDistance,
            akt_dropout: 0.05,
            akt_rasch_lambda: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(KtError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.patience == 0 || self.epochs == 0 {
            return Err(KtError::Config(
                "batch size, patience and epochs must be at least 1".into(),
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(KtError::Config(format!(
                "clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        check_fold(self.fold)
    }

    pub fn dkt_config(&self, num_kcs: usize) -> DktConfig {
        DktConfig::new(num_kcs, self.dkt_hidden, self.dkt_cell)
    }

    pub fn akt_config(&self, num_kcs: usize, num_questions: usize) -> AktConfig {
        AktConfig {
            d_model: self.akt_d_model,
            num_heads: self.akt_heads,
            num_layers: self.akt_layers,
            ff_dim: self.akt_ff,
            decay_mode: self.akt_decay,
            dropout: self.akt_dropout,
            rasch_lambda: self.akt_rasch_lambda,
            ..AktConfig::new(num_kcs, num_questions)
        }
    }
}

fn check_fold(fold: u8) -> Result<()> {
    if fold >= NUM_FOLDS {
        return Err(KtError::Config(format!(
            "fold {fold} is outside 0..{}",
            NUM_FOLDS - 1
        )));
    }
    Ok(())
}

/// Splits by fold label: `(train, validation)`.
pub fn kfold_split(
    sequences: &[InteractionSequence],
    fold: u8,
) -> Result<(Vec<InteractionSequence>, Vec<InteractionSequence>)> {
    check_fold(fold)?;
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for s in sequences {
        match s.fold {
            Some(f) if f == fold => valid.push(s.clone()),
            Some(_) => train.push(s.clone()),
            None => return Err(KtError::Data(format!("uid {} has no fold label", s.uid))),
        }
    }
    Ok((train, valid))
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_of_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(KtError::Contract(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.get(i).shape() {
                return Err(KtError::Dimension {
                    op: "adam_step",
                    lhs: params.get(i).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(KtError::Numeric(format!(
                    "gradient of '{}'",
                    params.name(i)
                )));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(i).data_mut();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g.data()[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g.data()[j] * g.data()[j];
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Loss and parameter gradients of one batch.
pub fn batch_gradients<M: Differentiable>(
    model: &M,
    batch: &[&InteractionSequence],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = model.params().load(&mut tape, true);
    let loss = model.batch_loss(&mut tape, &vars, batch, rng)?;
    tape.backward(loss)?;
    let value = tape.value(loss).item();
    Ok((value, vars.iter().map(|&v| tape.grad(v)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_auc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelKind,
    pub fold: u8,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid_auc: f64,
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub model: Model,
}

/// Pooled teacher-forced AUC at KC granularity.
pub fn validation_auc(model: &dyn KnowledgeTracer, valid: &[InteractionSequence]) -> Result<f64> {
    let set = teacher_forced_set(model, valid, Granularity::Kc)?;
    auc(&set.scores, &set.labels)
}

/// Trains one model. `progress` sees each epoch as it finishes.
pub fn train_model(
    config: &TrainConfig,
    train: &[InteractionSequence],
    valid: &[InteractionSequence],
    num_kcs: usize,
    num_questions: usize,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(KtError::InsufficientData(format!(
            "{} training and {} validation sequences",
            train.len(),
            valid.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match config.model {
        ModelKind::Bkt => {
            let start = Instant::now();
            let model = BktModel::fit(train, config.bkt_fit)?;
            let valid_auc = validation_auc(&model, valid)?;
            let epoch = EpochRecord {
                epoch: 1,
                train_loss: f64::NAN,
                valid_auc,
                seconds: start.elapsed().as_secs_f64(),
            };
            progress(&epoch);
            Ok(TrainOutcome {
                record: RunRecord {
                    model: config.model,
                    fold: config.fold,
                    seed: config.seed,
                    epochs: vec![epoch],
                    best_epoch: 1,
                    best_valid_auc: valid_auc,
                },
                model: Model::Bkt(model),
            })
        }
        ModelKind::Dkt => {
            let model = DktModel::with_rng(config.dkt_config(num_kcs), &mut rng)?;
            let (record, best) = epochs(config, model, train, valid, &mut rng, progress)?;
            Ok(TrainOutcome {
                record,
                model: Model::Dkt(best),
            })
        }
        ModelKind::Akt => {
            let model = AktModel::with_rng(config.akt_config(num_kcs, num_questions), &mut rng)?;
            let (record, best) = epochs(config, model, train, valid, &mut rng, progress)?;
            Ok(TrainOutcome {
                record,
                model: Model::Akt(best),
            })
        }
    }
}

fn epochs<M: Differentiable + KnowledgeTracer + Clone>(
    config: &TrainConfig,
    mut model: M,
    train: &[InteractionSequence],
    valid: &[InteractionSequence],
    rng: &mut ChaCha8Rng,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(RunRecord, M)> {
    let mut adam = Adam::new(model.params(), config.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut record = RunRecord {
        model: config.model,
        fold: config.fold,
        seed: config.seed,
        epochs: Vec::new(),
        best_epoch: 0,
        best_valid_auc: f64::NEG_INFINITY,
    };
    let mut best = model.clone();
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&InteractionSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = batch_gradients(&model, &batch, Some(&mut *rng))?;
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step(model.params_mut(), &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        let valid_auc = validation_auc(&model, valid)?;
        let entry = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            valid_auc,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&entry);
        record.epochs.push(entry);
        if valid_auc > record.best_valid_auc {
            record.best_valid_auc = valid_auc;
            record.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((record, best))
}
