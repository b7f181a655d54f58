//! Joint speak/silence + generation objective, the epoch loop with early
//! stopping, checkpoint persistence and the full-model gradient check.

mod checkpoint;
mod gradcheck;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointError,
};
pub use gradcheck::{
    check_config, check_samples, model_grad_check, GroupError, ModelGradCheck, CHECK_VOCAB,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use w2t_numerics::{
    adam_step, clip_global_norm, AdamConfig, AdamState, Mode, NumericsError, Real, Tape, Tensor,
    Var,
};

use crate::corpus::{AgentSelection, EncodedSample};
use crate::model::{BatchForward, Model, ModelConfig, ModelError, ModelParams, Net};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    Empty(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Which validation quantity picks the best epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Loss,
    Accuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Weight of the decision loss against the generation loss.
    pub loss_lambda: f64,
    pub seed: u64,
    pub clip_norm: f64,
    pub selection: Selection,
    pub min_freq: usize,
    pub agent: AgentSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            epochs: 30,
            patience: 5,
            batch_size: 32,
            loss_lambda: 1.0,
            seed: 0,
            clip_norm: 5.0,
            selection: Selection::Loss,
            min_freq: 1,
            agent: AgentSelection::Both,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.loss_lambda.is_nan() || self.loss_lambda < 0.0 {
            return bad("loss_lambda must be non-negative");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        if self.min_freq == 0 {
            return bad("min_freq must be at least 1");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// The three parts of the objective, on the tape.
pub struct JointLoss {
    pub total: Var,
    pub decision: Option<Var>,
    pub generation: Var,
}

/// `lambda * mean BCE + mean token cross-entropy`; without a decision head
/// only the generation part remains.
pub fn joint_loss<T: Real>(
    tape: &Tape<T>,
    out: &BatchForward,
    samples: &[&EncodedSample],
    lambda: f64,
) -> Result<JointLoss, TrainError> {
    let tokens: Vec<Var> = out.token_losses.iter().flatten().copied().collect();
    if tokens.is_empty() {
        return Err(TrainError::Empty("reply token"));
    }
    let generation = tape.scale(tape.sum(&tokens)?, T::of(1.0 / tokens.len() as f64));
    let decision = match &out.decision {
        Some(probs) => {
            let bces = probs
                .iter()
                .zip(samples)
                .map(|(&p, s)| tape.bce(p, s.decision))
                .collect::<Result<Vec<_>, _>>()?;
            Some(tape.scale(tape.sum(&bces)?, T::of(1.0 / bces.len() as f64)))
        }
        None => None,
    };
    let total = match decision {
        Some(d) => tape.add(tape.scale(d, T::of(lambda)), generation)?,
        None => generation,
    };
    Ok(JointLoss {
        total,
        decision,
        generation,
    })
}

/// Tracks the best score (lower is better) and counts epochs without
/// improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `score` for `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if self.best.is_none_or(|b| score < b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Teacher-forced scores of a sample set in evaluation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleScores {
    /// Speak probability per sample, when the decision head is enabled.
    pub decision: Option<Vec<f64>>,
    /// Cross-entropy per reply token, per sample.
    pub token_losses: Vec<Vec<f64>>,
}

pub fn score_samples<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    samples: &[EncodedSample],
    batch_size: usize,
) -> Result<SampleScores, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut decision = cfg.decision_enabled.then(Vec::new);
    let mut token_losses = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let tape = Tape::new();
        let net = Net::new(&tape, cfg, params)?;
        let refs: Vec<&EncodedSample> = chunk.iter().collect();
        let out = net.forward_batch(&refs, Mode::Eval, &mut rng)?;
        if let (Some(acc), Some(ps)) = (decision.as_mut(), &out.decision) {
            acc.extend(ps.iter().map(|&p| tape.item(p).as_f64()));
        }
        token_losses.extend(out.token_losses.iter().map(|ls| {
            ls.iter()
                .map(|&l| tape.item(l).as_f64())
                .collect::<Vec<_>>()
        }));
    }
    Ok(SampleScores {
        decision,
        token_losses,
    })
}

/// Objective and accuracy over a whole split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossSummary {
    pub total: f64,
    pub decision: Option<f64>,
    pub generation: f64,
    pub accuracy: Option<f64>,
}

pub fn evaluate_loss<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    samples: &[EncodedSample],
    lambda: f64,
    batch_size: usize,
) -> Result<LossSummary, ModelError> {
    let s = score_samples(cfg, params, samples, batch_size)?;
    let n_tok: usize = s.token_losses.iter().map(Vec::len).sum();
    let generation = s.token_losses.iter().flatten().sum::<f64>() / n_tok.max(1) as f64;
    let (decision, accuracy) = match &s.decision {
        Some(ps) => {
            let eps = w2t_numerics::tape::BCE_EPS;
            let bce: f64 = ps
                .iter()
                .zip(samples)
                .map(|(&p, x)| {
                    let p = p.clamp(eps, 1.0 - eps);
                    if x.decision {
                        -p.ln()
                    } else {
                        -(1.0 - p).ln()
                    }
                })
                .sum::<f64>()
                / ps.len() as f64;
            let correct = ps
                .iter()
                .zip(samples)
                .filter(|(&p, x)| (p >= cfg.threshold) == x.decision)
                .count();
            (Some(bce), Some(correct as f64 / ps.len() as f64))
        }
        None => (None, None),
    };
    Ok(LossSummary {
        total: lambda * decision.unwrap_or(0.0) + generation,
        decision,
        generation,
        accuracy,
    })
}

/// Parameters, optimizer state and the generator driving shuffles and
/// dropout masks.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    adam: AdamState<f32>,
    rng: ChaCha8Rng,
    steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub decision: Option<f64>,
    pub generation: f64,
    pub grad_norm: f64,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        model.config.validate()?;
        let adam = AdamState::new(model.params.tensors());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            config,
            adam,
            rng,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One forward/backward pass over `batch`, clipping and an Adam update.
    pub fn step(&mut self, batch: &[&EncodedSample]) -> Result<StepLoss, TrainError> {
        let (loss, mut grads) = {
            let tape = Tape::<f32>::new();
            let net = Net::new(&tape, &self.model.config, &self.model.params)?;
            let out = net.forward_batch(batch, Mode::Train, &mut self.rng)?;
            let l = joint_loss(&tape, &out, batch, self.config.loss_lambda)?;
            let g = tape.backward(l.total)?;
            let grads: Vec<Tensor<f32>> = net.vars().iter().map(|&v| g.tensor(v)).collect();
            let loss = (
                tape.item(l.total) as f64,
                l.decision.map(|d| tape.item(d) as f64),
                tape.item(l.generation) as f64,
            );
            (loss, grads)
        };
        let grad_norm = clip_global_norm(&mut grads, self.config.clip_norm);
        adam_step(
            self.model.params.tensors_mut(),
            &grads,
            &mut self.adam,
            &self.config.adam(),
        )?;
        self.steps += 1;
        Ok(StepLoss {
            total: loss.0,
            decision: loss.1,
            generation: loss.2,
            grad_norm,
        })
    }

    /// One pass over `train` in a freshly shuffled order; returns the mean
    /// step loss.
    pub fn epoch(&mut self, train: &[EncodedSample]) -> Result<f64, TrainError> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = 0.0;
        let mut n = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &train[i]).collect();
            sum += self.step(&batch)?.total;
            n += 1;
        }
        Ok(sum / n.max(1) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: Option<f64>,
    pub best: bool,
}

pub struct TrainOutcome {
    /// Model at the best validation epoch.
    pub best: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Epoch loop with early stopping on the validation objective (or
/// accuracy, by [`Selection`]). `on_epoch` sees every log entry as it is
/// produced.
pub fn train(
    model: Model,
    train_set: &[EncodedSample],
    val_set: &[EncodedSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::Empty("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::Empty("validation"));
    }
    if config.selection == Selection::Accuracy && !model.config.decision_enabled {
        return Err(TrainError::Config(
            "accuracy selection needs the decision head".into(),
        ));
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = trainer.model.clone();
    let mut log = Vec::new();
    for epoch in 1..=config.epochs {
        let train_loss = trainer.epoch(train_set)?;
        let val = evaluate_loss(
            &trainer.model.config,
            &trainer.model.params,
            val_set,
            config.loss_lambda,
            config.batch_size,
        )?;
        let score = match config.selection {
            Selection::Loss => val.total,
            Selection::Accuracy => -val.accuracy.unwrap_or(0.0),
        };
        let improved = stopper.observe(epoch, score);
        if improved {
            best = trainer.model.clone();
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss: val.total,
            val_accuracy: val.accuracy,
            best: improved,
        };
        on_epoch(&entry);
        log.push(entry);
        if stopper.should_stop() {
            break;
        }
    }
    if log.is_empty() {
        return Err(TrainError::Config("epochs must be at least 1".into()));
    }
    Ok(TrainOutcome {
        best,
        best_epoch: stopper.best_epoch(),
        log,
    })
}
