//! Loss, Adam, gradient checking and the early-stopping training loop.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, CropSpec, Protocol, VideoClip};
use crate::error::{shape_err, Error, Result};
use crate::model::Model;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of `labels` under `probs` (`batch×classes`).
pub fn nll_loss(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if probs.rank() != 2 || probs.shape()[0] != labels.len() {
        return Err(shape_err(
            "nll_loss",
            format!(
                "probabilities {:?} for {} labels",
                probs.shape(),
                labels.len()
            ),
        ));
    }
    let classes = probs.shape()[1];
    let mut total = 0.0;
    for (row, &y) in probs.data().chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        total -= libm::log(row[y].max(PROB_FLOOR));
    }
    Ok(total / labels.len() as f64)
}

/// Differentiable `−log p[label]` for one probability vector.
pub fn nll_on_tape(tape: &mut Tape, probs: Var, label: usize) -> Result<Var> {
    let classes = tape.value(probs).len();
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    tape.neg_log(probs, label, PROB_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(shape_err(
                "adam_step",
                format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "adam_step" });
        }
    }
    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let c1 = 1.0 - libm::pow(beta1, state.t as f64);
    let c2 = 1.0 - libm::pow(beta2, state.t as f64);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }
}

/// Compares reverse-mode gradients of the scalar `loss` against central
/// differences for every element of every block in `params`.
///
/// `fault` corrupts one backward rule on the analytic pass, which the
/// report must then flag.
pub fn grad_check(
    names: &[String],
    params: &[Tensor],
    loss: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    tolerance: f64,
    fault: Option<OpKind>,
) -> Result<GradCheckReport> {
    let mut tape = match fault {
        Some(kind) => Tape::with_backward_fault(kind),
        None => Tape::new(),
    };
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = loss(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let value_at = |params: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = loss(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut blocks = Vec::with_capacity(params.len());
    for (b, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).clone();
        let mut worst: f64 = 0.0;
        for i in 0..params[b].len() {
            let orig = params[b].data()[i];
            work[b].data_mut()[i] = orig + FD_STEP;
            let plus = value_at(&work)?;
            work[b].data_mut()[i] = orig - FD_STEP;
            let minus = value_at(&work)?;
            work[b].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        blocks.push(BlockError {
            name: names.get(b).cloned().unwrap_or_else(|| format!("block{b}")),
            max_relative_error: worst,
        });
    }
    Ok(GradCheckReport { blocks, tolerance })
}

/// Source of elapsed seconds for training logs.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that always reads zero, for fully reproducible logs.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Upper bound on epochs; 0 leaves the model untouched.
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    pub crop: CropSpec,
    /// View used to score the validation split.
    pub validation: Protocol,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let crop = CropSpec::default();
        Self {
            max_epochs: 50,
            batch_size: 16,
            patience: 10,
            adam: AdamConfig::default(),
            validation: Protocol::single_view(crop.steps, crop.output, crop.output),
            crop,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        let e = self.best_epoch?;
        self.epochs.iter().find(|r| r.epoch == e)
    }
}

/// Validation loss and accuracy of `model` under `protocol`.
pub fn validate(model: &Model, clips: &[VideoClip], protocol: &Protocol) -> Result<(f64, f64)> {
    let classes = model.config().classes;
    let mut predict = |x: &Tensor| model.predict(x);
    let eval = data::evaluate(&mut predict, clips, classes, protocol)?;
    let probs = Tensor::stack(&eval.scores)?;
    let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
    Ok((nll_loss(&probs, &labels)?, eval.accuracy))
}

/// Loss and parameter gradients for one mini-batch of crops.
pub fn batch_gradients(
    model: &Model,
    batch: &[(Tensor, usize)],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Tensor>)> {
    let mut sum: Vec<Tensor> = model
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect();
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (frames, label) in batch {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true)?;
        let probs = model.forward_on(
            &mut tape,
            &vars,
            frames,
            Some(&mut *rng as &mut dyn rand::RngCore),
        )?;
        let loss = nll_on_tape(&mut tape, probs, *label)?;
        total += tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        for (i, v) in vars.iter().enumerate() {
            if !model.is_trainable(i) {
                continue;
            }
            let g = grads.take(*v);
            sum[i]
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(s, g)| *s += scale * g);
        }
    }
    Ok((total * scale, sum))
}

/// Mini-batch Adam on random crops with early stopping on validation
/// loss. On return `model` holds the best parameters seen.
pub fn train(
    model: &mut Model,
    config: &TrainConfig,
    train_set: &[VideoClip],
    val_set: &[VideoClip],
    clock: &dyn Clock,
) -> Result<TrainLog> {
    train_with(model, config, train_set, val_set, clock, &mut |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &mut Model,
    config: &TrainConfig,
    train_set: &[VideoClip],
    val_set: &[VideoClip],
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainLog> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Invalid(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::Invalid("train.batch_size must be positive".into()));
    }
    let classes = model.config().classes;
    if let Some(c) = train_set.iter().chain(val_set).find(|c| c.label >= classes) {
        return Err(Error::LabelOutOfRange {
            label: c.label,
            classes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.tensors(), config.adam);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let start = clock.seconds();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    Ok((
                        data::sample_crop(&train_set[i], &config.crop, &mut rng)?,
                        train_set[i].label,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_gradients(model, &batch, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { op: "train" });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam_step(&mut adam, model.tensors_mut(), &grads)?;
        }
        let (val_loss, val_acc) = validate(model, val_set, &config.validation)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_acc,
            seconds: clock.seconds() - start,
        };
        on_epoch(&record);
        log.epochs.push(record);
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.tensors().to_vec()));
            log.best_epoch = Some(epoch);
        }
        let since = epoch - log.best_epoch.unwrap_or(epoch);
        if since >= config.patience {
            break;
        }
    }
    if let Some((_, tensors)) = best {
        model.tensors_mut().clone_from_slice(&tensors);
    }
    Ok(log)
}
