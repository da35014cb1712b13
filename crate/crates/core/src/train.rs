//! Seeded mini-batch training with Adam and best-validation selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{
    balance::{compute_weights, count_classes, unbalanced_weights, ObjectiveWeights},
    datagen::{Augmentation, Dataset, Split, Stage},
    model::{ModelState, ParamSet, Real, StageTag},
    util::rng_stream,
    Error, Result,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments<T> {
    pub first: ParamSet<T>,
    pub second: ParamSet<T>,
}

impl<T: Real> AdamMoments<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        AdamMoments {
            first: ParamSet::zeros_like(params),
            second: ParamSet::zeros_like(params),
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based). Gradients are
/// checked for finiteness before anything is modified.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    moments: &mut AdamMoments<T>,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Config("Adam step counter starts at 1".into()));
    }
    if grads.tensors.len() != params.tensors.len() {
        return Err(Error::Shape("gradient and parameter sets differ".into()));
    }
    for (p, g) in params.tensors.iter().zip(&grads.tensors) {
        if p.data.len() != g.data.len() {
            return Err(Error::Shape(format!("gradient of `{}` has the wrong size", p.name)));
        }
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: g.name.clone() });
        }
    }
    let b1 = T::of_f64(cfg.beta1);
    let b2 = T::of_f64(cfg.beta2);
    let one = T::one();
    let c1 = T::of_f64(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::of_f64(1.0 - cfg.beta2.powi(t as i32));
    let lr = T::of_f64(cfg.learning_rate);
    let eps = T::of_f64(cfg.epsilon);
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut moments.first.tensors)
        .zip(&mut moments.second.tensors)
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (one - b1) * gi;
            v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] = p.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub balanced: bool,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
}

impl TrainConfig {
    pub fn new(stage: Stage, balanced: bool, seed: u64) -> Self {
        TrainConfig {
            stage,
            balanced,
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: match stage {
                Stage::Proxy => 30,
                Stage::Target => 40,
            },
            seed,
            augmentation: Augmentation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.adam.learning_rate;
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive and finite".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// 0-based index into `epochs` of the returned snapshot; `None` when no
    /// epoch ran and the initial model is returned.
    pub selected_epoch: Option<usize>,
    pub config: TrainConfig,
    pub weights_used: ObjectiveWeights,
}

/// Class weights for `cfg` computed from the training split.
pub fn training_weights(data: &Dataset, balanced: bool) -> Result<ObjectiveWeights> {
    if balanced {
        compute_weights(&count_classes(data.split(Split::Train), data.objectives()))
    } else {
        Ok(unbalanced_weights(data.objectives()))
    }
}

/// Mean weighted BCE of `state` over one split, without augmentation.
pub fn split_loss(state: &ModelState, data: &Dataset, split: Split, weights: &ObjectiveWeights) -> Result<f64> {
    let net = state.network();
    let mut total = 0.0;
    let mut n = 0usize;
    for s in data.split(split) {
        total += net.loss(s.image.pixels(), &s.labels, weights)?;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

const SHUFFLE_STREAM: u64 = 1 << 20;
const AUGMENT_STREAM: u64 = 2 << 20;

/// Trains `model` on the train split and returns the epoch snapshot with
/// the lowest validation loss (earliest on ties).
pub fn train(model: &ModelState, data: &Dataset, cfg: &TrainConfig) -> Result<(ModelState, TrainLog)> {
    train_observed(model, data, cfg, |_, _| {})
}

/// [`train`] with a hook called after every optimizer step with the epoch
/// and the dataset indices that contributed to that step's gradient.
pub fn train_observed(
    model: &ModelState,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_batch: impl FnMut(usize, &[usize]),
) -> Result<(ModelState, TrainLog)> {
    cfg.validate()?;
    if model.config.objectives != data.objectives() {
        return Err(Error::Shape(format!(
            "model has {} outputs, dataset has {} objectives",
            model.config.objectives,
            data.objectives()
        )));
    }
    let train_idx = data.split_indices(Split::Train);
    if train_idx.is_empty() || data.split(Split::Validation).next().is_none() {
        return Err(Error::Config("dataset needs train and validation samples".into()));
    }
    let weights = training_weights(data, cfg.balanced)?;
    let mut log = TrainLog {
        epochs: Vec::with_capacity(cfg.max_epochs),
        selected_epoch: None,
        config: cfg.clone(),
        weights_used: weights.clone(),
    };

    let mut state = model.clone();
    if cfg.stage == Stage::Proxy && cfg.max_epochs > 0 {
        state.stage = StageTag::Pretrained;
    }
    let mut best = state.clone();
    let mut best_loss = f64::INFINITY;
    let mut moments = AdamMoments::zeros_like(&state.params);
    let mut grads = ParamSet::<f32>::zeros_like(&state.params);
    let mut step = 0u64;

    for epoch in 0..cfg.max_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_stream(cfg.seed, SHUFFLE_STREAM + epoch as u64));
        let mut aug_rng = rng_stream(cfg.seed, AUGMENT_STREAM + epoch as u64);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            {
                let net = state.network();
                for &i in batch {
                    let s = cfg.augmentation.apply(&data.samples[i], cfg.stage, &mut aug_rng);
                    epoch_loss += net.loss_and_grad(s.image.pixels(), &s.labels, &weights, &mut grads)?;
                }
            }
            grads.scale(1.0 / batch.len() as f32);
            step += 1;
            adam_step(&mut state.params, &grads, &mut moments, step, &cfg.adam)?;
            on_batch(epoch, batch);
        }
        let val_loss = split_loss(&state, data, Split::Validation, &weights)?;
        log.epochs.push(EpochLog {
            train_loss: epoch_loss / order.len() as f64,
            val_loss,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best = state.clone();
            log.selected_epoch = Some(epoch);
        }
    }
    Ok((best, log))
}
