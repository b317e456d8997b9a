use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alignment::{
    loss_and_gradient, ClassDescriptors, ContextBank, LossBreakdown, ObjectiveConfig,
};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::sample::{ensure_train_split, Sample};

/// `lr0 · (1 + cos(π t / t_max)) / 2`.
pub fn cosine_annealing_lr(epoch: usize, t_max: usize, lr0: f64) -> Result<f64> {
    if epoch > t_max {
        return Err(Error::InvalidEpoch { epoch, max: t_max });
    }
    if t_max == 0 {
        return Ok(lr0);
    }
    Ok(lr0 * 0.5 * (1.0 + (PI * epoch as f64 / t_max as f64).cos()))
}

fn default_schedule() -> BTreeMap<usize, usize> {
    BTreeMap::from([(1, 50), (2, 100), (4, 100), (8, 200), (16, 200)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Epochs per shot count; unlisted counts use the nearest smaller entry.
    pub schedule: BTreeMap<usize, usize>,
    /// Overrides the schedule when set.
    pub epochs: Option<usize>,
    /// Context vectors `M`.
    pub prompts: usize,
    pub batch_size: usize,
    /// Standard deviation of the Gaussian context initialization.
    pub init_std: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.002,
            schedule: default_schedule(),
            epochs: None,
            prompts: 4,
            batch_size: 32,
            init_std: 0.02,
            seed: 0,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if self.prompts == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "prompts and batch_size must be at least 1".into(),
            ));
        }
        if self.epochs == Some(0) || self.schedule.values().any(|&e| e == 0) {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.init_std >= 0.0) || !self.init_std.is_finite() {
            return Err(Error::InvalidConfig("init_std must be non-negative".into()));
        }
        self.objective.validate()
    }

    pub fn epochs_for(&self, shots: usize) -> usize {
        if let Some(e) = self.epochs {
            return e;
        }
        self.schedule
            .range(..=shots)
            .next_back()
            .or_else(|| self.schedule.iter().next())
            .map(|(_, &e)| e)
            .unwrap_or(1)
    }

    /// Gaussian context of shape `prompts × dim` from the run seed.
    pub fn init_context(&self, dim: usize) -> Result<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal =
            Normal::new(0.0, self.init_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Matrix::from_fn(self.prompts, dim, |_, _| {
            normal.sample(&mut rng)
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub bank: ContextBank,
    /// Sample-weighted mean loss of each epoch.
    pub history: Vec<LossBreakdown>,
}

/// Minibatch SGD on the shared context with cosine-annealed step size.
/// Anchors stay fixed.
pub fn train(
    samples: &[Sample],
    anchors: &Matrix,
    descriptors: Option<&ClassDescriptors>,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainOutcome> {
    let bank = ContextBank::new(cfg.init_context(anchors.cols())?, anchors.clone())?;
    train_from(samples, bank, descriptors, cfg, epochs)
}

/// [`train`] from a given starting bank.
pub fn train_from(
    samples: &[Sample],
    mut bank: ContextBank,
    descriptors: Option<&ClassDescriptors>,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure_train_split(samples)?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    if epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be at least 1".into()));
    }
    if cfg.objective.distill.needs_descriptors() && descriptors.is_none() {
        return Err(Error::MissingDescriptors("<all>".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..epochs {
        let lr = cosine_annealing_lr(epoch, epochs, cfg.lr0)?;
        order.shuffle(&mut rng);
        let (mut l_llm, mut l_img) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let (loss, grad) = loss_and_gradient(&batch, &bank, descriptors, &cfg.objective)?;
            if !loss.total.is_finite() || !grad.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            let w = batch.len() as f64 / samples.len() as f64;
            l_llm += w * loss.l_llm;
            l_img += w * loss.l_img;
            bank.descend(&grad, lr)?;
        }
        history.push(LossBreakdown::combine(l_llm, l_img, cfg.objective.beta));
    }
    Ok(TrainOutcome { bank, history })
}
