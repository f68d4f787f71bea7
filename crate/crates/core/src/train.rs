//! Training loop: momentum SGD with per-epoch cosine learning-rate decay,
//! trained on every domain except the held-out one.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::attack::{adverin_step, AttackConfig, Optimizer};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::segnet::SegNet;
use crate::tensor::Sample;

/// RNG substream ids; keeping them apart makes the attack draws invisible to
/// initialization and shuffling.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_ATTACK: u64 = 3;

/// `lr_base * 0.5 * (1 + cos(pi * epoch / total))`.
pub fn cosine_lr(lr_base: f64, epoch: usize, total: usize) -> Result<f64> {
    if total == 0 || epoch > total {
        return Err(Error::InvalidArgument(format!("epoch {epoch} outside [0, {total}]")));
    }
    Ok(lr_base * 0.5 * (1.0 + libm::cos(PI * epoch as f64 / total as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Baseline,
    Adverin,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Adverin => "adverin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Method::Baseline),
            "adverin" => Some(Method::Adverin),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub momentum: f64,
    pub method: Method,
    pub attack: AttackConfig,
    pub seed: u64,
    pub holdout: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr_base: 0.01,
            momentum: 0.9,
            method: Method::Adverin,
            attack: AttackConfig::default(),
            seed: 0,
            holdout: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr_base > 0.0) || !self.lr_base.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.lr_base)));
        }
        if !self.momentum.is_finite() {
            return Err(Error::NonFinite("momentum"));
        }
        self.attack.validate()
    }

    /// The attack settings actually used: disabled for the baseline.
    pub fn effective_attack(&self) -> AttackConfig {
        match self.method {
            Method::Baseline => AttackConfig { enabled: false, ..self.attack.clone() },
            Method::Adverin => self.attack.clone(),
        }
    }
}

/// Hooks into the loop; both default to no-ops.
pub trait Observer {
    fn on_batch(&mut self, _epoch: usize, _ids: &[&str]) {}
    fn on_epoch(&mut self, _epoch: usize, _mean_loss: f64, _lr: f64) {}
}

impl Observer for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: SegNet,
    /// Mean per-step batch loss for each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Indices of training samples (domain != holdout), in dataset order.
pub fn training_split(samples: &[Sample], holdout: u32) -> Result<Vec<usize>> {
    if !samples.iter().any(|s| s.domain_id == holdout) {
        return Err(Error::UnknownHoldout(holdout));
    }
    let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].domain_id != holdout).collect();
    if idx.is_empty() {
        return Err(Error::EmptyTrainingSplit);
    }
    Ok(idx)
}

pub fn train(samples: &[Sample], config: &TrainConfig, observer: &mut dyn Observer) -> Result<TrainOutcome> {
    config.validate()?;
    let mut order = training_split(samples, config.holdout)?;
    let classes = samples[order[0]].truth.channels();
    let attack = config.effective_attack();
    let mut net = SegNet::init(&mut Rng::substream(config.seed, STREAM_INIT), classes)?;
    let mut shuffle_rng = Rng::substream(config.seed, STREAM_SHUFFLE);
    let mut attack_rng = Rng::substream(config.seed, STREAM_ATTACK);
    let mut opt = Optimizer::new(&net, config.lr_base, config.momentum);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        opt.lr = cosine_lr(config.lr_base, epoch, config.epochs)?;
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let ids: Vec<&str> = batch.iter().map(|s| s.sample_id.as_str()).collect();
            observer.on_batch(epoch, &ids);
            let stats = adverin_step(&mut net, &batch, &attack, &mut opt, &mut attack_rng)?;
            total += stats.loss;
            steps += 1;
        }
        let mean = total / steps as f64;
        if !mean.is_finite() || !net.theta.all_finite() {
            return Err(Error::NonFinite("training diverged"));
        }
        observer.on_epoch(epoch, mean, opt.lr);
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { net, epoch_losses })
}
