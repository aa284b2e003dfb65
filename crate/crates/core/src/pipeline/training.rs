use rand::seq::SliceRandom;

use crate::data::{seeded_rng, PointCloud};
use crate::error::{Error, Result};
use crate::numerics::{lr_decay, OptimizerConfig, ParameterStore};
use crate::segnet::{inverse_frequency_weights, train_step, SegNet, TrainingBlock};

use super::blocks::{split_blocks, BlockSpec, SplitMode};
use super::metrics::{ConfusionMatrix, Metrics};
use super::predict::sliding_window_predict;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    /// Blocks per optimizer step.
    pub batch_size: usize,
    /// Optimizer; `optimizer.lr` is the initial learning rate.
    pub optimizer: OptimizerConfig,
    pub decay_rate: f64,
    /// Epochs between learning-rate decays.
    pub decay_step: usize,
    pub seed: u64,
    /// Weight the loss by inverse class frequency of the training labels.
    pub class_weighting: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            optimizer: OptimizerConfig::default(),
            decay_rate: 0.7,
            decay_step: 40,
            seed: 0,
            class_weighting: false,
        }
    }
}

/// Mixes a base seed with two counters into a per-use seed.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for v in [a, b] {
        h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// Freshly resampled, shuffled training blocks for one epoch.
pub fn epoch_blocks(scenes: &[PointCloud], spec: &BlockSpec, seed: u64, epoch: usize) -> Result<Vec<PointCloud>> {
    let mut clouds = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let blocks = split_blocks(scene, spec, SplitMode::Train, derive_seed(seed, epoch as u64, i as u64))?;
        clouds.extend(blocks.into_iter().map(|b| b.cloud));
    }
    clouds.shuffle(&mut seeded_rng(derive_seed(seed, epoch as u64, u64::MAX)));
    Ok(clouds)
}

/// Trains `net` on blocks cut from `scenes`. Calls `on_epoch(epoch, mean
/// loss, parameters)` after every epoch and returns the per-epoch mean losses.
pub fn train_on_scenes(
    net: &SegNet,
    store: &mut ParameterStore,
    scenes: &[PointCloud],
    spec: &BlockSpec,
    settings: &TrainSettings,
    mut on_epoch: impl FnMut(usize, f64, &ParameterStore),
) -> Result<Vec<f64>> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("no training scenes".into()));
    }
    if settings.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let cfg = net.config();
    if spec.points_per_block != cfg.num_points[0] {
        return Err(Error::Config(format!(
            "points_per_block = {} but the network expects {}",
            spec.points_per_block, cfg.num_points[0]
        )));
    }
    for s in scenes {
        if s.labels().is_none() {
            return Err(Error::InvalidArgument("training scenes need labels".into()));
        }
        s.validate_labels(cfg.num_classes)?;
    }
    let weights = if settings.class_weighting {
        let all: Vec<usize> = scenes.iter().flat_map(|s| s.labels().unwrap_or(&[]).iter().copied()).collect();
        Some(inverse_frequency_weights(&all, cfg.num_classes)?)
    } else {
        None
    };
    let mut history = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let clouds = epoch_blocks(scenes, spec, settings.seed, epoch)?;
        let blocks = TrainingBlock::batch(&clouds, cfg)?;
        let optimizer = OptimizerConfig {
            lr: lr_decay(epoch, settings.optimizer.lr, settings.decay_rate, settings.decay_step),
            ..settings.optimizer
        };
        let mut total = 0.0;
        let mut steps = 0usize;
        for batch in blocks.chunks(settings.batch_size) {
            total += train_step(net, store, batch, &optimizer, weights.as_deref())?;
            steps += 1;
        }
        let mean = total / steps.max(1) as f64;
        log::info!("epoch {epoch}: loss {mean:.5} lr {:.2e} ({} blocks)", optimizer.lr, blocks.len());
        on_epoch(epoch, mean, store);
        history.push(mean);
    }
    Ok(history)
}

/// Sliding-window predictions on every scene, accumulated into one set of
/// metrics.
pub fn evaluate_scenes(
    net: &SegNet,
    store: &ParameterStore,
    scenes: &[PointCloud],
    spec: &BlockSpec,
    seed: u64,
) -> Result<Metrics> {
    let mut cm = ConfusionMatrix::new(net.config().num_classes);
    for (i, scene) in scenes.iter().enumerate() {
        let truth = scene
            .labels()
            .ok_or_else(|| Error::InvalidArgument("evaluation scenes need labels".into()))?;
        let pred = sliding_window_predict(scene, spec, net, store, derive_seed(seed, i as u64, 0))?;
        cm.add(&pred.labels, truth)?;
    }
    Ok(Metrics::from_confusion(cm))
}
