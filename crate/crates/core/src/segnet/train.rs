use std::sync::Arc;

use rayon::prelude::*;

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::numerics::{optimizer_step, Graph, Matrix, OptimizerConfig, ParamGrads, ParameterStore};

use super::geometry::BlockGeometry;
use super::model::SegNet;
use super::NetworkConfig;

/// A labeled block ready for training: input features, targets and the
/// coordinate-only precomputation.
#[derive(Clone, Debug)]
pub struct TrainingBlock {
    pub features: Matrix,
    pub labels: Arc<Vec<usize>>,
    pub geometry: BlockGeometry,
}

impl TrainingBlock {
    pub fn new(cloud: &PointCloud, cfg: &NetworkConfig) -> Result<Self> {
        let labels = cloud
            .labels()
            .ok_or_else(|| Error::InvalidArgument("training blocks need labels".into()))?;
        cloud.validate_labels(cfg.num_classes)?;
        Ok(Self {
            features: cloud.features(cfg.input_channels)?,
            labels: Arc::new(labels.to_vec()),
            geometry: BlockGeometry::build(cloud.positions(), cfg)?,
        })
    }

    /// Builds many blocks concurrently; order is preserved.
    pub fn batch(clouds: &[PointCloud], cfg: &NetworkConfig) -> Result<Vec<Self>> {
        clouds.par_iter().map(|c| Self::new(c, cfg)).collect()
    }
}

/// Cross-entropy of one block and its parameter gradients.
pub fn block_loss_and_grads(
    net: &SegNet,
    store: &ParameterStore,
    block: &TrainingBlock,
    class_weights: Option<&[f64]>,
) -> Result<(f64, ParamGrads)> {
    let mut g = Graph::new();
    let x = g.constant(block.features.clone());
    let pass = net.record(&mut g, store, x, &block.geometry)?;
    let loss = g.cross_entropy(pass.logits, block.labels.clone(), class_weights)?;
    let value = g.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let grads = g.backward(loss);
    Ok((value, g.param_grads(&grads, store)))
}

/// Mean block loss and mean gradients over `blocks`, without stepping.
/// Blocks are evaluated in parallel and summed in input order, so the result
/// does not depend on the thread count.
pub fn batch_loss_and_grads(
    net: &SegNet,
    store: &ParameterStore,
    blocks: &[TrainingBlock],
    class_weights: Option<&[f64]>,
) -> Result<(f64, ParamGrads)> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let per_block: Vec<(f64, ParamGrads)> = blocks
        .par_iter()
        .map(|b| block_loss_and_grads(net, store, b, class_weights))
        .collect::<Result<_>>()?;
    let mut total = ParamGrads::zeros_like(store);
    let mut loss = 0.0;
    for (l, g) in &per_block {
        loss += l;
        total.add(g);
    }
    let scale = 1.0 / blocks.len() as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

/// One optimizer step on the mean loss of `blocks`. Returns the loss before
/// the step.
pub fn train_step(
    net: &SegNet,
    store: &mut ParameterStore,
    blocks: &[TrainingBlock],
    optimizer: &OptimizerConfig,
    class_weights: Option<&[f64]>,
) -> Result<f64> {
    let (loss, grads) = batch_loss_and_grads(net, store, blocks, class_weights)?;
    store.zero_grad();
    store.accumulate_grads(&grads);
    if !store.grad_norm().is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    optimizer_step(store, optimizer);
    Ok(loss)
}

/// Per-class weights proportional to inverse label frequency, normalized to
/// average 1 over the classes present. Absent classes get weight 0.
pub fn inverse_frequency_weights(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange { label: l, num_classes });
        }
        counts[l] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present == 0 {
        return Err(Error::EmptyCloud);
    }
    let inv: Vec<f64> = counts.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect();
    let mean = inv.iter().sum::<f64>() / present as f64;
    Ok(inv.iter().map(|w| w / mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_frequency() {
        let w = inverse_frequency_weights(&[0, 0, 0, 1], 3).unwrap();
        assert_eq!(w[2], 0.0);
        assert!((w[1] / w[0] - 3.0).abs() < 1e-12);
        assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-12);
        assert!(inverse_frequency_weights(&[3], 3).is_err());
    }
}
