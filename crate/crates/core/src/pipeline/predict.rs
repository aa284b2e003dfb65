use rayon::prelude::*;

use crate::data::{LabelPrediction, PointCloud};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::segnet::{BlockGeometry, SegNet};
use crate::numerics::ParameterStore;

use super::blocks::{split_blocks, BlockSpec, SplitMode};

/// Combines per-block predictions into one per scene point. Each point keeps
/// the prediction with the highest confidence among the blocks (and block
/// slots) containing it; on equal confidence the earliest one wins.
pub fn merge_block_predictions(
    num_points: usize,
    blocks: &[(Vec<usize>, LabelPrediction)],
) -> Result<LabelPrediction> {
    let num_classes = blocks.first().map_or(0, |(_, p)| p.logits.cols());
    let mut best: Vec<Option<(f64, usize, usize)>> = vec![None; num_points];
    for (b, (indices, pred)) in blocks.iter().enumerate() {
        if indices.len() != pred.num_points() {
            return Err(Error::LengthMismatch {
                expected: indices.len(),
                actual: pred.num_points(),
            });
        }
        for (slot, &i) in indices.iter().enumerate() {
            if i >= num_points {
                return Err(Error::InvalidArgument(format!("block point {i} outside scene of {num_points}")));
            }
            let conf = pred.confidence[slot];
            if best[i].is_none_or(|(c, _, _)| conf > c) {
                best[i] = Some((conf, b, slot));
            }
        }
    }
    let mut logits = Matrix::zeros(num_points, num_classes);
    let mut labels = Vec::with_capacity(num_points);
    let mut confidence = Vec::with_capacity(num_points);
    for (i, entry) in best.iter().enumerate() {
        let Some((conf, b, slot)) = *entry else {
            return Err(Error::InvalidArgument(format!("scene point {i} is covered by no block")));
        };
        let pred = &blocks[b].1;
        logits.row_mut(i).copy_from_slice(pred.logits.row(slot));
        labels.push(pred.labels[slot]);
        confidence.push(conf);
    }
    Ok(LabelPrediction {
        logits,
        labels,
        confidence,
    })
}

/// Labels every point of `scene` by running the network on overlapping
/// test-mode blocks and keeping the most confident prediction per point.
pub fn sliding_window_predict(
    scene: &PointCloud,
    spec: &BlockSpec,
    net: &SegNet,
    store: &ParameterStore,
    seed: u64,
) -> Result<LabelPrediction> {
    let cfg = net.config();
    if spec.points_per_block != cfg.num_points[0] {
        return Err(Error::Config(format!(
            "points_per_block = {} but the network expects {}",
            spec.points_per_block, cfg.num_points[0]
        )));
    }
    let blocks = split_blocks(scene, spec, SplitMode::Test, seed)?;
    let preds: Vec<(Vec<usize>, LabelPrediction)> = blocks
        .into_par_iter()
        .map(|b| {
            let geom = BlockGeometry::build(b.cloud.positions(), cfg)?;
            let logits = net.logits(store, &b.cloud.features(cfg.input_channels)?, &geom)?;
            Ok((b.indices, LabelPrediction::from_logits(logits)))
        })
        .collect::<Result<_>>()?;
    merge_block_predictions(scene.num_points(), &preds)
}
