use std::sync::Arc;

use crate::error::{Error, Result};
use crate::search::{dist2, farthest_point_sampling, search, NeighborGraph, SearchConfig, SpatialIndex};

use super::NetworkConfig;

/// Stabilizer added to squared distances in inverse-distance weights.
pub const INTERP_EPS: f64 = 1e-8;

/// Sparse interpolation from coarse to fine points: fine point `i` reads
/// coarse rows `indices[i·width..]` with weights `weights[i·width..]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolation {
    pub indices: Arc<Vec<usize>>,
    pub weights: Arc<Vec<f64>>,
    pub width: usize,
}

/// Inverse squared-distance weights over the 3 nearest coarse points (all
/// of them when fewer than 3 exist). Ties go to the lower coarse index.
pub fn interpolation_weights(coarse: &[[f64; 3]], fine: &[[f64; 3]]) -> Result<Interpolation> {
    if coarse.is_empty() {
        return Err(Error::InvalidArgument("interpolation needs at least one coarse point".into()));
    }
    let width = coarse.len().min(3);
    let mut indices = Vec::with_capacity(fine.len() * width);
    let mut weights = Vec::with_capacity(fine.len() * width);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(width + 1);
    for &p in fine {
        best.clear();
        for (j, &q) in coarse.iter().enumerate() {
            crate::search::insert_bounded(&mut best, (dist2(p, q), j), width);
        }
        let inv: Vec<f64> = best.iter().map(|&(d, _)| 1.0 / (d + INTERP_EPS)).collect();
        let total: f64 = inv.iter().sum();
        indices.extend(best.iter().map(|&(_, j)| j));
        weights.extend(inv.iter().map(|w| w / total));
    }
    Ok(Interpolation {
        indices: Arc::new(indices),
        weights: Arc::new(weights),
        width,
    })
}

/// Everything about a block that depends only on point coordinates.
#[derive(Clone, Debug)]
pub struct BlockGeometry {
    /// Positions of encoder levels 1..4.
    pub levels: [Vec<[f64; 3]>; 4],
    /// For levels 2..4, the sampled indices into the previous level.
    pub samples: [Vec<usize>; 3],
    /// Graphs of layers 1..7, indexed by `layer - 1`.
    pub graphs: [Arc<NeighborGraph>; 7],
    /// Coarse-to-fine interpolation for decoder layers 5, 6, 7.
    pub interpolations: [Interpolation; 3],
}

impl BlockGeometry {
    pub fn build(positions: &[[f64; 3]], cfg: &NetworkConfig) -> Result<Self> {
        if positions.len() != cfg.num_points[0] {
            return Err(Error::LengthMismatch {
                expected: cfg.num_points[0],
                actual: positions.len(),
            });
        }
        let mut levels: Vec<Vec<[f64; 3]>> = vec![positions.to_vec()];
        let mut samples = Vec::with_capacity(3);
        for l in 1..4 {
            let prev = &levels[l - 1];
            let picked = farthest_point_sampling(prev, cfg.num_points[l], 0)?;
            levels.push(picked.iter().map(|&i| prev[i]).collect());
            samples.push(picked);
        }

        let mut graphs = Vec::with_capacity(7);
        for layer in 1..=4 {
            let source = if layer == 1 { &levels[0] } else { &levels[layer - 2] };
            let centers: Vec<usize> = if layer == 1 {
                (0..source.len()).collect()
            } else {
                samples[layer - 2].clone()
            };
            graphs.push(layer_graph(source, &centers, cfg.layer_radius(layer), cfg)?);
        }
        for layer in 5..=7 {
            let level = &levels[7 - layer];
            let centers: Vec<usize> = (0..level.len()).collect();
            graphs.push(layer_graph(level, &centers, cfg.layer_radius(layer), cfg)?);
        }
        let interpolations = [
            interpolation_weights(&levels[3], &levels[2])?,
            interpolation_weights(&levels[2], &levels[1])?,
            interpolation_weights(&levels[1], &levels[0])?,
        ];
        Ok(Self {
            levels: levels.try_into().expect("four levels"),
            samples: samples.try_into().expect("three samplings"),
            graphs: graphs.try_into().expect("seven graphs"),
            interpolations,
        })
    }
}

fn layer_graph(source: &[[f64; 3]], centers: &[usize], radius: f64, cfg: &NetworkConfig) -> Result<Arc<NeighborGraph>> {
    let index = SpatialIndex::build(source, radius)?;
    let scfg = SearchConfig::new(radius, cfg.points_per_bin)?;
    Ok(Arc::new(search(cfg.search, &index, source, centers, &scfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::seeded_rng;
    use rand::Rng as _;

    #[test]
    fn coincident_point_takes_coarse_feature() {
        let coarse = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]];
        let it = interpolation_weights(&coarse, &[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(it.indices[0], 1);
        assert!(it.weights[0] > 1.0 - 1e-7);
    }

    #[test]
    fn single_coarse_point() {
        let it = interpolation_weights(&[[3.0, 1.0, 2.0]], &[[0.0; 3], [1.0; 3]]).unwrap();
        assert_eq!(it.width, 1);
        assert_eq!(*it.indices, vec![0, 0]);
        assert_eq!(*it.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn weights_match_scalar_loops() {
        let mut rng = seeded_rng(12);
        let coarse: Vec<[f64; 3]> = (0..20).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let fine: Vec<[f64; 3]> = (0..50).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let it = interpolation_weights(&coarse, &fine).unwrap();
        for (i, p) in fine.iter().enumerate() {
            let mut d: Vec<(f64, usize)> = coarse
                .iter()
                .enumerate()
                .map(|(j, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2), j))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let inv: Vec<f64> = d[..3].iter().map(|(dd, _)| 1.0 / (dd + 1e-8)).collect();
            let s: f64 = inv.iter().sum();
            for t in 0..3 {
                assert_eq!(it.indices[i * 3 + t], d[t].1);
                assert!((it.weights[i * 3 + t] - inv[t] / s).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn geometry_shapes_follow_config() {
        let cfg = NetworkConfig::tiny(3);
        let mut rng = seeded_rng(13);
        let pts: Vec<[f64; 3]> = (0..32).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect();
        let g = BlockGeometry::build(&pts, &cfg).unwrap();
        for layer in 1..=7 {
            let graph = &g.graphs[layer - 1];
            assert_eq!(graph.num_rows(), cfg.layer_points(layer), "layer {layer}");
            assert_eq!(graph.width(), 16);
        }
        assert_eq!(g.graphs[1].source_size(), 32);
        assert_eq!(g.interpolations[2].indices.len(), 32 * 3);
        assert!(BlockGeometry::build(&pts[..31], &cfg).is_err());
    }
}
