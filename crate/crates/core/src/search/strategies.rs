use crate::error::{Error, Result};

use super::index::insert_bounded;
use super::{bin_of, NeighborGraph, SearchConfig, SpatialIndex, NUM_BINS};

fn check_centers(positions: &[[f64; 3]], index: &SpatialIndex, centers: &[usize]) -> Result<()> {
    if index.num_points() != positions.len() {
        return Err(Error::InvalidArgument(format!(
            "index built over {} points, search given {}",
            index.num_points(),
            positions.len()
        )));
    }
    if let Some(&c) = centers.iter().find(|&&c| c >= positions.len()) {
        return Err(Error::InvalidArgument(format!(
            "center {c} out of range for {} points",
            positions.len()
        )));
    }
    Ok(())
}

/// For each center, the `m` nearest points inside each of the 16 direction
/// bins within radius `r`. The center itself is never a candidate; bins with
/// fewer than `m` candidates are padded with the center's index.
///
/// Row layout: bin 0 slots first, then bin 1, …; nearest first within a bin.
pub fn multi_directional_search(
    index: &SpatialIndex,
    positions: &[[f64; 3]],
    centers: &[usize],
    cfg: &SearchConfig,
) -> Result<NeighborGraph> {
    check_centers(positions, index, centers)?;
    let m = cfg.points_per_bin();
    let width = cfg.num_neighbors();
    let mut indices = Vec::with_capacity(centers.len() * width);
    let mut bins: Vec<Vec<(f64, usize)>> = vec![Vec::with_capacity(m + 1); NUM_BINS];

    for &c in centers {
        let p = positions[c];
        for b in &mut bins {
            b.clear();
        }
        index.for_each_within(positions, p, cfg.radius(), |j, d2| {
            if j == c {
                return;
            }
            let q = positions[j];
            let bin = bin_of([q[0] - p[0], q[1] - p[1], q[2] - p[2]]);
            insert_bounded(&mut bins[bin], (d2, j), m);
        });
        for b in &bins {
            indices.extend(b.iter().map(|&(_, j)| j));
            indices.extend(std::iter::repeat_n(c, m - b.len()));
        }
    }
    NeighborGraph::new(centers.to_vec(), indices, width, positions.len())
}

/// The `k` nearest points of each center (the center itself included),
/// nearest first. When fewer than `k` points exist the row is padded with
/// the center's index.
pub fn knn_search(
    index: &SpatialIndex,
    positions: &[[f64; 3]],
    centers: &[usize],
    k: usize,
) -> Result<NeighborGraph> {
    check_centers(positions, index, centers)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut indices = Vec::with_capacity(centers.len() * k);
    for &c in centers {
        let found = index.nearest(positions, positions[c], k);
        let n = found.len();
        indices.extend(found.into_iter().map(|(_, j)| j));
        indices.extend(std::iter::repeat_n(c, k - n));
    }
    NeighborGraph::new(centers.to_vec(), indices, k, positions.len())
}

/// Up to `k` points within radius `r` of each center, in ascending index
/// order (the center itself is a member of its own ball). Short rows are
/// padded with the first point found, or with the center when the ball is
/// empty.
pub fn ball_query(
    index: &SpatialIndex,
    positions: &[[f64; 3]],
    centers: &[usize],
    radius: f64,
    k: usize,
) -> Result<NeighborGraph> {
    check_centers(positions, index, centers)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    let mut indices = Vec::with_capacity(centers.len() * k);
    for &c in centers {
        let mut found = index.range_query(positions, positions[c], radius);
        found.truncate(k);
        let pad = found.first().copied().unwrap_or(c);
        let n = found.len();
        indices.extend(found);
        indices.extend(std::iter::repeat_n(pad, k - n));
    }
    NeighborGraph::new(centers.to_vec(), indices, k, positions.len())
}
