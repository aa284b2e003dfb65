use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{seeded_rng, PointCloud, Rng};
use crate::error::{Error, Result};

/// How a scene is cut into network-sized blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSpec {
    /// Side of the square xy footprint, meters.
    pub footprint: f64,
    /// Extra margin gathered on every side of the footprint, meters.
    pub padding: f64,
    pub points_per_block: usize,
    /// Distance between test-mode windows, meters.
    pub stride: f64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self {
            footprint: 2.0,
            padding: 0.5,
            points_per_block: 512,
            stride: 1.0,
        }
    }
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.footprint > 0.0 && self.footprint.is_finite()) {
            return Err(Error::Config(format!("block footprint must be positive, got {}", self.footprint)));
        }
        if !(self.padding >= 0.0 && self.padding.is_finite()) {
            return Err(Error::Config(format!("block padding must be non-negative, got {}", self.padding)));
        }
        if !(self.stride > 0.0 && self.stride <= self.footprint) {
            return Err(Error::Config(format!(
                "stride must lie in (0, footprint = {}], got {}",
                self.footprint, self.stride
            )));
        }
        if self.points_per_block == 0 {
            return Err(Error::Config("points_per_block must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Non-overlapping footprint tiles, each resampled to exactly
    /// `points_per_block` points.
    Train,
    /// Windows every `stride`; windows holding more than `points_per_block`
    /// points are cut into several blocks so that every point is used.
    Test,
}

/// A network-sized piece of a scene.
#[derive(Clone, Debug)]
pub struct Block {
    /// Recentered points (repeats allowed).
    pub cloud: PointCloud,
    /// `indices[k]` is the scene index of block point `k`.
    pub indices: Vec<usize>,
    /// Translation that was added to the scene coordinates.
    pub offset: [f64; 3],
}

/// Start of every window along one axis.
fn window_starts(lo: f64, hi: f64, size: f64, stride: f64) -> Vec<f64> {
    let extent = hi - lo;
    let n = if extent <= size {
        1
    } else {
        ((extent - size) / stride).ceil() as usize + 1
    };
    (0..n).map(|i| lo + i as f64 * stride).collect()
}

/// Scene indices inside each window, in ascending order. Membership is the
/// closed rectangle `[x0 − pad, x0 + size + pad] × [y0 − pad, y0 + size + pad]`.
pub fn window_members(cloud: &PointCloud, spec: &BlockSpec, stride: f64) -> Vec<Vec<usize>> {
    let Some((lo, hi)) = cloud.bounds() else {
        return Vec::new();
    };
    let xs = window_starts(lo[0], hi[0], spec.footprint, stride);
    let ys = window_starts(lo[1], hi[1], spec.footprint, stride);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &x0 in &xs {
        for &y0 in &ys {
            let (ax, bx) = (x0 - spec.padding, x0 + spec.footprint + spec.padding);
            let (ay, by) = (y0 - spec.padding, y0 + spec.footprint + spec.padding);
            let members: Vec<usize> = cloud
                .positions()
                .iter()
                .enumerate()
                .filter(|(_, p)| p[0] >= ax && p[0] <= bx && p[1] >= ay && p[1] <= by)
                .map(|(i, _)| i)
                .collect();
            out.push(members);
        }
    }
    out
}

/// Draws exactly `n` of `members`: a random subset when there are too
/// many, otherwise every member plus random repeats.
fn resample(members: &[usize], n: usize, rng: &mut Rng) -> Vec<usize> {
    if members.len() >= n {
        let mut picked: Vec<usize> = rand::seq::index::sample(rng, members.len(), n)
            .into_iter()
            .map(|k| members[k])
            .collect();
        picked.sort_unstable();
        picked
    } else {
        let mut picked = members.to_vec();
        while picked.len() < n {
            picked.push(members[rng.random_range(0..members.len())]);
        }
        picked
    }
}

fn make_block(cloud: &PointCloud, indices: Vec<usize>) -> Block {
    let sub = cloud.subset(&indices);
    let n = indices.len() as f64;
    let cx = sub.positions().iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = sub.positions().iter().map(|p| p[1]).sum::<f64>() / n;
    let offset = [-cx, -cy, 0.0];
    Block {
        cloud: sub.translated(offset),
        indices,
        offset,
    }
}

/// Cuts `cloud` into blocks of exactly `spec.points_per_block` points,
/// recentered on the xy centroid of each block. Empty windows are dropped.
/// The result is a deterministic function of `seed`.
pub fn split_blocks(cloud: &PointCloud, spec: &BlockSpec, mode: SplitMode, seed: u64) -> Result<Vec<Block>> {
    spec.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rng = seeded_rng(seed);
    let n = spec.points_per_block;
    let stride = match mode {
        SplitMode::Train => spec.footprint,
        SplitMode::Test => spec.stride,
    };
    let mut blocks = Vec::new();
    for members in window_members(cloud, spec, stride) {
        if members.is_empty() {
            continue;
        }
        match mode {
            SplitMode::Train => blocks.push(make_block(cloud, resample(&members, n, &mut rng))),
            SplitMode::Test => {
                let mut shuffled = members;
                shuffled.shuffle(&mut rng);
                for chunk in shuffled.chunks(n) {
                    let mut idx = chunk.to_vec();
                    while idx.len() < n {
                        idx.push(chunk[rng.random_range(0..chunk.len())]);
                    }
                    blocks.push(make_block(cloud, idx));
                }
            }
        }
    }
    Ok(blocks)
}
