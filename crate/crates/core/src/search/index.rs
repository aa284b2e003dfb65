use std::collections::HashMap;

use crate::data::PointCloud;
use crate::error::{Error, Result};

use super::dist2;

type Cell = [i64; 3];

/// Uniform grid over a point set. Each point lives in exactly one cell;
/// buckets list point indices in ascending order.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    cell_size: f64,
    origin: [f64; 3],
    lo: Cell,
    hi: Cell,
    buckets: HashMap<Cell, Vec<usize>>,
    num_points: usize,
}

pub fn build_index(cloud: &PointCloud, cell_size: f64) -> Result<SpatialIndex> {
    SpatialIndex::build(cloud.positions(), cell_size)
}

impl SpatialIndex {
    pub fn build(positions: &[[f64; 3]], cell_size: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("cell size must be positive, got {cell_size}")));
        }
        let mut origin = positions[0];
        for p in positions {
            for a in 0..3 {
                origin[a] = origin[a].min(p[a]);
            }
        }
        let mut index = Self {
            cell_size,
            origin,
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
            buckets: HashMap::new(),
            num_points: positions.len(),
        };
        for (i, &p) in positions.iter().enumerate() {
            let c = index.cell_of(p);
            for a in 0..3 {
                index.lo[a] = index.lo[a].min(c[a]);
                index.hi[a] = index.hi[a].max(c[a]);
            }
            index.buckets.entry(c).or_default().push(i);
        }
        Ok(index)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_occupied_cells(&self) -> usize {
        self.buckets.len()
    }

    pub fn cell_of(&self, p: [f64; 3]) -> Cell {
        std::array::from_fn(|a| ((p[a] - self.origin[a]) / self.cell_size).floor() as i64)
    }

    /// Points sharing a cell with `p` (ascending index order).
    pub fn cell_members(&self, p: [f64; 3]) -> &[usize] {
        self.buckets.get(&self.cell_of(p)).map_or(&[], Vec::as_slice)
    }

    /// Calls `f` for every indexed point in cells within `reach` cells of
    /// `c` (Chebyshev distance), clipped to the occupied extent.
    fn for_each_in_block(&self, c: Cell, reach: i64, mut f: impl FnMut(usize)) {
        let from: Cell = std::array::from_fn(|a| (c[a] - reach).max(self.lo[a]));
        let to: Cell = std::array::from_fn(|a| (c[a] + reach).min(self.hi[a]));
        for x in from[0]..=to[0] {
            for y in from[1]..=to[1] {
                for z in from[2]..=to[2] {
                    if let Some(b) = self.buckets.get(&[x, y, z]) {
                        b.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }

    /// Calls `f(index, squared distance)` for every point within `radius`
    /// of `query`, in no particular order.
    pub fn for_each_within(
        &self,
        positions: &[[f64; 3]],
        query: [f64; 3],
        radius: f64,
        mut f: impl FnMut(usize, f64),
    ) {
        let r2 = radius * radius;
        let reach = (radius / self.cell_size).ceil().max(1.0) as i64;
        self.for_each_in_block(self.cell_of(query), reach, |i| {
            let d2 = dist2(positions[i], query);
            if d2 <= r2 {
                f(i, d2);
            }
        });
    }

    /// Indices of all points within `radius` of `query`, ascending.
    pub fn range_query(&self, positions: &[[f64; 3]], query: [f64; 3], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(positions, query, radius, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// The `k` nearest points to `query` as `(squared distance, index)`,
    /// nearest first, ties by lower index. Returns fewer when the index
    /// holds fewer than `k` points.
    pub fn nearest(&self, positions: &[[f64; 3]], query: [f64; 3], k: usize) -> Vec<(f64, usize)> {
        let c = self.cell_of(query);
        let max_shell = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let mut seen = 0usize;
        for shell in 0..=max_shell {
            let from: Cell = std::array::from_fn(|a| c[a] - shell);
            let to: Cell = std::array::from_fn(|a| c[a] + shell);
            for x in from[0].max(self.lo[0])..=to[0].min(self.hi[0]) {
                for y in from[1].max(self.lo[1])..=to[1].min(self.hi[1]) {
                    for z in from[2].max(self.lo[2])..=to[2].min(self.hi[2]) {
                        let on_shell = (x - c[0]).abs() == shell
                            || (y - c[1]).abs() == shell
                            || (z - c[2]).abs() == shell;
                        if !on_shell {
                            continue;
                        }
                        let Some(bucket) = self.buckets.get(&[x, y, z]) else { continue };
                        for &i in bucket {
                            seen += 1;
                            insert_bounded(&mut best, (dist2(positions[i], query), i), k);
                        }
                    }
                }
            }
            if seen == self.num_points {
                break;
            }
            // Unvisited points lie at least `shell · cell_size` away.
            if best.len() == k {
                let covered = shell as f64 * self.cell_size;
                if best[k - 1].0 < covered * covered {
                    break;
                }
            }
        }
        best
    }
}

/// Keeps `best` sorted by `(distance, index)` and at most `k` long.
pub(crate) fn insert_bounded(best: &mut Vec<(f64, usize)>, item: (f64, usize), k: usize) {
    if best.len() == k {
        match best.last() {
            Some(&last) if !lexi_less(item, last) => return,
            _ => {}
        }
    }
    let pos = best.partition_point(|&e| lexi_less(e, item));
    best.insert(pos, item);
    best.truncate(k);
}

#[inline]
fn lexi_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}
