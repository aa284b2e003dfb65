//! Neighbor search: a uniform-grid index, the 16-direction binned search,
//! k-nearest neighbors, ball query, and farthest point sampling.
//!
//! Every strategy returns a fixed-width [`NeighborGraph`] and is a
//! deterministic function of its inputs. Distance ties are always broken in
//! favor of the lower point index.

mod bins;
mod fps;
mod index;
mod strategies;

use std::fmt;
use std::str::FromStr;

pub use bins::{bin_of, AZIMUTH_SECTORS, NUM_BINS};
pub use fps::farthest_point_sampling;
pub use index::{build_index, SpatialIndex};
pub(crate) use index::insert_bounded;
pub use strategies::{ball_query, knn_search, multi_directional_search};

use crate::error::{Error, Result};

#[inline]
pub(crate) fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Parameters of the multi-directional search. `K = 16 · m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    radius: f64,
    points_per_bin: usize,
}

impl SearchConfig {
    pub fn new(radius: f64, points_per_bin: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("search radius must be positive, got {radius}")));
        }
        if points_per_bin == 0 {
            return Err(Error::InvalidArgument("points per bin must be at least 1".into()));
        }
        Ok(Self {
            radius,
            points_per_bin,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn points_per_bin(&self) -> usize {
        self.points_per_bin
    }

    pub fn num_neighbors(&self) -> usize {
        NUM_BINS * self.points_per_bin
    }
}

/// Which neighborhood a layer gathers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SearchMethod {
    MultiDirectional,
    Knn,
    BallQuery,
}

impl SearchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchMethod::MultiDirectional => "multidir",
            SearchMethod::Knn => "knn",
            SearchMethod::BallQuery => "ball",
        }
    }
}

impl fmt::Display for SearchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SearchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multidir" => Ok(SearchMethod::MultiDirectional),
            "knn" => Ok(SearchMethod::Knn),
            "ball" => Ok(SearchMethod::BallQuery),
            other => Err(Error::InvalidArgument(format!(
                "unknown search method {other:?} (expected multidir, knn or ball)"
            ))),
        }
    }
}

/// Runs `method` with `K = 16 · cfg.points_per_bin()` neighbors per center.
pub fn search(
    method: SearchMethod,
    index: &SpatialIndex,
    positions: &[[f64; 3]],
    centers: &[usize],
    cfg: &SearchConfig,
) -> Result<NeighborGraph> {
    match method {
        SearchMethod::MultiDirectional => multi_directional_search(index, positions, centers, cfg),
        SearchMethod::Knn => knn_search(index, positions, centers, cfg.num_neighbors()),
        SearchMethod::BallQuery => ball_query(index, positions, centers, cfg.radius(), cfg.num_neighbors()),
    }
}

/// Fixed-width neighbor lists: row `i` holds the `K` neighbors of point
/// `centers[i]`, all indices into a source set of `source_size` points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    centers: Vec<usize>,
    indices: Vec<usize>,
    width: usize,
    source_size: usize,
}

impl NeighborGraph {
    pub fn new(centers: Vec<usize>, indices: Vec<usize>, width: usize, source_size: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidArgument("neighbor graph width must be positive".into()));
        }
        if indices.len() != centers.len() * width {
            return Err(Error::LengthMismatch {
                expected: centers.len() * width,
                actual: indices.len(),
            });
        }
        if let Some(&bad) = centers.iter().chain(&indices).find(|&&i| i >= source_size) {
            return Err(Error::InvalidArgument(format!(
                "index {bad} out of range for {source_size} points"
            )));
        }
        Ok(Self {
            centers,
            indices,
            width,
            source_size,
        })
    }

    /// A graph whose centers are all source points, in order.
    pub fn self_centered(indices: Vec<usize>, width: usize) -> Result<Self> {
        let n = indices.len() / width.max(1);
        Self::new((0..n).collect(), indices, width, n)
    }

    #[inline]
    pub fn num_rows(&self) -> usize {
        self.centers.len()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn source_size(&self) -> usize {
        self.source_size
    }

    #[inline]
    pub fn center(&self, row: usize) -> usize {
        self.centers[row]
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    #[inline]
    pub fn neighbors(&self, row: usize) -> &[usize] {
        &self.indices[row * self.width..(row + 1) * self.width]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Applies `perm` to the slots of every row (`new[k] = old[perm[k]]`).
    pub fn permute_slots(&self, perm: &[usize]) -> NeighborGraph {
        assert_eq!(perm.len(), self.width);
        let mut indices = Vec::with_capacity(self.indices.len());
        for r in 0..self.num_rows() {
            let row = self.neighbors(r);
            indices.extend(perm.iter().map(|&k| row[k]));
        }
        NeighborGraph {
            indices,
            ..self.clone()
        }
    }

    /// Relabels the source points: point `p` becomes `new_index[p]`, and
    /// row `r` moves to `new_index[r]` (self-centered graphs only).
    pub fn relabel(&self, new_index: &[usize]) -> NeighborGraph {
        assert_eq!(new_index.len(), self.source_size);
        assert_eq!(self.num_rows(), self.source_size, "relabel needs a self-centered graph");
        let mut centers = vec![0; self.num_rows()];
        let mut indices = vec![0; self.indices.len()];
        for r in 0..self.num_rows() {
            let nr = new_index[r];
            centers[nr] = new_index[self.centers[r]];
            for (slot, &j) in self.neighbors(r).iter().enumerate() {
                indices[nr * self.width + slot] = new_index[j];
            }
        }
        NeighborGraph {
            centers,
            indices,
            ..self.clone()
        }
    }
}
