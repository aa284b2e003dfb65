//! Reference implementations and fixtures shared by the integration tests.
//! Everything here is written as plain loops, independent of the crate's
//! optimized paths.
#![allow(dead_code)]

use pointattn::data::{seeded_rng, Rng};
use pointattn::numerics::Matrix;
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    seeded_rng(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_cloud(n: usize, extent: f64, rng: &mut Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..extent)))
        .collect()
}

pub fn d2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
}

/// Bin from spherical coordinates: azimuth in degrees from +x, polar angle
/// from +z.
pub fn spherical_bin(v: [f64; 3]) -> usize {
    let mut phi = v[1].atan2(v[0]).to_degrees();
    if phi < 0.0 {
        phi += 360.0;
    }
    let sector = ((phi / 45.0) as usize).min(7);
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let theta = if r == 0.0 { 0.0 } else { (v[2] / r).acos().to_degrees() };
    let lower = theta > 90.0 || v[2] < 0.0;
    sector + if lower { 8 } else { 0 }
}

pub fn brute_multidir(p: &[[f64; 3]], centers: &[usize], r: f64, m: usize) -> Vec<Vec<usize>> {
    centers
        .iter()
        .map(|&c| {
            let mut row = Vec::new();
            for bin in 0..16 {
                let mut cand: Vec<(f64, usize)> = (0..p.len())
                    .filter(|&j| j != c && d2(p[j], p[c]) <= r * r)
                    .filter(|&j| spherical_bin([p[j][0] - p[c][0], p[j][1] - p[c][1], p[j][2] - p[c][2]]) == bin)
                    .map(|j| (d2(p[j], p[c]), j))
                    .collect();
                cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for s in 0..m {
                    row.push(cand.get(s).map_or(c, |x| x.1));
                }
            }
            row
        })
        .collect()
}

pub fn brute_knn(p: &[[f64; 3]], centers: &[usize], k: usize) -> Vec<Vec<usize>> {
    centers
        .iter()
        .map(|&c| {
            let mut all: Vec<(f64, usize)> = (0..p.len()).map(|j| (d2(p[j], p[c]), j)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (0..k).map(|s| all.get(s).map_or(c, |x| x.1)).collect()
        })
        .collect()
}

pub fn brute_ball(p: &[[f64; 3]], centers: &[usize], r: f64, k: usize) -> Vec<Vec<usize>> {
    centers
        .iter()
        .map(|&c| {
            let inside: Vec<usize> = (0..p.len()).filter(|&j| d2(p[j], p[c]) <= r * r).collect();
            let pad = inside.first().copied().unwrap_or(c);
            (0..k).map(|s| inside.get(s).copied().unwrap_or(pad)).collect()
        })
        .collect()
}

/// O(N²) greedy farthest point sampling with the lower index winning ties.
pub fn brute_fps(p: &[[f64; 3]], n_out: usize, seed: usize) -> Vec<usize> {
    let mut out = vec![seed];
    let mut used = vec![false; p.len()];
    used[seed] = true;
    while out.len() < n_out {
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for j in 0..p.len() {
            if used[j] {
                continue;
            }
            let mut md = f64::INFINITY;
            for &s in &out {
                md = md.min(d2(p[j], p[s]));
            }
            if md > best_d {
                best_d = md;
                best = j;
            }
        }
        used[best] = true;
        out.push(best);
    }
    out
}

pub fn rows(g: &pointattn::NeighborGraph) -> Vec<Vec<usize>> {
    (0..g.num_rows()).map(|r| g.neighbors(r).to_vec()).collect()
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// Scalar LAE-Conv: returns `(raw e, α, output)`.
pub struct LaeReference {
    pub raw: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub out: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn lae_reference(
    h: &Matrix,
    centers: &[usize],
    nbrs: &[Vec<usize>],
    w: &Matrix,
    a: &Matrix,
    tw: &Matrix,
    tb: &Matrix,
    offset: bool,
) -> LaeReference {
    let c = w.cols();
    let lift = |i: usize| -> Vec<f64> {
        (0..c)
            .map(|o| (0..h.cols()).map(|t| h.get(i, t) * w.get(t, o)).sum())
            .collect()
    };
    let mut res = LaeReference {
        raw: vec![],
        alpha: vec![],
        out: vec![],
    };
    for (row, &ci) in centers.iter().enumerate() {
        let lc = lift(ci);
        let e: Vec<f64> = nbrs[row]
            .iter()
            .map(|&j| {
                let lj = lift(j);
                (0..c).map(|o| a.get(o, 0) * leaky(lj[o] - lc[o])).sum()
            })
            .collect();
        let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = e.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = ex.iter().sum();
        let al: Vec<f64> = ex.iter().map(|v| v / s).collect();
        let mut agg = vec![0.0; c];
        for (k, &j) in nbrs[row].iter().enumerate() {
            let lj = lift(j);
            for o in 0..c {
                agg[o] += al[k] * (lj[o] - if offset { lc[o] } else { 0.0 });
            }
        }
        let out: Vec<f64> = (0..tw.cols())
            .map(|o| {
                let v: f64 = tb.get(0, o) + (0..c).map(|t| agg[t] * tw.get(t, o)).sum::<f64>();
                v.max(0.0)
            })
            .collect();
        res.raw.push(e);
        res.alpha.push(al);
        res.out.push(out);
    }
    res
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|i| {
            (0..w.cols())
                .map(|o| b.get(0, o) + (0..x.cols()).map(|t| x.get(i, t) * w.get(t, o)).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Scalar point-wise spatial attention: returns `(S, output)`.
pub fn psa_reference(
    x: &Matrix,
    q: (&Matrix, &Matrix),
    k: (&Matrix, &Matrix),
    v: (&Matrix, &Matrix),
    gamma: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let a = linear(x, q.0, q.1);
    let b = linear(x, k.0, k.1);
    let d = linear(x, v.0, v.1);
    let n = x.rows();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        let e: Vec<f64> = (0..n).map(|j| a[i].iter().zip(&b[j]).map(|(p, q)| p * q).sum()).collect();
        let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tot: f64 = e.iter().map(|v| (v - mx).exp()).sum();
        for j in 0..n {
            s[i][j] = (e[j] - mx).exp() / tot;
        }
    }
    let out = (0..n)
        .map(|i| {
            (0..x.cols())
                .map(|o| gamma * (0..n).map(|j| s[i][j] * d[j][o]).sum::<f64>() + x.get(i, o))
                .collect()
        })
        .collect();
    (s, out)
}

pub fn max_diff(a: &[Vec<f64>], m: &Matrix) -> f64 {
    let mut d: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            d = d.max((v - m.get(i, j)).abs());
        }
    }
    d
}
