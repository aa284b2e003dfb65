//! The invariant suite behind the `selfcheck` command.
//!
//! Every property runs a number of seeded trials against scalar or
//! brute-force reference implementations kept in this module, independent of
//! the optimized code paths they check.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::attention::{attention_map, psa_forward, PSAParams};
use crate::data::{seeded_rng, Rng};
use crate::error::Result;
use crate::lae::{aggregate, edge_attention, lae_conv_forward, LAEConvParams};
use crate::numerics::gradcheck::{check_tape, GradCheckReport};
use crate::numerics::{matmul, Activation, Graph, Linear, Matrix, ParameterStore};
use crate::search::{
    ball_query, farthest_point_sampling, knn_search, multi_directional_search, NeighborGraph, SearchConfig,
    SpatialIndex,
};
use crate::segnet::{BlockGeometry, NetworkConfig, SegNet};

/// Every property, in report order.
pub const PROPERTIES: &[&str] = &[
    "gradient.matmul",
    "gradient.softmax",
    "gradient.mlp",
    "gradient.cross_entropy",
    "gradient.edge_coefficients",
    "gradient.aggregate",
    "gradient.lae_conv",
    "gradient.psa",
    "gradient.network",
    "search.multi_directional",
    "search.knn",
    "search.ball_query",
    "search.farthest_point",
    "search.bin_geometry",
    "normalization.edge_coefficients",
    "normalization.psa",
    "reduction.one_hot",
    "reduction.uniform",
    "reduction.gamma_zero",
    "equivariance.lae_conv",
    "equivariance.psa",
];

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub trials: usize,
    /// First failure, if any.
    pub failure: Option<String>,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

type Trial = fn(&mut Rng) -> std::result::Result<(), String>;

fn trial_fn(name: &str) -> Option<Trial> {
    Some(match name {
        "gradient.matmul" => grad_matmul,
        "gradient.softmax" => grad_softmax,
        "gradient.mlp" => grad_mlp,
        "gradient.cross_entropy" => grad_cross_entropy,
        "gradient.edge_coefficients" => grad_edge_coefficients,
        "gradient.aggregate" => grad_aggregate,
        "gradient.lae_conv" => grad_lae_conv,
        "gradient.psa" => grad_psa,
        "gradient.network" => grad_network,
        "search.multi_directional" => search_multi_directional,
        "search.knn" => search_knn,
        "search.ball_query" => search_ball,
        "search.farthest_point" => search_fps,
        "search.bin_geometry" => search_bin_geometry,
        "normalization.edge_coefficients" => normalization_edges,
        "normalization.psa" => normalization_psa,
        "reduction.one_hot" => reduction_one_hot,
        "reduction.uniform" => reduction_uniform,
        "reduction.gamma_zero" => reduction_gamma_zero,
        "equivariance.lae_conv" => equivariance_lae,
        "equivariance.psa" => equivariance_psa,
        _ => return None,
    })
}

/// Runs property `name` for `trials` seeds derived from `seed`. Returns
/// `None` for an unknown name.
pub fn run_property(name: &str, trials: usize, seed: u64) -> Option<PropertyResult> {
    let f = trial_fn(name)?;
    let name = PROPERTIES.iter().copied().find(|p| *p == name)?;
    let mut failure = None;
    for t in 0..trials {
        let mut rng = seeded_rng(seed.wrapping_add(t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        if let Err(msg) = f(&mut rng) {
            failure = Some(format!("trial {t}: {msg}"));
            break;
        }
    }
    Some(PropertyResult { name, trials, failure })
}

/// Runs every property with `trials` seeds each.
pub fn run_selfcheck(trials: usize, seed: u64) -> Vec<PropertyResult> {
    PROPERTIES
        .iter()
        .map(|p| run_property(p, trials, seed).expect("listed property"))
        .collect()
}

// ---------------------------------------------------------------------------
// helpers

fn err(e: crate::error::Error) -> String {
    e.to_string()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized data")
}

fn random_cloud(n: usize, extent: f64, rng: &mut Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
            ]
        })
        .collect()
}

/// A random cloud in which roughly a tenth of the points duplicate earlier
/// ones, so that distance ties occur.
fn cloud_with_duplicates(n: usize, rng: &mut Rng) -> Vec<[f64; 3]> {
    let mut pts = random_cloud(n, 1.0, rng);
    for i in 1..n {
        if rng.random_bool(0.1) {
            pts[i] = pts[rng.random_range(0..i)];
        }
    }
    pts
}

fn random_graph(n: usize, k: usize, rng: &mut Rng) -> NeighborGraph {
    let idx = (0..n * k).map(|_| rng.random_range(0..n)).collect();
    NeighborGraph::self_centered(idx, k).expect("valid graph")
}

/// Replaces every parameter with uniform noise in `[-0.5, 0.5]`.
fn randomize(store: &mut ParameterStore, rng: &mut Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
}

fn gradient_verdict(report: GradCheckReport) -> std::result::Result<(), String> {
    if report.passed() {
        Ok(())
    } else {
        Err(format!(
            "max relative error {:.3e} over {} entries ({} kinks skipped), worst {:?}",
            report.max_rel_error, report.checked, report.skipped_kinks, report.worst
        ))
    }
}

fn check_grad<F>(store: &ParameterStore, inputs: &[Matrix], build: F) -> std::result::Result<(), String>
where
    F: Fn(&mut Graph, &ParameterStore, &[crate::numerics::Var]) -> Result<crate::numerics::Var>,
{
    gradient_verdict(check_tape(store, inputs, build).map_err(err)?)
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Direction bin from the polar angle: sector `floor(atan2(y, x) / 45°)`
/// over `[0°, 360°)`, plus 8 below the center.
pub fn reference_bin(offset: [f64; 3]) -> usize {
    let mut az = offset[1].atan2(offset[0]);
    if az < 0.0 {
        az += 2.0 * PI;
    }
    let sector = ((az / (PI / 4.0)).floor() as usize).min(7);
    sector + if offset[2] >= 0.0 { 0 } else { 8 }
}

/// Brute-force multi-directional search.
pub fn reference_multi_directional(pts: &[[f64; 3]], centers: &[usize], r: f64, m: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for &c in centers {
        let mut bins: Vec<Vec<(f64, usize)>> = vec![Vec::new(); 16];
        for (j, &q) in pts.iter().enumerate() {
            let d2 = dist2(q, pts[c]);
            if j != c && d2 <= r * r {
                let p = pts[c];
                bins[reference_bin([q[0] - p[0], q[1] - p[1], q[2] - p[2]])].push((d2, j));
            }
        }
        for mut b in bins {
            b.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
            for s in 0..m {
                out.push(b.get(s).map_or(c, |e| e.1));
            }
        }
    }
    out
}

pub fn reference_knn(pts: &[[f64; 3]], centers: &[usize], k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for &c in centers {
        let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(j, &q)| (dist2(q, pts[c]), j)).collect();
        all.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        for s in 0..k {
            out.push(all.get(s).map_or(c, |e| e.1));
        }
    }
    out
}

pub fn reference_ball(pts: &[[f64; 3]], centers: &[usize], r: f64, k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for &c in centers {
        let inside: Vec<usize> = (0..pts.len()).filter(|&j| dist2(pts[j], pts[c]) <= r * r).take(k).collect();
        let pad = inside.first().copied().unwrap_or(c);
        for s in 0..k {
            out.push(inside.get(s).copied().unwrap_or(pad));
        }
    }
    out
}

/// Farthest point sampling by recomputing every minimum distance from
/// scratch at each step.
pub fn reference_fps(pts: &[[f64; 3]], n_out: usize, seed_index: usize) -> Vec<usize> {
    let mut chosen = vec![seed_index];
    while chosen.len() < n_out {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..pts.len() {
            if chosen.contains(&j) {
                continue;
            }
            let d = chosen.iter().map(|&s| dist2(pts[j], pts[s])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, j));
            }
        }
        chosen.push(best.expect("enough points").1);
    }
    chosen
}

fn compare_graph(name: &str, got: &NeighborGraph, expected: &[usize]) -> std::result::Result<(), String> {
    if got.indices() == expected {
        return Ok(());
    }
    let w = got.width();
    let row = got
        .indices()
        .chunks(w)
        .zip(expected.chunks(w))
        .position(|(a, b)| a != b)
        .unwrap_or(0);
    Err(format!(
        "{name}: row {row} is {:?}, oracle {:?}",
        got.neighbors(row),
        &expected[row * w..(row + 1) * w]
    ))
}

struct SearchCase {
    pts: Vec<[f64; 3]>,
    centers: Vec<usize>,
    radius: f64,
    m: usize,
    index: SpatialIndex,
}

fn search_case(rng: &mut Rng) -> std::result::Result<SearchCase, String> {
    let n = rng.random_range(1..=256);
    let pts = cloud_with_duplicates(n, rng);
    let mut centers: Vec<usize> = (0..n).collect();
    centers.shuffle(rng);
    centers.truncate(rng.random_range(1..=n.min(64)));
    let radius = rng.random_range(0.05..0.6);
    let cell = rng.random_range(0.05..0.5);
    let index = SpatialIndex::build(&pts, cell).map_err(err)?;
    Ok(SearchCase {
        pts,
        centers,
        radius,
        m: rng.random_range(1..=3),
        index,
    })
}

// ---------------------------------------------------------------------------
// gradients

fn grad_matmul(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, k, c) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
    let inputs = [random_matrix(n, k, rng), random_matrix(k, c, rng)];
    let coeffs = random_matrix(n, c, rng);
    check_grad(&ParameterStore::new(), &inputs, |g, _, v| {
        let y = g.matmul(v[0], v[1])?;
        g.dot(y, coeffs.clone())
    })
}

fn grad_softmax(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, k) = (rng.random_range(1..6), rng.random_range(1..8));
    let mut x = random_matrix(n, k, rng);
    for v in x.data_mut() {
        *v *= 3.0;
    }
    let coeffs = random_matrix(n, k, rng);
    check_grad(&ParameterStore::new(), &[x], |g, _, v| {
        let y = g.row_softmax(v[0]);
        g.dot(y, coeffs.clone())
    })
}

fn grad_mlp(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, c_in, c_hidden, c_out) = (rng.random_range(1..8), 3, 5, 4);
    let mut store = ParameterStore::new();
    let l1 = Linear::new(&mut store, "l1", c_in, c_hidden, Activation::Relu, rng).map_err(err)?;
    let l2 = Linear::new(&mut store, "l2", c_hidden, c_out, Activation::None, rng).map_err(err)?;
    randomize(&mut store, rng);
    let x = random_matrix(n, c_in, rng);
    let coeffs = random_matrix(n, c_out, rng);
    check_grad(&store, &[x], |g, s, v| {
        let h = l1.forward(g, s, v[0])?;
        let y = l2.forward(g, s, h)?;
        g.dot(y, coeffs.clone())
    })
}

fn grad_cross_entropy(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, c) = (rng.random_range(1..10), rng.random_range(2..6));
    let logits = random_matrix(n, c, rng);
    let targets: Arc<Vec<usize>> = Arc::new((0..n).map(|_| rng.random_range(0..c)).collect());
    let weights: Option<Vec<f64>> = rng
        .random_bool(0.5)
        .then(|| (0..c).map(|_| rng.random_range(0.2..2.0)).collect());
    check_grad(&ParameterStore::new(), &[logits], |g, _, v| {
        g.cross_entropy(v[0], targets.clone(), weights.as_deref())
    })
}

fn grad_edge_coefficients(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, k, c) = (rng.random_range(1..10), rng.random_range(1..6), rng.random_range(1..5));
    let graph = Arc::new(random_graph(n, k, rng));
    let inputs = [random_matrix(n, c, rng), random_matrix(c, 1, rng)];
    let coeffs = random_matrix(n, k, rng);
    check_grad(&ParameterStore::new(), &inputs, |g, _, v| {
        let e = g.edge_scores(v[0], v[1], graph.clone(), crate::numerics::kernels::LEAKY_SLOPE)?;
        g.dot(e, coeffs.clone())
    })
}

fn grad_aggregate(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, k, c) = (rng.random_range(1..10), rng.random_range(1..6), rng.random_range(1..5));
    let graph = Arc::new(random_graph(n, k, rng));
    let inputs = [random_matrix(n, k, rng), random_matrix(n, c, rng)];
    let coeffs = random_matrix(n, c, rng);
    check_grad(&ParameterStore::new(), &inputs, |g, _, v| {
        let y = g.neighbor_sum(v[0], v[1], graph.clone())?;
        g.dot(y, coeffs.clone())
    })
}

fn grad_lae_conv(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, k, c_in, c_out) = (rng.random_range(2..24), 16, 3, rng.random_range(2..6));
    let mut store = ParameterStore::new();
    let mut p = LAEConvParams::new(&mut store, "l", c_in, c_out, rng).map_err(err)?;
    p.offset_aggregation = rng.random_bool(0.5);
    randomize(&mut store, rng);
    let graph = Arc::new(random_graph(n, k, rng));
    let x = random_matrix(n, c_in, rng);
    let coeffs = random_matrix(n, c_out, rng);
    check_grad(&store, &[x], |g, s, v| {
        let y = p.forward(g, s, v[0], &graph)?;
        g.dot(y, coeffs.clone())
    })
}

fn grad_psa(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, c) = (rng.random_range(1..16), rng.random_range(2..10));
    let mut store = ParameterStore::new();
    let p = PSAParams::new(&mut store, "psa", c, rng).map_err(err)?;
    randomize(&mut store, rng);
    let x = random_matrix(n, c, rng);
    let coeffs = random_matrix(n, c, rng);
    check_grad(&store, &[x], |g, s, v| {
        let y = p.forward(g, s, v[0], usize::MAX)?;
        g.dot(y, coeffs.clone())
    })
}

fn grad_network(rng: &mut Rng) -> std::result::Result<(), String> {
    let mut cfg = NetworkConfig::tiny(3);
    cfg.offset_aggregation = rng.random_bool(0.5);
    let mut store = ParameterStore::new();
    let net = SegNet::new(cfg.clone(), &mut store, rng).map_err(err)?;
    randomize(&mut store, rng);
    let n = cfg.num_points[0];
    let pts = random_cloud(n, 1.0, rng);
    let geom = BlockGeometry::build(&pts, &cfg).map_err(err)?;
    let x = random_matrix(n, cfg.input_channels, rng);
    let labels: Arc<Vec<usize>> = Arc::new((0..n).map(|_| rng.random_range(0..3)).collect());
    check_grad(&store, &[x], |g, s, v| {
        let pass = net.record(g, s, v[0], &geom)?;
        g.cross_entropy(pass.logits, labels.clone(), None)
    })
}

// ---------------------------------------------------------------------------
// search

fn search_multi_directional(rng: &mut Rng) -> std::result::Result<(), String> {
    let c = search_case(rng)?;
    let cfg = SearchConfig::new(c.radius, c.m).map_err(err)?;
    let got = multi_directional_search(&c.index, &c.pts, &c.centers, &cfg).map_err(err)?;
    compare_graph(
        "multi-directional",
        &got,
        &reference_multi_directional(&c.pts, &c.centers, c.radius, c.m),
    )
}

fn search_knn(rng: &mut Rng) -> std::result::Result<(), String> {
    let c = search_case(rng)?;
    let k = 16 * c.m;
    let got = knn_search(&c.index, &c.pts, &c.centers, k).map_err(err)?;
    compare_graph("knn", &got, &reference_knn(&c.pts, &c.centers, k))
}

fn search_ball(rng: &mut Rng) -> std::result::Result<(), String> {
    let c = search_case(rng)?;
    let k = 16 * c.m;
    let got = ball_query(&c.index, &c.pts, &c.centers, c.radius, k).map_err(err)?;
    compare_graph("ball query", &got, &reference_ball(&c.pts, &c.centers, c.radius, k))
}

fn search_fps(rng: &mut Rng) -> std::result::Result<(), String> {
    let n = rng.random_range(1..=256);
    let pts = cloud_with_duplicates(n, rng);
    let n_out = rng.random_range(1..=n.min(64));
    let seed = rng.random_range(0..n);
    let got = farthest_point_sampling(&pts, n_out, seed).map_err(err)?;
    let expected = reference_fps(&pts, n_out, seed);
    if got == expected {
        Ok(())
    } else {
        Err(format!("sampled {got:?}, oracle {expected:?}"))
    }
}

fn search_bin_geometry(rng: &mut Rng) -> std::result::Result<(), String> {
    let c = search_case(rng)?;
    let cfg = SearchConfig::new(c.radius, c.m).map_err(err)?;
    let got = multi_directional_search(&c.index, &c.pts, &c.centers, &cfg).map_err(err)?;
    for (row, &center) in c.centers.iter().enumerate() {
        let p = c.pts[center];
        for (slot, &j) in got.neighbors(row).iter().enumerate() {
            if j == center {
                continue;
            }
            let q = c.pts[j];
            if dist2(p, q) > c.radius * c.radius {
                return Err(format!("neighbor {j} of {center} lies outside the radius"));
            }
            let bin = reference_bin([q[0] - p[0], q[1] - p[1], q[2] - p[2]]);
            if bin != slot / c.m {
                return Err(format!("neighbor {j} of {center} sits in slot {slot} but belongs to bin {bin}"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// normalization and reductions

fn row_sum_error(m: &Matrix) -> f64 {
    (0..m.rows())
        .map(|i| (m.row(i).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn normalization_edges(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, k, c_in, c) = (rng.random_range(1..40), 16, 3, rng.random_range(1..8));
    let graph = random_graph(n, k, rng);
    let h = random_matrix(n, c_in, rng);
    let mut w = random_matrix(c_in, c, rng);
    for v in w.data_mut() {
        *v *= 5.0;
    }
    let a = random_matrix(c, 1, rng);
    let att = edge_attention(&h, &graph, &w, &a).map_err(err)?;
    let e = row_sum_error(&att.normalized);
    if e <= 1e-9 {
        Ok(())
    } else {
        Err(format!("edge coefficient row sums off by {e:.3e}"))
    }
}

fn normalization_psa(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, c) = (rng.random_range(1..64), rng.random_range(2..12));
    let mut store = ParameterStore::new();
    let p = PSAParams::new(&mut store, "psa", c, rng).map_err(err)?;
    randomize(&mut store, rng);
    let mut x = random_matrix(n, c, rng);
    for v in x.data_mut() {
        *v *= 4.0;
    }
    let s = attention_map(&x, &p, &store).map_err(err)?;
    let e = row_sum_error(&s.0);
    if e <= 1e-9 {
        Ok(())
    } else {
        Err(format!("attention row sums off by {e:.3e}"))
    }
}

fn reduction_one_hot(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, k, c_in, c) = (rng.random_range(1..20), rng.random_range(1..20), 3, rng.random_range(1..6));
    let graph = random_graph(n, k, rng);
    let h = random_matrix(n, c_in, rng);
    let w = random_matrix(c_in, c, rng);
    let mut alpha = Matrix::zeros(n, k);
    let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    for (i, &s) in picks.iter().enumerate() {
        alpha.set(i, s, 1.0);
    }
    let out = aggregate(&alpha, &h, &graph, &w).map_err(err)?;
    let lifted = matmul(&h, &w).map_err(err)?;
    for (i, &s) in picks.iter().enumerate() {
        if out.row(i) != lifted.row(graph.neighbors(i)[s]) {
            return Err(format!("row {i} differs from the selected neighbor"));
        }
    }
    Ok(())
}

fn reduction_uniform(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, k, c_in, c) = (rng.random_range(1..20), rng.random_range(1..20), 3, rng.random_range(1..6));
    let graph = random_graph(n, k, rng);
    let h = random_matrix(n, c_in, rng);
    let w = random_matrix(c_in, c, rng);
    let alpha = Matrix::filled(n, k, 1.0 / k as f64);
    let out = aggregate(&alpha, &h, &graph, &w).map_err(err)?;
    for i in 0..n {
        for ch in 0..c {
            let mut mean = 0.0;
            for &j in graph.neighbors(i) {
                let l: f64 = (0..c_in).map(|t| h.get(j, t) * w.get(t, ch)).sum();
                mean += l;
            }
            mean /= k as f64;
            if (out.get(i, ch) - mean).abs() > 1e-12 {
                return Err(format!("row {i} channel {ch}: {} vs mean {mean}", out.get(i, ch)));
            }
        }
    }
    Ok(())
}

fn reduction_gamma_zero(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, c) = (rng.random_range(1..40), rng.random_range(2..12));
    let mut store = ParameterStore::new();
    let p = PSAParams::new(&mut store, "psa", c, rng).map_err(err)?;
    randomize(&mut store, rng);
    *store.value_mut(p.gamma) = Matrix::scalar(0.0);
    let x = random_matrix(n, c, rng);
    let y = psa_forward(&x, &p, &store, usize::MAX).map_err(err)?;
    if y == x {
        Ok(())
    } else {
        Err(format!("output differs from input by {:.3e}", y.max_abs_diff(&x)))
    }
}

// ---------------------------------------------------------------------------
// equivariance

fn random_permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn equivariance_lae(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, c_in, c_out) = (rng.random_range(2..64), 3, rng.random_range(2..8));
    let mut store = ParameterStore::new();
    let mut p = LAEConvParams::new(&mut store, "l", c_in, c_out, rng).map_err(err)?;
    p.offset_aggregation = rng.random_bool(0.5);
    randomize(&mut store, rng);
    let pts = random_cloud(n, 1.0, rng);
    let h = random_matrix(n, c_in, rng);
    let cfg = SearchConfig::new(0.4, rng.random_range(1..3)).map_err(err)?;
    let all: Vec<usize> = (0..n).collect();
    let graph = multi_directional_search(&SpatialIndex::build(&pts, 0.4).map_err(err)?, &pts, &all, &cfg).map_err(err)?;
    let out = lae_conv_forward(&h, &graph, &p, &store).map_err(err)?;

    // New row r holds old point perm[r].
    let perm = random_permutation(n, rng);
    let pts_p: Vec<[f64; 3]> = perm.iter().map(|&i| pts[i]).collect();
    let h_p = h.select_rows(&perm);
    let graph_p =
        multi_directional_search(&SpatialIndex::build(&pts_p, 0.4).map_err(err)?, &pts_p, &all, &cfg).map_err(err)?;
    let out_p = lae_conv_forward(&h_p, &graph_p, &p, &store).map_err(err)?;
    let d = out_p.max_abs_diff(&out.select_rows(&perm));
    if d <= 1e-12 {
        Ok(())
    } else {
        Err(format!("permuted output differs by {d:.3e}"))
    }
}

fn equivariance_psa(rng: &mut Rng) -> std::result::Result<(), String> {
    let (n, c) = (rng.random_range(1..64), rng.random_range(2..12));
    let mut store = ParameterStore::new();
    let p = PSAParams::new(&mut store, "psa", c, rng).map_err(err)?;
    randomize(&mut store, rng);
    let x = random_matrix(n, c, rng);
    let perm = random_permutation(n, rng);
    let y = psa_forward(&x, &p, &store, usize::MAX).map_err(err)?;
    let y_p = psa_forward(&x.select_rows(&perm), &p, &store, usize::MAX).map_err(err)?;
    let d = y_p.max_abs_diff(&y.select_rows(&perm));
    if d <= 1e-12 {
        Ok(())
    } else {
        Err(format!("permuted output differs by {d:.3e}"))
    }
}
