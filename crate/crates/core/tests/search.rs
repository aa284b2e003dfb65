mod common;

use common::*;
use pointattn::search::{
    ball_query, bin_of, farthest_point_sampling, knn_search, multi_directional_search, SearchConfig, SpatialIndex,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn cloud(seed: u64, n: usize, dup: bool) -> Vec<[f64; 3]> {
    let mut r = rng(seed);
    let mut p = random_cloud(n, 1.0, &mut r);
    if dup {
        for i in 1..n {
            if r.random_bool(0.15) {
                p[i] = p[r.random_range(0..i)];
            }
        }
    }
    p
}

fn centers(seed: u64, n: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (0..n).collect();
    c.shuffle(&mut rng(seed ^ 0xabc));
    c.truncate(n.div_ceil(2));
    c
}

#[test]
fn bin_examples() {
    assert_eq!(bin_of([1.0, 0.0, 0.0]), 0);
    assert_eq!(bin_of([0.0, 1.0, -0.1]), 10);
    assert_eq!(bin_of([-1.0, 0.0, 0.0]), 4);
    assert_eq!(bin_of([1.0, -0.2, -1.0]), 15);
}

#[test]
fn bins_match_spherical_rederivation() {
    let mut r = rng(5);
    for _ in 0..10_000 {
        let v: [f64; 3] = [0, 1, 2].map(|_| r.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let u = v.map(|x| x / n);
        assert_eq!(bin_of(u), spherical_bin(u), "{u:?}");
    }
}

#[test]
fn index_holds_corner_cube_in_one_cell() {
    let corners: Vec<[f64; 3]> = (0..8).map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, (i >> 2) as f64]).collect();
    let idx = SpatialIndex::build(&corners, 2.0).unwrap();
    assert_eq!(idx.num_occupied_cells(), 1);
    assert_eq!(SpatialIndex::build(&corners[..1], 0.1).unwrap().num_occupied_cells(), 1);
}

#[test]
fn multidir_on_200_points_matches_oracle() {
    let p = cloud(77, 200, false);
    let all: Vec<usize> = (0..200).collect();
    let idx = SpatialIndex::build(&p, 0.5).unwrap();
    let g = multi_directional_search(&idx, &p, &all, &SearchConfig::new(0.5, 1).unwrap()).unwrap();
    assert_eq!(rows(&g), brute_multidir(&p, &all, 0.5, 1));
}

#[test]
fn knn_on_500_points_matches_oracle() {
    let p = cloud(78, 500, false);
    let all: Vec<usize> = (0..500).collect();
    let idx = SpatialIndex::build(&p, 0.1).unwrap();
    assert_eq!(rows(&knn_search(&idx, &p, &all, 16).unwrap()), brute_knn(&p, &all, 16));
    let nearest = knn_search(&idx, &p, &all, 1).unwrap();
    assert!(rows(&nearest).iter().enumerate().all(|(i, r)| r == &vec![i]));
}

#[test]
fn fps_examples() {
    let line: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
    assert_eq!(farthest_point_sampling(&line, 3, 0).unwrap(), vec![0, 9, 4]);
    let mut all = farthest_point_sampling(&line, 10, 0).unwrap();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn range_query_matches_scan(seed in any::<u64>(), n in 1usize..400, r in 0.01f64..0.7, cell in 0.02f64..0.8) {
        let p = cloud(seed, n, true);
        let idx = SpatialIndex::build(&p, cell).unwrap();
        let q = p[(seed % n as u64) as usize];
        let expect: Vec<usize> = (0..n).filter(|&j| d2(p[j], q) <= r * r).collect();
        prop_assert_eq!(idx.range_query(&p, q, r), expect);
    }

    #[test]
    fn multidir_matches_oracle(seed in any::<u64>(), n in 1usize..=256, r in 0.05f64..0.6, m in 1usize..=3, cell in 0.05f64..0.6) {
        let p = cloud(seed, n, true);
        let c = centers(seed, n);
        let idx = SpatialIndex::build(&p, cell).unwrap();
        let g = multi_directional_search(&idx, &p, &c, &SearchConfig::new(r, m).unwrap()).unwrap();
        prop_assert_eq!(g.width(), 16 * m);
        prop_assert_eq!(rows(&g), brute_multidir(&p, &c, r, m));
        for (row, &ci) in c.iter().enumerate() {
            for (slot, &j) in g.neighbors(row).iter().enumerate() {
                if j != ci {
                    let off = [p[j][0] - p[ci][0], p[j][1] - p[ci][1], p[j][2] - p[ci][2]];
                    prop_assert!(d2(p[j], p[ci]) <= r * r);
                    prop_assert_eq!(spherical_bin(off), slot / m);
                }
            }
        }
    }

    #[test]
    fn knn_matches_oracle(seed in any::<u64>(), n in 1usize..=256, k in 1usize..=48, cell in 0.05f64..0.6) {
        let p = cloud(seed, n, true);
        let c = centers(seed, n);
        let idx = SpatialIndex::build(&p, cell).unwrap();
        prop_assert_eq!(rows(&knn_search(&idx, &p, &c, k).unwrap()), brute_knn(&p, &c, k));
    }

    #[test]
    fn ball_matches_oracle(seed in any::<u64>(), n in 1usize..=256, r in 0.02f64..0.6, k in 1usize..=48, cell in 0.05f64..0.6) {
        let p = cloud(seed, n, true);
        let c = centers(seed, n);
        let idx = SpatialIndex::build(&p, cell).unwrap();
        prop_assert_eq!(rows(&ball_query(&idx, &p, &c, r, k).unwrap()), brute_ball(&p, &c, r, k));
    }

    #[test]
    fn fps_matches_greedy_oracle(seed in any::<u64>(), n in 1usize..=256, frac in 0.0f64..1.0) {
        let p = cloud(seed, n, true);
        let n_out = ((n as f64 * frac) as usize).max(1);
        let s = (seed % n as u64) as usize;
        prop_assert_eq!(farthest_point_sampling(&p, n_out, s).unwrap(), brute_fps(&p, n_out, s));
    }
}
