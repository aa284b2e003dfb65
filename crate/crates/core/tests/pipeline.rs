mod common;

use common::*;
use pointattn::data::{load_cloud, save_labeled_cloud, CloudFormat, LabelPrediction};
use pointattn::numerics::Matrix;
use pointattn::pipeline::synthetic::{Sphere, FLOOR_CLASS, SPHERE_CLASS};
use pointattn::pipeline::*;
use pointattn::{NetworkConfig, PointCloud, SegNet};
use proptest::prelude::*;
use rand::Rng as _;

fn spec(footprint: f64, padding: f64, n: usize, stride: f64) -> BlockSpec {
    BlockSpec {
        footprint,
        padding,
        points_per_block: n,
        stride,
    }
}

fn scattered(n: usize, ex: f64, ey: f64, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let pts = (0..n)
        .map(|_| [r.random_range(0.0..ex), r.random_range(0.0..ey), r.random_range(0.0..1.0)])
        .collect();
    PointCloud::from_positions(pts).unwrap()
}

#[test]
fn small_scene_gives_one_block() {
    let cloud = scattered(100, 1.0, 1.5, 1);
    let blocks = split_blocks(&cloud, &spec(2.0, 0.5, 64, 1.0), SplitMode::Train, 0).unwrap();
    assert_eq!(blocks.len(), 1);
    assert_eq!(blocks[0].cloud.num_points(), 64);
}

#[test]
fn four_by_four_scene_tiles_into_four_windows() {
    let mut cloud = scattered(2000, 4.0, 4.0, 2);
    // Pin the bounding box to exactly [0, 4]².
    let mut pts = cloud.positions().to_vec();
    pts[0] = [0.0, 0.0, 0.0];
    pts[1] = [4.0, 4.0, 0.0];
    cloud = PointCloud::from_positions(pts).unwrap();
    let s = spec(2.0, 0.0, 512, 2.0);
    let windows = window_members(&cloud, &s, 2.0);
    assert_eq!(windows.len(), 4);
    let starts = [[0.0, 0.0], [0.0, 2.0], [2.0, 0.0], [2.0, 2.0]];
    for (w, st) in windows.iter().zip(starts) {
        let expect: Vec<usize> = (0..cloud.num_points())
            .filter(|&i| {
                let p = cloud.position(i);
                p[0] >= st[0] && p[0] <= st[0] + 2.0 && p[1] >= st[1] && p[1] <= st[1] + 2.0
            })
            .collect();
        assert_eq!(w, &expect);
    }
}

#[test]
fn test_blocks_cover_every_point() {
    let cloud = scattered(3000, 5.0, 3.0, 3);
    let s = spec(2.0, 0.5, 256, 1.0);
    let blocks = split_blocks(&cloud, &s, SplitMode::Test, 4).unwrap();
    let mut seen = vec![false; cloud.num_points()];
    for b in &blocks {
        assert_eq!(b.cloud.num_points(), 256);
        for (k, &i) in b.indices.iter().enumerate() {
            seen[i] = true;
            let p = cloud.position(i);
            let q = b.cloud.position(k);
            for a in 0..3 {
                assert!((p[a] + b.offset[a] - q[a]).abs() < 1e-12);
            }
        }
        let cx: f64 = b.cloud.positions().iter().map(|p| p[0]).sum::<f64>() / 256.0;
        assert!(cx.abs() < 1e-9);
    }
    assert!(seen.iter().all(|&s| s));
    let again = split_blocks(&cloud, &s, SplitMode::Test, 4).unwrap();
    assert!(blocks.iter().zip(&again).all(|(a, b)| a.indices == b.indices));
}

#[test]
fn metric_examples() {
    let m = compute_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
    assert_eq!(m.overall_accuracy, 75.0);
    assert_eq!(m.class_iou, vec![Some(0.5), Some(2.0 / 3.0)]);
    assert!((m.mean_iou - 100.0 * (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    let perfect = compute_metrics(&[0, 2, 2], &[0, 2, 2], 3).unwrap();
    assert_eq!((perfect.overall_accuracy, perfect.mean_iou), (100.0, 100.0));
    assert_eq!(perfect.class_iou[1], None);
}

/// Two overlapping blocks with hand-set logits, resolved by a scalar loop.
#[test]
fn sliding_window_overlap_fixture() {
    let a_idx = vec![0, 1, 2, 3];
    let b_idx = vec![2, 3, 4, 5];
    let a = Matrix::from_rows(&[[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.2, 0.1, 0.0], [0.0, 0.0, 3.0]]);
    let b = Matrix::from_rows(&[[0.0, 4.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.5, 0.5, 0.0]]);
    let blocks = vec![
        (a_idx.clone(), LabelPrediction::from_logits(a.clone())),
        (b_idx.clone(), LabelPrediction::from_logits(b.clone())),
    ];
    let merged = merge_block_predictions(6, &blocks).unwrap();

    let softmax = |row: &[f64]| -> Vec<f64> {
        let e: Vec<f64> = row.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    };
    let mut best: Vec<Option<(f64, usize)>> = vec![None; 6];
    for (idx, logits) in [(&a_idx, &a), (&b_idx, &b)] {
        for (k, &i) in idx.iter().enumerate() {
            let p = softmax(logits.row(k));
            let mut lab = 0;
            for c in 1..p.len() {
                if p[c] > p[lab] {
                    lab = c;
                }
            }
            if best[i].is_none_or(|(conf, _)| p[lab] > conf) {
                best[i] = Some((p[lab], lab));
            }
        }
    }
    let expect: Vec<usize> = best.iter().map(|b| b.unwrap().1).collect();
    assert_eq!(merged.labels, expect);
    assert_eq!(merged.labels, vec![0, 1, 1, 2, 2, 0]);
    for (i, b) in best.iter().enumerate() {
        assert!((merged.confidence[i] - b.unwrap().0).abs() < 1e-15);
    }
}

#[test]
fn sliding_window_predict_labels_every_point() {
    let cfg = NetworkConfig::tiny(3);
    let (net, store) = SegNet::init(cfg, 0).unwrap();
    let scene = scattered(200, 3.0, 2.0, 9);
    let s = spec(1.0, 0.2, 32, 0.5);
    let p1 = sliding_window_predict(&scene, &s, &net, &store, 1).unwrap();
    let p2 = sliding_window_predict(&scene, &s, &net, &store, 1).unwrap();
    assert_eq!(p1.num_points(), 200);
    assert_eq!(p1.labels, p2.labels);
    assert!(p1.labels.iter().all(|&l| l < 3));
}

#[test]
fn floor_only_scene() {
    let recipe = SceneRecipe {
        random_spheres: 0,
        random_boxes: 0,
        ..SceneRecipe::default()
    };
    let a = generate_scene(&recipe, 3).unwrap();
    assert!(a.labels().unwrap().iter().all(|&l| l == FLOOR_CLASS));
    assert!(a.positions().iter().all(|p| p[2].abs() < 6.0 * recipe.noise));
    let b = generate_scene(&recipe, 3).unwrap();
    assert_eq!(a.positions(), b.positions());
}

#[test]
fn sphere_point_count_matches_area() {
    let density = 400.0;
    let recipe = SceneRecipe {
        floor: false,
        random_spheres: 0,
        random_boxes: 0,
        spheres: vec![Sphere {
            center: [0.0, 0.0, 2.0],
            radius: 1.0,
            class: SPHERE_CLASS,
        }],
        density,
        noise: 0.002,
        ..SceneRecipe::default()
    };
    let expected = density * 4.0 * std::f64::consts::PI;
    for seed in 0..5 {
        let s = generate_scene(&recipe, seed).unwrap();
        assert!((s.num_points() as f64 - expected).abs() < 3.0 * expected.sqrt());
        for p in s.positions() {
            let r = (p[0] * p[0] + p[1] * p[1] + (p[2] - 2.0) * (p[2] - 2.0)).sqrt();
            assert!((r - 1.0).abs() < 6.0 * recipe.noise * 3f64.sqrt());
        }
    }
}

#[test]
fn labeled_cloud_round_trip() {
    let scene = generate_scene(&SceneRecipe::default(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.xyzrgbl");
    save_labeled_cloud(&scene, scene.labels().unwrap(), &path).unwrap();
    let back = load_cloud(&path, CloudFormat::XyzRgbL).unwrap();
    assert_eq!(back.labels(), scene.labels());
    for (p, q) in scene.positions().iter().zip(back.positions()) {
        for a in 0..3 {
            assert!((p[a] - q[a]).abs() <= 5e-7);
        }
    }
}

#[test]
fn ablation_is_deterministic() {
    let recipe = SceneRecipe {
        extent: [2.0, 2.0],
        density: 60.0,
        random_spheres: 1,
        random_boxes: 1,
        ..SceneRecipe::default()
    };
    let train = vec![generate_scene(&recipe, 1).unwrap()];
    let test = vec![generate_scene(&recipe, 2).unwrap()];
    let s = spec(1.0, 0.2, 32, 0.5);
    let settings = TrainSettings {
        epochs: 2,
        batch_size: 2,
        ..TrainSettings::default()
    };
    let base = NetworkConfig::tiny(3);
    let v = [
        AblationVariant::new(pointattn::SearchMethod::Knn, 1, [3]),
        AblationVariant::new(pointattn::SearchMethod::BallQuery, 1, [3]),
        AblationVariant::new(pointattn::SearchMethod::MultiDirectional, 1, [3]),
        AblationVariant::new(pointattn::SearchMethod::MultiDirectional, 1, [3]),
    ];
    let rows = run_ablation(&v, &base, &train, &test, &s, &settings).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.overall_accuracy.is_finite() && r.final_loss.is_finite()));
    assert_eq!(rows[2], AblationRow { variant: v[3].clone(), ..rows[3].clone() });
    assert_eq!(rows[2].overall_accuracy, rows[3].overall_accuracy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn confusion_metrics_match_recount(seed in any::<u64>(), n in 1usize..300, c in 2usize..6) {
        let mut r = rng(seed);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let m = compute_metrics(&pred, &truth, c).unwrap();
        let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        prop_assert!((m.overall_accuracy - 100.0 * correct as f64 / n as f64).abs() < 1e-12);
        let mut ious = Vec::new();
        for k in 0..c {
            let tp = (0..n).filter(|&i| pred[i] == k && truth[i] == k).count();
            let fp = (0..n).filter(|&i| pred[i] == k && truth[i] != k).count();
            let fneg = (0..n).filter(|&i| pred[i] != k && truth[i] == k).count();
            let iou = (tp + fp + fneg > 0).then(|| tp as f64 / (tp + fp + fneg) as f64);
            prop_assert_eq!(m.class_iou[k], iou);
            ious.extend(iou);
        }
        let mean = 100.0 * ious.iter().sum::<f64>() / ious.len() as f64;
        prop_assert!((m.mean_iou - mean).abs() < 1e-9);
        prop_assert_eq!(m.confusion.total(), n as u64);
    }

    #[test]
    fn train_blocks_have_exact_size(seed in any::<u64>(), n in 1usize..600, per in 1usize..200) {
        let cloud = scattered(n, 3.0, 2.5, seed);
        let s = spec(1.0, 0.25, per, 1.0);
        for b in split_blocks(&cloud, &s, SplitMode::Train, seed).unwrap() {
            prop_assert_eq!(b.cloud.num_points(), per);
            prop_assert_eq!(b.indices.len(), per);
            prop_assert!(b.indices.iter().all(|&i| i < n));
        }
    }
}
