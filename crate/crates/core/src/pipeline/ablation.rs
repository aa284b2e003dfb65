use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::data::PointCloud;
use crate::error::Result;
use crate::kv::format_list;
use crate::search::SearchMethod;
use crate::segnet::{NetworkConfig, SegNet};

use super::blocks::BlockSpec;
use super::training::{evaluate_scenes, train_on_scenes, TrainSettings};

/// One network variation to train and score.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AblationVariant {
    pub search: SearchMethod,
    pub points_per_bin: usize,
    pub psa_layers: BTreeSet<usize>,
}

impl AblationVariant {
    pub fn new(search: SearchMethod, points_per_bin: usize, psa_layers: impl IntoIterator<Item = usize>) -> Self {
        Self {
            search,
            points_per_bin,
            psa_layers: psa_layers.into_iter().collect(),
        }
    }

    pub fn label(&self) -> String {
        let psa = if self.psa_layers.is_empty() {
            "none".to_string()
        } else {
            format_list(&self.psa_layers)
        };
        format!("{} K={} psa={}", self.search, 16 * self.points_per_bin, psa)
    }

    pub fn apply(&self, base: &NetworkConfig) -> NetworkConfig {
        NetworkConfig {
            search: self.search,
            points_per_bin: self.points_per_bin,
            psa_layers: self.psa_layers.clone(),
            ..base.clone()
        }
    }
}

/// Search variants (KNN, ball query, multi-directional with m = 1, 2, 3)
/// followed by attention placements with multi-directional m = 1.
pub fn standard_variants() -> Vec<AblationVariant> {
    let default_psa = [3, 4, 5];
    let mut v = vec![
        AblationVariant::new(SearchMethod::Knn, 1, default_psa),
        AblationVariant::new(SearchMethod::BallQuery, 1, default_psa),
    ];
    for m in 1..=3 {
        v.push(AblationVariant::new(SearchMethod::MultiDirectional, m, default_psa));
    }
    let placements: [&[usize]; 6] = [&[], &[3, 4, 5], &[2, 4, 6], &[1, 4, 7], &[2, 3, 4, 5, 6], &[1, 2, 3, 4, 5, 6, 7]];
    for p in placements {
        v.push(AblationVariant::new(SearchMethod::MultiDirectional, 1, p.iter().copied()));
    }
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub overall_accuracy: f64,
    pub mean_iou: f64,
    pub final_loss: f64,
}

/// Trains every variant from the same seed on `train` and evaluates it on
/// `test`.
pub fn run_ablation(
    variants: &[AblationVariant],
    base: &NetworkConfig,
    train: &[PointCloud],
    test: &[PointCloud],
    spec: &BlockSpec,
    settings: &TrainSettings,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let cfg = v.apply(base);
        let (net, mut store) = SegNet::init(cfg, settings.seed)?;
        let losses = train_on_scenes(&net, &mut store, train, spec, settings, |_, _, _| {})?;
        let metrics = evaluate_scenes(&net, &store, test, spec, settings.seed)?;
        log::info!("{}: OA {:.2} mIoU {:.2}", v.label(), metrics.overall_accuracy, metrics.mean_iou);
        rows.push(AblationRow {
            variant: v.clone(),
            overall_accuracy: metrics.overall_accuracy,
            mean_iou: metrics.mean_iou,
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

/// Aligned plain-text table.
pub fn format_table(rows: &[AblationRow]) -> String {
    let labels: Vec<String> = rows.iter().map(|r| r.variant.label()).collect();
    let w = labels.iter().map(String::len).max().unwrap_or(0).max("variant".len());
    let mut s = String::new();
    let _ = writeln!(s, "{:<w$}  {:>8}  {:>8}  {:>10}", "variant", "OA", "mIoU", "final_loss");
    let _ = writeln!(s, "{}", "-".repeat(w + 32));
    for (r, label) in rows.iter().zip(&labels) {
        let _ = writeln!(
            s,
            "{label:<w$}  {:>8.2}  {:>8.2}  {:>10.5}",
            r.overall_accuracy, r.mean_iou, r.final_loss
        );
    }
    s
}

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("search,k,psa_layers,oa,miou,final_loss\n");
    for r in rows {
        let v = &r.variant;
        let _ = writeln!(
            s,
            "{},{},\"{}\",{:.4},{:.4},{:.6}",
            v.search,
            16 * v.points_per_bin,
            format_list(&v.psa_layers),
            r.overall_accuracy,
            r.mean_iou,
            r.final_loss
        );
    }
    s
}
