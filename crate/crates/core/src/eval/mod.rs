//! Downstream evaluation: room-classification probe, pose regression and
//! cluster-quality indices.

pub mod cluster;
pub mod localization;
pub mod probe;
pub mod split;

use ess_tensor::ParameterSet;
use serde::{Deserialize, Serialize};

pub use cluster::{cluster_metrics, ClusterReport};
pub use localization::{localization_loss, localization_train_eval, LocalizationConfig, LocalizationReport};
pub use probe::{linear_probe, train_probe, ProbeConfig, ProbeReport};
pub use split::{split_dataset, LightingHoldout, Split, SplitItem};

use crate::encoder::backbone_batch;
use crate::env::dataset::Dataset;
use crate::env::{lighting, render, LightingId};
use crate::image::RgbImage;
use crate::spatial::Pose;
use crate::Result;

/// Images for split items, re-rendered wherever the item's lighting differs
/// from the recorded frame.
pub fn split_images(ds: &Dataset, items: &[SplitItem]) -> Result<Vec<RgbImage>> {
    items
        .iter()
        .map(|it| {
            let recorded = &ds.images[it.index];
            if it.lighting == ds.records[it.index].lighting_id {
                return Ok(recorded.clone());
            }
            let light = lighting::find(&ds.palette, it.lighting)?;
            render(&ds.plan, &ds.poses[it.index], light, recorded.width(), recorded.height())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub probe: ProbeConfig,
    pub localization: LocalizationConfig,
    /// Lighting ids seen only by probe test frames.
    pub lighting_holdout: Option<Vec<LightingId>>,
    pub run_probe: bool,
    pub run_localization: bool,
    pub run_clusters: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            probe: ProbeConfig::default(),
            localization: LocalizationConfig::default(),
            lighting_holdout: None,
            run_probe: true,
            run_localization: true,
            run_clusters: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub probe: Option<ProbeReport>,
    pub localization: Option<LocalizationReport>,
    pub clusters: Option<ClusterReport>,
}

/// Runs the enabled evaluations against one dataset. `params` is only read.
pub fn evaluate(params: &ParameterSet<f32>, ds: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let mut report = EvalReport {
        probe: None,
        localization: None,
        clusters: None,
    };
    if cfg.run_probe {
        let holdout = match &cfg.lighting_holdout {
            Some(ids) => {
                let variants: Vec<LightingId> = ds.palette.iter().map(|l| l.id).filter(|&id| id != 0).collect();
                Some(LightingHoldout::new(ids, &variants)?)
            }
            None => None,
        };
        let split = split_dataset(&ds.records, cfg.probe.train_fraction, cfg.probe.seed, true, holdout.as_ref())?;
        let train = split_images(ds, &split.train)?;
        let test = split_images(ds, &split.test)?;
        let train_y: Vec<usize> = split.train.iter().map(|it| it.label).collect();
        let test_y: Vec<usize> = split.test.iter().map(|it| it.label).collect();
        report.probe = Some(linear_probe(
            params,
            (&train.iter().collect::<Vec<_>>(), &train_y),
            (&test.iter().collect::<Vec<_>>(), &test_y),
            split.classes.len(),
            &cfg.probe,
        )?);
    }
    if cfg.run_localization {
        let split = split_dataset(&ds.records, cfg.probe.train_fraction, cfg.localization.seed, false, None)?;
        let pick = |items: &[SplitItem]| -> (Vec<&RgbImage>, Vec<Pose>) {
            items.iter().map(|it| (&ds.images[it.index], ds.poses[it.index])).unzip()
        };
        let (train_x, train_p) = pick(&split.train);
        let (test_x, test_p) = pick(&split.test);
        report.localization = Some(localization_train_eval(
            params,
            (&train_x, &train_p),
            (&test_x, &test_p),
            &cfg.localization,
        )?);
    }
    if cfg.run_clusters {
        let labeled: Vec<(usize, &str)> = ds
            .records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.room_label.as_deref().map(|l| (i, l)))
            .collect();
        let mut classes: Vec<&str> = labeled.iter().map(|(_, l)| *l).collect();
        classes.sort_unstable();
        classes.dedup();
        let images: Vec<&RgbImage> = labeled.iter().map(|(i, _)| &ds.images[*i]).collect();
        let labels: Vec<usize> = labeled
            .iter()
            .map(|(_, l)| classes.binary_search(l).expect("collected above"))
            .collect();
        let points = probe::to_f64(backbone_batch(params, &images)?);
        report.clusters = Some(cluster_metrics(&points, &labels)?);
    }
    Ok(report)
}
