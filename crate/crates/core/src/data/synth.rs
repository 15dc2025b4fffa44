//! Synthetic bag datasets with a known signal.
//!
//! Feature 0 carries the signal; all other features are nuisance. Every bag
//! draws a tile-level base pattern for the signal feature that is centred
//! and scaled to unit population variance within the bag, so with zero
//! noise the bag statistics are exact by construction:
//!
//! * `mean_signal`: positive bags shift the signal feature by `mean_shift`.
//! * `variance_signal`: both classes share the bag mean; positive bags
//!   spread the signal feature with variance `variance_ratio` instead of 1.
//!
//! `noise` scales per-tile Gaussian noise on the nuisance features and,
//! multiplied by `offset_scale`, a per-bag offset added to every feature
//! (the signal feature included).
//! The per-bag offset hides class information from any statistic that is
//! linear in the tiles, which is exactly what variance pooling escapes.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{write_bag, LabeledBag, Manifest, ManifestRow};
use crate::error::{Error, Result};
use crate::math::DenseMatrix;
use crate::mil::TileBag;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    MeanSignal,
    VarianceSignal,
}

impl fmt::Display for SynthTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthTask::MeanSignal => "mean_signal",
            SynthTask::VarianceSignal => "variance_signal",
        })
    }
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_signal" | "mean" => Ok(SynthTask::MeanSignal),
            "variance_signal" | "variance" => Ok(SynthTask::VarianceSignal),
            other => Err(Error::invalid(format!("unknown synthetic task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub task: SynthTask,
    pub n_bags: usize,
    pub min_tiles: usize,
    pub max_tiles: usize,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
    /// Class separation of the signal feature's bag mean (`mean_signal`).
    pub mean_shift: f64,
    /// Positive / negative within-bag variance (`variance_signal`).
    pub variance_ratio: f64,
    /// Per-bag offset standard deviation in units of `noise`.
    pub offset_scale: f64,
}

impl SynthConfig {
    pub fn new(task: SynthTask) -> Self {
        Self {
            task,
            n_bags: 200,
            min_tiles: 50,
            max_tiles: 200,
            dim: 16,
            noise: 1.0,
            seed: 0,
            mean_shift: 8.0,
            variance_ratio: 4.0,
            offset_scale: 2.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.n_bags >= 2
            && self.min_tiles >= 2
            && self.max_tiles >= self.min_tiles
            && self.dim >= 1
            && self.noise >= 0.0
            && self.mean_shift > 0.0
            && self.variance_ratio > 0.0
            && self.offset_scale >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid synthetic config {self:?}")))
        }
    }
}

pub const SIGNAL_FEATURE: usize = 0;

/// Generates `n_bags` single-slide patients with balanced labels.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<LabeledBag>> {
    cfg.validate()?;
    let mut labels: Vec<u8> = (0..cfg.n_bags).map(|i| (i % 2) as u8).collect();
    labels.shuffle(&mut rng_for(cfg.seed, u64::MAX));

    labels
        .iter()
        .enumerate()
        .map(|(m, &label)| {
            let mut rng = rng_for(cfg.seed, m as u64);
            let n = rng.random_range(cfg.min_tiles..=cfg.max_tiles);

            let mut base: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mean = base.iter().sum::<f64>() / n as f64;
            let sd = (base.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            base.iter_mut().for_each(|b| *b = (*b - mean) / sd);

            let mut features = DenseMatrix::zeros(cfg.dim, n);
            for h in 0..cfg.dim {
                let offset: f64 = cfg.noise * cfg.offset_scale * rng.sample::<f64, _>(StandardNormal);
                let row = features.row_mut(h);
                if h == SIGNAL_FEATURE {
                    let (centre, scale) = match cfg.task {
                        SynthTask::MeanSignal => (f64::from(label) * cfg.mean_shift, 1.0),
                        SynthTask::VarianceSignal => (
                            0.0,
                            if label == 1 { cfg.variance_ratio.sqrt() } else { 1.0 },
                        ),
                    };
                    for (z, b) in row.iter_mut().zip(&base) {
                        *z = centre + scale * b + offset;
                    }
                } else {
                    for z in row.iter_mut() {
                        *z = offset + cfg.noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            let id = format!("S{m:05}");
            Ok(LabeledBag {
                bag: TileBag::new(id.clone(), format!("{id}_0"), features)?,
                label,
            })
        })
        .collect()
}

/// Writes `bags/<wsi>.bag`, `manifest.csv` and `ground_truth.csv` under `dir`.
pub fn write_synth_dataset(bags: &[LabeledBag], cfg: &SynthConfig, dir: &Path) -> Result<Manifest> {
    let bag_dir = dir.join("bags");
    fs::create_dir_all(&bag_dir).map_err(|e| Error::io(&bag_dir, e))?;
    let mut rows = Vec::with_capacity(bags.len());
    let gt_path = dir.join("ground_truth.csv");
    let mut gt = csv::Writer::from_path(&gt_path)?;
    gt.write_record(["wsi_id", "label", "task", "tiles", "signal_mean", "signal_variance"])?;
    for lb in bags {
        let rel = format!("bags/{}.bag", lb.bag.wsi_id);
        write_bag(&lb.bag, &dir.join(&rel))?;
        let signal = lb.bag.feature_row(SIGNAL_FEATURE);
        let n = signal.len() as f64;
        let mean = signal.iter().sum::<f64>() / n;
        let var = signal.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
        gt.write_record([
            lb.bag.wsi_id.clone(),
            lb.label.to_string(),
            cfg.task.to_string(),
            signal.len().to_string(),
            format!("{mean:.9}"),
            format!("{var:.9}"),
        ])?;
        rows.push(ManifestRow {
            patient_id: lb.bag.patient_id.clone(),
            wsi_id: lb.bag.wsi_id.clone(),
            bag_path: rel,
            raw_score: None,
            label: Some(lb.label),
        });
    }
    gt.flush().map_err(|e| Error::io(&gt_path, e))?;
    let manifest = Manifest::new(rows, dir)?;
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}
