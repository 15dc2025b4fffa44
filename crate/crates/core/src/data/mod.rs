//! Bag files, manifests, label binarisation, patient-level splitting,
//! tile subsampling and the synthetic benchmark generator.

mod bagfile;
mod labels;
mod manifest;
mod split;
mod subsample;
mod synth;

pub use bagfile::{decode_bag, encode_bag, read_bag, write_bag, BAG_MAGIC, BAG_VERSION};
pub use labels::{
    binarize_median, binarize_tertile, quantile, MedianThreshold, TertileThresholds,
};
pub use manifest::{Manifest, ManifestRow};
pub use split::{stratified_split, Fold, SplitPlan, StratifyKey};
pub use subsample::subsample_bag;
pub use synth::{synth_generate, write_synth_dataset, SynthConfig, SynthTask};

use crate::mil::TileBag;

/// A bag with its binary slide label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBag {
    pub bag: TileBag,
    pub label: u8,
}

/// `[negatives, positives]`.
pub fn label_counts(bags: &[LabeledBag]) -> [usize; 2] {
    let pos = bags.iter().filter(|b| b.label == 1).count();
    [bags.len() - pos, pos]
}
