use std::path::Path;

use super::{optimize, LoopSpec, ModelChoice, RunConfig, TrainingLog};
use crate::checkpoint::Checkpoint;
use crate::data::{label_counts, subsample_bag, LabeledBag};
use crate::error::{Error, Result};
use crate::eval::{roc_auc, ScoredSet};
use crate::math::{balance_weights, ParamSet};
use crate::mil::{pad_bag, MilModel, ModelKind, TileBag};
use crate::seed::derive_seed;
use crate::tile::{train_tile_supervised, TileClassifierParams, TileTrainConfig};

const MIL_INIT_STREAM: u64 = 0x3117;

/// A trained model of any supported family.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Mil(MilModel),
    Tile(TileClassifierParams),
}

impl TrainedModel {
    pub fn choice(&self) -> ModelChoice {
        match self {
            TrainedModel::Mil(m) => match m.kind() {
                ModelKind::DeepMil => ModelChoice::DeepMil,
                ModelKind::VarMil => ModelChoice::VarMil,
            },
            TrainedModel::Tile(_) => ModelChoice::TileSup,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TrainedModel::Mil(m) => m.dim(),
            TrainedModel::Tile(t) => t.dim(),
        }
    }

    /// Positive-class score of one slide.
    pub fn score(&self, bag: &TileBag) -> Result<f64> {
        match self {
            TrainedModel::Mil(m) => m.score(bag),
            TrainedModel::Tile(t) => t.bag_score(bag),
        }
    }

    /// Patient-level AUC over `bags`; slide scores are averaged per patient.
    pub fn patient_auc(&self, bags: &[LabeledBag]) -> Result<f64> {
        roc_auc(&self.patient_scores(bags)?)
    }

    pub fn patient_scores(&self, bags: &[LabeledBag]) -> Result<ScoredSet> {
        let slides = bags
            .iter()
            .map(|lb| Ok((lb.bag.patient_id.as_str(), self.score(&lb.bag)?, lb.label)))
            .collect::<Result<Vec<_>>>()?;
        ScoredSet::from_slides(slides)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            TrainedModel::Mil(m) => Checkpoint::from_params(m.kind().as_str(), m.nu(), m.dim(), m.params()),
            TrainedModel::Tile(t) => Checkpoint::from_params("tilesup", t.nu(), t.dim(), t.params()),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(&["deepmil", "varmil", "tilesup"])?;
        let (nu, dim) = (ckpt.nu as usize, ckpt.dim as usize);
        let mut model = match ckpt.kind.as_str() {
            "tilesup" => TrainedModel::Tile(TileClassifierParams::zeros(dim, nu)),
            kind => TrainedModel::Mil(MilModel::zeros(
                kind.parse::<ModelChoice>()?.mil_kind().expect("MIL kind"),
                dim,
                nu,
            )),
        };
        match &mut model {
            TrainedModel::Mil(m) => ckpt.load_into(m.params_mut())?,
            TrainedModel::Tile(t) => ckpt.load_into(t.params_mut())?,
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Applies the fixed per-slide subsample and pads to `cfg.pad_to`.
pub fn prepare_bag(bag: &TileBag, cfg: &RunConfig) -> Result<TileBag> {
    let sub = subsample_bag(bag, cfg.subsample_n, cfg.seed)?;
    pad_bag(&sub, cfg.pad_to.max(sub.real_tile_count()))
}

pub fn prepare_bags(bags: &[LabeledBag], cfg: &RunConfig) -> Result<Vec<LabeledBag>> {
    bags.iter()
        .map(|lb| {
            Ok(LabeledBag {
                bag: prepare_bag(&lb.bag, cfg)?,
                label: lb.label,
            })
        })
        .collect()
}

/// Trains one model on `train`, validating on `val`, and returns the
/// checkpoint with the best validation AUC.
pub fn train_fold(
    train: &[LabeledBag],
    val: &[LabeledBag],
    cfg: &RunConfig,
) -> Result<(TrainedModel, TrainingLog)> {
    cfg.validate()?;
    if label_counts(val).contains(&0) {
        return Err(Error::SingleClass);
    }
    let dim = train
        .first()
        .ok_or_else(|| Error::invalid("empty training set"))?
        .bag
        .dim();
    let train = prepare_bags(train, cfg)?;
    let val = prepare_bags(val, cfg)?;

    match cfg.model.mil_kind() {
        None => {
            let tcfg = TileTrainConfig {
                nu: cfg.hidden_width,
                hyper: cfg.hyper(),
                batch_size: cfg.batch_size,
                epochs: cfg.epochs,
                eval_every: cfg.eval_every,
                seed: cfg.seed,
                objective: cfg.objective,
            };
            let (p, log) = train_tile_supervised(&train, &val, &tcfg)?;
            Ok((TrainedModel::Tile(p), log))
        }
        Some(kind) => {
            if let Some(bad) = train.iter().chain(&val).find(|lb| lb.bag.dim() != dim) {
                return Err(Error::shape("bag features", dim, bad.bag.dim()));
            }
            let weights = balance_weights(label_counts(&train))?;
            let init = MilModel::init(kind, dim, cfg.hidden_width, derive_seed(cfg.seed, MIL_INIT_STREAM));
            let spec = LoopSpec {
                n_units: train.len(),
                batch_size: cfg.batch_size,
                epochs: cfg.epochs,
                eval_every: cfg.eval_every,
                seed: cfg.seed,
                hyper: cfg.hyper(),
            };
            let (m, log) = optimize(
                init,
                &spec,
                |m: &mut MilModel, batch| {
                    batch.iter().try_fold(0.0, |acc, &b| {
                        let lb = &train[b];
                        Ok(acc + m.accumulate_gradients(&lb.bag, lb.label as usize, weights, cfg.objective)?)
                    })
                },
                |m| TrainedModel::Mil(m.clone()).patient_auc(&val),
            )?;
            Ok((TrainedModel::Mil(m), log))
        }
    }
}
