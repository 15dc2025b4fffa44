//! Tile-supervised baseline: every tile inherits its bag's label, a small
//! MLP classifies tiles, and a bag is scored by the fraction of tiles voted
//! positive.

use crate::data::{label_counts, LabeledBag};
use crate::error::{Error, Result};
use crate::eval::{roc_auc, ScoredSet};
use crate::math::{
    balance_weights, he_init, sigmoid, AdamHyper, Objective, Param, ParamSet,
};
use crate::mil::TileBag;
use crate::seed::derive_seed;
use crate::train::{optimize, LoopSpec, TrainingLog};

pub const DEFAULT_TILE_WIDTH: usize = 128;

/// `sigmoid(W2 tanh(W1 z + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TileClassifierParams {
    /// ν_t × H
    pub w1: Param,
    /// ν_t × 1
    pub b1: Param,
    /// 2 × ν_t
    pub w2: Param,
    /// 2 × 1
    pub b2: Param,
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TileTrace {
    pub hidden: Vec<f64>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

impl TileClassifierParams {
    pub fn init(dim: usize, nu: usize, seed: u64) -> Self {
        Self {
            w1: Param::new("tile.w1", he_init(nu, dim, derive_seed(seed, 11))),
            b1: Param::zeros("tile.b1", nu, 1),
            w2: Param::new("tile.w2", he_init(2, nu, derive_seed(seed, 12))),
            b2: Param::zeros("tile.b2", 2, 1),
        }
    }

    pub fn zeros(dim: usize, nu: usize) -> Self {
        Self {
            w1: Param::zeros("tile.w1", nu, dim),
            b1: Param::zeros("tile.b1", nu, 1),
            w2: Param::zeros("tile.w2", 2, nu),
            b2: Param::zeros("tile.b2", 2, 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.value.cols()
    }

    pub fn nu(&self) -> usize {
        self.w1.value.rows()
    }

    /// Majority-vote score of the real tiles of `bag`.
    pub fn bag_score(&self, bag: &TileBag) -> Result<f64> {
        let probs = (0..bag.real_tile_count())
            .map(|i| tile_forward(&bag.tile(i), self))
            .collect::<Result<Vec<_>>>()?;
        majority_vote(&probs)
    }
}

impl ParamSet for TileClassifierParams {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

pub fn tile_trace(z: &[f64], params: &TileClassifierParams) -> Result<TileTrace> {
    if z.len() != params.dim() {
        return Err(Error::shape("tile features", params.dim(), z.len()));
    }
    let mut hidden = params.w1.value.matvec(z);
    for (h, b) in hidden.iter_mut().zip(params.b1.value.as_slice()) {
        *h = (*h + b).tanh();
    }
    let out = params.w2.value.matvec(&hidden);
    let b2 = params.b2.value.as_slice();
    let logits = [out[0] + b2[0], out[1] + b2[1]];
    Ok(TileTrace {
        hidden,
        logits,
        probs: [sigmoid(logits[0]), sigmoid(logits[1])],
    })
}

/// Per-tile class probabilities.
pub fn tile_forward(z: &[f64], params: &TileClassifierParams) -> Result<[f64; 2]> {
    Ok(tile_trace(z, params)?.probs)
}

/// Adds the gradient of `objective` for one tile to the parameter buffers.
pub fn tile_backward(
    trace: &TileTrace,
    z: &[f64],
    params: &mut TileClassifierParams,
    label: usize,
    class_weights: [f64; 2],
    objective: Objective,
) -> Result<()> {
    let g_logits = objective.logit_grad(trace.probs, label, class_weights)?;
    params.b2.grad.as_mut_slice()[0] += g_logits[0];
    params.b2.grad.as_mut_slice()[1] += g_logits[1];
    params.w2.grad.add_outer(1.0, &g_logits, &trace.hidden);
    let mut g_hidden = params.w2.value.matvec_t(&g_logits);
    for (g, h) in g_hidden.iter_mut().zip(&trace.hidden) {
        *g *= 1.0 - h * h;
    }
    for (gb, g) in params.b1.grad.as_mut_slice().iter_mut().zip(&g_hidden) {
        *gb += g;
    }
    params.w1.grad.add_outer(1.0, &g_hidden, z);
    Ok(())
}

pub fn tile_loss(
    z: &[f64],
    params: &TileClassifierParams,
    label: usize,
    class_weights: [f64; 2],
    objective: Objective,
) -> Result<f64> {
    objective.loss(tile_forward(z, params)?, label, class_weights)
}

/// Fraction of tiles whose positive probability strictly exceeds the
/// negative one.
pub fn majority_vote(per_tile_probs: &[[f64; 2]]) -> Result<f64> {
    if per_tile_probs.is_empty() {
        return Err(Error::EmptyBag);
    }
    let positive = per_tile_probs.iter().filter(|p| p[1] > p[0]).count();
    Ok(positive as f64 / per_tile_probs.len() as f64)
}

/// Settings for [`train_tile_supervised`].
#[derive(Debug, Clone, PartialEq)]
pub struct TileTrainConfig {
    pub nu: usize,
    pub hyper: AdamHyper,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub objective: Objective,
}

/// Patient-level AUC of majority-vote scores.
pub fn tile_patient_auc(params: &TileClassifierParams, bags: &[LabeledBag]) -> Result<f64> {
    let scores = bags
        .iter()
        .map(|lb| Ok((lb.bag.patient_id.as_str(), params.bag_score(&lb.bag)?, lb.label)))
        .collect::<Result<Vec<_>>>()?;
    roc_auc(&ScoredSet::from_slides(scores)?)
}

/// Trains on tiles pooled across `train` bags and keeps the parameters with
/// the best validation majority-vote AUC. Class weights come from the tile
/// counts of each class.
pub fn train_tile_supervised(
    train: &[LabeledBag],
    val: &[LabeledBag],
    cfg: &TileTrainConfig,
) -> Result<(TileClassifierParams, TrainingLog)> {
    let first = train
        .first()
        .ok_or_else(|| Error::invalid("tile training needs at least one bag"))?;
    let dim = first.bag.dim();
    if let Some(bad) = train.iter().chain(val).find(|lb| lb.bag.dim() != dim) {
        return Err(Error::shape("tile features", dim, bad.bag.dim()));
    }
    if label_counts(val).contains(&0) {
        return Err(Error::SingleClass);
    }

    let units: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(b, lb)| (0..lb.bag.real_tile_count()).map(move |i| (b, i)))
        .collect();
    let mut counts = [0usize; 2];
    for lb in train {
        counts[lb.label as usize] += lb.bag.real_tile_count();
    }
    let weights = balance_weights(counts)?;
    let tiles: Vec<Vec<f64>> = units.iter().map(|&(b, i)| train[b].bag.tile(i)).collect();

    let spec = LoopSpec {
        n_units: units.len(),
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        eval_every: cfg.eval_every,
        seed: cfg.seed,
        hyper: cfg.hyper,
    };
    let init = TileClassifierParams::init(dim, cfg.nu, derive_seed(cfg.seed, 0x711E));
    optimize(
        init,
        &spec,
        |p, batch| {
            let mut loss = 0.0;
            for &u in batch {
                let label = train[units[u].0].label as usize;
                let z = &tiles[u];
                let trace = tile_trace(z, p)?;
                loss += cfg.objective.loss(trace.probs, label, weights)?;
                tile_backward(&trace, z, p, label, weights, cfg.objective)?;
            }
            Ok(loss)
        },
        |p| tile_patient_auc(p, val),
    )
}
