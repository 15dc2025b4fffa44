//! The minibatch Adam loop shared by every trainable model.

use rand::seq::SliceRandom;

use super::{EvalRecord, TrainingLog};
use crate::error::{Error, Result};
use crate::math::{AdamHyper, ParamSet};
use crate::seed::{derive_seed, rng_for};

const SHUFFLE_STREAM: u64 = 0xB47C;

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSpec {
    /// Number of training units (bags or tiles) per epoch.
    pub n_units: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub hyper: AdamHyper,
}

impl LoopSpec {
    pub fn steps_per_epoch(&self) -> usize {
        self.n_units.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    fn validate(&self) -> Result<()> {
        if self.n_units == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::invalid(format!(
                "training loop needs units, batch size and eval cadence > 0 (got {}, {}, {})",
                self.n_units, self.batch_size, self.eval_every
            )));
        }
        self.hyper.validate()
    }
}

/// Runs `spec.epochs` epochs of shuffled minibatches.
///
/// `grad(model, batch)` must add the summed per-unit gradients of the units
/// in `batch` to the parameter buffers and return the summed loss; the loop
/// turns both into batch means. `validate` returns the validation AUC. The
/// model with the best validation AUC (earliest on ties) is returned; with
/// zero epochs that is the initial model and the log is empty.
pub fn optimize<M, G, V>(
    mut model: M,
    spec: &LoopSpec,
    mut grad: G,
    mut validate: V,
) -> Result<(M, TrainingLog)>
where
    M: ParamSet + Clone,
    G: FnMut(&mut M, &[usize]) -> Result<f64>,
    V: FnMut(&M) -> Result<f64>,
{
    spec.validate()?;
    let total = spec.total_steps() as u64;
    let mut log = TrainingLog::default();
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..spec.n_units).collect();
    let shuffle_seed = derive_seed(spec.seed, SHUFFLE_STREAM);
    let mut step = 0u64;
    let mut loss_sum = 0.0;
    let mut loss_batches = 0usize;

    for epoch in 0..spec.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(shuffle_seed, epoch as u64));
        for batch in order.chunks(spec.batch_size) {
            model.zero_grad();
            let loss = grad(&mut model, batch)?;
            let inv = 1.0 / batch.len() as f64;
            model.scale_grads(inv);
            model.adam_step_all(&spec.hyper)?;
            step += 1;
            loss_sum += loss * inv;
            loss_batches += 1;

            if step.is_multiple_of(spec.eval_every as u64) || step == total {
                let val_auc = validate(&model)?;
                let improved = log.push(EvalRecord {
                    step,
                    epoch,
                    train_loss: loss_sum / loss_batches as f64,
                    val_auc,
                });
                log::debug!("step {step} epoch {epoch} loss {:.5} val_auc {val_auc:.4}", loss_sum / loss_batches as f64);
                if improved {
                    best = model.clone();
                }
                loss_sum = 0.0;
                loss_batches = 0;
            }
        }
    }
    if log.is_empty() {
        return Ok((model, log));
    }
    Ok((best, log))
}
