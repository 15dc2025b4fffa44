use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One periodic validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean minibatch loss since the previous record.
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EvalRecord>,
    pub best_step: Option<u64>,
    pub best_val_auc: Option<f64>,
}

impl TrainingLog {
    /// Appends a record and reports whether it is a new best. Ties keep the
    /// earlier step.
    pub fn push(&mut self, record: EvalRecord) -> bool {
        self.records.push(record);
        let improved = self.best_val_auc.is_none_or(|best| record.val_auc > best);
        if improved {
            self.best_step = Some(record.step);
            self.best_val_auc = Some(record.val_auc);
        }
        improved
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "epoch", "train_loss", "val_auc"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.epoch.to_string(),
                format!("{:.10}", r.train_loss),
                format!("{:.10}", r.val_auc),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
