//! Training loops, cross-validation and grid search.

mod config;
mod crossval;
mod fold;
mod log;
mod optimize;

pub use config::{LabelMode, ModelChoice, RunConfig};
pub use crossval::{grid_search, run_crossval, write_grid_csv, CrossvalResult, CvData, FoldResult, GridRow, GridSpec};
pub use fold::{prepare_bag, prepare_bags, train_fold, TrainedModel};
pub use log::{EvalRecord, TrainingLog};
pub use optimize::{optimize, LoopSpec};
