//! Attention-based MIL pooling: DeepMIL (attention-weighted mean) and
//! VarMIL (attention-weighted mean concatenated with the Bessel-corrected
//! attention-weighted variance), with hand-derived backward passes.

mod bag;
mod model;

pub use bag::{pad_bag, TileBag};
pub use model::{
    attention_weights, backward, forward, weighted_mean, weighted_variance, AttentionParams,
    ForwardTrace, HeadParams, MilModel, ModelKind, DEFAULT_ATTENTION_WIDTH,
};
