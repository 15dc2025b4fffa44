//! Weakly supervised bag classification with attention-based multiple
//! instance learning.
//!
//! A bag is the set of tile feature vectors extracted from one whole-slide
//! image. Two pooling models are provided: DeepMIL, which classifies the
//! attention-weighted mean of the tiles, and VarMIL, which additionally
//! feeds the attention-weighted (Bessel-corrected) variance to the head.
//! A tile-supervised majority-vote baseline, a small contrastive
//! pre-training stage, tiling/background filtering, dataset handling and
//! the cross-validation protocol complete the pipeline.

pub mod error;
pub mod math;
pub mod mil;
pub mod seed;

pub use error::{Error, Result};
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod tile;
pub mod train;
pub mod preprocess;
pub mod ssl;
