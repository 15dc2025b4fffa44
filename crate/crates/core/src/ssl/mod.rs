//! Contrastive pre-training of a small tile encoder.

mod augment;
mod encoder;
mod ntxent;

pub use augment::{augment_pair, augment_view, AugmentConfig};
pub use encoder::{
    cosine, extract_features, image_to_input, load_tissue_tiles, pretrain, read_slide_info,
    write_loss_curve, ContrastiveModel, ContrastiveTrace, EncoderParams, PretrainConfig,
    ProjectionHead, SlideInfo,
};
pub use ntxent::{nt_xent_loss, DEFAULT_TEMPERATURE};
