//! The user encoder: a transformer over per-session command frequencies plus
//! an MLP over whole-history frequencies, fused into one representation.

mod config;
mod encoder;
mod params;

pub use config::ModelConfig;
pub use encoder::{
    positional_encoding, session_feature_matrix, user_feature_row,
    user_feature_row_for_sessions, MASKED_SCORE,
};
pub use params::{
    AttentionBlock, BoundAttentionBlock, BoundEncoder, BoundLayerNorm, BoundLinear,
    BoundMlp, BoundSessionBranch, EncoderParams, LayerNormAffine, Linear, Mlp,
    SessionBranch,
};
