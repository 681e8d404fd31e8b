//! Dialogue context features and their recurrent encodings, shared by the
//! three models.

mod encoder;
mod features;
mod vocab;

pub use encoder::{
    token_rows, ContextEncoder, Dropout, EncodeBatch, Encoded, EncoderConfig, FeatureSet,
};
pub use features::{
    extract_features, extract_features_at, turn_ids, DialogueContext, EntityMention, MentionSource,
    PastAction,
};
pub use vocab::{fnv1a, Vocab};
