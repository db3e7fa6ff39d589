//! Token embedding `h(·)`, the frozen reference text encoder, and the image
//! feature source.

pub mod features;
pub mod text;
pub mod tokenizer;

pub use features::{load_image_features, FeatureAccess, ImageFeatureSource};
pub use text::{BoundEncoder, TextEncoder};
pub use tokenizer::{fnv1a64, TokenEmbedding, Tokenizer};
