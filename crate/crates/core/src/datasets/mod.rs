//! FSCIL splits, the IOSF-EMB / IOSF-TOK file formats, and the synthetic
//! embedding generator.

pub mod format;
pub mod split;
pub mod synthetic;
pub mod tok;

pub use format::{
    decode_embedding_set, decode_features, encode_features, parse_manifest, read_embeddings,
    write_embeddings, ClassInfo, EmbeddingManifest, EmbeddingRecord, EmbeddingSet,
};
pub use split::{make_fscil_splits, FscilSplit, SessionSplit, SplitParams};
pub use synthetic::{gen_synthetic, SyntheticData, SyntheticSpec};
pub use tok::{TokenFile, TokenRecord};
