//! Retrieval of previously fact-checked claims for social-media posts.
//!
//! A shared-weight bi-encoder embeds posts and fact-checks into one space,
//! trained with an in-batch contrastive objective. Fact-check vectors are
//! kept in an exact cosine index, and ranked lists from several runs can be
//! fused before scoring with Success@K.

mod binio;
pub mod corpus;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod index;
pub mod pipeline;
pub mod synthetic;
pub mod training;

pub use corpus::{load_corpus, Corpus, FactCheck, MappingPair, Post, TextView, ViewMode};
pub use encoder::{
    load_checkpoint, save_checkpoint, EmbeddingVector, Encoder, EncoderParams, EncoderShape,
    Pooling, Vocabulary, CHECKPOINT_VERSION,
};
pub use ensemble::{fuse, load_run, save_run, FusionConfig, FusionMethod, ModelRun};
pub use error::{Error, Result};
pub use eval::{
    evaluate, read_predictions, success_at_k, write_predictions, EvalReport, GoldMapping,
};
pub use index::{build_index, load_index, save_index, RankedList, VectorIndex, INDEX_VERSION};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
pub use training::{train, LossKind, TrainConfig, TrainLog, TrainOutput};
