//! Bi-encoder candidate retrieval for entity linking.
//!
//! A small trainable bi-encoder (token + position embeddings, mean pooling,
//! linear projection) scored with dot or cosine similarity, trained with
//! either cross-entropy or the proxy-based loss, optionally regularised with
//! FGSM adversarial proxies. Negatives are random or mixed with exact hard
//! negatives. Evaluation covers recall@k and NIL detection by thresholding
//! the top-1 score.

pub mod checkpoint;
pub mod datakit;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod numerics;
pub mod objectives;
pub mod sampling;
pub mod trainer;

pub use datakit::{
    DatasetSplit, EntityRecord, KnowledgeBase, Label, MentionRecord, RenderStyle, SynthConfig, Vocabulary,
};
pub use encoder::{BiEncoder, EncoderParams, Parameters, SimilarityKind, TokenSequence, TowerDims};
pub use error::{Error, Result};
pub use evalkit::{EvalReport, NilThreshold, RankedPrediction};
pub use numerics::{DenseVector, Matrix};
pub use objectives::{FgsmHyper, LossKind, PbHyper, ScoredProxySet};
pub use sampling::{EntityIndex, SamplingKind, SamplingPolicy};
pub use trainer::{GradNormTrace, TrainConfig, TrainOutcome, TrainingSet};
