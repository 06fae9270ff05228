//! Few-shot text classification with two finetuning objectives.
//!
//! A small hashed bag-of-words sentence encoder is finetuned either with a
//! contrastive pair objective followed by a logistic head on frozen
//! embeddings, or end to end with a softmax output layer. Predictions of
//! both model kinds can be explained with a word-deletion LIME surrogate and
//! the resulting features compared side by side.

pub mod checkpoint;
pub mod classify;
pub mod compare;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod experiment;
pub mod explain;
pub mod linalg;
pub mod rng;
pub mod synth;
pub mod text;
pub mod training;

pub use classify::{HeadKind, SoftmaxHead, TextClassifier, TrainedModel};
pub use corpus::{Dataset, Example};
pub use encoder::{EmbeddingVec, Encoder, EncoderConfig};
pub use explain::{Explanation, LimeConfig};
pub use text::{TextConfig, TokenSeq};
pub use training::{PairSet, TrainConfig};
