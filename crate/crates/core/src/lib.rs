//! Lexicon-enhanced character-level named entity recognition.
//!
//! Sentences are matched against a lexicon, turned into a lattice graph of character and
//! word nodes, encoded by stacked fusion layers and tagged by a linear-chain CRF. An auxiliary
//! classifier labels every matched word as Match, Cover or Disturb.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); aliases for both are below.

pub mod checkpoint;
pub mod config;
pub mod crf;
pub mod data;
pub mod encoding;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod lexicon;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{ModelConfig, TrainConfig};
pub use data::{Corpus, Entity, EvalReport, Sentence, TagScheme, TagSet};
pub use error::{Error, Result};
pub use graph::{GraphVariant, LatticeGraph, Mask};
pub use lexicon::{LecLabel, LexiconTrie, MatchedWord};
pub use model::{Instance, Model, ModelParams};
pub use scalar::Scalar;
pub use tensor::Matrix;
pub use train::Trainer;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
pub type Trainer32 = Trainer<f32>;
pub type Trainer64 = Trainer<f64>;
