//! Sentence-level malware-behaviour classification for threat reports:
//! corpus ingestion, artifact normalization, class-imbalance resampling,
//! a hashed linear baseline and a small transformer with masked-LM
//! pretraining, plus evaluation and sweep tooling.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod model;
pub mod normalize;
pub mod pipeline;
pub mod sampling;

pub use corpus::{Corpus, CorpusStats, Document, Label, Sentence, Split, Token};
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, Metrics, SweepRow};
pub use model::{Classifier, TinyTransformer, TrainConfig, Vocab};
pub use normalize::{Normalizer, Placeholder};
pub use pipeline::PipelineConfig;
pub use sampling::{ClassWeights, Ratio, SamplingConfig, SamplingMode};
