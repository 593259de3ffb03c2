//! The two classifiers: hashed n-gram logistic regression and a small
//! transformer encoder with masked-LM pretraining.

pub mod artifact;
pub mod config;
pub mod features;
pub mod linear;
pub mod train;
pub mod transformer;
pub mod vocab;

pub use artifact::{Classifier, DEFAULT_THRESHOLD};
pub use config::{OptimizerKind, TrainConfig};
pub use features::{featurize_hashed, HashingFeaturizer, SparseFeatures, DEFAULT_HASH_DIM};
pub use linear::{train_linear, LinearModel, LinearTrainReport};
pub use train::{
    finetune_classifier, finetune_lm, gradient_check, mask_batch, masked_token_accuracy, mlm_eval_loss, pretrain_lm,
    Optimizer, StageReport, TensorCheck,
};
pub use transformer::{LayerSchedule, MlmExample, ParamGroup, Params, Stage, TinyTransformer, TransformerConfig};
pub use vocab::{build_vocab, Vocab};
