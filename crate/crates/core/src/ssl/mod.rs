//! Masked multi-codebook token prediction.
//!
//! Frames are masked by span sampling and replaced with a learnable mask
//! embedding; a small convolutional encoder produces contextual
//! representations `H`; one linear head per codebook predicts the quantiser
//! tokens. The single-domain loss weights masked and unmasked frames by
//! `α` / `1 − α`; the dual-domain loss adds a second token family under one of
//! three strategies.

mod interp;
mod loss;
mod mask;
mod model;
mod pretrain;

pub use interp::{interpolate_targets, InterpMode};
pub use loss::{dual_domain_loss, head_logits, single_domain_loss, DualLoss, SingleLoss, Strategy};
pub use mask::{apply_mask, mask_embedding_grad, sample_mask, MaskConfig, MaskSpec};
pub use model::{
    student_backward, student_forward, ConvBlock, ForwardCache, StudentModel, StudentShape,
};
pub use pretrain::{
    eval_masked_accuracy, prepare_utterance, pretrain, AccuracyReport, PretrainOutcome,
    PretrainStepMetrics, Sample, SslTrainConfig, Utterance,
};
