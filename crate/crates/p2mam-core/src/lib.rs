//! Core of a session-based next-item recommender built on two stacked
//! attention stages over tied item embeddings, with everything needed to
//! train and analyse it: a small dense-matrix type, reverse-mode
//! differentiation, masked softmax and fused cross-entropy, Adam, corpus
//! preparation, ranking metrics and the analysis routines.
//!
//! The crate is `no_std` (alloc only); file formats, timing and the CLI
//! live in the companion `p2mam` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod autodiff;
pub mod corpus;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod softmax;

pub use analysis::{attention_trace, cosine_analysis, AttentionTable, CosineReport};
pub use autodiff::{NodeId, Tape};
pub use corpus::{
    augment, augment_all, filter_and_index, parse_sessions_text, split_holdout, to_fixed,
    CorpusError, Example, FilteredCorpus, FixedExample, ItemId, Session, Vocab, PAD,
};
pub use matrix::Matrix;
pub use metrics::{metrics_at_k, paired_t_test, rank_of_target, MetricsReport, PairedTTest};
pub use model::{
    forward, init_params, loss, loss_and_grads, ForwardTrace, Head, HyperParams, ModelError,
    ModelParams, ScaleMode, Variant,
};
pub use optim::{grad_check, AdamState, OptimError};
pub use rng::SeededRng;
pub use softmax::{cross_entropy, masked_row_softmax, LossError, SoftmaxError};
