//! Joint user, item and word embeddings where the embedding of a review
//! translates the reviewing user onto the reviewed item.
//!
//! A review embedding is the average of its word embeddings plus a shared
//! review bias. Training fits a sigmoid-linear regressor from review
//! embeddings to ratings while pulling `user + review` towards `item`. At
//! prediction time no review exists, so the review embedding is approximated
//! by `item - user` and fed to the same regressor.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, corpus ingestion
//! and the command line live in the `transrev` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod corpus;
pub mod error;
pub mod evaluation;
mod math;
pub mod model;
pub mod synth;

pub mod training;

pub use baselines::{fit_offset, fit_svd, fit_svd_with, OffsetModel, SvdModel, SvdOptions};
pub use corpus::{
    build_vocabulary, prepare_corpus, split_dataset, tokenize, DatasetSplit, Format,
    InteractionTriple, PreparedCorpus, RawReview, SplitStats, Vocabulary,
};
pub use error::{Error, Result};
pub use evaluation::{
    evaluate_mse, evaluate_mse_with_residuals, retrieve_reviews, sentiment_projection, word_scores,
    EvalReport, Neighbor, Predictor, RetrievalResult, ReviewIndex, WordScore,
};
pub use math::sigmoid;
pub use model::{
    batch_gradients, batch_loss, init_parameters, ForwardTrace, Gradients, Hyperparameters,
    LossWeights, ModelParameters,
};
pub use synth::{generate_planted, PlantedConfig, PlantedCorpus};
pub use training::{
    collect_grid, grid_search, select_best, train, GridOutcome, GridRow, GridSpec, TrainingRun,
    ValidationPoint,
};
