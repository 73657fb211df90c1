//! Calibration data, layerwise activation statistics and evaluation metrics.

mod corpus;
mod hessian;
mod metrics;

pub use corpus::{load_corpus, sample_batches, write_corpus_bin, write_corpus_txt, TokenCorpus};
pub use hessian::ActivationStats;
pub use metrics::{
    kl_to_dense, log_softmax_row, mean_nll, perplexity, perplexity_of_sequences, EvalReport,
};
