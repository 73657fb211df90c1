use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::corpus::TokenCorpus;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// JSON evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub perplexity: f64,
    pub kl: Option<f64>,
    pub tokens: usize,
    pub seed: u64,
}

/// Numerically stable log-softmax of one row, in f64.
pub fn log_softmax_row<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row
        .iter()
        .map(|v| v.to_f64_lossless())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = row
        .iter()
        .map(|v| (v.to_f64_lossless() - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    row.iter().map(|v| v.to_f64_lossless() - lse).collect()
}

/// Sum of next-token negative log-likelihoods and the number of predictions.
pub fn mean_nll<T: Scalar>(logits: &Matrix<T>, tokens: &[u32]) -> (f64, usize) {
    let mut total = 0.0;
    let n = tokens.len().saturating_sub(1);
    for t in 0..n {
        let lp = log_softmax_row(logits.row(t));
        total -= lp[tokens[t + 1] as usize];
    }
    (total, n)
}

/// `exp(mean NLL)` over all predicted positions of the given sequences.
pub fn perplexity_of_sequences<T: Scalar>(model: &Model<T>, seqs: &[Vec<u32>]) -> Result<f64> {
    let parts = seqs
        .par_iter()
        .map(|s| -> Result<(f64, usize)> { Ok(mean_nll(&model.logits(s)?, s)) })
        .collect::<Result<Vec<_>>>()?;
    let (nll, n) = parts
        .into_iter()
        .fold((0.0, 0usize), |(a, b), (c, d)| (a + c, b + d));
    if n == 0 {
        return Err(Error::Input("no predicted positions".into()));
    }
    Ok((nll / n as f64).exp())
}

/// Perplexity over consecutive non-overlapping windows of `seq_len` tokens.
pub fn perplexity<T: Scalar>(model: &Model<T>, corpus: &TokenCorpus, seq_len: usize) -> Result<f64> {
    if seq_len < 2 || corpus.len() < seq_len {
        return Err(Error::Input(format!(
            "perplexity needs at least one window of {seq_len} >= 2 tokens"
        )));
    }
    let seqs: Vec<Vec<u32>> = corpus
        .ids
        .chunks_exact(seq_len)
        .map(<[u32]>::to_vec)
        .collect();
    perplexity_of_sequences(model, &seqs)
}

/// Mean over positions of `KL(softmax(dense) || softmax(sparse))`.
pub fn kl_to_dense<T: Scalar>(dense: &Matrix<T>, sparse: &Matrix<T>) -> Result<f64> {
    if dense.shape() != sparse.shape() {
        return Err(Error::Input(format!(
            "logit shapes differ: {:?} vs {:?}",
            dense.shape(),
            sparse.shape()
        )));
    }
    if dense.rows() == 0 {
        return Err(Error::Input("no positions".into()));
    }
    let mut total = 0.0;
    for r in 0..dense.rows() {
        let lp = log_softmax_row(dense.row(r));
        let lq = log_softmax_row(sparse.row(r));
        let kl: f64 = lp
            .iter()
            .zip(&lq)
            .map(|(&a, &b)| if a == f64::NEG_INFINITY { 0.0 } else { a.exp() * (a - b) })
            .sum();
        total += kl.max(0.0);
    }
    Ok(total / dense.rows() as f64)
}
