use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Which activation stream feeds the next sublayer during supernet construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorAccum {
    /// `(1 − S_e)`-weighted mean of all sparse structures' outputs.
    Expectation,
    /// The dense model's own stream.
    None,
    /// One structure's output, drawn uniformly per sublayer.
    Random,
    /// Unweighted mean of all structures' outputs.
    Uniform,
}

impl FromStr for ErrorAccum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expectation" => Ok(Self::Expectation),
            "none" => Ok(Self::None),
            "random" => Ok(Self::Random),
            "uniform" => Ok(Self::Uniform),
            _ => Err(Error::Config(format!("unknown error accumulation mode {s:?}"))),
        }
    }
}

/// Weights `w_e = (1 − S_e) / Σ (1 − S_e)`. Falls back to uniform weights and
/// flags the result when every structure is fully pruned.
pub fn mixing_weights(sparsities: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = sparsities.iter().map(|s| 1.0 - s).sum();
    if total <= 0.0 {
        let n = sparsities.len() as f64;
        return (vec![1.0 / n; sparsities.len()], true);
    }
    (sparsities.iter().map(|s| (1.0 - s) / total).collect(), false)
}

#[derive(Clone, Debug)]
pub struct Mix<T> {
    pub output: Matrix<T>,
    pub degenerate: bool,
}

/// Expectation output `Σ_e w_e · output_e`.
pub fn expected_mix<T: Scalar>(outputs: &[Matrix<T>], sparsities: &[f64]) -> Result<Mix<T>> {
    if outputs.is_empty() || outputs.len() != sparsities.len() {
        return Err(Error::Input(format!(
            "{} outputs with {} sparsities",
            outputs.len(),
            sparsities.len()
        )));
    }
    if let Some(s) = sparsities.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Input(format!("sparsity {s} outside [0, 1]")));
    }
    let (weights, degenerate) = mixing_weights(sparsities);
    let (r, c) = outputs[0].shape();
    let mut output = Matrix::zeros(r, c);
    for (o, &w) in outputs.iter().zip(&weights) {
        output.axpy(T::from_f64_lossy(w), o)?;
    }
    Ok(Mix { output, degenerate })
}
