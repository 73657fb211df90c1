//! Pre-norm decoder forward pass.
//!
//! Each layer computes `h = x + MHA(norm1(x))` followed by
//! `x' = h + FFN(norm2(h))`, with RMS normalisation and rotary positions
//! on queries and keys. Logits are `norm(x_L) · lm_head`.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, PositionalScheme, SublayerId, ROPE_THETA};
use crate::model::weights::{AttentionWeights, FfnWeights, SublayerWeights, TransformerWeights};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// A config paired with weights of matching shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub weights: TransformerWeights<T>,
}

/// Which intermediate activations `forward` should return.
#[derive(Clone, Debug, Default)]
pub struct Capture {
    /// Pre-residual sublayer outputs to keep.
    pub sublayers: BTreeSet<SublayerId>,
    /// Residual stream after each of these layers.
    pub hidden_layers: BTreeSet<usize>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub logits: Matrix<T>,
    pub sublayer_outputs: BTreeMap<SublayerId, Matrix<T>>,
    pub hidden: BTreeMap<usize, Matrix<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, weights: TransformerWeights<T>) -> Result<Self> {
        config.validate()?;
        weights.validate(&config)?;
        Ok(Self { config, weights })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            weights: self.weights.cast(),
        }
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_seq_len {}",
                tokens.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocab_size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Token embeddings, `T × d_model`.
    pub fn embed(&self, tokens: &[u32]) -> Result<Matrix<T>> {
        self.check_tokens(tokens)?;
        Ok(self.weights.embed.select_rows(
            &tokens.iter().map(|&t| t as usize).collect::<Vec<_>>(),
        ))
    }

    /// Logits from the final residual stream.
    pub fn head(&self, stream: &Matrix<T>) -> Result<Matrix<T>> {
        let normed = rms_norm(stream, &self.weights.final_norm, self.config.norm_epsilon);
        let logits = normed.matmul(&self.weights.lm_head)?;
        if !logits.is_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(logits)
    }

    pub fn forward(&self, tokens: &[u32], capture: Option<&Capture>) -> Result<ForwardOutput<T>> {
        let mut x = self.embed(tokens)?;
        let eps = self.config.norm_epsilon;
        let mut sublayer_outputs = BTreeMap::new();
        let mut hidden = BTreeMap::new();
        for (i, layer) in self.weights.layers.iter().enumerate() {
            let xn = rms_norm(&x, &layer.norm1, eps);
            let a = attention_output(&self.config, &layer.attn, &xn)?;
            check_finite(&a, SublayerId::mha(i))?;
            x.add_assign(&a)?;
            if capture.is_some_and(|c| c.sublayers.contains(&SublayerId::mha(i))) {
                sublayer_outputs.insert(SublayerId::mha(i), a);
            }

            let hn = rms_norm(&x, &layer.norm2, eps);
            let f = ffn_output(&layer.ffn, &hn)?;
            check_finite(&f, SublayerId::ffn(i))?;
            x.add_assign(&f)?;
            if capture.is_some_and(|c| c.sublayers.contains(&SublayerId::ffn(i))) {
                sublayer_outputs.insert(SublayerId::ffn(i), f);
            }
            if capture.is_some_and(|c| c.hidden_layers.contains(&i)) {
                hidden.insert(i, x.clone());
            }
        }
        let logits = self.head(&x)?;
        Ok(ForwardOutput {
            logits,
            sublayer_outputs,
            hidden,
        })
    }

    /// Logits only.
    pub fn logits(&self, tokens: &[u32]) -> Result<Matrix<T>> {
        Ok(self.forward(tokens, None)?.logits)
    }
}

fn check_finite<T: Scalar>(m: &Matrix<T>, id: SublayerId) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite output in layer {}", id)))
    }
}

/// Row-wise RMS normalisation with a learned scale.
pub fn rms_norm<T: Scalar>(x: &Matrix<T>, scale: &[T], eps: f64) -> Matrix<T> {
    let d = x.cols();
    let mut out = x.clone();
    let eps = T::from_f64_lossy(eps);
    let n = T::from_usize(d).unwrap();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let ms = row.iter().map(|&v| v * v).sum::<T>() / n;
        let inv = (ms + eps).sqrt().recip();
        for (v, &s) in row.iter_mut().zip(scale) {
            *v = *v * inv * s;
        }
    }
    out
}

#[inline]
pub fn silu<T: Scalar>(v: T) -> T {
    v / (T::one() + (-v).exp())
}

/// Rotate one query/key row for position `pos`, pairing `i` with `i + head_dim/2`.
pub(crate) fn rotate_row<T: Scalar>(row: &mut [T], pos: usize) {
    let head_dim = row.len();
    let half = head_dim / 2;
    for i in 0..half {
        let freq = ROPE_THETA.powf(-2.0 * i as f64 / head_dim as f64);
        let (s, c) = (pos as f64 * freq).sin_cos();
        let (s, c) = (T::from_f64_lossy(s), T::from_f64_lossy(c));
        let a = row[i];
        let b = row[i + half];
        row[i] = a * c - b * s;
        row[i + half] = a * s + b * c;
    }
}

fn apply_rotary<T: Scalar>(m: &mut Matrix<T>) {
    for t in 0..m.rows() {
        rotate_row(m.row_mut(t), t);
    }
}

/// Causal attention of a single head.
fn head_attention<T: Scalar>(
    config: &ModelConfig,
    mut q: Matrix<T>,
    mut k: Matrix<T>,
    v: &Matrix<T>,
) -> Matrix<T> {
    let hd = config.head_dim;
    if config.positional_scheme == PositionalScheme::Rotary {
        apply_rotary(&mut q);
        apply_rotary(&mut k);
    }
    let n = q.rows();
    let scale = T::from_f64_lossy(1.0 / (hd as f64).sqrt());
    let mut out = Matrix::zeros(n, hd);
    let mut scores = vec![T::zero(); n];
    for t in 0..n {
        let qt = q.row(t);
        let mut max = T::neg_infinity();
        for (u, s) in scores.iter_mut().enumerate().take(t + 1) {
            let dot = qt.iter().zip(k.row(u)).map(|(&a, &b)| a * b).sum::<T>() * scale;
            *s = dot;
            if dot > max {
                max = dot;
            }
        }
        let mut denom = T::zero();
        for s in scores.iter_mut().take(t + 1) {
            *s = (*s - max).exp();
            denom = denom + *s;
        }
        let o = out.row_mut(t);
        for (u, &s) in scores.iter().enumerate().take(t + 1) {
            let p = s / denom;
            for (dst, &vv) in o.iter_mut().zip(v.row(u)) {
                *dst = *dst + p * vv;
            }
        }
    }
    out
}

/// Concatenated per-head attention outputs, `T × (heads·head_dim)`.
///
/// This is the input activation of `wo`; its columns are the channels the
/// local pruner scores and removes.
pub fn attention_heads<T: Scalar>(
    config: &ModelConfig,
    attn: &AttentionWeights<T>,
    xn: &Matrix<T>,
) -> Result<Matrix<T>> {
    let hd = config.head_dim;
    let width = attn.wq.cols();
    if xn.cols() != config.d_model || attn.wq.rows() != config.d_model || width % hd != 0 {
        return Err(Error::Shape(format!(
            "attention input {:?} with wq {:?}",
            xn.shape(),
            attn.wq.shape()
        )));
    }
    let q = xn.matmul(&attn.wq)?;
    let k = xn.matmul(&attn.wk)?;
    let v = xn.matmul(&attn.wv)?;
    let mut out = Matrix::zeros(xn.rows(), width);
    for h in 0..width / hd {
        let head = head_attention(
            config,
            q.col_block(h * hd, hd),
            k.col_block(h * hd, hd),
            &v.col_block(h * hd, hd),
        );
        for t in 0..xn.rows() {
            out.row_mut(t)[h * hd..(h + 1) * hd].copy_from_slice(head.row(t));
        }
    }
    Ok(out)
}

/// MHA output before the residual add.
pub fn attention_output<T: Scalar>(
    config: &ModelConfig,
    attn: &AttentionWeights<T>,
    xn: &Matrix<T>,
) -> Result<Matrix<T>> {
    attention_heads(config, attn, xn)?.matmul(&attn.wo)
}

/// SwiGLU hidden activation `silu(x·Wgate) ⊙ (x·Wup)`, the input of `wdown`.
pub fn ffn_hidden<T: Scalar>(ffn: &FfnWeights<T>, xn: &Matrix<T>) -> Result<Matrix<T>> {
    let mut g = xn.matmul(&ffn.wgate)?;
    let u = xn.matmul(&ffn.wup)?;
    for (a, &b) in g.as_mut_slice().iter_mut().zip(u.as_slice()) {
        *a = silu(*a) * b;
    }
    Ok(g)
}

/// FFN output before the residual add.
pub fn ffn_output<T: Scalar>(ffn: &FfnWeights<T>, xn: &Matrix<T>) -> Result<Matrix<T>> {
    ffn_hidden(ffn, xn)?.matmul(&ffn.wdown)
}

/// Output of one sublayer on an already-normalised input, pre-residual.
pub fn forward_sublayer<T: Scalar>(
    config: &ModelConfig,
    weights: &SublayerWeights<T>,
    xn: &Matrix<T>,
) -> Result<Matrix<T>> {
    if !xn.is_finite() {
        return Err(Error::Input("non-finite sublayer input".into()));
    }
    match weights {
        SublayerWeights::Attention(a) => attention_output(config, a, xn),
        SublayerWeights::Ffn(f) => {
            if xn.cols() != f.wgate.rows() {
                return Err(Error::Shape(format!(
                    "ffn input {:?} with wgate {:?}",
                    xn.shape(),
                    f.wgate.shape()
                )));
            }
            ffn_output(f, xn)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{random_model, tiny_config};

    #[test]
    fn rms_norm_unit_rows() {
        let x = Matrix::from_vec(1, 4, vec![2.0, -2.0, 2.0, -2.0]).unwrap();
        let y = rms_norm(&x, &[1.0, 1.0, 0.5, 2.0], 0.0);
        assert_eq!(y.as_slice(), &[1.0, -1.0, 0.5, -2.0]);
    }

    #[test]
    fn silu_values() {
        assert_eq!(silu(0.0f64), 0.0);
        assert!((silu(1.0f64) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn rotation_preserves_norm_and_is_identity_at_zero() {
        let base = vec![0.3, -1.2, 0.7, 2.0f64];
        let mut r = base.clone();
        rotate_row(&mut r, 0);
        assert_eq!(r, base);
        rotate_row(&mut r, 5);
        let n0: f64 = base.iter().map(|v| v * v).sum();
        let n1: f64 = r.iter().map(|v| v * v).sum();
        assert!((n0 - n1).abs() < 1e-12);
    }

    #[test]
    fn token_validation() {
        let m = random_model::<f64>(&tiny_config(), 1);
        assert!(matches!(m.logits(&[]), Err(Error::Input(_))));
        assert!(matches!(m.logits(&[24]), Err(Error::Input(_))));
        assert!(matches!(m.logits(&[0; 17]), Err(Error::Input(_))));
        assert_eq!(m.logits(&[1, 2, 3]).unwrap().shape(), (3, 24));
    }

    #[test]
    fn prefix_logits_are_causal() {
        let m = random_model::<f64>(&tiny_config(), 2);
        let a = m.logits(&[4, 5, 6, 7]).unwrap();
        let b = m.logits(&[4, 5, 6, 1]).unwrap();
        assert_eq!(a.row(2), b.row(2));
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn capture_returns_requested_activations() {
        let m = random_model::<f64>(&tiny_config(), 3);
        let cap = Capture {
            sublayers: [SublayerId::ffn(1)].into_iter().collect(),
            hidden_layers: [0].into_iter().collect(),
        };
        let out = m.forward(&[1, 2], Some(&cap)).unwrap();
        assert_eq!(out.sublayer_outputs.len(), 1);
        assert_eq!(out.hidden[&0].shape(), (2, 16));
    }
}
