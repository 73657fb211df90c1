use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, SublayerId, SublayerKind};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Attention projections. Head `h` of the packed layout owns columns
/// `[h·head_dim, (h+1)·head_dim)` of `wq/wk/wv` and the same rows of `wo`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
}

/// SwiGLU feed-forward projections.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnWeights<T> {
    pub wgate: Matrix<T>,
    pub wup: Matrix<T>,
    pub wdown: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub attn: AttentionWeights<T>,
    pub ffn: FfnWeights<T>,
    pub norm1: Vec<T>,
    pub norm2: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerWeights<T> {
    pub embed: Matrix<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Vec<T>,
    pub lm_head: Matrix<T>,
}

/// Weights of one sublayer, owned.
#[derive(Clone, Debug, PartialEq)]
pub enum SublayerWeights<T> {
    Attention(AttentionWeights<T>),
    Ffn(FfnWeights<T>),
}

impl<T> SublayerWeights<T> {
    pub fn kind(&self) -> SublayerKind {
        match self {
            SublayerWeights::Attention(_) => SublayerKind::Mha,
            SublayerWeights::Ffn(_) => SublayerKind::Ffn,
        }
    }
}

/// A sublayer with pruned units physically removed.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedSublayer<T> {
    pub id: SublayerId,
    /// Sorted head indices (MHA) or neuron indices (FFN) kept.
    pub retained_units: Vec<usize>,
    pub weights: SublayerWeights<T>,
    pub realized_sparsity: f64,
}

impl<T: Scalar> PrunedSublayer<T> {
    /// Checks the packing invariants against the dense config.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let (total, width) = match self.id.kind {
            SublayerKind::Mha => (config.n_heads, config.head_dim),
            SublayerKind::Ffn => (config.d_ffn, 1),
        };
        let r = self.retained_units.len();
        if self.retained_units.windows(2).any(|w| w[0] >= w[1])
            || self.retained_units.iter().any(|&u| u >= total)
        {
            return Err(Error::Input(format!(
                "{}: retained units must be sorted, unique and < {total}",
                self.id
            )));
        }
        let expect_sparsity = 1.0 - r as f64 / total as f64;
        if (expect_sparsity - self.realized_sparsity).abs() > 1e-12 {
            return Err(Error::Input(format!(
                "{}: realized sparsity {} disagrees with {r}/{total} retained units",
                self.id, self.realized_sparsity
            )));
        }
        let d = config.d_model;
        let packed = r * width;
        let shapes_ok = match (&self.weights, self.id.kind) {
            (SublayerWeights::Attention(a), SublayerKind::Mha) => {
                a.wq.shape() == (d, packed)
                    && a.wk.shape() == (d, packed)
                    && a.wv.shape() == (d, packed)
                    && a.wo.shape() == (packed, d)
            }
            (SublayerWeights::Ffn(f), SublayerKind::Ffn) => {
                f.wgate.shape() == (d, packed)
                    && f.wup.shape() == (d, packed)
                    && f.wdown.shape() == (packed, d)
            }
            _ => false,
        };
        if !shapes_ok {
            return Err(Error::Shape(format!(
                "{}: packed weights do not match {r} retained units",
                self.id
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> TransformerWeights<T> {
    /// All-zero weights with the shapes of `config` (norm scales included).
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let layers = (0..config.n_layers)
            .map(|i| {
                let w = config.widths(i);
                let a = w.n_heads * config.head_dim;
                LayerWeights {
                    attn: AttentionWeights {
                        wq: Matrix::zeros(d, a),
                        wk: Matrix::zeros(d, a),
                        wv: Matrix::zeros(d, a),
                        wo: Matrix::zeros(a, d),
                    },
                    ffn: FfnWeights {
                        wgate: Matrix::zeros(d, w.d_ffn),
                        wup: Matrix::zeros(d, w.d_ffn),
                        wdown: Matrix::zeros(w.d_ffn, d),
                    },
                    norm1: vec![T::zero(); d],
                    norm2: vec![T::zero(); d],
                }
            })
            .collect();
        Self {
            embed: Matrix::zeros(config.vocab_size, d),
            layers,
            final_norm: vec![T::zero(); d],
            lm_head: Matrix::zeros(d, config.vocab_size),
        }
    }

    pub fn cast<U: Scalar>(&self) -> TransformerWeights<U> {
        let v = |x: &[T]| x.iter().map(|v| U::from_f64_lossy(v.to_f64_lossless())).collect();
        TransformerWeights {
            embed: self.embed.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn: AttentionWeights {
                        wq: l.attn.wq.cast(),
                        wk: l.attn.wk.cast(),
                        wv: l.attn.wv.cast(),
                        wo: l.attn.wo.cast(),
                    },
                    ffn: FfnWeights {
                        wgate: l.ffn.wgate.cast(),
                        wup: l.ffn.wup.cast(),
                        wdown: l.ffn.wdown.cast(),
                    },
                    norm1: v(&l.norm1),
                    norm2: v(&l.norm2),
                })
                .collect(),
            final_norm: v(&self.final_norm),
            lm_head: self.lm_head.cast(),
        }
    }

    /// Named tensors in canonical order, as stored in checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, TensorView<'_, T>)> {
        let mut out = vec![("embed".to_string(), TensorView::Matrix(&self.embed))];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.push((p("wq"), TensorView::Matrix(&l.attn.wq)));
            out.push((p("wk"), TensorView::Matrix(&l.attn.wk)));
            out.push((p("wv"), TensorView::Matrix(&l.attn.wv)));
            out.push((p("wo"), TensorView::Matrix(&l.attn.wo)));
            out.push((p("wgate"), TensorView::Matrix(&l.ffn.wgate)));
            out.push((p("wup"), TensorView::Matrix(&l.ffn.wup)));
            out.push((p("wdown"), TensorView::Matrix(&l.ffn.wdown)));
            out.push((p("norm1"), TensorView::Vector(&l.norm1)));
            out.push((p("norm2"), TensorView::Vector(&l.norm2)));
        }
        out.push(("final_norm".into(), TensorView::Vector(&self.final_norm)));
        out.push(("lm_head".into(), TensorView::Matrix(&self.lm_head)));
        out
    }

    /// Checks every tensor shape against `config` and that all values are finite.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.n_layers {
            return Err(Error::Shape(format!(
                "{} layers for a {}-layer config",
                self.layers.len(),
                config.n_layers
            )));
        }
        let reference = Self::zeros(config);
        for ((name, have), (_, want)) in self.named_tensors().into_iter().zip(reference.named_tensors()) {
            if have.shape() != want.shape() {
                return Err(Error::format(
                    name,
                    format!("shape {:?}, expected {:?}", have.shape(), want.shape()),
                ));
            }
            if !have.values().iter().all(|v| v.is_finite()) {
                return Err(Error::format(name, "non-finite value"));
            }
        }
        Ok(())
    }

    /// Number of linear parameters in all MHA and FFN projections.
    pub fn backbone_linear_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let a = &l.attn;
                let f = &l.ffn;
                [&a.wq, &a.wk, &a.wv, &a.wo, &f.wgate, &f.wup, &f.wdown]
                    .iter()
                    .map(|m| m.rows() * m.cols())
                    .sum::<usize>()
            })
            .sum()
    }
}

/// Borrowed view of a checkpoint tensor.
#[derive(Clone, Copy, Debug)]
pub enum TensorView<'a, T> {
    Matrix(&'a Matrix<T>),
    Vector(&'a [T]),
}

impl<T: Scalar> TensorView<'_, T> {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorView::Matrix(m) => vec![m.rows(), m.cols()],
            TensorView::Vector(v) => vec![v.len()],
        }
    }

    pub fn values(&self) -> &[T] {
        match self {
            TensorView::Matrix(m) => m.as_slice(),
            TensorView::Vector(v) => v,
        }
    }
}
