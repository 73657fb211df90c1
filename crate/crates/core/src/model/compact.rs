use crate::error::{Error, Result};
use crate::model::config::{LayerWidths, SublayerKind};
use crate::model::forward::Model;
use crate::model::weights::{PrunedSublayer, SublayerWeights};
use crate::scalar::Scalar;
use crate::search::SparsityPlan;
use crate::supernet::{StructureKey, SupernetStore};
use crate::tensor::Matrix;

/// Compact `dense` by swapping in the structure each sublayer's plan entry selects.
pub fn apply_plan<T: Scalar>(
    dense: &Model<T>,
    store: &SupernetStore,
    plan: &SparsityPlan,
) -> Result<Model<T>> {
    if plan.len() != dense.config.n_sublayers() {
        return Err(Error::Input(format!(
            "plan covers {} sublayers, model has {}",
            plan.len(),
            dense.config.n_sublayers()
        )));
    }
    let structures = dense
        .config
        .sublayers()
        .map(|id| {
            store.load_structure::<T>(StructureKey {
                sublayer: id,
                index: plan.index(id),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    compact_model(dense, &structures)
}

/// Replace sublayers of `dense` with packed structures.
pub fn compact_model<T: Scalar>(
    dense: &Model<T>,
    structures: &[PrunedSublayer<T>],
) -> Result<Model<T>> {
    let config = dense.config.dense();
    let mut weights = dense.weights.clone();
    let mut widths: Vec<LayerWidths> = (0..config.n_layers).map(|i| dense.config.widths(i)).collect();
    for s in structures {
        s.validate(&config)?;
        let layer = weights
            .layers
            .get_mut(s.id.layer)
            .ok_or_else(|| Error::Input(format!("no layer for {}", s.id)))?;
        match &s.weights {
            SublayerWeights::Attention(a) => {
                layer.attn = a.clone();
                widths[s.id.layer].n_heads = s.retained_units.len();
            }
            SublayerWeights::Ffn(f) => {
                layer.ffn = f.clone();
                widths[s.id.layer].d_ffn = s.retained_units.len();
            }
        }
    }
    let mut config = config;
    let dense_widths = LayerWidths {
        n_heads: config.n_heads,
        d_ffn: config.d_ffn,
    };
    if widths.iter().any(|w| *w != dense_widths) {
        config.layer_widths = Some(widths);
    }
    Model::new(config, weights)
}

/// Dense-shaped model in which pruned units are zero, the masked counterpart
/// of [`compact_model`].
pub fn masked_model<T: Scalar>(
    dense: &Model<T>,
    structures: &[PrunedSublayer<T>],
) -> Result<Model<T>> {
    let config = &dense.config;
    let mut weights = dense.weights.clone();
    for s in structures {
        s.validate(config)?;
        let layer = &mut weights.layers[s.id.layer];
        match (&s.weights, s.id.kind) {
            (SublayerWeights::Attention(a), SublayerKind::Mha) => {
                let hd = config.head_dim;
                let cols: Vec<usize> = s
                    .retained_units
                    .iter()
                    .flat_map(|&h| h * hd..(h + 1) * hd)
                    .collect();
                layer.attn.wq = scatter_cols(&a.wq, &cols, config.d_model);
                layer.attn.wk = scatter_cols(&a.wk, &cols, config.d_model);
                layer.attn.wv = scatter_cols(&a.wv, &cols, config.d_model);
                layer.attn.wo = scatter_rows(&a.wo, &cols, config.d_model);
            }
            (SublayerWeights::Ffn(f), SublayerKind::Ffn) => {
                let cols = &s.retained_units;
                layer.ffn.wgate = scatter_cols(&f.wgate, cols, config.d_ffn);
                layer.ffn.wup = scatter_cols(&f.wup, cols, config.d_ffn);
                layer.ffn.wdown = scatter_rows(&f.wdown, cols, config.d_ffn);
            }
            _ => return Err(Error::Input(format!("{}: weight kind mismatch", s.id))),
        }
    }
    Model::new(config.clone(), weights)
}

fn scatter_cols<T: Scalar>(packed: &Matrix<T>, cols: &[usize], width: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(packed.rows(), width);
    for r in 0..packed.rows() {
        for (j, &c) in cols.iter().enumerate() {
            out[(r, c)] = packed[(r, j)];
        }
    }
    out
}

fn scatter_rows<T: Scalar>(packed: &Matrix<T>, rows: &[usize], height: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(height, packed.cols());
    for (j, &r) in rows.iter().enumerate() {
        out.row_mut(r).copy_from_slice(packed.row(j));
    }
    out
}
