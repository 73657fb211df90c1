use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::ActivationStats;
use crate::error::{Error, Result};
use crate::local_pruner::{prune_progressive, GroupKind, Snapshot, UnitGrouping};
use crate::model::{
    attention_heads, ffn_hidden, rms_norm, AttentionWeights, FfnWeights, Model, PrunedSublayer,
    SublayerId, SublayerKind, SublayerWeights,
};
use crate::scalar::{through_f32, Scalar};
use crate::supernet::ladder::SparsityLadder;
use crate::supernet::mix::{expected_mix, mixing_weights, ErrorAccum};
use crate::supernet::store::{iteration_dir, StoreWriter, StructureKey, SupernetStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetConfig {
    pub ffn_group_size: usize,
    pub lambda_frac: f64,
    pub error_accum: ErrorAccum,
    /// Drives the per-sublayer draw of [`ErrorAccum::Random`].
    pub seed: u64,
    pub tag: String,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        Self {
            ffn_group_size: 16,
            lambda_frac: 0.01,
            error_accum: ErrorAccum::Expectation,
            seed: 0,
            tag: "0".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub tag: String,
    pub structures: usize,
    /// Distinct blobs written; duplicate ladder points share one.
    pub blobs: usize,
    pub bytes: u64,
    /// Sublayers whose expectation weights fell back to a uniform mean.
    pub degenerate_mixes: Vec<SublayerId>,
    /// Ladder index whose stream fed the next sublayer, for `random` mode.
    pub random_picks: Vec<(SublayerId, usize)>,
}

pub struct BuildOutcome {
    pub store: SupernetStore,
    pub report: BuildReport,
}

/// Grouping used to prune `kind` sublayers of `model`.
pub fn sublayer_grouping<T>(model: &Model<T>, kind: SublayerKind, ffn_group_size: usize) -> Result<UnitGrouping> {
    let c = &model.config;
    match kind {
        SublayerKind::Mha => Ok(UnitGrouping::heads(c.n_heads, c.head_dim)),
        SublayerKind::Ffn => UnitGrouping::new(GroupKind::FfnGroup, ffn_group_size, c.d_ffn),
    }
}

fn round_f32<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    m.map(through_f32)
}

/// Prune every sublayer of `model` along its ladder and persist all
/// structures under `root/iter_{tag}`.
///
/// Layers are walked front to back. Each sublayer's statistics come from the
/// stream produced by the previous sublayers under `config.error_accum`; its
/// structures' pre-residual outputs on that stream are then mixed into the
/// stream for the next sublayer.
pub fn build_supernet<T: Scalar>(
    model: &Model<T>,
    batches: &[Vec<u32>],
    ladders: &[SparsityLadder],
    config: &SupernetConfig,
    root: &Path,
) -> Result<BuildOutcome> {
    let mc = &model.config;
    if mc.layer_widths.is_some() {
        return Err(Error::Input("supernet must be built from a dense model".into()));
    }
    if batches.is_empty() {
        return Err(Error::Input("no calibration batches".into()));
    }
    if ladders.len() != mc.n_sublayers() {
        return Err(Error::Config(format!(
            "{} ladders for {} sublayers",
            ladders.len(),
            mc.n_sublayers()
        )));
    }
    if !(config.lambda_frac >= 0.0) {
        return Err(Error::Config("lambda_frac must be nonnegative".into()));
    }
    for id in mc.sublayers() {
        let g = sublayer_grouping(model, id.kind, config.ffn_group_size)?;
        if ladders[id.ordinal()].total_units != g.n_units {
            return Err(Error::Config(format!(
                "ladder for {id} covers {} units, sublayer has {}",
                ladders[id.ordinal()].total_units,
                g.n_units
            )));
        }
    }

    let dir = iteration_dir(root, &config.tag);
    let mut writer = StoreWriter::create(&dir, mc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = BuildReport {
        tag: config.tag.clone(),
        structures: 0,
        blobs: 0,
        bytes: 0,
        degenerate_mixes: Vec::new(),
        random_picks: Vec::new(),
    };

    let mut streams = batches
        .iter()
        .map(|b| model.embed(b))
        .collect::<Result<Vec<_>>>()?;

    for (i, layer) in model.weights.layers.iter().enumerate() {
        for kind in [SublayerKind::Mha, SublayerKind::Ffn] {
            let id = SublayerId { layer: i, kind };
            let ladder = &ladders[id.ordinal()];
            let grouping = sublayer_grouping(model, kind, config.ffn_group_size)?;
            let norm = match kind {
                SublayerKind::Mha => &layer.norm1,
                SublayerKind::Ffn => &layer.norm2,
            };
            // module-input activations (the channels being pruned) per batch
            let (inputs, w_out) = match kind {
                SublayerKind::Mha => {
                    let attn = AttentionWeights {
                        wq: round_f32(&layer.attn.wq),
                        wk: round_f32(&layer.attn.wk),
                        wv: round_f32(&layer.attn.wv),
                        wo: layer.attn.wo.clone(),
                    };
                    let acts = streams
                        .par_iter()
                        .map(|x| attention_heads(mc, &attn, &rms_norm(x, norm, mc.norm_epsilon)))
                        .collect::<Result<Vec<_>>>()?;
                    (acts, &layer.attn.wo)
                }
                SublayerKind::Ffn => {
                    let ffn = FfnWeights {
                        wgate: round_f32(&layer.ffn.wgate),
                        wup: round_f32(&layer.ffn.wup),
                        wdown: layer.ffn.wdown.clone(),
                    };
                    let acts = streams
                        .par_iter()
                        .map(|x| ffn_hidden(&ffn, &rms_norm(x, norm, mc.norm_epsilon)))
                        .collect::<Result<Vec<_>>>()?;
                    (acts, &layer.ffn.wdown)
                }
            };

            let mut stats = ActivationStats::new(grouping.d_in());
            for a in &inputs {
                stats.accumulate(a)?;
            }
            let trajectory = prune_progressive(
                &w_out.cast::<f64>(),
                &stats,
                &grouping,
                &ladder.realized,
                config.lambda_frac,
            )
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("{id}: {m}")),
                other => other,
            })?;

            // one structure per ladder point; equal unit counts share a blob
            let mut packed: Vec<(Vec<usize>, Matrix<T>)> = Vec::with_capacity(ladder.len());
            for (e, snap) in trajectory.snapshots.iter().enumerate() {
                let key = StructureKey { sublayer: id, index: e };
                let first = (0..e).find(|&j| ladder.pruned_units[j] == ladder.pruned_units[e]);
                let structure = pack_structure(layer_kind(layer, kind), id, &grouping, snap);
                match first {
                    Some(j) => writer.alias(key, StructureKey { sublayer: id, index: j })?,
                    None => {
                        writer.write(key, &structure)?;
                        report.blobs += 1;
                    }
                }
                report.structures += 1;
                let channels = grouping.channels_of(&snap.retained_units);
                let w = match &structure.weights {
                    SublayerWeights::Attention(a) => a.wo.clone(),
                    SublayerWeights::Ffn(f) => f.wdown.clone(),
                };
                packed.push((channels, w));
            }

            // pre-residual output of every structure, per batch
            let outputs: Vec<Vec<Matrix<T>>> = inputs
                .par_iter()
                .map(|a| {
                    packed
                        .iter()
                        .map(|(ch, w)| {
                            if ch.is_empty() {
                                Ok(Matrix::zeros(a.rows(), mc.d_model))
                            } else {
                                a.select_cols(ch).matmul(w)
                            }
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;

            let sparsities: Vec<f64> = trajectory.snapshots.iter().map(|s| s.realized_sparsity).collect();
            let pick = (config.error_accum == ErrorAccum::Random)
                .then(|| rng.random_range(0..ladder.len()));
            if let Some(e) = pick {
                report.random_picks.push((id, e));
            }
            if config.error_accum == ErrorAccum::Expectation && mixing_weights(&sparsities).1 {
                report.degenerate_mixes.push(id);
            }
            let dense_w = w_out.map(through_f32);
            for (b, x) in streams.iter_mut().enumerate() {
                let delta = match config.error_accum {
                    ErrorAccum::Expectation => expected_mix(&outputs[b], &sparsities)?.output,
                    ErrorAccum::Uniform => expected_mix(&outputs[b], &vec![0.0; sparsities.len()])?.output,
                    ErrorAccum::Random => outputs[b][pick.expect("drawn above")].clone(),
                    ErrorAccum::None => inputs[b].matmul(&dense_w)?,
                };
                x.add_assign(&delta)?;
            }
        }
    }

    let store = writer.finish(
        &config.tag,
        config.ffn_group_size,
        config.lambda_frac,
        config.error_accum,
        ladders.to_vec(),
    )?;
    report.bytes = store.size_bytes();
    Ok(BuildOutcome { store, report })
}

enum LayerPart<'a, T> {
    Attn(&'a AttentionWeights<T>),
    Ffn(&'a FfnWeights<T>),
}

fn layer_kind<T>(layer: &crate::model::LayerWeights<T>, kind: SublayerKind) -> LayerPart<'_, T> {
    match kind {
        SublayerKind::Mha => LayerPart::Attn(&layer.attn),
        SublayerKind::Ffn => LayerPart::Ffn(&layer.ffn),
    }
}

/// Packed sublayer for one snapshot, with every value rounded through f32 so
/// what is used during the build is exactly what the store holds.
fn pack_structure<T: Scalar>(
    part: LayerPart<'_, T>,
    id: SublayerId,
    grouping: &UnitGrouping,
    snap: &Snapshot,
) -> PrunedSublayer<T> {
    let channels = grouping.channels_of(&snap.retained_units);
    let out = round_f32(&snap.weights.select_rows(&channels).cast::<T>());
    let (weights, retained_units) = match part {
        LayerPart::Attn(a) => (
            SublayerWeights::Attention(AttentionWeights {
                wq: round_f32(&a.wq.select_cols(&channels)),
                wk: round_f32(&a.wk.select_cols(&channels)),
                wv: round_f32(&a.wv.select_cols(&channels)),
                wo: out,
            }),
            snap.retained_units.clone(),
        ),
        LayerPart::Ffn(f) => (
            SublayerWeights::Ffn(FfnWeights {
                wgate: round_f32(&f.wgate.select_cols(&channels)),
                wup: round_f32(&f.wup.select_cols(&channels)),
                wdown: out,
            }),
            channels.clone(),
        ),
    };
    PrunedSublayer {
        id,
        retained_units,
        weights,
        realized_sparsity: snap.realized_sparsity,
    }
}
