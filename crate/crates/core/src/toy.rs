//! Seeded toy models and synthetic corpora.
//!
//! Random models here carry per-layer, per-head and per-neuron-group gain
//! variation so that units differ in importance. Corpora are sampled from a
//! model itself, which makes that model the data distribution: held-out
//! perplexity of any other model then tracks its KL divergence to it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::{
    rms_norm, rotate_row, silu, AttentionWeights, FfnWeights, LayerWeights, Model, ModelConfig,
    PositionalScheme, TransformerWeights,
};
use crate::scalar::{through_f32, Scalar};
use crate::tensor::Matrix;

/// Two-layer config used by unit tests.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 4,
        head_dim: 4,
        d_ffn: 32,
        vocab_size: 24,
        norm_epsilon: 1e-5,
        max_seq_len: 16,
        positional_scheme: PositionalScheme::Rotary,
        layer_widths: None,
    }
}

/// Four-layer model small enough for end-to-end runs on one core.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        d_model: 64,
        n_heads: 8,
        head_dim: 8,
        d_ffn: 256,
        vocab_size: 256,
        norm_epsilon: 1e-5,
        max_seq_len: 64,
        positional_scheme: PositionalScheme::Rotary,
        layer_widths: None,
    }
}

/// The default desk-scale model used by `tyr init-toy`.
pub fn default_toy_config() -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        d_model: 128,
        n_heads: 8,
        head_dim: 16,
        d_ffn: 512,
        vocab_size: 512,
        norm_epsilon: 1e-5,
        max_seq_len: 128,
        positional_scheme: PositionalScheme::Rotary,
        layer_widths: None,
    }
}

/// Scale of the attention and FFN output projections. Large enough that
/// sublayer outputs carry a sizeable share of the residual stream, so that
/// pruning early layers shifts the inputs seen by later ones.
const RESIDUAL_GAIN: f64 = 1.5;

/// Random weights with heterogeneous unit gains. Values are representable
/// in f32 so the model round-trips through a checkpoint unchanged.
pub fn random_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Model<T> {
    random_model_with(config, seed, 1.0)
}

/// As [`random_model`], with `spread` scaling the log-normal gain variation.
pub fn random_model_with<T: Scalar>(config: &ModelConfig, seed: u64, spread: f64) -> Model<T> {
    config.validate().expect("toy config must be valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model;
    let hd = config.head_dim;
    let normal = |rng: &mut ChaCha8Rng, std: f64| -> T {
        let z: f64 = StandardNormal.sample(rng);
        through_f32(T::from_f64_lossy(z * std))
    };
    let mat = |rng: &mut ChaCha8Rng, r: usize, c: usize, std: f64| {
        Matrix::from_fn(r, c, |_, _| normal(rng, std))
    };

    let embed = mat(&mut rng, config.vocab_size, d, 1.0);
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        let layer_gain = (0.6 * spread * gauss(&mut rng)).exp();
        let wq = mat(&mut rng, d, d, 1.5 / (d as f64).sqrt());
        let wk = mat(&mut rng, d, d, 1.5 / (d as f64).sqrt());
        let wv = mat(&mut rng, d, d, 1.0 / (d as f64).sqrt());
        let mut wo = mat(&mut rng, d, d, RESIDUAL_GAIN * layer_gain / (d as f64).sqrt());
        for h in 0..config.n_heads {
            let g = T::from_f64_lossy((0.8 * spread * gauss(&mut rng)).exp());
            for r in h * hd..(h + 1) * hd {
                for v in wo.row_mut(r) {
                    *v = through_f32(*v * g);
                }
            }
        }
        let f = config.d_ffn;
        let wgate = mat(&mut rng, d, f, 1.0 / (d as f64).sqrt());
        let wup = mat(&mut rng, d, f, 1.0 / (d as f64).sqrt());
        let mut wdown = mat(&mut rng, f, d, RESIDUAL_GAIN * layer_gain / (f as f64).sqrt());
        for r in 0..f {
            // neighbouring neurons share a gain so groups differ in importance
            if r % 8 == 0 || r == 0 {
                let g = (0.8 * spread * gauss(&mut rng)).exp();
                for rr in r..(r + 8).min(f) {
                    for v in wdown.row_mut(rr) {
                        *v = through_f32(*v * T::from_f64_lossy(g));
                    }
                }
            }
        }
        let norm = |rng: &mut ChaCha8Rng| -> Vec<T> {
            (0..d)
                .map(|_| through_f32(T::from_f64_lossy(1.0 + 0.1 * gauss(rng))))
                .collect()
        };
        let norm1 = norm(&mut rng);
        let norm2 = norm(&mut rng);
        layers.push(LayerWeights {
            attn: AttentionWeights { wq, wk, wv, wo },
            ffn: FfnWeights { wgate, wup, wdown },
            norm1,
            norm2,
        });
    }
    let final_norm = (0..d).map(|_| T::one()).collect();
    let lm_head = mat(&mut rng, d, config.vocab_size, 2.5 / (d as f64).sqrt());
    let weights = TransformerWeights {
        embed,
        layers,
        final_norm,
        lm_head,
    };
    Model::new(config.clone(), weights).expect("toy weights match config")
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Incremental decoder with per-layer key/value caches, used for sampling.
struct Decoder<'a> {
    model: &'a Model<f64>,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl<'a> Decoder<'a> {
    fn new(model: &'a Model<f64>) -> Self {
        let n = model.config.n_layers;
        Self {
            model,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
        }
    }

    /// Feed one token and return next-token logits.
    fn step(&mut self, token: u32) -> Result<Vec<f64>> {
        let cfg = &self.model.config;
        let w = &self.model.weights;
        let pos = self.keys[0].len();
        let hd = cfg.head_dim;
        let mut x = Matrix::from_vec(1, cfg.d_model, w.embed.row(token as usize).to_vec())?;
        for (i, layer) in w.layers.iter().enumerate() {
            let xn = rms_norm(&x, &layer.norm1, cfg.norm_epsilon);
            let mut q = xn.matmul(&layer.attn.wq)?;
            let mut k = xn.matmul(&layer.attn.wk)?;
            let v = xn.matmul(&layer.attn.wv)?;
            let heads = layer.attn.wq.cols() / hd;
            if cfg.positional_scheme == PositionalScheme::Rotary {
                for h in 0..heads {
                    rotate_row(&mut q.row_mut(0)[h * hd..(h + 1) * hd], pos);
                    rotate_row(&mut k.row_mut(0)[h * hd..(h + 1) * hd], pos);
                }
            }
            self.keys[i].push(k.row(0).to_vec());
            self.values[i].push(v.row(0).to_vec());
            let mut mixed = Matrix::zeros(1, heads * hd);
            let scale = 1.0 / (hd as f64).sqrt();
            for h in 0..heads {
                let r = h * hd..(h + 1) * hd;
                let qh = &q.row(0)[r.clone()];
                let scores: Vec<f64> = self.keys[i]
                    .iter()
                    .map(|kk| qh.iter().zip(&kk[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let denom: f64 = exps.iter().sum();
                let out = &mut mixed.row_mut(0)[r.clone()];
                for (e, vv) in exps.iter().zip(&self.values[i]) {
                    for (o, val) in out.iter_mut().zip(&vv[r.clone()]) {
                        *o += e / denom * val;
                    }
                }
            }
            x.add_assign(&mixed.matmul(&layer.attn.wo)?)?;
            let hn = rms_norm(&x, &layer.norm2, cfg.norm_epsilon);
            let mut g = hn.matmul(&layer.ffn.wgate)?;
            let u = hn.matmul(&layer.ffn.wup)?;
            for (a, b) in g.as_mut_slice().iter_mut().zip(u.as_slice()) {
                *a = silu(*a) * b;
            }
            x.add_assign(&g.matmul(&layer.ffn.wdown)?)?;
        }
        Ok(self.model.head(&x)?.into_vec())
    }
}

/// Sample `n_seqs` sequences of `seq_len` tokens from `model` and concatenate them.
pub fn sample_corpus(
    model: &Model<f64>,
    n_seqs: usize,
    seq_len: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = model.config.vocab_size;
    let mut out = Vec::with_capacity(n_seqs * seq_len);
    for _ in 0..n_seqs {
        let mut dec = Decoder::new(model);
        let mut tok = rng.random_range(0..vocab as u32);
        out.push(tok);
        for _ in 1..seq_len {
            let logits = dec.step(tok)?;
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let probs: Vec<f64> = logits
                .iter()
                .map(|l| ((l - max) / temperature).exp())
                .collect();
            let total: f64 = probs.iter().sum();
            let mut u = rng.random::<f64>() * total;
            tok = (vocab - 1) as u32;
            for (i, p) in probs.iter().enumerate() {
                if u < *p {
                    tok = i as u32;
                    break;
                }
                u -= p;
            }
            out.push(tok);
        }
    }
    Ok(out)
}
