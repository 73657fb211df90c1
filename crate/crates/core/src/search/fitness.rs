use std::collections::{BTreeSet, HashMap};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::log_softmax_row;
use crate::error::{Error, Result};
use crate::model::{compact_model, Capture, Model, PrunedSublayer};
use crate::scalar::Scalar;
use crate::search::plan::SparsityPlan;
use crate::supernet::{StructureKey, SupernetStore};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMetric {
    /// Mean per-token KL(dense ‖ sparse) of next-token distributions.
    KlLogits,
    /// Logit KL plus the mean relative squared error of hidden states after
    /// the first, median and last layers.
    KlHidden,
}

impl FromStr for SearchMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl-logits" => Ok(Self::KlLogits),
            "kl-hidden" => Ok(Self::KlHidden),
            _ => Err(Error::Config(format!("unknown search metric {s:?}"))),
        }
    }
}

struct DenseSeq<T> {
    log_probs: Vec<Vec<f64>>,
    hidden: Vec<Matrix<T>>,
    hidden_norm: Vec<f64>,
}

/// Scores plans against the dense model on a fixed pool of evaluation
/// sequences. A token budget `B` uses the first `ceil(B / seq_len)` of them,
/// so every budget sees the same slices on every call.
pub struct Evaluator<'a, T> {
    dense: &'a Model<T>,
    store: &'a SupernetStore,
    seqs: Vec<Vec<u32>>,
    metric: SearchMetric,
    hidden_layers: Vec<usize>,
    dense_cache: Vec<DenseSeq<T>>,
    fitness_cache: Mutex<HashMap<(SparsityPlan, usize), f64>>,
    structures: Mutex<HashMap<StructureKey, Arc<PrunedSublayer<T>>>>,
    forward_count: AtomicUsize,
}

impl<'a, T: Scalar> Evaluator<'a, T> {
    pub fn new(
        dense: &'a Model<T>,
        store: &'a SupernetStore,
        seqs: Vec<Vec<u32>>,
        metric: SearchMetric,
    ) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Input("no evaluation sequences".into()));
        }
        if store.manifest().model != dense.config.dense() {
            return Err(Error::Input("store was built for a different model".into()));
        }
        let n = dense.config.n_layers;
        let hidden_layers: Vec<usize> = match metric {
            SearchMetric::KlLogits => Vec::new(),
            SearchMetric::KlHidden => [0, (n - 1) / 2, n - 1]
                .into_iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let capture = Capture {
            sublayers: BTreeSet::new(),
            hidden_layers: hidden_layers.iter().copied().collect(),
        };
        let dense_cache = seqs
            .par_iter()
            .map(|s| {
                let out = dense.forward(s, Some(&capture))?;
                let hidden: Vec<Matrix<T>> = hidden_layers.iter().map(|l| out.hidden[l].clone()).collect();
                Ok(DenseSeq {
                    log_probs: (0..out.logits.rows()).map(|t| log_softmax_row(out.logits.row(t))).collect(),
                    hidden_norm: hidden.iter().map(|h| h.frobenius_sq()).collect(),
                    hidden,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dense,
            store,
            seqs,
            metric,
            hidden_layers,
            dense_cache,
            fitness_cache: Mutex::new(HashMap::new()),
            structures: Mutex::new(HashMap::new()),
            forward_count: AtomicUsize::new(0),
        })
    }

    pub fn store(&self) -> &SupernetStore {
        self.store
    }

    pub fn metric(&self) -> SearchMetric {
        self.metric
    }

    /// Sequences a budget of `tokens` evaluates on.
    pub fn seqs_for_budget(&self, tokens: usize) -> usize {
        let len = self.seqs[0].len().max(1);
        tokens.div_ceil(len).clamp(1, self.seqs.len())
    }

    /// Plans actually run through the model (cache misses).
    pub fn forward_count(&self) -> usize {
        self.forward_count.load(Ordering::Relaxed)
    }

    fn structure(&self, key: StructureKey) -> Result<Arc<PrunedSublayer<T>>> {
        if let Some(s) = self.structures.lock().expect("structure cache poisoned").get(&key) {
            return Ok(s.clone());
        }
        let s = Arc::new(self.store.load_structure::<T>(key)?);
        self.structures
            .lock()
            .expect("structure cache poisoned")
            .insert(key, s.clone());
        Ok(s)
    }

    /// The compacted subnet a plan selects.
    pub fn assemble(&self, plan: &SparsityPlan) -> Result<Model<T>> {
        let structures = self
            .dense
            .config
            .sublayers()
            .map(|id| {
                self.structure(StructureKey {
                    sublayer: id,
                    index: plan.index(id),
                })
                .map(|s| (*s).clone())
            })
            .collect::<Result<Vec<_>>>()?;
        compact_model(self.dense, &structures)
    }

    /// Fitness of `plan` on a token budget; lower is better.
    pub fn fitness(&self, plan: &SparsityPlan, budget: usize) -> Result<f64> {
        if plan.len() != self.dense.config.n_sublayers() {
            return Err(Error::Input(format!("plan has {} entries", plan.len())));
        }
        let n = self.seqs_for_budget(budget);
        let key = (plan.clone(), n);
        if let Some(&f) = self.fitness_cache.lock().expect("fitness cache poisoned").get(&key) {
            return Ok(f);
        }
        let model = self.assemble(plan)?;
        let capture = Capture {
            sublayers: BTreeSet::new(),
            hidden_layers: self.hidden_layers.iter().copied().collect(),
        };
        let mut kl = 0.0;
        let mut tokens = 0usize;
        let mut hid_err = vec![0.0; self.hidden_layers.len()];
        let mut hid_norm = vec![0.0; self.hidden_layers.len()];
        for (seq, dense) in self.seqs[..n].iter().zip(&self.dense_cache) {
            let out = model.forward(seq, Some(&capture))?;
            for (t, p) in dense.log_probs.iter().enumerate() {
                kl += kl_row(p, &log_softmax_row(out.logits.row(t)));
            }
            tokens += dense.log_probs.len();
            for (j, l) in self.hidden_layers.iter().enumerate() {
                let mut d = out.hidden[l].clone();
                d.axpy(-T::one(), &dense.hidden[j])?;
                hid_err[j] += d.frobenius_sq();
                hid_norm[j] += dense.hidden_norm[j];
            }
        }
        let mut f = kl / tokens as f64;
        if self.metric == SearchMetric::KlHidden {
            let k = self.hidden_layers.len() as f64;
            f += hid_err
                .iter()
                .zip(&hid_norm)
                .map(|(e, n)| if *n > 0.0 { e / n } else { *e })
                .sum::<f64>()
                / k;
        }
        if !f.is_finite() {
            return Err(Error::Numeric(format!("non-finite fitness for plan {plan}")));
        }
        self.forward_count.fetch_add(1, Ordering::Relaxed);
        self.fitness_cache
            .lock()
            .expect("fitness cache poisoned")
            .insert(key, f);
        Ok(f)
    }

    pub fn fitness_many(&self, plans: &[SparsityPlan], budget: usize) -> Result<Vec<f64>> {
        plans.par_iter().map(|p| self.fitness(p, budget)).collect()
    }
}

/// `KL(p ‖ q)` for log-probability rows, clamped at zero against rounding.
fn kl_row(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&lp, &lq)| lp.exp() * (lp - lq))
        .sum::<f64>()
        .max(0.0)
}
