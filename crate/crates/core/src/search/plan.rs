use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{count_prunable_params, ModelConfig, SublayerId, SublayerKind};
use crate::supernet::SparsityLadder;

/// One ladder index per sublayer, in sublayer order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparsityPlan {
    indices: Vec<usize>,
}

impl SparsityPlan {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn index(&self, id: SublayerId) -> usize {
        self.indices[id.ordinal()]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn indices_mut(&mut self) -> &mut [usize] {
        &mut self.indices
    }
}

impl fmt::Display for SparsityPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.indices)
    }
}

/// The ladders a plan indexes into, with the parameter accounting needed to
/// check sparsity conservation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSpace {
    pub ladders: Vec<SparsityLadder>,
    pub kinds: Vec<SublayerKind>,
    /// Prunable parameters of each sublayer.
    pub sublayer_params: Vec<f64>,
    pub total_params: f64,
    pub target: f64,
    /// Largest single-unit parameter weight as a fraction of all prunable parameters.
    pub tolerance: f64,
}

impl PlanSpace {
    pub fn new(
        config: &ModelConfig,
        ladders: Vec<SparsityLadder>,
        ffn_group_size: usize,
        target: f64,
    ) -> Result<Self> {
        config.validate_ffn_grouping(ffn_group_size)?;
        let params = count_prunable_params(config);
        if ladders.len() != params.len() {
            return Err(Error::Config(format!(
                "{} ladders for {} sublayers",
                ladders.len(),
                params.len()
            )));
        }
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::Config(format!("target sparsity {target} outside [0, 1]")));
        }
        let total: usize = params.iter().map(|p| p.total()).sum();
        let atomic = params
            .iter()
            .map(|p| match p.id.kind {
                SublayerKind::Mha => p.params_per_unit,
                SublayerKind::Ffn => p.params_per_unit * ffn_group_size,
            })
            .max()
            .unwrap_or(0);
        Ok(Self {
            kinds: params.iter().map(|p| p.id.kind).collect(),
            sublayer_params: params.iter().map(|p| p.total() as f64).collect(),
            total_params: total as f64,
            tolerance: atomic as f64 / total as f64 + 1e-12,
            ladders,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.ladders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ladders.is_empty()
    }

    /// Plan selecting every ladder's centre point.
    pub fn center_plan(&self) -> SparsityPlan {
        SparsityPlan::new(self.ladders.iter().map(|l| l.center_index()).collect())
    }

    pub fn check(&self, plan: &SparsityPlan) -> Result<()> {
        if plan.len() != self.len() {
            return Err(Error::Input(format!(
                "plan has {} entries, space has {} sublayers",
                plan.len(),
                self.len()
            )));
        }
        for (i, (&e, l)) in plan.indices().iter().zip(&self.ladders).enumerate() {
            if e >= l.len() {
                return Err(Error::Input(format!(
                    "plan index {e} for {} outside ladder of {}",
                    SublayerId::from_ordinal(i),
                    l.len()
                )));
            }
        }
        Ok(())
    }

    /// Realized sparsity of each sublayer under `plan`.
    pub fn sublayer_sparsities(&self, plan: &SparsityPlan) -> Vec<f64> {
        plan.indices()
            .iter()
            .zip(&self.ladders)
            .map(|(&e, l)| l.realized[e])
            .collect()
    }

    /// `Σ realized_ℓ · params_ℓ / Σ params_ℓ`.
    pub fn overall_sparsity(&self, plan: &SparsityPlan) -> f64 {
        let pruned: f64 = self
            .sublayer_sparsities(plan)
            .iter()
            .zip(&self.sublayer_params)
            .map(|(s, p)| s * p)
            .sum();
        pruned / self.total_params
    }

    pub fn is_balanced(&self, plan: &SparsityPlan) -> bool {
        (self.overall_sparsity(plan) - self.target).abs() <= self.tolerance
    }
}

/// Overall realized sparsity of a plan, checking it against the space first.
pub fn verify_overall_sparsity(space: &PlanSpace, plan: &SparsityPlan) -> Result<f64> {
    space.check(plan)?;
    Ok(space.overall_sparsity(plan))
}
