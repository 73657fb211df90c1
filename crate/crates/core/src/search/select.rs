use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::search::fitness::Evaluator;
use crate::search::plan::SparsityPlan;

/// Evaluate up to `survivors` candidates on `budget` tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub survivors: usize,
    pub budget: usize,
}

/// Survivors strictly decreasing, budgets strictly increasing, none zero.
pub fn validate_stages(stages: &[Stage]) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::Config("stage schedule is empty".into()));
    }
    if stages.iter().any(|s| s.survivors == 0 || s.budget == 0) {
        return Err(Error::Config("stage survivors and budgets must be positive".into()));
    }
    for w in stages.windows(2) {
        if w[1].survivors >= w[0].survivors || w[1].budget <= w[0].budget {
            return Err(Error::Config(format!(
                "stages must shrink survivors and grow budgets: {:?} then {:?}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub plan: SparsityPlan,
    /// Fitness on the budget of the last stage that evaluated it.
    pub fitness: Option<f64>,
    /// Generation that produced the plan.
    pub lineage: usize,
}

impl Candidate {
    pub fn new(plan: SparsityPlan, lineage: usize) -> Self {
        Self {
            plan,
            fitness: None,
            lineage,
        }
    }
}

/// Order by fitness, then older lineage, then plan.
pub fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    let fa = a.fitness.unwrap_or(f64::INFINITY);
    let fb = b.fitness.unwrap_or(f64::INFINITY);
    fa.total_cmp(&fb)
        .then(a.lineage.cmp(&b.lineage))
        .then_with(|| a.plan.cmp(&b.plan))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub best: Candidate,
    /// Candidates ranked at each stage, best first.
    pub stages: Vec<Vec<Candidate>>,
}

/// Multi-stage selection. Duplicate plans are merged (keeping the oldest
/// lineage) before evaluation. A `protected` plan, if present among the
/// candidates, advances through every stage regardless of rank.
pub fn select<T: Scalar>(
    evaluator: &Evaluator<'_, T>,
    candidates: Vec<Candidate>,
    stages: &[Stage],
    protected: Option<&SparsityPlan>,
) -> Result<Selection> {
    validate_stages(stages)?;
    let mut pool = dedup(candidates);
    if pool.is_empty() {
        return Err(Error::Input("no candidates to select from".into()));
    }
    // the first stage sees the oldest candidates when it cannot take them all
    pool.sort_by(|a, b| a.lineage.cmp(&b.lineage).then_with(|| a.plan.cmp(&b.plan)));
    let mut ranked_stages = Vec::with_capacity(stages.len());
    for stage in stages {
        let mut entrants: Vec<Candidate> = pool.iter().take(stage.survivors).cloned().collect();
        if let Some(p) = protected {
            if !entrants.iter().any(|c| &c.plan == p) {
                if let Some(c) = pool.iter().find(|c| &c.plan == p) {
                    entrants.push(c.clone());
                }
            }
        }
        let plans: Vec<SparsityPlan> = entrants.iter().map(|c| c.plan.clone()).collect();
        let scores = evaluator.fitness_many(&plans, stage.budget)?;
        for (c, f) in entrants.iter_mut().zip(scores) {
            c.fitness = Some(f);
        }
        entrants.sort_by(rank);
        ranked_stages.push(entrants.clone());
        pool = entrants;
    }
    Ok(Selection {
        best: pool[0].clone(),
        stages: ranked_stages,
    })
}

fn dedup(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by(|a, b| a.plan.cmp(&b.plan).then(a.lineage.cmp(&b.lineage)));
    let mut seen = HashSet::new();
    candidates.retain(|c| seen.insert(c.plan.clone()));
    candidates
}
