use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::search::fitness::{Evaluator, SearchMetric};
use crate::search::mutate::mutate;
use crate::search::plan::{PlanSpace, SparsityPlan};
use crate::search::select::{select, validate_stages, Candidate, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub generations: usize,
    pub offspring: usize,
    pub stages: Vec<Stage>,
    pub metric: SearchMetric,
    pub seed: u64,
}

impl Default for SearchConfig {
    /// Desk-scale schedule for the toy models.
    fn default() -> Self {
        Self {
            generations: 50,
            offspring: 16,
            stages: vec![
                Stage { survivors: 16, budget: 512 },
                Stage { survivors: 4, budget: 2048 },
            ],
            metric: SearchMetric::KlLogits,
            seed: 0,
        }
    }
}

impl SearchConfig {
    /// 50 generations of 128 offspring over 2K, 16K and 128K-token stages.
    pub fn paper_scale() -> Self {
        Self {
            generations: 50,
            offspring: 128,
            stages: vec![
                Stage { survivors: 128, budget: 2048 },
                Stage { survivors: 16, budget: 16384 },
                Stage { survivors: 4, budget: 131072 },
            ],
            metric: SearchMetric::KlLogits,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.offspring == 0 {
            return Err(Error::Config("offspring must be positive".into()));
        }
        validate_stages(&self.stages)
    }

    pub fn final_budget(&self) -> usize {
        self.stages.last().map_or(0, |s| s.budget)
    }

    /// Largest number of tokens any stage evaluates on.
    pub fn max_budget(&self) -> usize {
        self.stages.iter().map(|s| s.budget).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub generation: usize,
    pub incumbent_fitness: f64,
    pub budget: usize,
    pub plan: Vec<usize>,
    pub realized_sparsity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: SparsityPlan,
    /// Final-budget fitness of `best`.
    pub fitness: f64,
    /// Generation 0 is the initial plan.
    pub trace: Vec<TraceEntry>,
    /// Distinct (plan, budget) evaluations that ran the model.
    pub evaluations: usize,
    /// Mutations that found no feasible shift.
    pub unchanged_mutations: usize,
}

/// Independent stream for candidate `index` of `generation`.
pub fn candidate_rng(seed: u64, generation: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | index as u64);
    rng
}

/// Single-incumbent evolutionary search with elitism: each generation
/// mutates the incumbent into `offspring` plans, ranks them together with
/// the incumbent through the stage schedule, and keeps the winner.
pub fn evolutionary_search<T: Scalar>(
    evaluator: &Evaluator<'_, T>,
    space: &PlanSpace,
    init: &SparsityPlan,
    config: &SearchConfig,
) -> Result<SearchResult> {
    config.validate()?;
    space.check(init)?;
    if !space.is_balanced(init) {
        return Err(Error::Input(format!(
            "initial plan sparsity {} is not within {} of target {}",
            space.overall_sparsity(init),
            space.tolerance,
            space.target
        )));
    }
    let budget = config.final_budget();
    let entry = |generation, plan: &SparsityPlan, fitness| TraceEntry {
        generation,
        incumbent_fitness: fitness,
        budget,
        plan: plan.indices().to_vec(),
        realized_sparsity: space.overall_sparsity(plan),
    };

    let mut incumbent = Candidate::new(init.clone(), 0);
    let mut fitness = evaluator.fitness(init, budget)?;
    incumbent.fitness = Some(fitness);
    let mut trace = vec![entry(0, init, fitness)];
    let mut unchanged = 0;

    for generation in 1..=config.generations {
        let mut candidates = vec![incumbent.clone()];
        for i in 0..config.offspring {
            let m = mutate(space, &incumbent.plan, &mut candidate_rng(config.seed, generation, i));
            if !m.changed {
                unchanged += 1;
            }
            candidates.push(Candidate::new(m.plan, generation));
        }
        let sel = select(evaluator, candidates, &config.stages, Some(&incumbent.plan))?;
        let winner = sel.best;
        if winner.plan != incumbent.plan {
            incumbent = winner;
        }
        fitness = evaluator.fitness(&incumbent.plan, budget)?;
        incumbent.fitness = Some(fitness);
        trace.push(entry(generation, &incumbent.plan, fitness));
    }
    Ok(SearchResult {
        best: incumbent.plan,
        fitness,
        trace,
        evaluations: evaluator.forward_count(),
        unchanged_mutations: unchanged,
    })
}

/// One JSON object per line.
pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in trace {
        serde_json::to_writer(&mut out, e).map_err(|err| Error::json(path, err))?;
        out.write_all(b"\n").map_err(|err| Error::io(path, err))?;
    }
    crate::io_util::write_atomic(path, &out)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}
