use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calibration::{load_corpus, perplexity, sample_batches, TokenCorpus};
use crate::error::{Error, Result};
use crate::io_util::write_json;
use crate::model::{apply_plan, load_model, save_checkpoint, Model};
use crate::search::{evolutionary_search, write_trace, Evaluator, PlanSpace, SparsityPlan};
use crate::supernet::{
    build_supernet, gc_iteration, generate_ladder, interval_schedule, sublayer_grouping,
    SparsityLadder, SupernetConfig, SupernetStore,
};

use super::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub interval: f64,
    /// Ladder centre of each sublayer.
    pub centers: Vec<f64>,
    /// Final-budget fitness of the plan this iteration's search returned.
    pub searched_fitness: f64,
    /// Whether that plan replaced the previous incumbent.
    pub accepted: bool,
    /// Fitness of the incumbent after this iteration.
    pub incumbent_fitness: f64,
    pub plan: Vec<usize>,
    pub sublayer_sparsity: Vec<f64>,
    pub overall_sparsity: f64,
    /// Incumbent fitness after each generation of this iteration's search.
    pub fitness_trace: Vec<f64>,
    pub evaluations: usize,
    pub unchanged_mutations: usize,
    pub store_tag: String,
    pub store_bytes: u64,
    pub freed_bytes: u64,
    pub wall_clock_ms: u128,
}

pub struct RunOutcome {
    pub model: Model<f64>,
    pub plan: SparsityPlan,
    pub store: SupernetStore,
    pub fitness: f64,
    pub overall_sparsity: f64,
    pub sublayer_sparsity: Vec<f64>,
    pub reports: Vec<IterationReport>,
}

/// Summary written next to the final checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub plan: Vec<usize>,
    pub store: PathBuf,
    pub fitness: f64,
    pub overall_sparsity: f64,
    pub sublayer_sparsity: Vec<f64>,
    pub heldout_perplexity: Option<f64>,
    pub dense_heldout_perplexity: Option<f64>,
    pub iterations: Vec<IterationReport>,
}

/// Deterministic sub-seed for a named stage of a run.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ladders centred on each sublayer's current sparsity.
pub fn ladders_for(
    model: &Model<f64>,
    centers: &[f64],
    interval: f64,
    size: usize,
    ffn_group_size: usize,
) -> Result<Vec<SparsityLadder>> {
    model
        .config
        .sublayers()
        .zip(centers)
        .map(|(id, &c)| {
            let units = sublayer_grouping(model, id.kind, ffn_group_size)?.n_units;
            generate_ladder(c, interval, size, units)
        })
        .collect()
}

/// The iterative prune-and-search loop on an in-memory dense model.
///
/// Every iteration re-prunes the dense model along ladders centred on the
/// incumbent's per-sublayer sparsities, with the interval halved each time.
/// A search result only replaces the incumbent if its fitness is no worse.
pub fn run_iterations(
    dense: &Model<f64>,
    calibration: &TokenCorpus,
    config: &RunConfig,
) -> Result<RunOutcome> {
    config.validate()?;
    for w in config.check_model(&dense.config)? {
        log::warn!("{w}");
    }
    if calibration.sample_len != config.seq_len {
        return Err(Error::Config(format!(
            "corpus sample length {} differs from seq_len {}",
            calibration.sample_len, config.seq_len
        )));
    }
    calibration.check_vocab(dense.config.vocab_size)?;
    let batches = sample_batches(calibration, config.calibration_tokens, derive_seed(config.seed, 1))?;
    let eval_seqs = sample_batches(calibration, config.search.max_budget(), derive_seed(config.seed, 2))?;
    let root = config.store_root();

    let mut centers = vec![config.target_sparsity; dense.config.n_sublayers()];
    let mut best: Option<(SparsityPlan, SupernetStore, f64, PlanSpace)> = None;
    let mut reports = Vec::with_capacity(config.iterations);

    for (t, interval) in interval_schedule(config.initial_interval, config.iterations)
        .into_iter()
        .enumerate()
    {
        let started = Instant::now();
        let tag = (t + 1).to_string();
        let iteration_centers = centers.clone();
        let ladders = ladders_for(dense, &centers, interval, config.ladder_size, config.ffn_group_size)?;
        let built = build_supernet(
            dense,
            &batches,
            &ladders,
            &SupernetConfig {
                ffn_group_size: config.ffn_group_size,
                lambda_frac: config.lambda_frac,
                error_accum: config.error_accum,
                seed: derive_seed(config.seed, 100 + t as u64),
                tag: tag.clone(),
            },
            &root,
        )?;
        let store = built.store;
        let space = PlanSpace::new(&dense.config, ladders, config.ffn_group_size, config.target_sparsity)?;
        let mut search_cfg = config.search.clone();
        search_cfg.seed = derive_seed(config.seed, 200 + t as u64);
        let result = {
            let evaluator = Evaluator::new(dense, &store, eval_seqs.clone(), config.search.metric)?;
            evolutionary_search(&evaluator, &space, &space.center_plan(), &search_cfg)?
        };
        let store_bytes = store.size_bytes();

        let accepted = best.as_ref().is_none_or(|(_, _, f, _)| result.fitness <= *f);
        if accepted {
            best = Some((result.best.clone(), store, result.fitness, space));
        }
        let (plan, store, fitness, space) = best.as_ref().expect("set on the first iteration");
        let freed_bytes = if config.keep_stores {
            0
        } else {
            gc_iteration(&root, &store.manifest().iteration)?
        };
        centers = space.sublayer_sparsities(plan);
        log::info!(
            "iteration {}: interval {interval}, searched fitness {:.6}, incumbent {:.6}{}",
            t + 1,
            result.fitness,
            fitness,
            if accepted { "" } else { " (kept previous)" }
        );
        reports.push(IterationReport {
            iteration: t + 1,
            interval,
            centers: iteration_centers,
            searched_fitness: result.fitness,
            accepted,
            incumbent_fitness: *fitness,
            plan: plan.indices().to_vec(),
            sublayer_sparsity: centers.clone(),
            overall_sparsity: space.overall_sparsity(plan),
            fitness_trace: result.trace.iter().map(|e| e.incumbent_fitness).collect(),
            evaluations: result.evaluations,
            unchanged_mutations: result.unchanged_mutations,
            store_tag: tag,
            store_bytes,
            freed_bytes,
            wall_clock_ms: started.elapsed().as_millis(),
        });
        write_iteration_trace(config, t + 1, &result.trace)?;
    }

    let (plan, store, fitness, space) = best.expect("at least one iteration");
    let model = apply_plan(dense, &store, &plan)?;
    Ok(RunOutcome {
        overall_sparsity: space.overall_sparsity(&plan),
        sublayer_sparsity: space.sublayer_sparsities(&plan),
        model,
        plan,
        store,
        fitness,
        reports,
    })
}

fn write_iteration_trace(config: &RunConfig, iteration: usize, trace: &[crate::search::TraceEntry]) -> Result<()> {
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    write_trace(&config.out.join(format!("trace_iter{iteration}.jsonl")), trace)
}

/// Full run from files: load, prune and search, save the compacted model to
/// `{out}/model` with `plan.json` and `report.json` beside it.
pub fn run_tyr(config: &RunConfig) -> Result<(RunOutcome, RunSummary)> {
    config.validate()?;
    let dense: Model<f64> = load_model(&config.checkpoint)?;
    let calibration = load_corpus(&config.calibration_corpus, config.seq_len)?;
    let outcome = run_iterations(&dense, &calibration, config)?;
    let (heldout, dense_heldout) = match &config.eval_corpus {
        Some(p) => {
            let c = load_corpus(p, config.seq_len)?;
            c.check_vocab(dense.config.vocab_size)?;
            (
                Some(perplexity(&outcome.model, &c, config.seq_len)?),
                Some(perplexity(&dense, &c, config.seq_len)?),
            )
        }
        None => (None, None),
    };
    save_run(config, &outcome, heldout, dense_heldout)
        .map(|summary| (outcome, summary))
}

fn save_run(
    config: &RunConfig,
    outcome: &RunOutcome,
    heldout: Option<f64>,
    dense_heldout: Option<f64>,
) -> Result<RunSummary> {
    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_checkpoint(&out.join("model"), &outcome.model.config, &outcome.model.weights)?;
    let summary = RunSummary {
        plan: outcome.plan.indices().to_vec(),
        store: outcome.store.dir().to_path_buf(),
        fitness: outcome.fitness,
        overall_sparsity: outcome.overall_sparsity,
        sublayer_sparsity: outcome.sublayer_sparsity.clone(),
        heldout_perplexity: heldout,
        dense_heldout_perplexity: dense_heldout,
        iterations: outcome.reports.clone(),
    };
    write_json(&out.join("plan.json"), &PlanFile::from_outcome(outcome))?;
    write_json(&out.join("report.json"), &summary)?;
    Ok(summary)
}

/// On-disk handoff between `search` and `export`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub plan: SparsityPlan,
    pub store: PathBuf,
    pub sublayer_sparsity: Vec<f64>,
    pub overall_sparsity: f64,
    pub fitness: f64,
}

impl PlanFile {
    fn from_outcome(o: &RunOutcome) -> Self {
        Self {
            plan: o.plan.clone(),
            store: o.store.dir().to_path_buf(),
            sublayer_sparsity: o.sublayer_sparsity.clone(),
            overall_sparsity: o.overall_sparsity,
            fitness: o.fitness,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io_util::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
