use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};

use tyr_core::calibration::{
    kl_to_dense, load_corpus, perplexity, sample_batches, write_corpus_bin, EvalReport, TokenCorpus,
};
use tyr_core::model::{apply_plan, load_model, save_checkpoint, Model};
use tyr_core::orchestrator::{derive_seed, ladders_for, run_tyr, PlanFile, RunConfig};
use tyr_core::search::{evolutionary_search, write_trace, Evaluator, PlanSpace};
use tyr_core::supernet::{build_supernet, SupernetConfig, SupernetStore};
use tyr_core::toy;

use crate::{BuildArgs, Command, Common, EvalArgs, ExportArgs, InitToyArgs, RunArgs, SearchArgs, ToySize};

pub const STORE_ROOT_ENV: &str = "TYR_STORE_ROOT";

pub fn dispatch(command: Command) -> Result<Value> {
    match command {
        Command::Run(a) => run(a, false),
        Command::PruneLocal(a) => run(a, true),
        Command::BuildSupernet(a) => build(a),
        Command::Search(a) => search(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
        Command::InitToy(a) => init_toy(a),
    }
}

fn resolve_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v.into();
            }
        };
    }
    set!(c.seed, cfg.seed);
    set!(c.target_sparsity, cfg.target_sparsity);
    set!(c.iterations, cfg.iterations);
    set!(c.interval, cfg.initial_interval);
    set!(c.ladder_size, cfg.ladder_size);
    set!(c.error_accum, cfg.error_accum);
    set!(c.metric, cfg.search.metric);
    set!(c.out, cfg.out);
    set!(c.model, cfg.checkpoint);
    set!(c.corpus, cfg.calibration_corpus);
    set!(c.seq_len, cfg.seq_len);
    set!(c.calibration_tokens, cfg.calibration_tokens);
    set!(c.generations, cfg.search.generations);
    set!(c.offspring, cfg.search.offspring);
    if let Some(p) = &c.store_root {
        cfg.store_root = Some(p.clone());
    }
    if let Some(p) = std::env::var_os(STORE_ROOT_ENV).filter(|v| !v.is_empty()) {
        cfg.store_root = Some(PathBuf::from(p));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs, isotropic: bool) -> Result<Value> {
    let mut cfg = resolve_config(&args.common)?;
    if let Some(p) = args.eval_corpus {
        cfg.eval_corpus = Some(p);
    }
    if isotropic {
        cfg = cfg.isotropic();
    }
    let (_, summary) = run_tyr(&cfg)?;
    Ok(json!({
        "command": if isotropic { "prune-local" } else { "run" },
        "model": cfg.out.join("model"),
        "summary": summary,
    }))
}

fn load_inputs(cfg: &RunConfig) -> Result<(Model<f64>, TokenCorpus)> {
    let dense: Model<f64> = load_model(&cfg.checkpoint)?;
    let corpus = load_corpus(&cfg.calibration_corpus, cfg.seq_len)?;
    corpus.check_vocab(dense.config.vocab_size)?;
    for w in cfg.check_model(&dense.config)? {
        log::warn!("{w}");
    }
    Ok((dense, corpus))
}

fn build(args: BuildArgs) -> Result<Value> {
    let cfg = resolve_config(&args.common)?;
    let (dense, corpus) = load_inputs(&cfg)?;
    let centers = match &args.centers {
        Some(p) => {
            let plan = PlanFile::load(p)?;
            anyhow::ensure!(
                plan.sublayer_sparsity.len() == dense.config.n_sublayers(),
                "plan file {} covers {} sublayers, model has {}",
                p.display(),
                plan.sublayer_sparsity.len(),
                dense.config.n_sublayers()
            );
            plan.sublayer_sparsity
        }
        None => vec![cfg.target_sparsity; dense.config.n_sublayers()],
    };
    let ladders = ladders_for(&dense, &centers, cfg.initial_interval, cfg.ladder_size, cfg.ffn_group_size)?;
    let batches = sample_batches(&corpus, cfg.calibration_tokens, derive_seed(cfg.seed, 1))?;
    let outcome = build_supernet(
        &dense,
        &batches,
        &ladders,
        &SupernetConfig {
            ffn_group_size: cfg.ffn_group_size,
            lambda_frac: cfg.lambda_frac,
            error_accum: cfg.error_accum,
            seed: derive_seed(cfg.seed, 100),
            tag: args.tag,
        },
        &cfg.store_root(),
    )?;
    Ok(json!({
        "command": "build-supernet",
        "store": outcome.store.dir(),
        "report": outcome.report,
    }))
}

fn search(args: SearchArgs) -> Result<Value> {
    let cfg = resolve_config(&args.common)?;
    let (dense, corpus) = load_inputs(&cfg)?;
    let store = SupernetStore::open(&args.store)?;
    let space = PlanSpace::new(
        &dense.config,
        store.ladders().to_vec(),
        store.manifest().ffn_group_size,
        cfg.target_sparsity,
    )?;
    let seqs = sample_batches(&corpus, cfg.search.max_budget(), derive_seed(cfg.seed, 2))?;
    let mut search_cfg = cfg.search.clone();
    search_cfg.seed = derive_seed(cfg.seed, 200);
    let evaluator = Evaluator::new(&dense, &store, seqs, cfg.search.metric)?;
    let result = evolutionary_search(&evaluator, &space, &space.center_plan(), &search_cfg)?;

    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let plan_path = cfg.out.join("plan.json");
    let trace_path = cfg.out.join("trace.jsonl");
    let plan = PlanFile {
        sublayer_sparsity: space.sublayer_sparsities(&result.best),
        overall_sparsity: space.overall_sparsity(&result.best),
        plan: result.best.clone(),
        store: store.dir().to_path_buf(),
        fitness: result.fitness,
    };
    plan.save(&plan_path)?;
    write_trace(&trace_path, &result.trace)?;
    Ok(json!({
        "command": "search",
        "plan_file": plan_path,
        "trace": trace_path,
        "plan": plan,
        "evaluations": result.evaluations,
        "unchanged_mutations": result.unchanged_mutations,
    }))
}

fn eval(args: EvalArgs) -> Result<Value> {
    let model: Model<f64> = load_model(&args.model)?;
    let seq_len = args.seq_len.unwrap_or(model.config.max_seq_len);
    let mut corpus = load_corpus(&args.corpus, seq_len)?;
    if let Some(max) = args.max_tokens {
        corpus.ids.truncate(max.max(seq_len));
    }
    corpus.check_vocab(model.config.vocab_size)?;
    let ppl = perplexity(&model, &corpus, seq_len)?;
    let windows: Vec<&[u32]> = corpus.ids.chunks_exact(seq_len).collect();
    let kl = match &args.dense {
        Some(p) => {
            let dense: Model<f64> = load_model(p)?;
            let mut total = 0.0;
            for w in &windows {
                total += kl_to_dense(&dense.logits(w)?, &model.logits(w)?)?;
            }
            Some(total / windows.len() as f64)
        }
        None => None,
    };
    let report = EvalReport {
        perplexity: ppl,
        kl,
        tokens: windows.len() * seq_len,
        seed: args.seed,
    };
    Ok(serde_json::to_value(report)?)
}

fn export(args: ExportArgs) -> Result<Value> {
    let dense: Model<f64> = load_model(&args.model)?;
    let plan = PlanFile::load(&args.plan)?;
    let store_dir = args.store.unwrap_or(plan.store.clone());
    let store = SupernetStore::open(&store_dir)?;
    let model = apply_plan(&dense, &store, &plan.plan)?;
    save_checkpoint(&args.out, &model.config, &model.weights)?;
    Ok(json!({
        "command": "export",
        "out": args.out,
        "store": store_dir,
        "overall_sparsity": plan.overall_sparsity,
        "layer_widths": model.config.layer_widths,
        "linear_params": model.weights.backbone_linear_params(),
        "dense_linear_params": dense.weights.backbone_linear_params(),
    }))
}

fn init_toy(args: InitToyArgs) -> Result<Value> {
    let config = match args.size {
        ToySize::Tiny => toy::tiny_config(),
        ToySize::Small => toy::small_config(),
        ToySize::Default => toy::default_toy_config(),
    };
    let seq_len = config.max_seq_len;
    let model = toy::random_model::<f64>(&config, args.seed);
    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_checkpoint(&out.join("model"), &model.config, &model.weights)?;
    let n_calib = args.calibration_tokens.div_ceil(seq_len).max(1);
    let n_held = args.heldout_tokens.div_ceil(seq_len).max(1);
    let calib = toy::sample_corpus(&model, n_calib, seq_len, 1.0, derive_seed(args.seed, 10))?;
    let held = toy::sample_corpus(&model, n_held, seq_len, 1.0, derive_seed(args.seed, 11))?;
    write_corpus_bin(&out.join("calib.bin"), &calib)?;
    write_corpus_bin(&out.join("heldout.bin"), &held)?;

    let run = RunConfig {
        checkpoint: out.join("model"),
        calibration_corpus: out.join("calib.bin"),
        eval_corpus: Some(out.join("heldout.bin")),
        seq_len,
        calibration_tokens: (n_calib * seq_len).min(8192),
        seed: args.seed,
        out: out.join("run"),
        ..RunConfig::default()
    };
    let config_path = out.join("config.json");
    write_pretty(&config_path, &run)?;
    Ok(json!({
        "command": "init-toy",
        "model": out.join("model"),
        "calibration_corpus": run.calibration_corpus,
        "eval_corpus": run.eval_corpus,
        "config": config_path,
        "calibration_tokens": calib.len(),
        "heldout_tokens": held.len(),
    }))
}

fn write_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}
