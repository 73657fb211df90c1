//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p tyr-core --test acceptance -- --nocapture` (or plain
//! `cargo test`, where the harness prints regardless).

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tyr_core::calibration::{kl_to_dense, perplexity, sample_batches, write_corpus_bin, ActivationStats, TokenCorpus};
use tyr_core::local_pruner::{
    build_hessian_state, prune_progressive, prune_unit_step, reconstruction_error, GroupKind,
    UnitGrouping,
};
use tyr_core::model::{masked_model, rms_norm, save_checkpoint, SublayerKind};
use tyr_core::orchestrator::{ladders_for, run_iterations, run_tyr, RunConfig};
use tyr_core::search::{
    candidate_rng, evolutionary_search, mutate, Evaluator, PlanSpace, SearchConfig, SearchMetric,
    SparsityPlan, Stage,
};
use tyr_core::supernet::{
    build_supernet, generate_ladder, interval_schedule, ErrorAccum, SparsityLadder, StructureKey,
    SupernetConfig,
};
use tyr_core::tensor::Matrix;
use tyr_core::toy::{default_toy_config, random_model, sample_corpus, small_config, tiny_config};
use tyr_core::Model64;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let t = started.elapsed();
    ensure(t < limit, || format!("took {t:.1?}, limit {limit:?}"))
}

// ---- independent numerics -------------------------------------------------

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `XᵀX` with `X` of `2d` Gaussian rows.
fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Matrix<f64> {
    let x = gaussian(rng, 2 * d, d);
    x.t_matmul(&x).unwrap()
}

/// Gauss-Jordan inverse with partial pivoting.
fn gj_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    let pivot_row = m[c].clone();
                    for (v, pv) in m[r].iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn damped_block(h: &Matrix<f64>, lambda: f64, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| idx.iter().map(|&j| h[(i, j)] + if i == j { lambda } else { 0.0 }).collect())
        .collect()
}

// ---- criteria -------------------------------------------------------------

fn c1_inverse_maintenance() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for _ in 0..100 {
        let d = rng.random_range(4..=64);
        let h = random_spd(&mut rng, d);
        let mut w = gaussian(&mut rng, d, 3);
        let grouping = UnitGrouping::heads(d, 1);
        let mut state = build_hessian_state(&w, &h, 0.01).map_err(|e| e.to_string())?;
        let mut order: Vec<usize> = (0..d).collect();
        for i in (1..d).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for &p in &order[..d - 1] {
            prune_unit_step(&mut state, &mut w, &grouping, p).map_err(|e| e.to_string())?;
            let active = state.active_channels();
            let fresh = gj_inverse(&damped_block(&h, state.lambda, &active));
            let (mut num, mut den) = (0.0, 0.0);
            for (a, &i) in active.iter().enumerate() {
                for (b, &j) in active.iter().enumerate() {
                    num += (state.inv_h[(i, j)] - fresh[a][b]).powi(2);
                    den += fresh[a][b].powi(2);
                }
            }
            worst = worst.max((num / den).sqrt());
            steps += 1;
        }
    }
    ensure(worst < 1e-6, || format!("relative error {worst:e}"))?;
    within(Duration::from_secs(10), started)?;
    Ok(format!("100 matrices, {steps} steps, worst relative Frobenius error {worst:.2e}, {:.1?}", started.elapsed()))
}

fn c2_adjustment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_adj: f64 = 0.0;
    let mut worst_drop: f64 = 0.0;
    for trial in 0..100 {
        let (d_in, d_out) = (16, 8);
        let x = gaussian(&mut rng, 48, d_in);
        let h = x.t_matmul(&x).unwrap();
        let w = gaussian(&mut rng, d_in, d_out);
        let group = if trial % 2 == 0 { 1 } else { 2 };
        let grouping = UnitGrouping::new(GroupKind::FfnGroup, group, d_in).unwrap();
        let n = grouping.n_units;
        let points: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let stats = ActivationStats { h: h.clone(), row_count: 48 };
        let traj = prune_progressive(&w, &stats, &grouping, &points, 0.01).map_err(|e| e.to_string())?;
        let lambda = build_hessian_state(&w, &h, 0.01).unwrap().lambda;
        let hd = |i: usize, k: usize| h[(i, k)] + if i == k { lambda } else { 0.0 };
        // step by step: zero the removed rows, then W_A += H⁻¹_AA · G_A with
        // G = (H + λI)(W₀ − W) the reconstruction gradient at the current W
        let mut cur: Vec<Vec<f64>> = (0..d_in).map(|r| w.row(r).to_vec()).collect();
        let mut active: Vec<usize> = (0..d_in).collect();
        let mut prev = 0.0;
        for (k, s) in traj.snapshots.iter().enumerate() {
            if k > 0 {
                let u = traj.order[k - 1];
                for r in u * group..(u + 1) * group {
                    cur[r].fill(0.0);
                }
                active.retain(|r| !(u * group..(u + 1) * group).contains(r));
                let inv = gj_inverse(&damped_block(&h, lambda, &active));
                let g: Vec<Vec<f64>> = active
                    .iter()
                    .map(|&i| {
                        (0..d_out)
                            .map(|c| (0..d_in).map(|j| hd(i, j) * (w[(j, c)] - cur[j][c])).sum())
                            .collect()
                    })
                    .collect();
                for (a, &i) in active.iter().enumerate() {
                    for c in 0..d_out {
                        cur[i][c] += (0..active.len()).map(|b| inv[a][b] * g[b][c]).sum::<f64>();
                    }
                }
            }
            for (r, row) in cur.iter().enumerate() {
                for (c, want) in row.iter().enumerate() {
                    worst_adj = worst_adj.max((s.weights[(r, c)] - want).abs() / want.abs().max(1.0));
                }
            }
            let err = reconstruction_error(&h, &w, &s.weights).unwrap();
            worst_drop = worst_drop.max((prev - err) / prev.max(1.0));
            prev = err;
        }
    }
    ensure(worst_adj < 1e-9, || format!("adjustment error {worst_adj:e}"))?;
    ensure(worst_drop <= 1e-12, || format!("reconstruction error decreased by {worst_drop:e}"))?;
    Ok(format!("100 trials, worst adjustment error {worst_adj:.2e}, reconstruction error nondecreasing"))
}

fn c3_nesting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = [0.25, 0.5, 0.75];
    let mut modules = 0;
    for trial in 0..30 {
        let (grouping, d_out) = match trial % 3 {
            0 => (UnitGrouping::heads(8, 4), 16),
            1 => (UnitGrouping::new(GroupKind::FfnGroup, 4, 64).unwrap(), 16),
            _ => (UnitGrouping::new(GroupKind::FfnGroup, 1, 12).unwrap(), 5),
        };
        let d = grouping.d_in();
        let h = random_spd(&mut rng, d);
        let w = gaussian(&mut rng, d, d_out);
        let stats = ActivationStats { h, row_count: 2 * d };
        let joint = prune_progressive(&w, &stats, &grouping, &points, 0.01).map_err(|e| e.to_string())?;
        for (i, &p) in points.iter().enumerate() {
            let alone = prune_progressive(&w, &stats, &grouping, &[p], 0.01).map_err(|e| e.to_string())?;
            let (a, b) = (&joint.snapshots[i], &alone.snapshots[0]);
            ensure(a.retained_units == b.retained_units && a.weights == b.weights, || {
                format!("module {trial} differs at {p}")
            })?;
        }
        let sets: Vec<_> = joint.snapshots.iter().map(|s| &s.retained_units).collect();
        ensure(sets.windows(2).all(|w| w[1].iter().all(|u| w[0].contains(u))), || {
            format!("module {trial}: retained sets not nested")
        })?;
        modules += 1;
    }
    Ok(format!("{modules} modules, snapshots identical to independent runs"))
}

fn c4_ladders() -> Outcome {
    let a = generate_ladder(0.5, 0.125, 9, 64).map_err(|e| e.to_string())?;
    let want_a: Vec<f64> = (0..9).map(|e| e as f64 * 0.125).collect();
    ensure(a.nominal == want_a, || format!("(0.5, 0.125) gave {:?}", a.nominal))?;
    let b = generate_ladder(0.375, 0.0625, 9, 64).map_err(|e| e.to_string())?;
    let want_b: Vec<f64> = (0..9).map(|e| 0.125 + e as f64 * 0.0625).collect();
    ensure(b.nominal == want_b, || format!("(0.375, 0.0625) gave {:?}", b.nominal))?;
    ensure(b.realized == want_b, || format!("realized {:?}", b.realized))?;
    let s = interval_schedule(0.125, 4);
    ensure(s == [0.125, 0.0625, 0.03125, 0.015625], || format!("schedule {s:?}"))?;
    Ok("both ladders and the T=4 interval schedule match exactly".into())
}

struct Toy {
    dense: Model64,
    corpus: TokenCorpus,
}

/// The default desk-scale toy model with a corpus sampled from itself.
fn toy(seed: u64, n_seqs: usize) -> Toy {
    let dense = random_model::<f64>(&default_toy_config(), seed);
    let ids = sample_corpus(&dense, n_seqs, SEQ, 1.0, seed + 100).unwrap();
    Toy {
        corpus: TokenCorpus::new(ids, SEQ, "toy").unwrap(),
        dense,
    }
}

const SEQ: usize = 128;

fn c5_accumulation() -> Outcome {
    let started = Instant::now();
    let modes = [ErrorAccum::Expectation, ErrorAccum::Uniform, ErrorAccum::Random, ErrorAccum::None];
    let mut lines = Vec::new();
    let mut bad = 0;
    for seed in 1..=3 {
        // a 64K-token calibration corpus, the toy default; builds use 8192 of it
        let t = toy(seed, 512);
        let batches = sample_batches(&t.corpus, 8192, 1).unwrap();
        let seqs = sample_batches(&t.corpus, 2048, 2).unwrap();
        let ladders = ladders_for(&t.dense, &[0.5; 8], 0.125, 9, 16).map_err(|e| e.to_string())?;
        let space = PlanSpace::new(&t.dense.config, ladders.clone(), 16, 0.5).unwrap();
        let mut kl = Vec::new();
        for mode in modes {
            let dir = tempfile::tempdir().unwrap();
            let cfg = SupernetConfig { error_accum: mode, seed, ..SupernetConfig::default() };
            let built = build_supernet(&t.dense, &batches, &ladders, &cfg, dir.path()).map_err(|e| e.to_string())?;
            let ev = Evaluator::new(&t.dense, &built.store, seqs.clone(), SearchMetric::KlLogits).unwrap();
            kl.push(ev.fitness(&space.center_plan(), 2048).map_err(|e| e.to_string())?);
        }
        let ok = kl[0] < kl[3] && kl[0] < kl[1] && kl[0] < kl[2];
        bad += usize::from(!ok);
        lines.push(format!(
            "seed {seed} {:.4}/{:.4}/{:.4}/{:.4}{}",
            kl[0],
            kl[1],
            kl[2],
            kl[3],
            if ok { "" } else { " (out of order)" }
        ));
    }
    let report = format!("KL expectation/uniform/random/none: {}", lines.join(", "));
    ensure(bad == 0, || report.clone())?;
    within(Duration::from_secs(300), started)?;
    Ok(format!("{report}; {:.1?}", started.elapsed()))
}

/// Search result and exhaustive optimum over the pair-shift-reachable
/// balanced plans of two MHA sublayers with three-point ladders.
fn exhaustive_case(seed: u64) -> Result<(SparsityPlan, SparsityPlan, SparsityPlan), String> {
    let dense = random_model::<f64>(&tiny_config(), seed);
    let c = dense.config.clone();
    let ids = sample_corpus(&dense, 16, 16, 1.0, seed + 1).unwrap();
    let seqs: Vec<Vec<u32>> = ids.chunks(16).map(<[u32]>::to_vec).collect();
    let ladders: Vec<SparsityLadder> = c
        .sublayers()
        .map(|id| match id.kind {
            SublayerKind::Mha => generate_ladder(0.5, 0.25, 3, c.n_heads).unwrap(),
            SublayerKind::Ffn => generate_ladder(0.5, 0.25, 1, c.d_ffn / 8).unwrap(),
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let cfg = SupernetConfig { ffn_group_size: 8, seed, ..SupernetConfig::default() };
    let built = build_supernet(&dense, &seqs[..8], &ladders, &cfg, dir.path()).map_err(|e| e.to_string())?;
    let space = PlanSpace::new(&c, ladders, 8, 0.5).unwrap();
    let ev = Evaluator::new(&dense, &built.store, seqs[8..].to_vec(), SearchMetric::KlLogits).unwrap();
    let budget = 128;
    let mut balanced = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            let plan = SparsityPlan::new(vec![a, 0, b, 0]);
            // same-kind pair shifts keep the index sum
            if a + b == 2 && space.is_balanced(&plan) {
                balanced.push((ev.fitness(&plan, budget).unwrap(), plan));
            }
        }
    }
    ensure(balanced.len() <= 3, || format!("{} balanced plans", balanced.len()))?;
    let optimum = balanced.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1.clone();
    let sc = SearchConfig {
        generations: 10,
        offspring: 4,
        stages: vec![Stage { survivors: 5, budget }],
        metric: SearchMetric::KlLogits,
        seed,
    };
    let r = evolutionary_search(&ev, &space, &space.center_plan(), &sc).map_err(|e| e.to_string())?;
    Ok((r.best, optimum, space.center_plan()))
}

fn c6_search() -> Outcome {
    let mut moved = 0;
    let cases = 8;
    for seed in 0..cases {
        let (best, optimum, center) = exhaustive_case(seed)?;
        ensure(best == optimum, || format!("seed {seed}: search returned {best}, optimum {optimum}"))?;
        moved += usize::from(optimum != center);
    }

    // 50 generations on the 4-layer toy
    let t = toy(1, 96);
    let batches = sample_batches(&t.corpus, 8192, 1).unwrap();
    let seqs = sample_batches(&t.corpus, 2048, 2).unwrap();
    let ladders = ladders_for(&t.dense, &[0.5; 8], 0.125, 9, 16).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let built = build_supernet(&t.dense, &batches, &ladders, &SupernetConfig::default(), dir.path())
        .map_err(|e| e.to_string())?;
    let space = PlanSpace::new(&t.dense.config, ladders, 16, 0.5).unwrap();
    let ev = Evaluator::new(&t.dense, &built.store, seqs, SearchMetric::KlLogits).unwrap();
    let sc = SearchConfig {
        generations: 50,
        offspring: 8,
        stages: vec![Stage { survivors: 9, budget: 512 }, Stage { survivors: 2, budget: 2048 }],
        metric: SearchMetric::KlLogits,
        seed: 11,
    };
    let r = evolutionary_search(&ev, &space, &space.center_plan(), &sc).map_err(|e| e.to_string())?;
    let fits: Vec<f64> = r.trace.iter().map(|e| e.incumbent_fitness).collect();
    ensure(fits.windows(2).all(|w| w[1] <= w[0]), || format!("trace increases: {fits:?}"))?;
    // replay every offspring from the recorded incumbents
    let mut candidates = 0;
    let mut worst: f64 = 0.0;
    for g in 1..=sc.generations {
        let parent = SparsityPlan::new(r.trace[g - 1].plan.clone());
        for i in 0..sc.offspring {
            let m = mutate(&space, &parent, &mut candidate_rng(sc.seed, g, i));
            worst = worst.max((space.overall_sparsity(&m.plan) - 0.5).abs());
            candidates += 1;
        }
    }
    ensure(worst <= space.tolerance, || format!("candidate off target by {worst}"))?;
    Ok(format!(
        "exhaustive optimum found on {cases} supernets ({moved} away from the start); 50-generation trace {:.4} -> {:.4} non-increasing; {candidates} candidates within {:.4} of target (max {worst:.4})",
        fits[0],
        fits[50],
        space.tolerance
    ))
}

fn run_config(seed: u64, out: &Path) -> RunConfig {
    RunConfig {
        seq_len: SEQ,
        calibration_tokens: 8192,
        seed,
        out: out.to_path_buf(),
        search: SearchConfig {
            generations: 30,
            offspring: 8,
            stages: vec![Stage { survivors: 9, budget: 512 }, Stage { survivors: 2, budget: 2048 }],
            ..SearchConfig::default()
        },
        ..RunConfig::default()
    }
}

fn heldout_kl(dense: &Model64, model: &Model64, held: &TokenCorpus) -> f64 {
    let windows: Vec<&[u32]> = held.ids.chunks_exact(SEQ).collect();
    windows
        .iter()
        .map(|w| kl_to_dense(&dense.logits(w).unwrap(), &model.logits(w).unwrap()).unwrap())
        .sum::<f64>()
        / windows.len() as f64
}

fn c7_end_to_end() -> Outcome {
    let started = Instant::now();
    let mut lines = Vec::new();
    for seed in 1..=3 {
        let t = toy(seed, 128);
        let held = TokenCorpus::new(sample_corpus(&t.dense, 32, SEQ, 1.0, seed + 200).unwrap(), SEQ, "held").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = run_config(seed, dir.path());
        let full = run_iterations(&t.dense, &t.corpus, &cfg).map_err(|e| e.to_string())?;
        let base = run_iterations(&t.dense, &t.corpus, &cfg.isotropic()).map_err(|e| e.to_string())?;
        let (kf, kb) = (heldout_kl(&t.dense, &full.model, &held), heldout_kl(&t.dense, &base.model, &held));
        let pf = perplexity(&full.model, &held, SEQ).unwrap();
        let pb = perplexity(&base.model, &held, SEQ).unwrap();
        ensure(kf < kb && pf < pb, || format!("seed {seed}: KL {kf:.4} vs {kb:.4}, ppl {pf:.2} vs {pb:.2}"))?;
        let inc: Vec<f64> = full.reports.iter().map(|r| r.incumbent_fitness).collect();
        ensure(full.reports.len() == 4 && inc.windows(2).all(|w| w[1] <= w[0]), || {
            format!("seed {seed}: incumbents {inc:?}")
        })?;
        lines.push(format!("seed {seed} KL {kf:.3} vs {kb:.3}, ppl {pf:.1} vs {pb:.1}"));
    }
    within(Duration::from_secs(900), started)?;
    Ok(format!("T=4 vs isotropic: {}; {:.1?}", lines.join("; "), started.elapsed()))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn c8_determinism() -> Outcome {
    let t = toy(4, 96);
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("dense");
    save_checkpoint(&ckpt, &t.dense.config, &t.dense.weights.cast::<f32>()).unwrap();
    write_corpus_bin(&dir.path().join("calib.bin"), &t.corpus.ids).unwrap();
    let run = |name: &str| {
        let cfg = RunConfig {
            checkpoint: ckpt.clone(),
            calibration_corpus: dir.path().join("calib.bin"),
            ..run_config(4, &dir.path().join(name))
        };
        run_tyr(&cfg).map_err(|e| e.to_string())
    };
    run("a")?;
    run("b")?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let model = dir_bytes(&a.join("model"));
    ensure(model == dir_bytes(&b.join("model")), || "checkpoints differ".into())?;
    for t in 1..=4 {
        let name = format!("trace_iter{t}.jsonl");
        ensure(fs::read(a.join(&name)).unwrap() == fs::read(b.join(&name)).unwrap(), || {
            format!("{name} differs")
        })?;
    }
    let bytes: usize = model.iter().map(|(_, b)| b.len()).sum();
    Ok(format!("checkpoints ({bytes} bytes) and 4 traces byte-identical"))
}

fn c9_degenerate() -> Outcome {
    let dense = random_model::<f64>(&small_config(), 9);
    let c = dense.config.clone();
    let ids = sample_corpus(&dense, 16, 64, 1.0, 10).unwrap();
    let seqs: Vec<Vec<u32>> = ids.chunks(64).map(<[u32]>::to_vec).collect();
    let ladders = |points: &[f64]| -> Vec<SparsityLadder> {
        c.sublayers()
            .map(|id| {
                let units = match id.kind {
                    SublayerKind::Mha => c.n_heads,
                    SublayerKind::Ffn => c.d_ffn / 16,
                };
                let mut l = generate_ladder(0.5, 0.5, 1, units).unwrap();
                l.nominal = points.to_vec();
                l.pruned_units = points.iter().map(|s| (s * units as f64).round() as usize).collect();
                l.realized = l.pruned_units.iter().map(|&u| u as f64 / units as f64).collect();
                l
            })
            .collect()
    };
    let dir = tempfile::tempdir().unwrap();
    let points = [0.0, 0.25, 0.5, 0.75, 1.0];
    let built = build_supernet(&dense, &seqs[..8], &ladders(&points), &SupernetConfig::default(), dir.path())
        .map_err(|e| e.to_string())?;
    let ev = Evaluator::new(&dense, &built.store, seqs[8..].to_vec(), SearchMetric::KlLogits).unwrap();
    let n = c.n_sublayers();
    let probe = &seqs[8];

    let zero = ev.assemble(&SparsityPlan::new(vec![0; n])).map_err(|e| e.to_string())?;
    let d0 = zero.logits(probe).unwrap().max_abs_diff(&dense.logits(probe).unwrap());
    ensure(d0 < 1e-6, || format!("sparsity-0 logits differ by {d0:e}"))?;

    let one = ev.assemble(&SparsityPlan::new(vec![4; n])).map_err(|e| e.to_string())?;
    let x = dense.embed(probe).unwrap();
    let residual = rms_norm(&x, &dense.weights.final_norm, c.norm_epsilon)
        .matmul(&dense.weights.lm_head)
        .unwrap();
    let d1 = one.logits(probe).unwrap().max_abs_diff(&residual);
    ensure(d1 < 1e-9, || format!("sparsity-1 logits differ from residual-only by {d1:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let plan = SparsityPlan::new((0..n).map(|_| rng.random_range(0..points.len())).collect());
        let structures: Vec<_> = c
            .sublayers()
            .map(|id| built.store.load_structure::<f64>(StructureKey { sublayer: id, index: plan.index(id) }).unwrap())
            .collect();
        let masked = masked_model(&dense, &structures).unwrap();
        let compact = ev.assemble(&plan).unwrap();
        for s in &seqs[8..10] {
            worst = worst.max(compact.logits(s).unwrap().max_abs_diff(&masked.logits(s).unwrap()));
        }
    }
    ensure(worst < 1e-6, || format!("compacted vs masked differ by {worst:e}"))?;
    Ok(format!("sparsity-0 diff {d0:.1e}, sparsity-1 diff {d1:.1e}, compacted vs masked over 20 plans {worst:.1e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 inverse-hessian maintenance", c1_inverse_maintenance),
        ("2 adjustment and monotone error", c2_adjustment),
        ("3 trajectory nesting", c3_nesting),
        ("4 ladders and interval schedule", c4_ladders),
        ("5 expectation accumulation ordering", c5_accumulation),
        ("6 search soundness", c6_search),
        ("7 end-to-end improvement", c7_end_to_end),
        ("8 determinism", c8_determinism),
        ("9 degenerate correctness", c9_degenerate),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{:.1?}]", started.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why} [{:.1?}]", started.elapsed());
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
