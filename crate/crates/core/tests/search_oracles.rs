use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tyr_core::model::{masked_model, Model, SublayerKind};
use tyr_core::search::{
    evolutionary_search, read_trace, select, write_trace, Candidate, Evaluator, PlanSpace,
    SearchConfig, SearchMetric, SparsityPlan, Stage,
};
use tyr_core::supernet::{
    build_supernet, generate_ladder, BuildOutcome, ErrorAccum, SparsityLadder, StructureKey,
    SupernetConfig,
};
use tyr_core::toy::{random_model, sample_corpus, small_config, tiny_config};

const GROUP: usize = 8;

struct Fixture {
    dense: Model<f64>,
    built: BuildOutcome,
    ladders: Vec<SparsityLadder>,
    seqs: Vec<Vec<u32>>,
    _dir: tempfile::TempDir,
}

/// MHA ladders of `mha_size` points around 0.5, FFN ladders of `ffn_size`.
fn fixture(seed: u64, mha_size: usize, ffn_size: usize) -> Fixture {
    let dense = random_model::<f64>(&tiny_config(), seed);
    let c = &dense.config;
    let ids = sample_corpus(&dense, 12, 16, 1.0, seed + 50).unwrap();
    let seqs: Vec<Vec<u32>> = ids.chunks(16).map(<[u32]>::to_vec).collect();
    let ladders: Vec<SparsityLadder> = c
        .sublayers()
        .map(|id| match id.kind {
            SublayerKind::Mha => generate_ladder(0.5, 0.25, mha_size, c.n_heads).unwrap(),
            SublayerKind::Ffn => generate_ladder(0.5, 0.25, ffn_size, c.d_ffn / GROUP).unwrap(),
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let built = build_supernet(
        &dense,
        &seqs[..6],
        &ladders,
        &SupernetConfig {
            ffn_group_size: GROUP,
            error_accum: ErrorAccum::Expectation,
            seed,
            ..SupernetConfig::default()
        },
        dir.path(),
    )
    .unwrap();
    Fixture {
        dense,
        built,
        ladders,
        seqs: seqs[6..].to_vec(),
        _dir: dir,
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Mean token KL(dense ‖ plan) of the masked dense-shape model on `seqs`.
fn oracle_kl(f: &Fixture, plan: &SparsityPlan, seqs: &[Vec<u32>]) -> f64 {
    let structures: Vec<_> = f
        .dense
        .config
        .sublayers()
        .map(|id| {
            f.built
                .store
                .load_structure::<f64>(StructureKey { sublayer: id, index: plan.index(id) })
                .unwrap()
        })
        .collect();
    let masked = masked_model(&f.dense, &structures).unwrap();
    let (mut total, mut n) = (0.0, 0);
    for s in seqs {
        let p = f.dense.logits(s).unwrap();
        let q = masked.logits(s).unwrap();
        for t in 0..s.len() {
            let (pp, qq) = (softmax(p.row(t)), softmax(q.row(t)));
            total += pp.iter().zip(&qq).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn fitness_matches_masked_model_kl() {
    let f = fixture(21, 3, 3);
    let ev = Evaluator::new(&f.dense, &f.built.store, f.seqs.clone(), SearchMetric::KlLogits).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let plan = SparsityPlan::new((0..4).map(|_| rng.random_range(0..3)).collect());
        for budget in [16usize, 40, 96] {
            let n = budget.div_ceil(16);
            let got = ev.fitness(&plan, budget).unwrap();
            let want = oracle_kl(&f, &plan, &f.seqs[..n]);
            assert!((got - want).abs() < 1e-9, "{plan} @ {budget}: {got} vs {want}");
        }
    }
}

#[test]
fn fitness_cache_does_not_change_values() {
    let f = fixture(22, 3, 1);
    let ev = Evaluator::new(&f.dense, &f.built.store, f.seqs.clone(), SearchMetric::KlHidden).unwrap();
    let plan = SparsityPlan::new(vec![0, 0, 2, 0]);
    let a = ev.fitness(&plan, 64).unwrap();
    let runs = ev.forward_count();
    assert_eq!(ev.fitness(&plan, 64).unwrap(), a);
    assert_eq!(ev.forward_count(), runs);
    // the hidden-state term only adds to the logit KL
    let kl = Evaluator::new(&f.dense, &f.built.store, f.seqs.clone(), SearchMetric::KlLogits).unwrap();
    assert!(a >= kl.fitness(&plan, 64).unwrap());
}

#[test]
fn search_finds_exhaustive_optimum() {
    for seed in [31, 32, 33] {
        let f = fixture(seed, 3, 1);
        let space = PlanSpace::new(&f.dense.config, f.ladders.clone(), GROUP, 0.5).unwrap();
        let ev = Evaluator::new(&f.dense, &f.built.store, f.seqs.clone(), SearchMetric::KlLogits).unwrap();
        let budget = 96;
        // pair shifts between the two MHA sublayers keep the index sum at 2
        let mut best = (f64::INFINITY, SparsityPlan::new(vec![]));
        for a in 0..3 {
            for b in 0..3 {
                let plan = SparsityPlan::new(vec![a, 0, b, 0]);
                if a + b != 2 || !space.is_balanced(&plan) {
                    continue;
                }
                let fit = oracle_kl(&f, &plan, &f.seqs);
                if fit < best.0 {
                    best = (fit, plan);
                }
            }
        }
        let cfg = SearchConfig {
            generations: 8,
            offspring: 4,
            stages: vec![Stage { survivors: 5, budget }],
            metric: SearchMetric::KlLogits,
            seed,
        };
        let r = evolutionary_search(&ev, &space, &space.center_plan(), &cfg).unwrap();
        assert_eq!(r.best, best.1, "seed {seed}");
        assert!((r.fitness - best.0).abs() < 1e-9);
    }
}

#[test]
fn trace_is_deterministic_monotone_and_conserves_sparsity() {
    let f = fixture(41, 5, 3);
    let space = PlanSpace::new(&f.dense.config, f.ladders.clone(), GROUP, 0.5).unwrap();
    let cfg = SearchConfig {
        generations: 12,
        offspring: 6,
        stages: vec![Stage { survivors: 4, budget: 32 }, Stage { survivors: 2, budget: 96 }],
        metric: SearchMetric::KlLogits,
        seed: 9,
    };
    let run = || {
        let ev = Evaluator::new(&f.dense, &f.built.store, f.seqs.clone(), SearchMetric::KlLogits).unwrap();
        evolutionary_search(&ev, &space, &space.center_plan(), &cfg).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.best, b.best);
    assert_eq!(a.trace.len(), cfg.generations + 1);
    for w in a.trace.windows(2) {
        assert!(w[1].incumbent_fitness <= w[0].incumbent_fitness);
    }
    for e in &a.trace {
        assert!((e.realized_sparsity - 0.5).abs() <= space.tolerance);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    write_trace(&path, &a.trace).unwrap();
    assert_eq!(read_trace(&path).unwrap(), a.trace);
}

#[test]
fn plan_sparsity_matches_compacted_parameter_count() {
    let f = fixture(51, 5, 3);
    let space = PlanSpace::new(&f.dense.config, f.ladders.clone(), GROUP, 0.5).unwrap();
    let ev = Evaluator::new(&f.dense, &f.built.store, f.seqs.clone(), SearchMetric::KlLogits).unwrap();
    let dense_params = f.dense.weights.backbone_linear_params();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let plan = SparsityPlan::new(space.ladders.iter().map(|l| rng.random_range(0..l.len())).collect());
        let compact = ev.assemble(&plan).unwrap();
        let removed = (dense_params - compact.weights.backbone_linear_params()) as f64;
        assert!((removed / space.total_params - space.overall_sparsity(&plan)).abs() < 1e-12);
    }
}

#[test]
fn selection_protects_incumbent_and_merges_duplicates() {
    let f = fixture(61, 3, 1);
    let ev = Evaluator::new(&f.dense, &f.built.store, f.seqs.clone(), SearchMetric::KlLogits).unwrap();
    let p = |a, b| SparsityPlan::new(vec![a, 0, b, 0]);
    let incumbent = p(1, 1);
    let candidates = vec![
        Candidate::new(p(0, 2), 1),
        Candidate::new(p(2, 0), 2),
        Candidate::new(p(0, 2), 3),
        Candidate::new(incumbent.clone(), 7),
    ];
    let stages = [Stage { survivors: 2, budget: 32 }, Stage { survivors: 1, budget: 96 }];
    let sel = select(&ev, candidates, &stages, Some(&incumbent)).unwrap();
    // the first stage takes the two oldest distinct plans plus the incumbent
    let first: Vec<_> = sel.stages[0].iter().map(|c| c.plan.clone()).collect();
    assert_eq!(first.len(), 3);
    assert!(first.contains(&incumbent));
    assert!(first.contains(&p(0, 2)) && first.contains(&p(2, 0)));
    assert_eq!(sel.stages[0].iter().find(|c| c.plan == p(0, 2)).unwrap().lineage, 1);
    for c in &sel.stages[0] {
        assert_eq!(c.fitness.unwrap(), ev.fitness(&c.plan, 32).unwrap());
    }
    assert!(sel.stages[1].iter().any(|c| c.plan == incumbent));
    let best = sel.stages[1]
        .iter()
        .map(|c| ev.fitness(&c.plan, 96).unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(sel.best.fitness.unwrap(), best);
}

#[test]
fn small_model_search_improves_on_center() {
    let dense = random_model::<f64>(&small_config(), 71);
    let ids = sample_corpus(&dense, 24, 64, 1.0, 72).unwrap();
    let seqs: Vec<Vec<u32>> = ids.chunks(64).map(<[u32]>::to_vec).collect();
    let c = &dense.config;
    let ladders: Vec<_> = c
        .sublayers()
        .map(|id| {
            let units = match id.kind {
                SublayerKind::Mha => c.n_heads,
                SublayerKind::Ffn => c.d_ffn / 16,
            };
            generate_ladder(0.5, 0.125, 5, units).unwrap()
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let built = build_supernet(&dense, &seqs[..16], &ladders, &SupernetConfig::default(), dir.path()).unwrap();
    let space = PlanSpace::new(c, ladders, 16, 0.5).unwrap();
    let ev = Evaluator::new(&dense, &built.store, seqs[16..].to_vec(), SearchMetric::KlLogits).unwrap();
    let cfg = SearchConfig {
        generations: 10,
        offspring: 6,
        stages: vec![Stage { survivors: 7, budget: 128 }, Stage { survivors: 2, budget: 512 }],
        metric: SearchMetric::KlLogits,
        seed: 1,
    };
    let r = evolutionary_search(&ev, &space, &space.center_plan(), &cfg).unwrap();
    assert!(r.fitness <= r.trace[0].incumbent_fitness);
    assert!(space.is_balanced(&r.best));
}
