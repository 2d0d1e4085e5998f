//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

#[path = "../common/mod.rs"]
mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::grad::{self, CASES, SEEDS, TOLERANCE};
use common::oracles;
use common::stats::{chi2_p, within_binomial, ALPHA};
use nasrec_core::data::{split, synth_generate, PlantedStructure, SplitSpec, Splits, SynthSpec};
use nasrec_core::evolution::{evolve, EvoConfig, MutationMode};
use nasrec_core::metrics::{auc, logloss, LOGLOSS_EPS};
use nasrec_core::network::{ExecMode, Supernet};
use nasrec_core::operators::{balanced_rows, OperatorKind};
use nasrec_core::rank_eval::{assemble_report, kendall_tau, pearson_rho, scratch_scores, shared_scores};
use nasrec_core::sampler::{sample, warmup_p, SamplingStrategy, WarmupSchedule};
use nasrec_core::search_space::{
    cardinality, enumerate_genotypes, flop_count, param_count, BlockGenotype, CountingConvention, Genotype, OpChoice,
    SupernetConfig,
};
use nasrec_core::tensor::Tensor;
use nasrec_core::trainer::{finetune_last_fc, train_from_scratch, train_supernet, TrainConfig};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    for (name, case) in CASES {
        let e = grad::run(*case);
        ensure(e < TOLERANCE, || format!("{name}: relative error {e:.2e}"))?;
        worst = worst.max(e);
    }
    for seed in 0..SEEDS {
        for mode in [ExecMode::Sliced, ExecMode::Masked] {
            let e = grad::network(seed, mode, 4);
            ensure(e < TOLERANCE, || format!("network {mode:?} seed {seed}: {e:.2e}"))?;
            worst = worst.max(e);
        }
    }
    Ok(format!("{} cases x {SEEDS} seeds + network, worst {worst:.1e}", CASES.len()))
}

/// Random values in every tensor, so biases and norm parameters are exercised.
fn scramble(net: &mut Supernet<f32>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = net.store.ids().collect();
    for id in ids {
        let t = net.store.get_mut(id);
        let shape = t.shape().to_vec();
        let fan = shape[0] as f64;
        *t = Tensor::uniform(&shape, (3.0 / fan).sqrt(), &mut rng);
    }
}

fn c2_weight_sharing() -> Outcome {
    let mut cfg = SupernetConfig::preset("nasrec_full").unwrap();
    cfg.num_blocks = 3;
    cfg.vocab_sizes = vec![50; 26];
    let mut net = Supernet::<f32>::new(&cfg, None, 0).map_err(|e| e.to_string())?;
    scramble(&mut net, 1);
    let ds = synth_generate(&SynthSpec {
        n_rows: 32,
        num_dense: 13,
        num_cat: 26,
        vocab: 50,
        structure: PlantedStructure::PairwiseInteraction,
        seed: 2,
    })
    .unwrap();
    let batch = ds.batch(&(0..32).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f32 = 0.0;
    for i in 0..50 {
        let g = sample(SamplingStrategy::AnyOpAnyConn, &cfg, &mut rng);
        let masked = {
            let mut graph = net.graph().no_grad();
            let z = net.forward(&mut graph, &g, &batch, ExecMode::Masked).map_err(|e| e.to_string())?;
            graph.value(z).to_vec()
        };
        let sub = net.extract_subnet(&g).map_err(|e| e.to_string())?;
        let alone = {
            let mut graph = sub.graph().no_grad();
            let z = sub.forward(&mut graph, &batch).map_err(|e| e.to_string())?;
            graph.value(z).to_vec()
        };
        for (a, b) in masked.iter().zip(&alone) {
            let d = (a - b).abs();
            worst = worst.max(d);
            ensure(d <= 1e-6, || format!("genotype {i}: {a} vs {b}"))?;
        }
    }
    Ok(format!("50 genotypes x 32 rows, max |diff| {worst:.1e}"))
}

fn c3_cardinality() -> Outcome {
    let conv = CountingConvention::PerBranchDims;
    for n in 1..=7 {
        let mut full = SupernetConfig::preset("nasrec_full").unwrap();
        let mut small = SupernetConfig::preset("nasrec_small").unwrap();
        full.num_blocks = n;
        small.num_blocks = n;
        let (f, s) = (cardinality(&full, conv), cardinality(&small, conv));
        ensure(
            &f % &s == BigUint::from(0u32) && &f / &s == BigUint::from(15u32).pow(n as u32),
            || format!("N={n}: {f} / {s}"),
        )?;
    }
    let mut one = SupernetConfig::preset("nasrec_full").unwrap();
    one.num_blocks = 1;
    let mut counts = Vec::new();
    for c in [CountingConvention::PerBranchDims, CountingConvention::PerOperatorDims] {
        let all = enumerate_genotypes(&one, c, false);
        let mut uniq = all.clone();
        uniq.sort();
        uniq.dedup();
        ensure(
            uniq.len() == all.len() && BigUint::from(all.len()) == cardinality(&one, c),
            || format!("N=1 {c:?}: enumerated {} vs {}", all.len(), cardinality(&one, c)),
        )?;
        counts.push(all.len());
    }
    let mut seven = SupernetConfig::preset("nasrec_full").unwrap();
    seven.num_blocks = 7;
    let big = cardinality(&seven, CountingConvention::PerOperatorDims);
    Ok(format!(
        "15^N for N=1..7; N=1 enumerated {counts:?}; N=7 full = {:.2e}",
        num_traits::ToPrimitive::to_f64(&big).unwrap_or(f64::INFINITY)
    ))
}

/// One block whose only dense operator is Dot-Product over `n_s` raw embeddings.
fn dp_space(n_s: usize, dim_d: usize, balanced: bool) -> (SupernetConfig, Genotype) {
    let cfg = SupernetConfig {
        num_blocks: 1,
        dense_ops: vec![OperatorKind::DotProduct],
        sparse_ops: vec![OperatorKind::EmbedFC],
        dense_dims: vec![dim_d],
        sparse_dims: vec![8],
        num_dense_features: 13,
        vocab_sizes: vec![2; n_s],
        embedding_dim: 16,
        balanced_dot_product: balanced,
        allow_project_concat: false,
        layer_norm: true,
    };
    let g = Genotype::new(vec![BlockGenotype {
        dense_ops: vec![OpChoice {
            kind: OperatorKind::DotProduct,
            dim: dim_d,
        }],
        sparse_ops: vec![OpChoice {
            kind: OperatorKind::EmbedFC,
            dim: 8,
        }],
        dense_conns: vec![0],
        sparse_conns: vec![0],
        project_concat: false,
    }]);
    (cfg, g)
}

fn layer(cfg: &SupernetConfig, g: &Genotype, name: &str) -> (u64, u64) {
    let r = param_count(g, cfg, None).unwrap();
    r.audit
        .iter()
        .find(|a| a.layer == name)
        .map_or((0, 0), |a| (a.weights, a.biases))
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn c4_balancing() -> Outcome {
    let d = 512usize;
    let t = balanced_rows(d);
    ensure(t == 32, || format!("projection target {t}"))?;
    let grid: Vec<usize> = (3..=9).map(|p| 1usize << p).collect();
    let (mut unbal, mut bal) = (Vec::new(), Vec::new());
    for &n_s in grid.iter().chain([&448]) {
        let (cfg, g) = dp_space(n_s, d, false);
        let (w, _) = layer(&cfg, &g, "b1.dp.out");
        let k = (n_s + 1) as u64;
        ensure(w == k * (k - 1) / 2 * d as u64, || format!("unbalanced N_s={n_s}: {w}"))?;
        let half_square = (n_s * n_s * d / 2) as u64;
        ensure(w - half_square == (n_s * d / 2) as u64, || {
            format!("N_s={n_s}: {w} vs N_s^2 d/2 = {half_square}")
        })?;

        let (cfg, g) = dp_space(n_s, d, true);
        let (bw, bb) = layer(&cfg, &g, "b1.dp.bal");
        let (ow, ob) = layer(&cfg, &g, "b1.dp.out");
        let total = bw + bb + ow + ob;
        let bound = (d * d + n_s * t) as u64;
        ensure(total <= bound, || format!("balanced N_s={n_s}: {total} > {bound}"))?;
        if n_s == 448 {
            ensure(w > 50_000_000, || format!("unbalanced at 448: {w}"))?;
        } else {
            unbal.push(w as f64);
            bal.push(bw as f64);
        }
    }
    let x: Vec<f64> = grid.iter().map(|&v| v as f64).collect();
    let (su, sb) = (slope(&x, &unbal), slope(&x, &bal));
    ensure((su - 2.0).abs() <= 0.1, || format!("unbalanced slope {su:.3}"))?;
    ensure((sb - 1.0).abs() <= 0.1, || format!("balanced slope {sb:.3}"))?;
    let (cfg, g) = dp_space(448, d, false);
    Ok(format!(
        "unbalanced at N_s=448: {} weights; slopes {su:.3} / {sb:.3}",
        layer(&cfg, &g, "b1.dp.out").0
    ))
}

fn c5_sampling() -> Outcome {
    let cfg = SupernetConfig::preset("nasrec_full").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws: Vec<Genotype> = (0..10_000)
        .map(|_| sample(SamplingStrategy::SingleOpAnyConn, &cfg, &mut rng))
        .collect();
    for g in &draws {
        ensure(
            g.blocks.iter().all(|b| b.dense_ops.len() == 1 && b.sparse_ops.len() == 1),
            || format!("multi-op SOAC draw {}", g.to_json()),
        )?;
    }
    let mut min_p: f64 = 1.0;
    for k in 1..=cfg.num_blocks {
        let mut dense = vec![0u64; cfg.dense_ops.len()];
        let mut sparse = vec![0u64; cfg.sparse_ops.len()];
        let mut subsets = vec![0u64; (1 << k) - 1];
        for g in &draws {
            let b = g.block(k);
            dense[cfg.dense_ops.iter().position(|o| *o == b.dense_ops[0].kind).unwrap()] += 1;
            sparse[cfg.sparse_ops.iter().position(|o| *o == b.sparse_ops[0].kind).unwrap()] += 1;
            subsets[b.dense_conns.iter().map(|&s| 1usize << s).sum::<usize>() - 1] += 1;
        }
        for (name, c) in [("dense op", &dense), ("sparse op", &sparse), ("conn subset", &subsets)] {
            if c.len() < 2 {
                continue;
            }
            let p = chi2_p(c, &vec![1.0 / c.len() as f64; c.len()]);
            ensure(p > ALPHA, || format!("block {k} {name}: p = {p:.4}"))?;
            min_p = min_p.min(p);
        }
        let marginal = (1u64 << (k - 1)) as f64 / ((1u64 << k) - 1) as f64;
        for s in 0..k {
            let hits = draws.iter().filter(|g| g.block(k).dense_conns.contains(&s)).count() as u64;
            ensure(within_binomial(hits, 10_000, marginal, 3.3), || {
                format!("block {k} source {s}: {hits} vs {marginal:.4}")
            })?;
        }
    }
    let total = 8000;
    let sched = WarmupSchedule::new(total, 0.25);
    let ps: Vec<f64> = [0, total / 8, total / 4, total].iter().map(|&s| warmup_p(&sched, s)).collect();
    ensure(ps == [1.0, 0.5, 0.0, 0.0], || format!("warm-up p {ps:?}"))?;
    Ok(format!("10^4 SOAC draws, min chi-square p {min_p:.3}; warm-up p {ps:?}"))
}

fn fc_count(g: &Genotype) -> nasrec_core::Result<f64> {
    Ok(g.count_ops(OperatorKind::FC) as f64)
}

fn c6_evolution() -> Outcome {
    let cfg = SupernetConfig::preset("nasrec_full").unwrap();
    let ec = EvoConfig {
        iterations: 100,
        mutation_mode: MutationMode::Single,
        ..EvoConfig::default()
    };
    let r = evolve(&cfg, &ec, fc_count).map_err(|e| e.to_string())?;
    let mut expect_birth = 0;
    for h in &r.history {
        ensure(h.population_size == 64, || format!("iter {}: population {}", h.iter, h.population_size))?;
        let want = (5 - (h.iter / 20).min(4)) as usize;
        ensure(h.mutations == want, || format!("iter {}: {} mutations", h.iter, h.mutations))?;
        let n = h.removed.len();
        ensure(h.removed == (expect_birth..expect_birth + n).collect::<Vec<_>>(), || {
            format!("iter {}: removed {:?}", h.iter, h.removed)
        })?;
        expect_birth += n;
    }
    ensure(r.history.windows(2).all(|w| w[1].best <= w[0].best), || "best not monotone".into())?;
    let again = evolve(&cfg, &ec, fc_count).map_err(|e| e.to_string())?;
    ensure(
        serde_json::to_string(&r.history).unwrap() == serde_json::to_string(&again.history).unwrap(),
        || "trace differs between identical seeds".into(),
    )?;
    let seq: Vec<usize> = [0, 19, 20, 39, 40, 60, 80, 99].iter().map(|&i| r.history[i].mutations).collect();
    Ok(format!(
        "population 64 throughout, mutations at iters 0,19,20,39,40,60,80,99 = {seq:?}, best {} -> {}",
        r.history[0].best,
        r.history.last().unwrap().best
    ))
}

fn planted(rows: usize, seed: u64) -> Splits {
    let ds = synth_generate(&SynthSpec {
        n_rows: rows,
        vocab: 10,
        seed,
        ..SynthSpec::default()
    })
    .unwrap();
    split(&ds, &SplitSpec { seed, ..SplitSpec::default() }).unwrap()
}

fn with_data(mut cfg: SupernetConfig, s: &Splits) -> SupernetConfig {
    cfg.num_dense_features = s.train.num_dense;
    cfg.vocab_sizes = s.train.vocab_sizes.clone();
    cfg
}

fn recipe(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 64,
        embedding_cap: None,
        strategy: SamplingStrategy::SingleOpAnyConn,
        warmup_fraction: 0.25,
        finetune_steps: 500,
        seed,
        ..TrainConfig::default()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c7_ranking() -> Outcome {
    let (mut plain, mut tuned) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let s = planted(100_000, seed);
        let mut cfg = SupernetConfig::preset("nasrec_small").unwrap();
        cfg.num_blocks = 2;
        cfg.dense_dims = vec![32];
        cfg.sparse_dims = vec![8];
        cfg.allow_project_concat = false;
        cfg.balanced_dot_product = true;
        let cfg = with_data(cfg, &s);
        let cands = enumerate_genotypes(&cfg, CountingConvention::PerBranchDims, true);
        ensure(cands.len() <= 64, || format!("{} subnets", cands.len()))?;
        let tc = recipe(seed);
        let net = train_supernet(&cfg, &tc, &s.train).map_err(|e| e.to_string())?.supernet;
        let truth = scratch_scores(&cfg, &cands, &tc, &s.train, &s.val, &s.test);
        for (ft, out) in [(false, &mut plain), (true, &mut tuned)] {
            let shared = shared_scores(&net, &cands, ft, &s.train, &s.val, &tc);
            let r = assemble_report(&cands, &shared, &truth).map_err(|e| e.to_string())?;
            ensure(r.skipped.is_empty(), || format!("seed {seed}: skipped {:?}", r.skipped))?;
            out.push(r.kendall_tau);
        }
    }
    let (m, mf) = (mean(&plain), mean(&tuned));
    let detail = format!("36 subnets; tau {plain:.3?} mean {m:.3}; fine-tuned {tuned:.3?} mean {mf:.3}");
    ensure(m >= 0.3, || format!("mean tau below 0.3: {detail}"))?;
    ensure(mf >= m - 0.05, || format!("fine-tuning lowered tau: {detail}"))?;
    Ok(detail)
}

/// Two stacked FC layers at the widest dense dim, reading only the dense features.
fn fc_two_layer(cfg: &SupernetConfig) -> (SupernetConfig, Genotype) {
    let mut c = cfg.clone();
    c.num_blocks = 2;
    let d = c.max_dense_dim();
    let s = c.sparse_dims[0];
    let blocks = (1..=2)
        .map(|k| BlockGenotype {
            dense_ops: vec![OpChoice { kind: OperatorKind::FC, dim: d }],
            sparse_ops: vec![OpChoice { kind: OperatorKind::EmbedFC, dim: s }],
            dense_conns: vec![k - 1],
            sparse_conns: vec![k - 1],
            project_concat: false,
        })
        .collect();
    (c, Genotype::new(blocks))
}

fn c8_search() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..3 {
        let s = planted(50_000, seed);
        let mut cfg = SupernetConfig::preset("nasrec_full").unwrap();
        cfg.num_blocks = 3;
        cfg.dense_dims = vec![16, 32, 64];
        cfg.sparse_dims = vec![4, 8];
        let cfg = with_data(cfg, &s);
        let tc = TrainConfig {
            finetune_steps: 100,
            ..recipe(seed)
        };
        let net = train_supernet(&cfg, &tc, &s.train).map_err(|e| e.to_string())?.supernet;
        let ec = EvoConfig {
            population: 16,
            iterations: 20,
            tournament: 8,
            children_per_iter: 8,
            initial_mutations: 5,
            decay_every: 4,
            seed,
            top_k: 1,
            ..EvoConfig::default()
        };
        let fitness = |g: &Genotype| finetune_last_fc(&net, g, tc.finetune_steps, &s.train, &s.val, &tc).map(|r| r.logloss);
        let best = evolve(&cfg, &ec, fitness).map_err(|e| e.to_string())?.top[0].genotype.clone();
        let scratch = TrainConfig { epochs: 2, ..tc.clone() };
        let found = train_from_scratch(&best, &cfg, &scratch, &s.train, &s.val, &s.test, true)
            .map_err(|e| e.to_string())?
            .test
            .logloss;
        let (bcfg, bg) = fc_two_layer(&cfg);
        let base = train_from_scratch(&bg, &bcfg, &scratch, &s.train, &s.val, &s.test, true)
            .map_err(|e| e.to_string())?
            .test
            .logloss;
        if found <= ln2 - 0.05 && found < base {
            wins += 1;
        }
        rows.push(format!("{found:.4}/{base:.4}"));
    }
    let detail = format!("searched/FC-only test logloss {rows:?}; wins {wins}/3; ln2 - 0.05 = {:.4}", ln2 - 0.05);
    ensure(wins >= 2, || detail.clone())?;
    Ok(detail)
}

fn c9_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_ll: f64 = 0.0;
    for case in 0..100 {
        let n = rng.gen_range(2..300);
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.35)))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        let levels = rng.gen_range(2..50);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let a = auc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = oracles::auc_pairs(&labels, &scores);
        ensure(a == want, || format!("auc case {case}: {a} vs {want}"))?;
        let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let l = logloss(&probs, &labels).map_err(|e| e.to_string())?;
        let d = (l - oracles::logloss(&labels, &probs, LOGLOSS_EPS)).abs();
        ensure(d <= 1e-9, || format!("logloss case {case}: diff {d:e}"))?;
        worst_ll = worst_ll.max(d);
    }
    let mut worst_rho: f64 = 0.0;
    for case in 0..100 {
        let n = rng.gen_range(2..=50);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
        if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
            continue;
        }
        let t = kendall_tau(&x, &y).map_err(|e| e.to_string())?;
        let want = oracles::kendall_tau_b(&x, &y);
        ensure(t == want, || format!("tau case {case}: {t} vs {want}"))?;
        let r = pearson_rho(&x, &y).map_err(|e| e.to_string())?;
        let d = (r - oracles::pearson(&x, &y)).abs();
        ensure(d <= 1e-12, || format!("rho case {case}: diff {d:e}"))?;
        worst_rho = worst_rho.max(d);
    }
    Ok(format!(
        "auc and tau exact; logloss max diff {worst_ll:.1e}; rho max diff {worst_rho:.1e}"
    ))
}

fn c10_audits() -> Outcome {
    let mut cfg = SupernetConfig::preset("nasrec_full").unwrap();
    cfg.num_blocks = 4;
    cfg.dense_dims = vec![8, 16, 32];
    cfg.sparse_dims = vec![2, 4, 6];
    cfg.num_dense_features = 5;
    cfg.vocab_sizes = vec![7, 3, 11, 5, 2, 9];
    cfg.embedding_dim = 4;
    let net = Supernet::<f32>::new(&cfg, None, 0).map_err(|e| e.to_string())?;
    let ds = synth_generate(&SynthSpec {
        n_rows: 1,
        num_dense: 5,
        num_cat: 6,
        vocab: 2,
        structure: PlantedStructure::LogisticLinear,
        seed: 0,
    })
    .unwrap();
    let batch = ds.batch(&[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut params, mut flops) = (0u64, 0u64);
    for i in 0..20 {
        let g = sample(SamplingStrategy::AnyOpAnyConn, &cfg, &mut rng);
        let p = param_count(&g, &cfg, None).map_err(|e| e.to_string())?;
        let f = flop_count(&g, &cfg, 1).map_err(|e| e.to_string())?;
        let sub = net.extract_subnet(&g).map_err(|e| e.to_string())?;
        let mut graph = sub.graph().no_grad();
        sub.forward(&mut graph, &batch).map_err(|e| e.to_string())?;
        ensure(p.total == sub.store.num_elements() as u64, || {
            format!("genotype {i}: params {} vs stored {}", p.total, sub.store.num_elements())
        })?;
        ensure(f.total == graph.flops(), || format!("genotype {i}: flops {} vs executed {}", f.total, graph.flops()))?;
        let audit_p: u64 = p.audit.iter().map(|a| a.weights + a.biases + a.norm + a.embedding).sum();
        let audit_f: u64 = f.audit.iter().map(|a| a.flops).sum();
        ensure(audit_p == p.total && audit_f == f.total, || format!("genotype {i}: audit sums"))?;
        params += p.total;
        flops += f.total;
    }
    Ok(format!("20 genotypes; {params} params and {flops} FLOPs in total, all exact"))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "gradient suite", c1_gradients),
        (2, "weight-sharing equivalence", c2_weight_sharing),
        (3, "cardinality", c3_cardinality),
        (4, "operator balancing", c4_balancing),
        (5, "sampling distributions", c5_sampling),
        (6, "evolution mechanics", c6_evolution),
        (7, "ranking experiment", c7_ranking),
        (8, "search smoke test", c8_search),
        (9, "metrics", c9_metrics),
        (10, "cost audits", c10_audits),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n}: PASS {name} ({d}) [{secs:.1}s]"),
            Err(e) => {
                failed += 1;
                println!("criterion {n}: FAIL {name} ({e}) [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
