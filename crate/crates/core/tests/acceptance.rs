//! Acceptance criteria, one line each. Runs without the libtest harness so the
//! PASS/FAIL lines are always printed; exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use bft_core::audit::{audit, check_full_connectivity, export_graph};
use bft_core::baselines::{
    circulant_apply, fastfood_apply, lowrank_apply, CirculantWeights, FastfoodWeights, LowRankWeights,
};
use bft_core::butterfly::{
    count_flops, forward_layered, forward_recursive, materialize, ButterflySpec, ButterflyWeights, ResidualPolicy,
};
use bft_core::demo::{train_demo, DemoTask, TrainConfig};
use bft_core::flops::{mobilenet_v1, profile, Fusion};
use bft_core::grad::{finite_diff_check_with, QuadraticLoss};
use bft_core::init::{init_weights, xavier_bound, InitConfig};
use bft_core::tensor::DenseMatrix;
use bft_core::{oracle, rel_diff};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n.is_multiple_of(p) {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Random mixed-radix spec: shuffle the prime factors, then merge random runs.
fn random_spec(rng: &mut ChaCha8Rng) -> ButterflySpec {
    let n = rng.gen_range(2..=64);
    let mut primes = prime_factors(n);
    primes.shuffle(rng);
    let mut radices = vec![primes[0]];
    for &p in &primes[1..] {
        if rng.gen_bool(0.4) {
            *radices.last_mut().unwrap() *= p;
        } else {
            radices.push(p);
        }
    }
    ButterflySpec::new(n, radices).unwrap()
}

fn random_weights(spec: &ButterflySpec, rng: &mut ChaCha8Rng) -> ButterflyWeights {
    ButterflyWeights::from_fn(spec.clone(), |_, _, _| rng.gen_range(-1.0..1.0))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let trials = 1000;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let spec = random_spec(&mut rng);
        let wts = random_weights(&spec, &mut rng);
        let x = random_matrix(spec.n(), rng.gen_range(1..=4), &mut rng);
        let reference = oracle::naive_matmul(&oracle::sparse_layer_product(&wts), &x);
        let layered = forward_layered(&wts, &x).unwrap();
        let dense = oracle::naive_matmul(&materialize(&wts), &x);
        worst = worst
            .max(rel_diff(layered.data(), reference.data()))
            .max(rel_diff(dense.data(), reference.data()));
        for c in 0..x.cols() {
            let rec = forward_recursive(&wts, &x.col(c)).unwrap();
            worst = worst.max(rel_diff(&rec, &reference.col(c)));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-12 && elapsed < Duration::from_secs(30),
        format!(
            "{trials} triples, max rel err {worst:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn unique_paths() -> Outcome {
    let mut specs = Vec::new();
    for n in 2..=64 {
        for k in 2..=8 {
            if let Ok(s) = ButterflySpec::with_base(n, k) {
                specs.push(s);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    specs.extend((0..200).map(|_| random_spec(&mut rng)));
    let bad: Vec<String> = specs
        .iter()
        .filter(|s| {
            !materialize(&ButterflyWeights::constant((*s).clone(), 1.0))
                .data()
                .iter()
                .all(|&v| v == 1.0)
        })
        .map(|s| format!("{}:{:?}", s.n(), s.radices()))
        .collect();
    outcome(bad.is_empty(), format!("{} specs, non-ones: {bad:?}", specs.len()))
}

fn flop_formula() -> Outcome {
    let macs = count_flops(&ButterflySpec::with_base(1024, 2).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..500 {
        let spec = random_spec(&mut rng);
        let expected: u64 = spec.radices().iter().map(|&k| (spec.n() * k) as u64).sum();
        mismatches += usize::from(count_flops(&spec) != expected);
    }
    outcome(
        macs == 20480 && mismatches == 0,
        format!("n=1024 k=2 -> {macs}; mixed-radix mismatches {mismatches}/500"),
    )
}

fn init_statistics() -> Outcome {
    let start = Instant::now();
    let spec = ButterflySpec::with_base(16, 2).unwrap();
    let draws = 10_000;
    let per_draw: Vec<f64> = (0..draws as u64)
        .map(|seed| {
            let b = materialize(&init_weights(&spec, &InitConfig::for_spec(&spec, seed)).unwrap());
            b.data().iter().map(|v| v.abs()).sum::<f64>() / b.data().len() as f64
        })
        .collect();
    let mean = per_draw.iter().sum::<f64>() / draws as f64;
    let var = per_draw.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    let target = xavier_bound(16, 16) / 2.0;
    let z = (mean - target) / se;
    let elapsed = start.elapsed();
    outcome(
        z.abs() <= 3.0 && elapsed < Duration::from_secs(60),
        format!(
            "mean |B| {mean:.5}, x/2 {target:.5}, se {se:.1e}, z {z:.2}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let radix_sets: [&[usize]; 5] = [&[2, 2, 2], &[2, 4], &[4, 2], &[8], &[2, 2, 2]];
    let policies = [
        ResidualPolicy::None,
        ResidualPolicy::EveryOther,
        ResidualPolicy::FirstToLast,
    ];
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let spec = ButterflySpec::new(8, radix_sets[i % radix_sets.len()].to_vec()).unwrap();
        let wts = random_weights(&spec, &mut rng);
        let cols = rng.gen_range(1..=3);
        let x = random_matrix(8, cols, &mut rng);
        let loss = QuadraticLoss {
            target: random_matrix(8, cols, &mut rng),
        };
        let err = finite_diff_check_with(&wts, &x, policies[i % policies.len()], &loss, 1e-6).unwrap();
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-5 && elapsed < Duration::from_secs(30),
        format!("100 instances, max rel err {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn fusion_audit() -> Outcome {
    let mut failures = Vec::new();
    for n in [8usize, 16, 64] {
        for k in [2usize, 4] {
            let spec = ButterflySpec::with_base(n, k).unwrap();
            let g = export_graph(&spec);
            let r = audit(&g);
            let paths = check_full_connectivity(&g);
            let all_one = paths.counts.iter().flatten().all(|&c| c == 1);
            let edges: usize = spec.radices().iter().map(|&k| n * k).sum();
            let bound = n as f64 * (n as f64).log2();
            let ok = r.all_principles
                && all_one
                && r.bottleneck == n
                && r.edge_count == edges
                && r.edge_count as f64 >= bound;
            if !ok {
                failures.push(format!("n={n} k={k}: {r:?}"));
            }
        }
    }
    outcome(failures.is_empty(), format!("6 graphs; failures {failures:?}"))
}

fn flop_profiler() -> Outcome {
    let small = profile(&mobilenet_v1(0.25, 128)).unwrap().total as f64;
    let half = profile(&mobilenet_v1(0.5, 224)).unwrap().total as f64;
    let full = mobilenet_v1(1.0, 224);
    let pw_share = profile(&full).unwrap().fusion_share();
    let bft_share = profile(&full.with_fusion(Fusion::Bft { base: 2 }))
        .unwrap()
        .fusion_share();
    let ok = (small - 14e6).abs() / 14e6 <= 0.05
        && (half - 150e6).abs() / 150e6 <= 0.05
        && (pw_share - 95.0).abs() <= 5.0
        && (bft_share - 60.0).abs() <= 5.0;
    outcome(
        ok,
        format!(
            "0.25/128 {:.2}M, 0.5/224 {:.2}M, fusion share pointwise {pw_share:.1}% bft {bft_share:.1}%",
            small / 1e6,
            half / 1e6
        ),
    )
}

fn baseline_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for n in [2usize, 4, 8, 16] {
        for _ in 0..20 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xm = DenseMatrix::column(&x).unwrap();
            let c = CirculantWeights::random(n, &mut rng);
            let l = LowRankWeights::random(n, rng.gen_range(1..=n), &mut rng);
            let f = FastfoodWeights::random(n, &mut rng);
            let pairs = [
                (circulant_apply(&c, &x).unwrap(), oracle::circulant_matrix(&c)),
                (lowrank_apply(&l, &x).unwrap(), oracle::lowrank_matrix(&l)),
                (fastfood_apply(&f, &x).unwrap(), oracle::fastfood_matrix(&f)),
            ];
            for (fast, dense) in pairs {
                worst = worst.max(rel_diff(&fast, oracle::naive_matmul(&dense, &xm).data()));
            }
        }
    }
    outcome(
        worst <= 1e-10,
        format!("n in {{2,4,8,16}} x 20 seeds, max rel err {worst:.2e}"),
    )
}

fn toy_demo() -> Outcome {
    let start = Instant::now();
    let metrics = train_demo(&DemoTask::separable(0), &TrainConfig::default());
    let elapsed = start.elapsed();
    match metrics {
        Ok(m) => {
            let accs: Vec<String> = m
                .runs
                .iter()
                .map(|r| format!("{:?} {:.3}", r.fusion, r.final_train_accuracy))
                .collect();
            let ok = m.runs.iter().all(|r| r.final_train_accuracy >= 0.95) && elapsed < Duration::from_secs(300);
            outcome(
                ok,
                format!("train acc {}, {:.2}s", accs.join(", "), elapsed.as_secs_f64()),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 unique-path structure", unique_paths),
        ("3 flop formula", flop_formula),
        ("4 initialization statistics", init_statistics),
        ("5 gradient correctness", gradient_correctness),
        ("6 fusion audit", fusion_audit),
        ("7 flop profiler reproduction", flop_profiler),
        ("8 baseline oracles", baseline_oracles),
        ("9 toy training demo", toy_demo),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        println!(
            "{} criterion {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
