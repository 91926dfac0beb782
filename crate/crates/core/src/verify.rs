//! Self-check suites run by `bft verify`.
//!
//! Every suite compares a fast path against an independent oracle from
//! [`crate::oracle`] or against a closed-form value, on small seeded inputs.
//! The `weights` suite also validates a user-supplied weight file.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audit::{audit, export_graph};
use crate::baselines::{
    circulant_apply, fastfood_apply, fft_radix2, lowrank_apply, CirculantWeights, FastfoodWeights, LowRankWeights,
};
use crate::butterfly::{
    apply_fusion, count_flops, forward_layered, forward_recursive, materialize, ButterflySpec, ButterflyWeights,
    FusionRoute, ResidualPolicy,
};
use crate::flops::{mobilenet_v1, profile, Fusion};
use crate::grad::{finite_diff_check_with, QuadraticLoss};
use crate::init::{init_weights, xavier_bound, InitConfig};
use crate::tensor::{dense_pointwise, reshape_from_matrix, reshape_to_matrix, DenseMatrix, FeatureMap};
use crate::weights_io::{decode, encode, read_weights, sidecar, sidecar_path, ScalarWidth, Sidecar, WeightPayload};
use crate::{oracle, rel_diff, BftError, Result};

pub const SUITES: [&str; 8] = [
    "tensor",
    "butterfly",
    "init",
    "grad",
    "baselines",
    "audit",
    "flops",
    "weights",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub checks: Vec<CheckResult>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.suites
            .iter()
            .flat_map(|s| {
                s.checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(move |c| format!("{}/{}: {}", s.suite, c.name, c.detail))
            })
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10} {:<38} {:<6} {}\n", "suite", "check", "result", "detail");
        for suite in &self.suites {
            for c in &suite.checks {
                s.push_str(&format!(
                    "{:<10} {:<38} {:<6} {}\n",
                    suite.suite,
                    c.name,
                    if c.passed { "PASS" } else { "FAIL" },
                    c.detail
                ));
            }
        }
        let total: usize = self.suites.iter().map(|s| s.checks.len()).sum();
        let failed = self.failures().len();
        s.push_str(&format!("{} checks, {} failed\n", total, failed));
        s
    }
}

struct Suite {
    name: &'static str,
    checks: Vec<CheckResult>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: Vec::new(),
        }
    }

    /// Records a check. `f` returns `(passed, detail)`; an error is a failure.
    fn check(&mut self, name: impl Into<String>, f: impl FnOnce() -> Result<(bool, String)>) {
        let (passed, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        self.checks.push(CheckResult {
            name: name.into(),
            passed,
            detail,
        });
    }

    fn within(&mut self, name: impl Into<String>, tol: f64, f: impl FnOnce() -> Result<f64>) {
        self.check(name, || {
            let err = f()?;
            Ok((err <= tol, format!("max rel err {err:.2e} (tol {tol:.0e})")))
        });
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            suite: self.name.into(),
            checks: self.checks,
        }
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_butterfly(spec: ButterflySpec, rng: &mut ChaCha8Rng) -> ButterflyWeights {
    ButterflyWeights::from_fn(spec, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn sample_specs() -> Result<Vec<ButterflySpec>> {
    let mut specs = Vec::new();
    for (n, k) in [(2, 2), (8, 2), (16, 4), (27, 3), (64, 2), (64, 8), (12, 4), (8, 8)] {
        specs.push(ButterflySpec::with_base(n, k)?);
    }
    specs.push(ButterflySpec::new(24, vec![2, 3, 4])?);
    Ok(specs)
}

fn tensor_suite() -> SuiteResult {
    let mut s = Suite::new("tensor");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    s.check("reshape round trip", || {
        let data: Vec<f64> = (0..3 * 4 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = FeatureMap::new(3, 4, 5, data)?;
        let back = reshape_from_matrix(&reshape_to_matrix(&x), 4, 5)?;
        Ok((back == x, "3x4x5".into()))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    s.within("pointwise vs naive matmul", 1e-12, || {
        let w = random_matrix(6, 5, &mut rng);
        let x = random_matrix(5, 12, &mut rng);
        let fm = reshape_from_matrix(&x, 3, 4)?;
        let fast = reshape_to_matrix(&dense_pointwise(&w, &fm)?);
        Ok(rel_diff(fast.data(), oracle::naive_matmul(&w, &x).data()))
    });
    s.check("shape mismatch rejected", || {
        let w = DenseMatrix::zeros(4, 3);
        let x = FeatureMap::zeros(2, 2, 2)?;
        Ok((dense_pointwise(&w, &x).is_err(), "3-input weight on 2 channels".into()))
    });
    s.finish()
}

fn butterfly_suite() -> SuiteResult {
    let mut s = Suite::new("butterfly");
    let specs = match sample_specs() {
        Ok(v) => v,
        Err(e) => {
            s.check("specs", || Err(e));
            return s.finish();
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for spec in &specs {
        let label = format!("n={} r={:?}", spec.n(), spec.radices());
        let wts = random_butterfly(spec.clone(), &mut rng);
        let x = random_matrix(spec.n(), 3, &mut rng);
        s.within(format!("forward paths {label}"), 1e-12, || {
            let reference = oracle::naive_matmul(&oracle::sparse_layer_product(&wts), &x);
            let layered = forward_layered(&wts, &x)?;
            let dense = materialize(&wts).matmul(&x)?;
            let mut worst = rel_diff(layered.data(), reference.data()).max(rel_diff(dense.data(), reference.data()));
            for c in 0..x.cols() {
                let rec = forward_recursive(&wts, &x.col(c))?;
                worst = worst.max(rel_diff(&rec, &reference.col(c)));
            }
            Ok(worst)
        });
        s.check(format!("all-ones paths {label}"), || {
            let ones = materialize(&ButterflyWeights::constant(spec.clone(), 1.0));
            Ok((ones.data().iter().all(|&v| v == 1.0), "every entry exactly 1".into()))
        });
    }
    s.check("count_flops n=1024 k=2", || {
        let macs = count_flops(&ButterflySpec::with_base(1024, 2)?);
        Ok((macs == 20480, format!("{macs}")))
    });
    s.check("mixed radix flops", || {
        let macs = count_flops(&ButterflySpec::new(24, vec![2, 3, 4])?);
        Ok((macs == 24 * 9, format!("{macs}")))
    });
    s.check("k=n routes to dense", || {
        let wts = random_butterfly(ButterflySpec::with_base(8, 8)?, &mut rng);
        let x = random_matrix(8, 2, &mut rng);
        let (y, route) = apply_fusion(&wts, &x)?;
        let reference = oracle::naive_matmul(&oracle::sparse_layer_product(&wts), &x);
        let err = rel_diff(y.data(), reference.data());
        Ok((
            route == FusionRoute::Dense && err <= 1e-12,
            format!("{route:?}, err {err:.1e}"),
        ))
    });
    s.check("unfactorable rejected", || {
        Ok((
            ButterflySpec::with_base(1, 2).is_err() && ButterflySpec::with_base(7, 2).is_err(),
            "n=1 and n=7 with k=2".into(),
        ))
    });
    s.finish()
}

fn init_suite() -> SuiteResult {
    let mut s = Suite::new("init");
    s.check("mean |B| matches xavier", || {
        let spec = ButterflySpec::with_base(16, 2)?;
        let draws = 2000;
        let mut samples = Vec::with_capacity(draws * 256);
        for seed in 0..draws as u64 {
            let b = materialize(&init_weights(&spec, &InitConfig::for_spec(&spec, seed))?);
            samples.extend(b.data().iter().map(|v| v.abs()));
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let per_draw: Vec<f64> = samples.chunks(256).map(|c| c.iter().sum::<f64>() / 256.0).collect();
        let var = per_draw.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let target = xavier_bound(16, 16) / 2.0;
        let z = (mean - target) / se;
        Ok((z.abs() <= 3.0, format!("mean {mean:.5} target {target:.5} z {z:.2}")))
    });
    s.check("seeded determinism", || {
        let spec = ButterflySpec::with_base(32, 4)?;
        let cfg = InitConfig::for_spec(&spec, 5);
        Ok((
            init_weights(&spec, &cfg)? == init_weights(&spec, &cfg)?,
            "seed 5 twice".into(),
        ))
    });
    s.finish()
}

fn grad_suite() -> SuiteResult {
    let mut s = Suite::new("grad");
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for residual in [
        ResidualPolicy::None,
        ResidualPolicy::EveryOther,
        ResidualPolicy::FirstToLast,
    ] {
        s.within(format!("finite differences {residual}"), 1e-5, || {
            let mut worst: f64 = 0.0;
            for _ in 0..5 {
                let wts = random_butterfly(ButterflySpec::with_base(8, 2)?, &mut rng);
                let x = random_matrix(8, 2, &mut rng);
                let loss = QuadraticLoss {
                    target: random_matrix(8, 2, &mut rng),
                };
                worst = worst.max(finite_diff_check_with(&wts, &x, residual, &loss, 1e-6)?);
            }
            Ok(worst)
        });
    }
    s.finish()
}

fn baselines_suite() -> SuiteResult {
    let mut s = Suite::new("baselines");
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for n in [2usize, 4, 8, 16] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xm = DenseMatrix::column(&x);
        let circ = CirculantWeights::random(n, &mut rng);
        s.within(format!("circulant n={n}"), 1e-10, || {
            Ok(rel_diff(
                &circulant_apply(&circ, &x)?,
                oracle::circulant_matrix(&circ).matmul(&xm?)?.data(),
            ))
        });
        let xm = DenseMatrix::column(&x);
        let lr = LowRankWeights::random(n, LowRankWeights::default_rank(n), &mut rng);
        s.within(format!("lowrank n={n}"), 1e-10, || {
            Ok(rel_diff(
                &lowrank_apply(&lr, &x)?,
                oracle::lowrank_matrix(&lr).matmul(&xm?)?.data(),
            ))
        });
        let xm = DenseMatrix::column(&x);
        let ff = FastfoodWeights::random(n, &mut rng);
        s.within(format!("fastfood n={n}"), 1e-10, || {
            Ok(rel_diff(
                &fastfood_apply(&ff, &x)?,
                oracle::fastfood_matrix(&ff).matmul(&xm?)?.data(),
            ))
        });
    }
    s.within("fft vs dft n=32", 1e-12, || {
        let x: Vec<Complex64> = (0..32)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let fast = fft_radix2(&x, false)?;
        let slow = oracle::naive_dft(&x, false);
        let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        Ok(err / slow.iter().map(|v| v.norm()).fold(0.0, f64::max))
    });
    s.finish()
}

fn audit_suite() -> SuiteResult {
    let mut s = Suite::new("audit");
    for n in [8usize, 16, 64] {
        for k in [2usize, 4] {
            s.check(format!("butterfly n={n} k={k}"), || {
                let spec = ButterflySpec::with_base(n, k)?;
                let r = audit(&export_graph(&spec));
                let edges = count_flops(&spec) as usize;
                let ok = r.all_principles
                    && r.unique_paths
                    && r.bottleneck == n
                    && r.edge_count == edges
                    && r.bound_holds == Some(true);
                Ok((
                    ok,
                    format!("cut {} edges {} bound {:.0}", r.bottleneck, r.edge_count, r.edge_bound),
                ))
            });
        }
    }
    s.check("max-flow vs brute force", || {
        let g = export_graph(&ButterflySpec::with_base(8, 2)?);
        let mut cut = g.clone();
        cut.edges_mut()[1].retain(|&(from, _)| from != 3);
        let mut ok = true;
        for graph in [&g, &cut] {
            let fast = crate::audit::bottleneck_size(graph);
            ok &= oracle::brute_force_vertex_cut(graph) == Some(fast);
        }
        Ok((ok, "n=8 butterfly, intact and damaged".into()))
    });
    s.check("dense graph fails principle 3", || {
        let r = audit(&crate::audit::FusionGraph::dense(8));
        Ok((
            !r.low_operation_count && r.bound_holds.is_none(),
            format!("edges {}", r.edge_count),
        ))
    });
    s.finish()
}

fn flops_suite() -> SuiteResult {
    let mut s = Suite::new("flops");
    let within = |got: f64, want: f64, tol: f64| {
        (
            (got - want).abs() / want <= tol,
            format!("{:.2}M vs {:.0}M", got / 1e6, want / 1e6),
        )
    };
    s.check("mobilenetv1 0.25/128", || {
        Ok(within(profile(&mobilenet_v1(0.25, 128))?.total as f64, 14e6, 0.05))
    });
    s.check("mobilenetv1 0.5/224", || {
        Ok(within(profile(&mobilenet_v1(0.5, 224))?.total as f64, 150e6, 0.05))
    });
    s.check("fusion share pointwise", || {
        let share = profile(&mobilenet_v1(1.0, 224))?.fusion_share();
        Ok(((share - 95.0).abs() <= 5.0, format!("{share:.1}%")))
    });
    s.check("fusion share bft", || {
        let share = profile(&mobilenet_v1(1.0, 224).with_fusion(Fusion::Bft { base: 2 }))?.fusion_share();
        Ok(((share - 60.0).abs() <= 5.0, format!("{share:.1}%")))
    });
    s.finish()
}

/// Checks that the payload's fast path agrees with its dense oracle.
fn payload_consistency(payload: &WeightPayload) -> Result<f64> {
    let n = match payload {
        WeightPayload::Butterfly(w) => w.spec().n(),
        WeightPayload::Circulant(w) => w.first_row.len(),
        WeightPayload::LowRank(w) => w.u.rows(),
        WeightPayload::Fastfood(w) => w.s.len(),
    };
    let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.5).collect();
    let xm = DenseMatrix::column(&x)?;
    let (fast, dense) = match payload {
        WeightPayload::Butterfly(w) => (forward_recursive(w, &x)?, oracle::sparse_layer_product(w)),
        WeightPayload::Circulant(w) => (circulant_apply(w, &x)?, oracle::circulant_matrix(w)),
        WeightPayload::LowRank(w) => (lowrank_apply(w, &x)?, oracle::lowrank_matrix(w)),
        WeightPayload::Fastfood(w) => (fastfood_apply(w, &x)?, oracle::fastfood_matrix(w)),
    };
    Ok(rel_diff(&fast, dense.matmul(&xm)?.data()))
}

fn weights_suite(file: Option<&Path>) -> SuiteResult {
    let mut s = Suite::new("weights");
    s.check("round trip f64 and f32", || {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let payload = WeightPayload::Butterfly(random_butterfly(ButterflySpec::new(12, vec![3, 4])?, &mut rng));
        let (back, width) = decode(&encode(&payload, ScalarWidth::F64))?;
        let ok64 = back == payload && width == ScalarWidth::F64;
        let (back32, _) = decode(&encode(&payload, ScalarWidth::F32))?;
        let ok32 = match (&back32, &payload) {
            (WeightPayload::Butterfly(a), WeightPayload::Butterfly(b)) => {
                rel_diff(a.values(), b.values()) <= f32::EPSILON as f64
            }
            _ => false,
        };
        Ok((ok64 && ok32, "n=12 radices [3, 4]".into()))
    });
    s.check("truncated file rejected", || {
        let payload = WeightPayload::Circulant(CirculantWeights {
            first_row: vec![1.0, 2.0, 3.0, 4.0],
        });
        let bytes = encode(&payload, ScalarWidth::F64);
        Ok((decode(&bytes[..bytes.len() - 3]).is_err(), "3 bytes short".into()))
    });
    let Some(path) = file else {
        return s.finish();
    };
    let loaded = read_weights(path);
    let label = path.display().to_string();
    let loaded = match loaded {
        Ok(v) => {
            s.check("decode", || Ok((true, format!("{label}: {}", v.0.kind_name()))));
            v
        }
        Err(e) => {
            s.check("decode", || Ok((false, format!("{label}: {e}"))));
            return s.finish();
        }
    };
    let side = sidecar_path(path);
    if side.exists() {
        s.check("sidecar", || {
            let text = std::fs::read_to_string(&side)?;
            let stored: Sidecar = serde_json::from_str(&text)?;
            let actual = sidecar(&loaded.0, loaded.1);
            Ok((
                stored == actual,
                if stored == actual {
                    "matches header".into()
                } else {
                    format!("sidecar {stored:?} vs header {actual:?}")
                },
            ))
        });
    }
    s.within("fast path vs oracle", 1e-10, || payload_consistency(&loaded.0));
    s.finish()
}

/// Runs every suite, or only `filter`, and optionally validates a weight file.
pub fn run_verify(filter: Option<&str>, weights: Option<&Path>) -> Result<VerifyReport> {
    if let Some(name) = filter {
        if !SUITES.contains(&name) {
            return Err(BftError::Unknown {
                what: "verify suite",
                name: name.into(),
            });
        }
    }
    let selected = |name: &str| filter.is_none_or(|f| f == name);
    let mut suites = Vec::new();
    for name in SUITES {
        if !selected(name) {
            continue;
        }
        suites.push(match name {
            "tensor" => tensor_suite(),
            "butterfly" => butterfly_suite(),
            "init" => init_suite(),
            "grad" => grad_suite(),
            "baselines" => baselines_suite(),
            "audit" => audit_suite(),
            "flops" => flops_suite(),
            "weights" => weights_suite(weights),
            _ => unreachable!("suite list is closed"),
        });
    }
    Ok(VerifyReport { suites })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filtered_suites_pass() {
        for name in ["tensor", "butterfly", "baselines", "audit", "flops", "weights"] {
            let r = run_verify(Some(name), None).unwrap();
            assert_eq!(r.suites.len(), 1);
            assert!(r.passed(), "{}", r.to_table());
        }
    }

    #[test]
    fn unknown_filter_is_an_error() {
        assert!(run_verify(Some("nope"), None).is_err());
    }

    #[test]
    fn corrupted_file_names_the_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bftw");
        let payload = WeightPayload::LowRank(LowRankWeights::random(8, 3, &mut ChaCha8Rng::seed_from_u64(1)));
        crate::weights_io::write_weights(&path, &payload, ScalarWidth::F64).unwrap();
        assert!(run_verify(Some("weights"), Some(&path)).unwrap().passed());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        let r = run_verify(Some("weights"), Some(&path)).unwrap();
        assert!(!r.passed());
        assert!(
            r.failures().iter().any(|f| f.starts_with("weights/decode")),
            "{:?}",
            r.failures()
        );
    }
}
