//! Wall-clock microbenchmarks: BFT fusion against dense pointwise fusion at
//! equal `(n, h, w)`, in f64 and f32.

use std::hint::black_box;
use std::time::Instant;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::butterfly::{apply_layers, count_flops, ButterflySpec};
use crate::kernels::matmul;
use crate::{BftError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub reps: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(n: usize, k: usize, h: usize, w: usize, reps: usize) -> Self {
        Self {
            n,
            k,
            h,
            w,
            reps,
            seed: 0,
        }
    }
}

/// Median seconds per application, one entry per precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub bft_seconds: f64,
    pub dense_seconds: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub radices: Vec<usize>,
    /// MACs per spatial site.
    pub bft_macs: u64,
    pub dense_macs: u64,
    pub mac_ratio: f64,
    pub f64: Timing,
    pub f32: Timing,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "n={} k={} radices={:?} hw={}x{} reps={}\n",
            c.n, c.k, self.radices, c.h, c.w, c.reps
        );
        s += &format!(
            "MACs/site  bft {}  dense {}  ratio {:.6} (1/{:.1})\n",
            self.bft_macs,
            self.dense_macs,
            self.mac_ratio,
            1.0 / self.mac_ratio
        );
        s += &format!("{:<6}{:>14}{:>14}{:>10}\n", "type", "bft [s]", "dense [s]", "speedup");
        for (name, t) in [("f64", &self.f64), ("f32", &self.f32)] {
            s += &format!(
                "{:<6}{:>14.6e}{:>14.6e}{:>10.2}\n",
                name, t.bft_seconds, t.dense_seconds, t.speedup
            );
        }
        s
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn time_reps(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    median(&mut samples)
}

fn time_precision<T: Float>(
    spec: &ButterflySpec,
    cols: usize,
    reps: usize,
    bft_weights: &[f64],
    dense: &[f64],
    input: &[f64],
) -> Timing {
    let cast = |v: &[f64]| -> Vec<T> { v.iter().map(|&x| T::from(x).expect("finite")).collect() };
    let (wb, wd, x) = (cast(bft_weights), cast(dense), cast(input));
    let n = spec.n();
    let mut buf = x.clone();
    let bft_seconds = time_reps(reps, || {
        buf.copy_from_slice(&x);
        apply_layers(spec, black_box(&wb), &mut buf, cols);
        black_box(&buf);
    });
    let mut out = vec![T::zero(); n * cols];
    let dense_seconds = time_reps(reps, || {
        buf.copy_from_slice(&x);
        matmul(black_box(&wd), n, n, &buf, cols, &mut out);
        black_box(&out);
    });
    Timing {
        bft_seconds,
        dense_seconds,
        speedup: dense_seconds / bft_seconds,
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let spec = ButterflySpec::with_base(cfg.n, cfg.k)?;
    if cfg.reps == 0 || cfg.h == 0 || cfg.w == 0 {
        return Err(BftError::InvalidSpec(format!(
            "bench needs reps, h and w >= 1, got reps={} h={} w={}",
            cfg.reps, cfg.h, cfg.w
        )));
    }
    let cols = cfg.h * cfg.w;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let bft_weights = draw(spec.weight_count());
    let dense = draw(cfg.n * cfg.n);
    let input = draw(cfg.n * cols);
    let bft_macs = count_flops(&spec);
    let dense_macs = (cfg.n * cfg.n) as u64;
    Ok(BenchReport {
        config: *cfg,
        radices: spec.radices().to_vec(),
        bft_macs,
        dense_macs,
        mac_ratio: bft_macs as f64 / dense_macs as f64,
        f64: time_precision::<f64>(&spec, cols, cfg.reps, &bft_weights, &dense, &input),
        f32: time_precision::<f32>(&spec, cols, cfg.reps, &bft_weights, &dense, &input),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_ratio_for_1024() {
        let r = run_bench(&BenchConfig::new(1024, 2, 1, 1, 1)).unwrap();
        assert_eq!(r.bft_macs, 20480);
        assert_eq!(r.dense_macs, 1_048_576);
        assert!((1.0 / r.mac_ratio - 51.2).abs() < 1e-9);
    }

    #[test]
    fn rejects_unfactorable() {
        assert!(run_bench(&BenchConfig::new(1, 2, 4, 4, 1)).is_err());
        assert!(run_bench(&BenchConfig::new(12, 2, 4, 4, 1)).is_err());
        assert!(run_bench(&BenchConfig::new(8, 2, 4, 4, 0)).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn time_grows_with_sites() {
        let small = run_bench(&BenchConfig::new(32, 2, 8, 8, 9)).unwrap();
        let large = run_bench(&BenchConfig::new(32, 2, 32, 32, 9)).unwrap();
        assert!(large.f64.bft_seconds > small.f64.bft_seconds);
        assert!(large.f64.dense_seconds > small.f64.dense_seconds);
    }
}
