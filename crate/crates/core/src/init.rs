//! Butterfly-aware uniform initialization.
//!
//! Xavier draws dense weights from `U(-x, x)` with `x = sqrt(6 / (n_in + n_out))`,
//! so `E|W| = x / 2`. A butterfly entry `B[v][u]` is the product of the `m`
//! independent edge weights on its path. Drawing every edge from `U(-y, y)`
//! gives `E|B[v][u]| = (y / 2)^m`, and choosing
//! `y = x^(1/m) * 2^((m - 1) / m)` makes that equal to `x / 2`.
//!
//! Sampling uses ChaCha8 seeded with `seed_from_u64`, which is portable and
//! stable across platforms.

use rand::distributions::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::butterfly::{ButterflySpec, ButterflyWeights};
use crate::{BftError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitConfig {
    pub n_in: usize,
    pub n_out: usize,
    /// Number of butterfly layers.
    pub layers: usize,
    pub seed: u64,
}

impl InitConfig {
    pub fn for_spec(spec: &ButterflySpec, seed: u64) -> Self {
        Self {
            n_in: spec.n(),
            n_out: spec.n(),
            layers: spec.layers(),
            seed,
        }
    }
}

pub fn xavier_bound(n_in: usize, n_out: usize) -> f64 {
    assert!(n_in >= 1 && n_out >= 1, "fan-in and fan-out must be positive");
    (6.0 / (n_in + n_out) as f64).sqrt()
}

/// Per-edge bound `y` with `(y / 2)^m == x / 2`.
pub fn butterfly_bound(x: f64, m: usize) -> f64 {
    assert!(m >= 1, "need at least one layer");
    let m = m as f64;
    x.powf(1.0 / m) * 2f64.powf((m - 1.0) / m)
}

/// Draws every weight i.i.d. from the open interval `(-y, y)`.
pub fn init_weights(spec: &ButterflySpec, cfg: &InitConfig) -> Result<ButterflyWeights> {
    if cfg.layers != spec.layers() {
        return Err(BftError::LayerCount {
            config: cfg.layers,
            spec: spec.layers(),
        });
    }
    if spec.layers() == 0 {
        return ButterflyWeights::new(spec.clone(), Vec::new());
    }
    let y = butterfly_bound(xavier_bound(cfg.n_in, cfg.n_out), cfg.layers);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let values = (0..spec.weight_count()).map(|_| sample_open(&mut rng, y)).collect();
    ButterflyWeights::new(spec.clone(), values)
}

/// One draw from `U(-bound, bound)` excluding both endpoints.
pub(crate) fn sample_open(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    loop {
        let u: f64 = Open01.sample(rng);
        let w = bound * (2.0 * u - 1.0);
        if w.abs() < bound {
            return w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::butterfly::materialize;

    #[test]
    fn xavier_examples() {
        assert_eq!(xavier_bound(3, 3), 1.0);
        assert_eq!(xavier_bound(1, 5), 1.0);
        assert!((xavier_bound(512, 512) - 0.076_546_554_461_974_1).abs() < 1e-12);
    }

    #[test]
    fn single_layer_bound_is_xavier() {
        assert_eq!(butterfly_bound(0.37, 1), 0.37);
    }

    #[test]
    fn bound_example() {
        let y = butterfly_bound(0.5, 4);
        assert!((y - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(((y / 2.0).powi(4) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bound_identity_holds() {
        for &x in &[1e-3, 0.05, 0.433, 1.0, 3.0] {
            for m in 1..=12 {
                let y = butterfly_bound(x, m);
                assert!(((y / 2.0).powi(m as i32) - x / 2.0).abs() < 1e-12, "x={x} m={m}");
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = ButterflySpec::with_base(32, 2).unwrap();
        let cfg = InitConfig::for_spec(&spec, 99);
        assert_eq!(init_weights(&spec, &cfg).unwrap(), init_weights(&spec, &cfg).unwrap());
        let other = InitConfig { seed: 100, ..cfg };
        assert_ne!(init_weights(&spec, &cfg).unwrap(), init_weights(&spec, &other).unwrap());
    }

    #[test]
    fn samples_lie_strictly_inside_bound() {
        let spec = ButterflySpec::with_base(64, 4).unwrap();
        let cfg = InitConfig::for_spec(&spec, 5);
        let y = butterfly_bound(xavier_bound(64, 64), spec.layers());
        let w = init_weights(&spec, &cfg).unwrap();
        assert!(w.values().iter().all(|v| v.abs() < y));
    }

    #[test]
    fn layer_count_mismatch() {
        let spec = ButterflySpec::with_base(16, 2).unwrap();
        let cfg = InitConfig {
            layers: 3,
            ..InitConfig::for_spec(&spec, 0)
        };
        assert!(matches!(init_weights(&spec, &cfg), Err(BftError::LayerCount { .. })));
    }

    #[test]
    fn materialized_entries_have_xavier_scale() {
        // 500 draws is enough to land well inside 10% of x/2.
        let spec = ButterflySpec::with_base(16, 2).unwrap();
        let x = xavier_bound(16, 16);
        let mut total = 0.0;
        let draws = 500;
        for seed in 0..draws {
            let w = init_weights(&spec, &InitConfig::for_spec(&spec, seed)).unwrap();
            total += materialize(&w).data().iter().map(|v| v.abs()).sum::<f64>() / 256.0;
        }
        let mean = total / draws as f64;
        assert!((mean - x / 2.0).abs() < 0.1 * x / 2.0, "mean {mean} vs {}", x / 2.0);
    }
}
