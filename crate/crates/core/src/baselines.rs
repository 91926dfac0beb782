//! Structured channel-fusion baselines: circulant (via FFT), low-rank, and
//! Fastfood. FFT and Walsh-Hadamard transforms use unitary normalization.
//!
//! MAC accounting (one MAC per multiply-accumulate, as for the butterfly):
//!
//! | kind      | MACs per column                                   |
//! |-----------|---------------------------------------------------|
//! | circulant | `4 * (3 * (n/2) * log2 n + n)`                    |
//! | low-rank  | `2 * n * r`                                       |
//! | fastfood  | `2 * n * log2 n + 3 * n`                          |
//! | bft       | `sum_i n * k_i`                                   |
//!
//! The circulant count is three length-`n` radix-2 FFTs (`n/2 * log2 n`
//! complex butterflies each) plus `n` spectral products, with one complex MAC
//! expanded to 4 real multiplies (the 2 real adds fold into them). A
//! non-power-of-two circulant falls back to the naive product, `n^2` MACs.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::butterfly::{count_flops, ButterflySpec};
use crate::tensor::DenseMatrix;
use crate::{BftError, Result};

/// In-place iterative radix-2 FFT, scaled by `1/sqrt(n)` in both directions.
pub fn fft_radix2(x: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let n = x.len();
    if !n.is_power_of_two() {
        return Err(BftError::NotPowerOfTwo {
            op: "fft_radix2",
            len: n,
        });
    }
    let mut a = x.to_vec();
    let bits = n.trailing_zeros();
    if bits > 0 {
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                a.swap(i, j);
            }
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let step = Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI / len as f64);
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for i in 0..len / 2 {
                let u = a[start + i];
                let v = a[start + i + len / 2] * w;
                a[start + i] = u + v;
                a[start + i + len / 2] = u - v;
                w *= step;
            }
        }
        len <<= 1;
    }
    let norm = 1.0 / (n as f64).sqrt();
    for v in &mut a {
        *v *= norm;
    }
    Ok(a)
}

/// In-place unitary fast Walsh-Hadamard transform (`n log2 n` adds).
pub fn fwht(data: &mut [f64]) -> Result<()> {
    let n = data.len();
    if !n.is_power_of_two() {
        return Err(BftError::NotPowerOfTwo { op: "fwht", len: n });
    }
    let mut dist = 1;
    while dist < n {
        for start in (0..n).step_by(2 * dist) {
            for i in start..start + dist {
                let (a, b) = (data[i], data[i + dist]);
                data[i] = a + b;
                data[i + dist] = a - b;
            }
        }
        dist <<= 1;
    }
    let norm = 1.0 / (n as f64).sqrt();
    for v in data.iter_mut() {
        *v *= norm;
    }
    Ok(())
}

/// `C[i][j] = first_row[(j - i) mod n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirculantWeights {
    pub first_row: Vec<f64>,
}

impl CirculantWeights {
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        Self {
            first_row: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }
}

/// `C x`. Power-of-two sizes go through the FFT as a cyclic cross-correlation
/// `y = F^-1( sqrt(n) * conj(F r) * F x )`; other sizes use the direct sum.
pub fn circulant_apply(w: &CirculantWeights, x: &[f64]) -> Result<Vec<f64>> {
    let n = w.first_row.len();
    if x.len() != n {
        return Err(BftError::shape("circulant_apply", format!("length {n}"), x.len()));
    }
    if !n.is_power_of_two() {
        return Ok((0..n)
            .map(|i| (0..n).map(|j| w.first_row[(j + n - i) % n] * x[j]).sum())
            .collect());
    }
    let to_complex = |v: &[f64]| v.iter().map(|&r| Complex64::new(r, 0.0)).collect::<Vec<_>>();
    let fr = fft_radix2(&to_complex(&w.first_row), false)?;
    let fx = fft_radix2(&to_complex(x), false)?;
    let scale = (n as f64).sqrt();
    let prod: Vec<Complex64> = fr.iter().zip(&fx).map(|(r, x)| r.conj() * x * scale).collect();
    Ok(fft_radix2(&prod, true)?.into_iter().map(|c| c.re).collect())
}

/// `W = U V^T` with `U, V: n x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankWeights {
    pub u: DenseMatrix,
    pub v: DenseMatrix,
}

impl LowRankWeights {
    pub fn new(u: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(BftError::shape(
                "LowRankWeights::new",
                format!("V of shape {}x{}", u.rows(), u.cols()),
                format!("{}x{}", v.rows(), v.cols()),
            ));
        }
        Ok(Self { u, v })
    }

    /// `ceil(log2 n)`, at least 1.
    pub fn default_rank(n: usize) -> usize {
        (n.next_power_of_two().trailing_zeros() as usize).max(1)
    }

    pub fn random(n: usize, rank: usize, rng: &mut impl Rng) -> Self {
        let mut gen = || DenseMatrix::from_fn(n, rank, |_, _| rng.gen_range(-1.0..1.0));
        let u = gen();
        let v = gen();
        Self { u, v }
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }
}

/// `U (V^T x)`: two thin products, `2 n r` MACs.
pub fn lowrank_apply(w: &LowRankWeights, x: &[f64]) -> Result<Vec<f64>> {
    let n = w.u.rows();
    if x.len() != n {
        return Err(BftError::shape("lowrank_apply", format!("length {n}"), x.len()));
    }
    let r = w.rank();
    let mut z = vec![0.0; r];
    for (i, &xi) in x.iter().enumerate() {
        for (zl, &vil) in z.iter_mut().zip(w.v.row(i)) {
            *zl += vil * xi;
        }
    }
    Ok((0..n)
        .map(|i| w.u.row(i).iter().zip(&z).map(|(a, b)| a * b).sum())
        .collect())
}

/// `S H G P H B` with diagonal `S, G, B`, permutation `P` and unitary Hadamard `H`.
/// `(P x)[i] = x[perm[i]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastfoodWeights {
    pub s: Vec<f64>,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    pub perm: Vec<usize>,
}

impl FastfoodWeights {
    pub fn new(s: Vec<f64>, g: Vec<f64>, b: Vec<f64>, perm: Vec<usize>) -> Result<Self> {
        let n = s.len();
        if !n.is_power_of_two() {
            return Err(BftError::NotPowerOfTwo {
                op: "FastfoodWeights::new",
                len: n,
            });
        }
        if g.len() != n || b.len() != n || perm.len() != n {
            return Err(BftError::shape(
                "FastfoodWeights::new",
                format!("four vectors of length {n}"),
                format!("{}/{}/{}/{}", n, g.len(), b.len(), perm.len()),
            ));
        }
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(BftError::Format(format!("{perm:?} is not a permutation of 0..{n}")));
            }
        }
        Ok(Self { s, g, b, perm })
    }

    /// `S = G = B = 1`, `P = I`.
    pub fn identity(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n], vec![1.0; n], vec![1.0; n], (0..n).collect())
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut diag = || (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>();
        let (s, g, b) = (diag(), diag(), diag());
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        Self { s, g, b, perm }
    }
}

pub fn fastfood_apply(w: &FastfoodWeights, x: &[f64]) -> Result<Vec<f64>> {
    let n = w.s.len();
    if !n.is_power_of_two() {
        return Err(BftError::NotPowerOfTwo {
            op: "fastfood_apply",
            len: n,
        });
    }
    if x.len() != n {
        return Err(BftError::shape("fastfood_apply", format!("length {n}"), x.len()));
    }
    let mut t: Vec<f64> = x.iter().zip(&w.b).map(|(a, b)| a * b).collect();
    fwht(&mut t)?;
    let mut t: Vec<f64> = w.perm.iter().zip(&w.g).map(|(&p, g)| g * t[p]).collect();
    fwht(&mut t)?;
    Ok(t.iter().zip(&w.s).map(|(a, s)| a * s).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum BaselineKind {
    Circulant,
    LowRank { rank: usize },
    Fastfood,
    Bft { base: usize },
}

impl BaselineKind {
    /// Parses a kind name, using `ceil(log2 n)` for low-rank and base 4 for BFT.
    pub fn parse(name: &str, n: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "circulant" => Ok(Self::Circulant),
            "lowrank" | "low-rank" => Ok(Self::LowRank {
                rank: LowRankWeights::default_rank(n),
            }),
            "fastfood" => Ok(Self::Fastfood),
            "bft" | "butterfly" => Ok(Self::Bft { base: 4 }),
            _ => Err(BftError::Unknown {
                what: "baseline kind",
                name: name.to_string(),
            }),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Circulant => f.write_str("circulant"),
            Self::LowRank { rank } => write!(f, "lowrank(r={rank})"),
            Self::Fastfood => f.write_str("fastfood"),
            Self::Bft { base } => write!(f, "bft(k={base})"),
        }
    }
}

impl FromStr for BaselineKind {
    type Err = BftError;

    fn from_str(s: &str) -> Result<Self> {
        // rank defaults need n; callers that know n use `parse`
        Self::parse(s, 2)
    }
}

fn log2_exact(n: usize) -> u64 {
    n.trailing_zeros() as u64
}

/// MACs per spatial column; see the module table.
pub fn baseline_flops(kind: &BaselineKind, n: usize) -> Result<u64> {
    let n64 = n as u64;
    match *kind {
        BaselineKind::Circulant if n.is_power_of_two() => {
            let complex = 3 * (n64 / 2) * log2_exact(n) + n64;
            Ok(4 * complex)
        }
        BaselineKind::Circulant => Ok(n64 * n64),
        BaselineKind::LowRank { rank } => Ok(2 * n64 * rank as u64),
        BaselineKind::Fastfood => {
            if !n.is_power_of_two() {
                return Err(BftError::NotPowerOfTwo {
                    op: "fastfood flops",
                    len: n,
                });
            }
            Ok(2 * n64 * log2_exact(n) + 3 * n64)
        }
        BaselineKind::Bft { base } => Ok(count_flops(&ButterflySpec::with_base(n, base)?)),
    }
}
