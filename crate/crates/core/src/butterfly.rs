//! The base-k butterfly transform.
//!
//! A [`ButterflySpec`] fixes the channel count `n` and an ordered radix list
//! `k_0, .., k_{m-1}` with `prod k_i == n`. Layer `i` works on blocks of
//! `block_i = n / (k_0 .. k_{i-1})` consecutive channels. Each block is split
//! into `k_i` parts of `part_i = block_i / k_i` channels, and output channel
//! `block_start + a * part_i + t` is
//!
//! ```text
//! y[a, t] = sum_j D_aj[t] * x[j, t]        (j = 0 .. k_i)
//! ```
//!
//! i.e. every node reads the `k_i` nodes at the same offset `t` in each part.
//! The recursive form splits a block, mixes the parts with the diagonal
//! matrices `D_aj`, and recurses into each of the `k_i` output parts.
//!
//! Weights are stored layer-major, then by output channel, then by branch `j`:
//! layer `i`, output `r`, branch `j` is at `offset_i + r * k_i + j`. No weights
//! are shared between recursion branches.

use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::kernels;
use crate::tensor::{reshape_from_matrix, reshape_to_matrix, DenseMatrix, FeatureMap};
use crate::{BftError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ButterflySpec {
    n: usize,
    radices: Vec<usize>,
}

impl ButterflySpec {
    /// Mixed-radix spec. `n == 1` with no radices is the trivial transform.
    pub fn new(n: usize, radices: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(BftError::InvalidSpec("channel count must be positive".into()));
        }
        if let Some(&k) = radices.iter().find(|&&k| k < 2) {
            return Err(BftError::InvalidSpec(format!("radix {k} is below 2")));
        }
        let product = radices
            .iter()
            .try_fold(1usize, |acc, &k| acc.checked_mul(k))
            .ok_or_else(|| BftError::InvalidSpec("radix product overflows".into()))?;
        if product != n {
            return Err(BftError::InvalidSpec(format!(
                "radices {radices:?} multiply to {product}, not n = {n}"
            )));
        }
        Ok(Self { n, radices })
    }

    /// Uniform base `k`, falling back to smaller radices for the remainder
    /// (`n = 32, k = 4` gives `[4, 4, 2]`).
    ///
    /// Fails when `n < 2` or when `n` has a prime factor larger than `k`.
    pub fn with_base(n: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(BftError::Unfactorable {
                n,
                k,
                reason: "base must be at least 2".into(),
            });
        }
        if n < 2 {
            return Err(BftError::Unfactorable {
                n,
                k,
                reason: "a butterfly needs at least 2 channels".into(),
            });
        }
        let mut rest = n;
        let mut radices = Vec::new();
        while rest.is_multiple_of(k) {
            radices.push(k);
            rest /= k;
        }
        while rest > 1 {
            match (2..k.min(rest) + 1).rev().find(|d| rest.is_multiple_of(*d)) {
                Some(d) => {
                    radices.push(d);
                    rest /= d;
                }
                None => {
                    return Err(BftError::Unfactorable {
                        n,
                        k,
                        reason: format!("factor {rest} has no divisor in 2..={k}"),
                    })
                }
            }
        }
        Self::new(n, radices)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    /// Number of butterfly layers `m`.
    pub fn layers(&self) -> usize {
        self.radices.len()
    }

    /// `(radix, block size)` of layer `i`.
    pub fn layer_geometry(&self, i: usize) -> (usize, usize) {
        let consumed: usize = self.radices[..i].iter().product();
        (self.radices[i], self.n / consumed)
    }

    /// Offset of layer `i` in the flat weight array.
    pub fn layer_offset(&self, i: usize) -> usize {
        self.radices[..i].iter().map(|k| k * self.n).sum()
    }

    /// `sum_i n * k_i`.
    pub fn weight_count(&self) -> usize {
        self.radices.iter().map(|k| k * self.n).sum()
    }

    /// A single layer of radix `n`: the transform is an unconstrained dense matrix.
    pub fn is_dense(&self) -> bool {
        self.radices.len() == 1 && self.radices[0] == self.n
    }
}

impl fmt::Display for ButterflySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B(n={}, radices={:?})", self.n, self.radices)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButterflyWeights {
    spec: ButterflySpec,
    values: Vec<f64>,
}

impl ButterflyWeights {
    pub fn new(spec: ButterflySpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.weight_count() {
            return Err(BftError::WeightCount {
                expected: spec.weight_count(),
                actual: values.len(),
            });
        }
        Ok(Self { spec, values })
    }

    pub fn constant(spec: ButterflySpec, value: f64) -> Self {
        let values = vec![value; spec.weight_count()];
        Self { spec, values }
    }

    /// Builds weights from `f(layer, output_row, branch)`.
    pub fn from_fn(spec: ButterflySpec, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.weight_count());
        for (layer, &k) in spec.radices.iter().enumerate() {
            for row in 0..spec.n {
                for branch in 0..k {
                    values.push(f(layer, row, branch));
                }
            }
        }
        Self { spec, values }
    }

    /// `D_aa = I` and `D_aj = 0` for `a != j` at every level, so `B = I`.
    pub fn identity(spec: ButterflySpec) -> Self {
        let geometry: Vec<_> = (0..spec.layers()).map(|i| spec.layer_geometry(i)).collect();
        Self::from_fn(spec, |layer, row, branch| {
            let (k, block) = geometry[layer];
            let own_part = (row % block) / (block / k);
            if branch == own_part {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn spec(&self) -> &ButterflySpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn weight(&self, layer: usize, row: usize, branch: usize) -> f64 {
        let k = self.spec.radices[layer];
        self.values[self.spec.layer_offset(layer) + row * k + branch]
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        let start = self.spec.layer_offset(layer);
        &self.values[start..start + self.spec.n * self.spec.radices[layer]]
    }
}

/// Skip connections around the butterfly layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualPolicy {
    #[default]
    None,
    /// Input of layer `2q` is added to the output of layer `2q + 1`. A trailing
    /// unpaired layer has no skip.
    EveryOther,
    /// Transform input added to transform output.
    FirstToLast,
}

impl FromStr for ResidualPolicy {
    type Err = BftError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "none" => Ok(Self::None),
            "everyother" | "everyotherlayer" => Ok(Self::EveryOther),
            "firsttolast" => Ok(Self::FirstToLast),
            _ => Err(BftError::Unknown {
                what: "residual policy",
                name: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for ResidualPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::EveryOther => "everyother",
            Self::FirstToLast => "firsttolast",
        })
    }
}

fn check_len(op: &'static str, spec: &ButterflySpec, len: usize) -> Result<()> {
    if len != spec.n {
        return Err(BftError::shape(op, format!("{} channels for {spec}", spec.n), len));
    }
    Ok(())
}

/// Divide-and-conquer product `B x` for a single vector.
pub fn forward_recursive(wts: &ButterflyWeights, x: &[f64]) -> Result<Vec<f64>> {
    check_len("forward_recursive", &wts.spec, x.len())?;
    Ok(recurse(wts, 0, 0, x.to_vec()))
}

fn recurse(wts: &ButterflyWeights, level: usize, start: usize, x: Vec<f64>) -> Vec<f64> {
    if level == wts.spec.layers() {
        debug_assert_eq!(x.len(), 1);
        return x;
    }
    let k = wts.spec.radices[level];
    let part = x.len() / k;
    let layer = wts.layer(level);
    let mut mixed = vec![0.0; x.len()];
    for a in 0..k {
        for t in 0..part {
            let row = start + a * part + t;
            let w = &layer[row * k..(row + 1) * k];
            let mut acc = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                acc += wj * x[j * part + t];
            }
            mixed[a * part + t] = acc;
        }
    }
    let mut out = Vec::with_capacity(x.len());
    for a in 0..k {
        let sub = mixed[a * part..(a + 1) * part].to_vec();
        out.extend(recurse(wts, level + 1, start + a * part, sub));
    }
    out
}

/// Applies all layers of `spec` in place to a row-major `n x cols` buffer.
///
/// Scalar-generic so benchmarks can run in f32.
pub fn apply_layers<T: Float>(spec: &ButterflySpec, weights: &[T], data: &mut [T], cols: usize) {
    let mut scratch = Vec::new();
    for i in 0..spec.layers() {
        apply_layer(spec, i, weights, data, cols, &mut scratch);
    }
}

pub(crate) fn apply_layer<T: Float>(
    spec: &ButterflySpec,
    i: usize,
    weights: &[T],
    data: &mut [T],
    cols: usize,
    scratch: &mut Vec<T>,
) {
    let (k, block) = spec.layer_geometry(i);
    let start = spec.layer_offset(i);
    kernels::butterfly_layer_inplace(
        k,
        block,
        &weights[start..start + spec.n * k],
        data,
        spec.n,
        cols,
        scratch,
    );
}

/// `m` sequential sparse layers over every column of `x` (`n x hw`).
/// No nonlinearity is applied between layers.
pub fn forward_layered(wts: &ButterflyWeights, x: &DenseMatrix) -> Result<DenseMatrix> {
    check_len("forward_layered", &wts.spec, x.rows())?;
    let mut out = x.clone();
    apply_layers(&wts.spec, &wts.values, out.data_mut(), x.cols());
    Ok(out)
}

/// [`forward_layered`] with skip connections.
pub fn forward_with_residual(wts: &ButterflyWeights, x: &DenseMatrix, residual: ResidualPolicy) -> Result<DenseMatrix> {
    check_len("forward_with_residual", &wts.spec, x.rows())?;
    let cols = x.cols();
    let mut out = x.clone();
    let mut scratch = Vec::new();
    match residual {
        ResidualPolicy::None => apply_layers(&wts.spec, &wts.values, out.data_mut(), cols),
        ResidualPolicy::FirstToLast => {
            apply_layers(&wts.spec, &wts.values, out.data_mut(), cols);
            add_assign(out.data_mut(), x.data());
        }
        ResidualPolicy::EveryOther => {
            let mut skip = out.data().to_vec();
            for i in 0..wts.spec.layers() {
                if i % 2 == 0 {
                    skip.copy_from_slice(out.data());
                }
                apply_layer(&wts.spec, i, &wts.values, out.data_mut(), cols, &mut scratch);
                if i % 2 == 1 {
                    add_assign(out.data_mut(), &skip);
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// The dense `n x n` matrix of the transform.
///
/// Entry `(v, u)` is the product of the edge weights on the unique path from
/// input `u` to output `v`: at layer `i` the path keeps every mixed-radix digit
/// of the current channel except digit `i`, which it takes from `v`.
pub fn materialize(wts: &ButterflyWeights) -> DenseMatrix {
    let spec = &wts.spec;
    let geometry: Vec<_> = (0..spec.layers()).map(|i| spec.layer_geometry(i)).collect();
    DenseMatrix::from_fn(spec.n, spec.n, |v, u| {
        let mut node = u;
        let mut product = 1.0;
        for (layer, &(k, block)) in geometry.iter().enumerate() {
            let part = block / k;
            let block_start = node - node % block;
            let branch = (node % block) / part;
            let offset = node % part;
            let target_part = (v % block) / part;
            node = block_start + target_part * part + offset;
            product *= wts.weight(layer, node, branch);
        }
        debug_assert_eq!(node, v);
        product
    })
}

/// Multiply-accumulates per spatial column: every one of the `n` nodes of
/// layer `i` accumulates `k_i` products.
pub fn count_flops(spec: &ButterflySpec) -> u64 {
    spec.radices.iter().map(|&k| (spec.n * k) as u64).sum()
}

/// Inference-mode batch norm folded to a per-channel affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormAffine {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl BatchNormAffine {
    /// Folds `gamma * (x - mean) / sqrt(var + eps) + beta`.
    pub fn from_stats(mean: &[f64], var: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Self> {
        let n = mean.len();
        if var.len() != n || gamma.len() != n || beta.len() != n {
            return Err(BftError::shape(
                "BatchNormAffine::from_stats",
                format!("four vectors of length {n}"),
                format!("{}/{}/{}/{}", n, var.len(), gamma.len(), beta.len()),
            ));
        }
        let scale: Vec<f64> = (0..n).map(|c| gamma[c] / (var[c] + eps).sqrt()).collect();
        let shift = (0..n).map(|c| beta[c] - mean[c] * scale[c]).collect();
        Ok(Self { scale, shift })
    }
}

/// Optional activation applied once to the block output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Identity,
    Relu,
}

/// A full BFT fusion block: butterfly layers, skip connection, then batch norm
/// and the output activation, both applied once at the end.
#[derive(Debug, Clone)]
pub struct BftBlock {
    pub weights: ButterflyWeights,
    pub residual: ResidualPolicy,
    pub batchnorm: Option<BatchNormAffine>,
    pub activation: OutputActivation,
}

impl BftBlock {
    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let n = self.weights.spec.n;
        if x.channels() != n {
            let op = if self.residual == ResidualPolicy::None {
                "apply_bft_block"
            } else {
                "apply_bft_block (residual needs equal input/output channels)"
            };
            return Err(BftError::shape(op, format!("{n} channels"), x.channels()));
        }
        let mut y = forward_with_residual(&self.weights, &reshape_to_matrix(x), self.residual)?;
        let cols = y.cols();
        if let Some(bn) = &self.batchnorm {
            if bn.scale.len() != n || bn.shift.len() != n {
                return Err(BftError::shape("batch norm", format!("{n} channels"), bn.scale.len()));
            }
            for (c, row) in y.data_mut().chunks_mut(cols).enumerate() {
                for v in row {
                    *v = *v * bn.scale[c] + bn.shift[c];
                }
            }
        }
        if self.activation == OutputActivation::Relu {
            for v in y.data_mut() {
                *v = v.max(0.0);
            }
        }
        reshape_from_matrix(&y, x.height(), x.width())
    }
}

pub fn apply_bft_block(
    wts: &ButterflyWeights,
    x: &FeatureMap,
    residual: ResidualPolicy,
    batchnorm: Option<&BatchNormAffine>,
) -> Result<FeatureMap> {
    BftBlock {
        weights: wts.clone(),
        residual,
        batchnorm: batchnorm.cloned(),
        activation: OutputActivation::Identity,
    }
    .forward(x)
}

/// Which kernel [`apply_fusion`] used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionRoute {
    Butterfly,
    Dense,
}

/// Applies the transform, routing the `k = n` case (one dense layer) through
/// the dense pointwise product.
pub fn apply_fusion(wts: &ButterflyWeights, x: &DenseMatrix) -> Result<(DenseMatrix, FusionRoute)> {
    if wts.spec.is_dense() {
        check_len("apply_fusion", &wts.spec, x.rows())?;
        let w = DenseMatrix::new(wts.spec.n, wts.spec.n, wts.values.clone())?;
        Ok((w.matmul(x)?, FusionRoute::Dense))
    } else {
        Ok((forward_layered(wts, x)?, FusionRoute::Butterfly))
    }
}
