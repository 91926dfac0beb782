//! Slow reference implementations used by the test suites and `bft verify`.
//!
//! Nothing here calls into the fast paths it is compared against: products
//! are plain triple loops, transforms are built as explicit dense matrices,
//! and graph cuts are found by exhaustive search.

use num_complex::Complex64;

use crate::audit::FusionGraph;
use crate::baselines::{CirculantWeights, FastfoodWeights, LowRankWeights};
use crate::butterfly::ButterflyWeights;
use crate::tensor::DenseMatrix;

pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows());
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
        let mut acc = 0.0;
        for l in 0..a.cols() {
            acc += a.get(i, l) * b.get(l, j);
        }
        acc
    })
}

/// Each butterfly layer as an explicit `n x n` matrix, built from the
/// block/part definition: in a block of size `s` split into `k` parts of size
/// `p`, output `(a, t)` reads input `(j, t)` with weight `D_aj[t]`.
pub fn sparse_layers(wts: &ButterflyWeights) -> Vec<DenseMatrix> {
    let spec = wts.spec();
    let n = spec.n();
    let mut block = n;
    let mut layers = Vec::new();
    for (layer, &k) in spec.radices().iter().enumerate() {
        let part = block / k;
        let mut m = DenseMatrix::zeros(n, n);
        for b in 0..n / block {
            for a in 0..k {
                for t in 0..part {
                    let row = b * block + a * part + t;
                    for j in 0..k {
                        m.set(row, b * block + j * part + t, wts.weight(layer, row, j));
                    }
                }
            }
        }
        layers.push(m);
        block = part;
    }
    layers
}

/// `L_{m-1} .. L_1 L_0` by naive matrix products.
pub fn sparse_layer_product(wts: &ButterflyWeights) -> DenseMatrix {
    sparse_layers(wts)
        .iter()
        .fold(DenseMatrix::identity(wts.spec().n()), |acc, layer| {
            naive_matmul(layer, &acc)
        })
}

/// Unitary DFT by direct summation.
pub fn naive_dft(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = x.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let norm = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|f| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, &xj) in x.iter().enumerate() {
                let angle = sign * 2.0 * std::f64::consts::PI * ((f * j) % n) as f64 / n as f64;
                acc += xj * Complex64::from_polar(1.0, angle);
            }
            acc * norm
        })
        .collect()
}

/// `C[i][j] = first_row[(j - i) mod n]` as a dense matrix.
pub fn circulant_matrix(w: &CirculantWeights) -> DenseMatrix {
    let r = &w.first_row;
    let n = r.len();
    DenseMatrix::from_fn(n, n, |i, j| r[(j + n - i) % n])
}

pub fn lowrank_matrix(w: &LowRankWeights) -> DenseMatrix {
    naive_matmul(&w.u, &w.v.transpose())
}

/// Unitary Walsh-Hadamard matrix `H[i][j] = (-1)^popcount(i & j) / sqrt(n)`.
pub fn hadamard_matrix(n: usize) -> DenseMatrix {
    let s = 1.0 / (n as f64).sqrt();
    DenseMatrix::from_fn(n, n, |i, j| if (i & j).count_ones() % 2 == 0 { s } else { -s })
}

/// `S H G P H B` multiplied out densely.
pub fn fastfood_matrix(w: &FastfoodWeights) -> DenseMatrix {
    let n = w.s.len();
    let diag = |d: &[f64]| DenseMatrix::from_fn(n, n, |i, j| if i == j { d[i] } else { 0.0 });
    let perm = DenseMatrix::from_fn(n, n, |i, j| if w.perm[i] == j { 1.0 } else { 0.0 });
    let h = hadamard_matrix(n);
    [diag(&w.s), h.clone(), diag(&w.g), perm, h, diag(&w.b)]
        .iter()
        .rev()
        .fold(DenseMatrix::identity(n), |acc, m| naive_matmul(m, &acc))
}

/// Smallest set of internal nodes whose removal leaves no input-to-output path,
/// by enumerating subsets in order of size. Exponential; for graphs with at most
/// ~20 internal nodes. Returns `None` when no internal cut exists.
pub fn brute_force_vertex_cut(g: &FusionGraph) -> Option<usize> {
    let layers = g.layers();
    let depth = layers.len();
    let internal: Vec<(usize, usize)> = (1..depth.saturating_sub(1))
        .flat_map(|l| (0..layers[l]).map(move |i| (l, i)))
        .collect();
    assert!(internal.len() <= 24, "brute force cut is limited to small graphs");
    let connected = |removed: u64| -> bool {
        let mut reach = vec![true; layers[0]];
        for l in 0..depth - 1 {
            let mut next = vec![false; layers[l + 1]];
            for &(from, to) in &g.edges()[l] {
                if reach[from] {
                    next[to] = true;
                }
            }
            if l + 1 < depth - 1 {
                for (bit, &(ll, i)) in internal.iter().enumerate() {
                    if ll == l + 1 && removed & (1 << bit) != 0 {
                        next[i] = false;
                    }
                }
            }
            reach = next;
        }
        reach.iter().any(|&r| r)
    };
    if !connected(0) {
        return Some(0);
    }
    let total = internal.len();
    (1..=total).find(|&size| {
        (0u64..1 << total)
            .filter(|mask| mask.count_ones() as usize == size)
            .any(|mask| !connected(mask))
    })
}
