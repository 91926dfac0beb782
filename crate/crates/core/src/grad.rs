//! Reverse-mode gradients through the butterfly layers.
//!
//! The forward pass records the input of every layer. Backward walks the
//! layers in reverse: for an edge from channel `src` into output `r` the
//! weight gradient is `sum_c dy[r, c] * input[src, c]`, and the cotangent
//! `w * dy[r, c]` is scattered back to `src`.

use crate::butterfly::{add_assign, apply_layer, ButterflyWeights, ResidualPolicy};
use crate::tensor::DenseMatrix;
use crate::{BftError, Result};

/// Layer inputs cached by [`forward_tape`]. One tape per forward call.
#[derive(Debug, Clone)]
pub struct GradTape {
    residual: ResidualPolicy,
    layer_inputs: Vec<DenseMatrix>,
    input_shape: (usize, usize),
}

impl GradTape {
    pub fn layer_inputs(&self) -> &[DenseMatrix] {
        &self.layer_inputs
    }

    pub fn residual(&self) -> ResidualPolicy {
        self.residual
    }
}

/// Forward pass that also returns the tape needed by [`backward`].
pub fn forward_tape(
    wts: &ButterflyWeights,
    x: &DenseMatrix,
    residual: ResidualPolicy,
) -> Result<(DenseMatrix, GradTape)> {
    let spec = wts.spec();
    if x.rows() != spec.n() {
        return Err(BftError::shape("forward_tape", format!("{} rows", spec.n()), x.rows()));
    }
    let cols = x.cols();
    let mut out = x.clone();
    let mut scratch = Vec::new();
    let mut layer_inputs = Vec::with_capacity(spec.layers());
    for i in 0..spec.layers() {
        layer_inputs.push(out.clone());
        apply_layer(spec, i, wts.values(), out.data_mut(), cols, &mut scratch);
        if residual == ResidualPolicy::EveryOther && i % 2 == 1 {
            add_assign(out.data_mut(), layer_inputs[i - 1].data());
        }
    }
    if residual == ResidualPolicy::FirstToLast {
        add_assign(out.data_mut(), x.data());
    }
    let tape = GradTape {
        residual,
        layer_inputs,
        input_shape: x.shape(),
    };
    Ok((out, tape))
}

/// Returns `(dx, dw)` for upstream cotangent `dy`. Without residuals `dx = B^T dy`.
pub fn backward(wts: &ButterflyWeights, tape: &GradTape, dy: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let spec = wts.spec();
    if tape.layer_inputs.len() != spec.layers() || tape.input_shape.0 != spec.n() {
        return Err(BftError::shape(
            "backward",
            format!("tape for {spec}"),
            format!(
                "tape with {} layers over {} rows",
                tape.layer_inputs.len(),
                tape.input_shape.0
            ),
        ));
    }
    if dy.shape() != tape.input_shape {
        return Err(BftError::shape(
            "backward",
            format!("cotangent {}x{}", tape.input_shape.0, tape.input_shape.1),
            format!("{}x{}", dy.rows(), dy.cols()),
        ));
    }
    let cols = dy.cols();
    let mut dw = vec![0.0; spec.weight_count()];
    let mut g = dy.clone();
    let mut pending_skip: Option<DenseMatrix> = None;
    for i in (0..spec.layers()).rev() {
        if tape.residual == ResidualPolicy::EveryOther && i % 2 == 1 {
            pending_skip = Some(g.clone());
        }
        let (k, block) = spec.layer_geometry(i);
        let part = block / k;
        let offset = spec.layer_offset(i);
        let w = &wts.values()[offset..offset + spec.n() * k];
        let dwl = &mut dw[offset..offset + spec.n() * k];
        let input = &tape.layer_inputs[i];
        let mut g_in = DenseMatrix::zeros(spec.n(), cols);
        for row in 0..spec.n() {
            let base = row - row % block + row % part;
            let g_row = g.row(row);
            for j in 0..k {
                let src = base + j * part;
                let in_row = input.row(src);
                dwl[row * k + j] = g_row.iter().zip(in_row).map(|(a, b)| a * b).sum();
                let wj = w[row * k + j];
                let dst = &mut g_in.data_mut()[src * cols..(src + 1) * cols];
                for (d, &gv) in dst.iter_mut().zip(g_row) {
                    *d += wj * gv;
                }
            }
        }
        if tape.residual == ResidualPolicy::EveryOther && i % 2 == 0 {
            if let Some(skip) = pending_skip.take() {
                add_assign(g_in.data_mut(), skip.data());
            }
        }
        g = g_in;
    }
    if tape.residual == ResidualPolicy::FirstToLast {
        add_assign(g.data_mut(), dy.data());
    }
    Ok((g, dw))
}

/// A scalar objective on the transform output.
pub trait Loss {
    fn value(&self, y: &DenseMatrix) -> f64;
    fn grad(&self, y: &DenseMatrix) -> DenseMatrix;
}

/// `0.5 * ||y - target||^2`.
pub struct QuadraticLoss {
    pub target: DenseMatrix,
}

impl Loss for QuadraticLoss {
    fn value(&self, y: &DenseMatrix) -> f64 {
        0.5 * y
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    fn grad(&self, y: &DenseMatrix) -> DenseMatrix {
        y.add(&self.target.scale(-1.0)).expect("target shape matches output")
    }
}

/// Sum of all outputs.
pub struct SumLoss;

impl Loss for SumLoss {
    fn value(&self, y: &DenseMatrix) -> f64 {
        y.data().iter().sum()
    }

    fn grad(&self, y: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(y.rows(), y.cols(), |_, _| 1.0)
    }
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over every
/// weight and every input entry.
pub fn finite_diff_check(wts: &ButterflyWeights, x: &DenseMatrix, loss: &dyn Loss, h: f64) -> Result<f64> {
    finite_diff_check_with(wts, x, ResidualPolicy::None, loss, h)
}

pub fn finite_diff_check_with(
    wts: &ButterflyWeights,
    x: &DenseMatrix,
    residual: ResidualPolicy,
    loss: &dyn Loss,
    h: f64,
) -> Result<f64> {
    assert!(h > 0.0, "finite difference step must be positive");
    let (y, tape) = forward_tape(wts, x, residual)?;
    let (dx, dw) = backward(wts, &tape, &loss.grad(&y))?;
    let eval =
        |w: &ButterflyWeights, x: &DenseMatrix| -> Result<f64> { Ok(loss.value(&forward_tape(w, x, residual)?.0)) };
    let rel = |analytic: f64, numeric: f64| (analytic - numeric).abs() / analytic.abs().max(1.0);

    let mut worst: f64 = 0.0;
    let mut probe = wts.clone();
    for (e, &analytic) in dw.iter().enumerate() {
        let orig = probe.values()[e];
        probe.values_mut()[e] = orig + h;
        let plus = eval(&probe, x)?;
        probe.values_mut()[e] = orig - h;
        let minus = eval(&probe, x)?;
        probe.values_mut()[e] = orig;
        worst = worst.max(rel(analytic, (plus - minus) / (2.0 * h)));
    }
    let mut xp = x.clone();
    for idx in 0..x.data().len() {
        let orig = xp.data()[idx];
        xp.data_mut()[idx] = orig + h;
        let plus = eval(wts, &xp)?;
        xp.data_mut()[idx] = orig - h;
        let minus = eval(wts, &xp)?;
        xp.data_mut()[idx] = orig;
        worst = worst.max(rel(dx.data()[idx], (plus - minus) / (2.0 * h)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::butterfly::{materialize, ButterflySpec};
    use crate::rel_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(n: usize, k: usize, cols: usize, seed: u64) -> (ButterflyWeights, DenseMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ButterflySpec::with_base(n, k).unwrap();
        let wts = ButterflyWeights::from_fn(spec, |_, _, _| rng.gen_range(-1.0..1.0));
        let x = DenseMatrix::from_fn(n, cols, |_, _| rng.gen_range(-1.0..1.0));
        (wts, x)
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let (wts, x) = random_instance(8, 2, 3, 1);
        let (_, tape) = forward_tape(&wts, &x, ResidualPolicy::None).unwrap();
        let (dx, dw) = backward(&wts, &tape, &DenseMatrix::zeros(8, 3)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_gradient_is_transpose_product() {
        let (wts, x) = random_instance(8, 2, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dy = DenseMatrix::from_fn(8, 4, |_, _| rng.gen_range(-1.0..1.0));
        let (_, tape) = forward_tape(&wts, &x, ResidualPolicy::None).unwrap();
        let (dx, _) = backward(&wts, &tape, &dy).unwrap();
        let want = materialize(&wts).transpose().matmul(&dy).unwrap();
        assert!(rel_diff(dx.data(), want.data()) < 1e-12);
    }

    #[test]
    fn matches_finite_differences() {
        let (wts, x) = random_instance(8, 2, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = DenseMatrix::from_fn(8, 2, |_, _| rng.gen_range(-1.0..1.0));
        let loss = QuadraticLoss { target };
        for residual in [
            ResidualPolicy::None,
            ResidualPolicy::EveryOther,
            ResidualPolicy::FirstToLast,
        ] {
            let err = finite_diff_check_with(&wts, &x, residual, &loss, 1e-6).unwrap();
            assert!(err < 1e-5, "{residual}: {err}");
        }
    }

    #[test]
    fn quadratic_check_small() {
        let (wts, x) = random_instance(4, 2, 1, 6);
        let loss = QuadraticLoss {
            target: DenseMatrix::zeros(4, 1),
        };
        assert!(finite_diff_check(&wts, &x, &loss, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn zero_input_gives_zero_weight_gradient() {
        let (wts, _) = random_instance(8, 2, 2, 7);
        let x = DenseMatrix::zeros(8, 2);
        let (y, tape) = forward_tape(&wts, &x, ResidualPolicy::None).unwrap();
        let (_, dw) = backward(&wts, &tape, &SumLoss.grad(&y)).unwrap();
        assert!(dw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_weights_sum_loss_gives_ones() {
        let wts = ButterflyWeights::identity(ButterflySpec::with_base(8, 2).unwrap());
        let x = DenseMatrix::from_fn(8, 2, |i, j| (i * j) as f64);
        let (y, tape) = forward_tape(&wts, &x, ResidualPolicy::None).unwrap();
        let (dx, _) = backward(&wts, &tape, &SumLoss.grad(&y)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn input_gradient_does_not_depend_on_input() {
        let (wts, x1) = random_instance(16, 4, 2, 8);
        let x2 = x1.scale(-3.0);
        let dy = DenseMatrix::from_fn(16, 2, |i, j| (i as f64) - (j as f64));
        let dx = |x: &DenseMatrix| {
            let (_, tape) = forward_tape(&wts, x, ResidualPolicy::None).unwrap();
            backward(&wts, &tape, &dy).unwrap().0
        };
        assert_eq!(dx(&x1), dx(&x2));
    }

    #[test]
    fn weight_gradient_matches_path_products() {
        // dL/dw_e for L = sum_{v,u} c[v][u] B[v][u] with B multilinear: vary one
        // weight by 1 and difference the dense Jacobian exactly.
        let (wts, _) = random_instance(8, 2, 1, 9);
        let n = 8;
        for col in 0..n {
            let mut x = DenseMatrix::zeros(n, 1);
            x.set(col, 0, 1.0);
            let (_, tape) = forward_tape(&wts, &x, ResidualPolicy::None).unwrap();
            let (_, dw) = backward(&wts, &tape, &DenseMatrix::from_fn(n, 1, |_, _| 1.0)).unwrap();
            for (e, &de) in dw.iter().enumerate() {
                let mut with = wts.clone();
                with.values_mut()[e] = 1.0;
                let mut without = wts.clone();
                without.values_mut()[e] = 0.0;
                let diff: f64 = (0..n)
                    .map(|v| materialize(&with).get(v, col) - materialize(&without).get(v, col))
                    .sum();
                assert!((de - diff).abs() < 1e-12, "edge {e} col {col}");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let (wts, x) = random_instance(8, 2, 3, 10);
        let (_, tape) = forward_tape(&wts, &x, ResidualPolicy::None).unwrap();
        assert!(backward(&wts, &tape, &DenseMatrix::zeros(8, 2)).is_err());
        let other = ButterflyWeights::constant(ButterflySpec::with_base(16, 2).unwrap(), 1.0);
        assert!(backward(&other, &tape, &DenseMatrix::zeros(8, 3)).is_err());
    }
}
