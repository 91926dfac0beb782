//! Scalar-generic inner loops shared by the f64 verification path and the
//! f32 benchmark path.
//!
//! All buffers are row-major. A "column" is one spatial site; rows are channels.

use num_traits::Float;

/// `out = a * b` with `a: rows x inner`, `b: inner x cols`.
///
/// Each output entry accumulates over `inner` in ascending order.
pub fn matmul<T: Float>(a: &[T], rows: usize, inner: usize, b: &[T], cols: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for v in out.iter_mut() {
        *v = T::zero();
    }
    for i in 0..rows {
        let out_row = &mut out[i * cols..(i + 1) * cols];
        for j in 0..inner {
            let aij = a[i * inner + j];
            let b_row = &b[j * cols..(j + 1) * cols];
            for (o, &x) in out_row.iter_mut().zip(b_row) {
                *o = *o + aij * x;
            }
        }
    }
}

/// Applies one butterfly layer in place.
///
/// The layer has radix `radix` and block size `block` (a multiple of `radix`).
/// Rows `{base + j * part : j < radix}` with `part = block / radix` form a
/// closed group: output row `base + a * part` reads only rows of its own
/// group, so each group is staged through `scratch` and overwritten.
///
/// `weights` holds `n * radix` values: output row `r`, branch `j` lives at
/// `r * radix + j`.
pub fn butterfly_layer_inplace<T: Float>(
    radix: usize,
    block: usize,
    weights: &[T],
    data: &mut [T],
    n: usize,
    cols: usize,
    scratch: &mut Vec<T>,
) {
    debug_assert_eq!(block % radix, 0);
    debug_assert_eq!(weights.len(), n * radix);
    debug_assert_eq!(data.len(), n * cols);
    let part = block / radix;
    scratch.clear();
    scratch.resize(radix * cols, T::zero());
    for block_start in (0..n).step_by(block) {
        for offset in 0..part {
            let base = block_start + offset;
            for j in 0..radix {
                let row = base + j * part;
                scratch[j * cols..(j + 1) * cols].copy_from_slice(&data[row * cols..(row + 1) * cols]);
            }
            for a in 0..radix {
                let row = base + a * part;
                let w = &weights[row * radix..(row + 1) * radix];
                let out = &mut data[row * cols..(row + 1) * cols];
                for v in out.iter_mut() {
                    *v = T::zero();
                }
                for (j, &wj) in w.iter().enumerate() {
                    let src = &scratch[j * cols..(j + 1) * cols];
                    for (o, &x) in out.iter_mut().zip(src) {
                        *o = *o + wj * x;
                    }
                }
            }
        }
    }
}
