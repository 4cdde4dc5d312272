//! Deterministic dense kernels.
//!
//! Row `i` of every product depends only on row `i` of the left operand and
//! the full right operand, with a fixed inner summation order. Consequence:
//! computing a subset of rows gives bit-identical values to slicing those
//! rows out of the full product, which is what makes sampled and full-graph
//! forward passes comparable at the bit level.

use ndarray::Array2;

fn rows(a: &Array2<f64>) -> (usize, usize, &[f64]) {
    let (m, n) = a.dim();
    let s = a.as_slice().expect("kernel operands are standard layout");
    (m, n, s)
}

/// `A [m×k] · B [k×n]`, accumulated in ascending `k` order per output row.
pub(crate) fn matmul_nn(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (m, k, a_s) = rows(a);
    let (_, n, b_s) = rows(b);
    let mut out = Array2::zeros((m, n));
    let o_s = out.as_slice_mut().expect("freshly allocated");
    for i in 0..m {
        let arow = &a_s[i * k..(i + 1) * k];
        let orow = &mut o_s[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b_s[kk * n..(kk + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `A [m×k] · Bᵀ` for `B [n×k]`, i.e. pairwise row dot products.
pub(crate) fn matmul_nt(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (m, k, a_s) = rows(a);
    let (n, _, b_s) = rows(b);
    let mut out = Array2::zeros((m, n));
    let o_s = out.as_slice_mut().expect("freshly allocated");
    for i in 0..m {
        let arow = &a_s[i * k..(i + 1) * k];
        let orow = &mut o_s[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b_s[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o = acc;
        }
    }
    out
}

/// `Aᵀ · G` for `A [m×k]`, `G [m×n]`, accumulated in ascending row order.
pub(crate) fn matmul_tn(a: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let (m, k, a_s) = rows(a);
    let (_, n, g_s) = rows(g);
    let mut out = Array2::zeros((k, n));
    let o_s = out.as_slice_mut().expect("freshly allocated");
    for i in 0..m {
        let arow = &a_s[i * k..(i + 1) * k];
        let grow = &g_s[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let orow = &mut o_s[kk * n..(kk + 1) * n];
            for (o, &gij) in orow.iter_mut().zip(grow) {
                *o += aik * gij;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn products_match_reference() {
        let a = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let b = array![[7.0, 8.0, 9.0], [10.0, 11.0, 12.0]];
        assert_eq!(matmul_nn(&a, &b), a.dot(&b));
        let c = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(matmul_nt(&a, &a), a.dot(&a.t()));
        assert_eq!(matmul_tn(&a, &a), a.t().dot(&a));
        assert_eq!(matmul_nn(&c, &c), c.dot(&c));
    }

    #[test]
    fn row_subset_is_bit_identical() {
        // 17 rows of pseudo-random values; computing one row alone must give
        // the same bits as the full product.
        let mut x = 0.5f64;
        let a = Array2::from_shape_fn((17, 9), |_| {
            x = (x * 997.0 + 0.1).fract();
            x * 2.0 - 1.0
        });
        let b = Array2::from_shape_fn((9, 7), |(i, j)| ((i * 7 + j) as f64).sin());
        let full = matmul_nn(&a, &b);
        for i in [0usize, 5, 16] {
            let one = matmul_nn(&a.row(i).insert_axis(ndarray::Axis(0)).to_owned(), &b);
            assert_eq!(one.row(0), full.row(i));
        }
    }
}
