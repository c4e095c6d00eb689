//! Pairwise tensor contraction by permute + reshape + matrix product.

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64 as C64;

use crate::linalg::gemm;

/// Contract `a` and `b` over the paired axes. The result carries the free
/// axes of `a` in order, followed by the free axes of `b` in order.
pub fn tensordot(a: &ArrayD<C64>, a_axes: &[usize], b: &ArrayD<C64>, b_axes: &[usize]) -> ArrayD<C64> {
    assert_eq!(a_axes.len(), b_axes.len(), "axis lists differ in length");
    for (&i, &j) in a_axes.iter().zip(b_axes) {
        assert_eq!(a.shape()[i], b.shape()[j], "contracted extents differ");
    }
    let a_free: Vec<usize> = (0..a.ndim()).filter(|i| !a_axes.contains(i)).collect();
    let b_free: Vec<usize> = (0..b.ndim()).filter(|i| !b_axes.contains(i)).collect();

    let m: usize = a_free.iter().map(|&i| a.shape()[i]).product();
    let k: usize = a_axes.iter().map(|&i| a.shape()[i]).product();
    let n: usize = b_free.iter().map(|&i| b.shape()[i]).product();

    let a_perm: Vec<usize> = a_free.iter().chain(a_axes).copied().collect();
    let b_perm: Vec<usize> = b_axes.iter().chain(&b_free).copied().collect();
    let a_mat = contiguous(a, &a_perm);
    let b_mat = contiguous(b, &b_perm);

    let out = gemm(&a_mat, m, k, &b_mat, n);
    let shape: Vec<usize> = a_free
        .iter()
        .map(|&i| a.shape()[i])
        .chain(b_free.iter().map(|&i| b.shape()[i]))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape matches product")
}

/// Row-major data of `a` with its axes permuted.
fn contiguous(a: &ArrayD<C64>, perm: &[usize]) -> Vec<C64> {
    let identity = perm.iter().enumerate().all(|(i, &p)| i == p);
    if identity && a.is_standard_layout() {
        return a.as_slice().expect("standard layout").to_vec();
    }
    a.view().permuted_axes(IxDyn(perm)).iter().copied().collect()
}

/// Permute axes and return an owned standard-layout array.
pub fn permute(a: &ArrayD<C64>, perm: &[usize]) -> ArrayD<C64> {
    let shape: Vec<usize> = perm.iter().map(|&p| a.shape()[p]).collect();
    ArrayD::from_shape_vec(IxDyn(&shape), contiguous(a, perm)).expect("permuted shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> ArrayD<C64> {
        let n: usize = shape.iter().product();
        ArrayD::from_shape_vec(
            IxDyn(shape),
            (0..n).map(|i| C64::new(i as f64 * 0.5, (i % 3) as f64)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn matches_explicit_loops() {
        let a = seq(&[2, 3, 4]);
        let b = seq(&[4, 5, 3]);
        let c = tensordot(&a, &[1, 2], &b, &[2, 0]);
        assert_eq!(c.shape(), &[2, 5]);
        for i in 0..2 {
            for j in 0..5 {
                let mut e = C64::new(0.0, 0.0);
                for x in 0..3 {
                    for y in 0..4 {
                        e += a[[i, x, y]] * b[[y, j, x]];
                    }
                }
                assert!((c[[i, j]] - e).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn outer_product_when_no_axes() {
        let a = seq(&[2]);
        let b = seq(&[3]);
        let c = tensordot(&a, &[], &b, &[]);
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c[[1, 2]], a[[1]] * b[[2]]);
    }

    #[test]
    fn permute_reorders() {
        let a = seq(&[2, 3, 4]);
        let p = permute(&a, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p[[3, 1, 2]], a[[1, 2, 3]]);
    }
}
