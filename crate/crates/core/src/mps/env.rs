//! Left/right environments `E[bra, w_1, .., w_n, ket]` for stacks of MPO
//! layers sandwiched between a bra and a ket MPS.

use ndarray::{Array3, Array4, ArrayD, IxDyn};
use num_complex::Complex64 as C64;

use crate::linalg;
use crate::linalg::gemm;

use super::{Mpo, Mps};

pub(crate) fn edge(layers: usize) -> ArrayD<C64> {
    ArrayD::from_elem(IxDyn(&vec![1; layers + 2]), C64::new(1.0, 0.0))
}

/// Row-major permutation of a rank-4 buffer.
fn permute4(data: &[C64], dims: [usize; 4], perm: [usize; 4]) -> Vec<C64> {
    let strides = [dims[1] * dims[2] * dims[3], dims[2] * dims[3], dims[3], 1];
    let nd = perm.map(|p| dims[p]);
    let ns = perm.map(|p| strides[p]);
    let mut out = Vec::with_capacity(data.len());
    for i in 0..nd[0] {
        for j in 0..nd[1] {
            for k in 0..nd[2] {
                let base = i * ns[0] + j * ns[1] + k * ns[2];
                for l in 0..nd[3] {
                    out.push(data[base + l * ns[3]]);
                }
            }
        }
    }
    out
}

/// Product of a stack of MPO layers at one site as a single tensor
/// `[w, out, in, v]`. Layer 1 sits next to the bra; the merged bond
/// indices run row-major over the layers, matching the environment axes.
pub(crate) fn merge_layers(ops: &[&Array4<C64>], d: usize) -> Array4<C64> {
    let mut acc = Array4::<C64>::zeros((1, d, d, 1));
    for s in 0..d {
        acc[[0, s, s, 0]] = C64::new(1.0, 0.0);
    }
    for w in ops {
        let (wa, _, _, va) = acc.dim();
        let (wb, _, _, vb) = w.dim();
        let mut next = Array4::<C64>::zeros((wa * wb, d, d, va * vb));
        for a in 0..wa {
            for b in 0..wb {
                for s in 0..d {
                    for u in 0..d {
                        for x in 0..va {
                            for y in 0..vb {
                                let mut sum = C64::new(0.0, 0.0);
                                for t in 0..d {
                                    sum += acc[[a, s, t, x]] * w[[b, t, u, y]];
                                }
                                next[[a * wb + b, s, u, x * vb + y]] = sum;
                            }
                        }
                    }
                }
            }
        }
        acc = next;
    }
    acc
}

fn mirror3(a: &Array3<C64>) -> Array3<C64> {
    a.view().permuted_axes([2, 1, 0]).as_standard_layout().into_owned()
}

fn mirror4(w: &Array4<C64>) -> Array4<C64> {
    w.view().permuted_axes([3, 1, 2, 0]).as_standard_layout().into_owned()
}

fn flat<D: ndarray::Dimension>(a: &ndarray::Array<C64, D>) -> std::borrow::Cow<'_, [C64]> {
    match a.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().copied().collect()),
    }
}

/// A merged site operator in the two layouts the contractions need.
#[derive(Clone, Debug)]
pub(crate) struct SiteOperator {
    w: usize,
    d: usize,
    v: usize,
    /// `[w, in, out, v]` flattened as a `(w in) x (out v)` matrix.
    wuv: Vec<C64>,
    /// `[w, out, in, v]`.
    raw: Array4<C64>,
}

impl SiteOperator {
    pub(crate) fn new(ops: &[&Array4<C64>], d: usize) -> Self {
        Self::from_merged(merge_layers(ops, d))
    }

    fn from_merged(raw: Array4<C64>) -> Self {
        let (w, d, _, v) = raw.dim();
        let wuv = permute4(&flat(&raw), [w, d, d, v], [0, 2, 1, 3]);
        Self { w, d, v, wuv, raw }
    }

    fn mirrored(&self) -> Self {
        Self::from_merged(mirror4(&self.raw))
    }
}

/// `T[a, b', s, v] = sum E[a, w, a'] W[w, s, u, v] x[a', u, b']`.
fn absorb(e: &[C64], a: usize, ap: usize, op: &SiteOperator, x: &[C64], bp: usize) -> Vec<C64> {
    let (w, d, v) = (op.w, op.d, op.v);
    let t1 = gemm(e, a * w, ap, x, d * bp);
    let t1 = permute4(&t1, [a, w, d, bp], [0, 3, 1, 2]);
    gemm(&t1, a * bp, w * d, &op.wuv, d * v)
}

/// `E'[b, v, b'] = sum conj(bra[a, s, b]) E[a, w, a'] W[w, s, u, v] ket[a', u, b']`.
fn extend_left_merged(e: &[C64], bra: &Array3<C64>, op: &SiteOperator, ket: &Array3<C64>) -> Vec<C64> {
    let (a, d, b) = bra.dim();
    let (ap, _, bp) = ket.dim();
    let t2 = absorb(e, a, ap, op, &flat(ket), bp);
    let t2 = permute4(&t2, [a, bp, d, op.v], [0, 2, 3, 1]);
    let bra_h: Vec<C64> = {
        let bf = flat(bra);
        let mut out = vec![C64::new(0.0, 0.0); a * d * b];
        for i in 0..a * d {
            for j in 0..b {
                out[j * a * d + i] = bf[i * b + j].conj();
            }
        }
        out
    };
    gemm(&bra_h, b, a * d, &t2, op.v * bp)
}

fn env_shape(bond: usize, ops: &[&Array4<C64>], bond_p: usize, right: bool) -> Vec<usize> {
    let mut shape = vec![bond];
    shape.extend(ops.iter().map(|w| if right { w.shape()[0] } else { w.shape()[3] }));
    shape.push(bond_p);
    shape
}

/// Grow a left environment across one site.
pub(crate) fn extend_left(e: &ArrayD<C64>, bra: &Array3<C64>, ops: &[&Array4<C64>], ket: &Array3<C64>) -> ArrayD<C64> {
    let op = SiteOperator::new(ops, bra.shape()[1]);
    let out = extend_left_merged(&flat(e), bra, &op, ket);
    ArrayD::from_shape_vec(IxDyn(&env_shape(bra.shape()[2], ops, ket.shape()[2], false)), out).expect("shape")
}

/// Grow a right environment across one site (mirror image of [`extend_left`]).
pub(crate) fn extend_right(f: &ArrayD<C64>, bra: &Array3<C64>, ops: &[&Array4<C64>], ket: &Array3<C64>) -> ArrayD<C64> {
    let op = SiteOperator::new(ops, bra.shape()[1]).mirrored();
    let out = extend_left_merged(&flat(f), &mirror3(bra), &op, &mirror3(ket));
    ArrayD::from_shape_vec(IxDyn(&env_shape(bra.shape()[0], ops, ket.shape()[0], true)), out).expect("shape")
}

/// `y[a, s, b] = sum T[a, b', s, v] F[b, v, b']`, with `F` given as a
/// `(v b') x b` matrix.
fn close_right(t2: &[C64], a: usize, bp: usize, d: usize, v: usize, f_vbpb: &[C64], b: usize) -> Vec<C64> {
    let t = permute4(t2, [a, bp, d, v], [0, 2, 3, 1]);
    gemm(&t, a * d, v * bp, f_vbpb, b)
}

fn right_matrix(f: &[C64], b: usize, v: usize, bp: usize) -> Vec<C64> {
    // [b, v, b'] -> [v, b', b]
    permute4(f, [1, b, v, bp], [0, 2, 3, 1])
}

/// Effective operator at one site applied to `x[a', u, b']`.
pub(crate) fn apply_local(e: &ArrayD<C64>, ops: &[&Array4<C64>], f: &ArrayD<C64>, x: &Array3<C64>) -> Array3<C64> {
    let (ap, d, bp) = x.dim();
    let a = e.shape()[0];
    let b = f.shape()[0];
    let op = SiteOperator::new(ops, d);
    let t2 = absorb(&flat(e), a, ap, &op, &flat(x), bp);
    let fm = right_matrix(&flat(f), b, op.v, bp);
    Array3::from_shape_vec((a, d, b), close_right(&t2, a, bp, d, op.v, &fm, b)).expect("shape")
}

/// Full contraction `<bra| O_1 .. O_n |ket>`.
pub(crate) fn sandwich(bra: &Mps, ops: &[&Mpo], ket: &Mps) -> C64 {
    let n = ops.len();
    let mut e = edge(n);
    for k in 0..bra.length() {
        let ws: Vec<&Array4<C64>> = ops.iter().map(|m| m.tensor(k)).collect();
        e = extend_left(&e, bra.tensor(k), &ws, ket.tensor(k));
    }
    e.iter().next().copied().expect("scalar environment")
}

/// Cached environments for one (bra, layers, ket) triple along the chain.
///
/// `left[k]` covers sites `< k` and `right[k]` covers sites `> k`.
#[derive(Clone, Debug)]
pub struct Environments {
    layers: usize,
    left: Vec<Option<ArrayD<C64>>>,
    right: Vec<Option<ArrayD<C64>>>,
}

impl Environments {
    pub(crate) fn new(length: usize, layers: usize) -> Self {
        let mut left = vec![None; length];
        let mut right = vec![None; length];
        left[0] = Some(edge(layers));
        right[length - 1] = Some(edge(layers));
        Self { layers, left, right }
    }

    /// Build all right environments from the last site down to `from`.
    pub(crate) fn build_right(&mut self, bra: &Mps, ops: &[&Mpo], ket: &Mps, down_to: usize) {
        let l = bra.length();
        for k in (down_to..l - 1).rev() {
            self.update_right(bra, ops, ket, k + 1);
        }
    }

    pub(crate) fn build_left(&mut self, bra: &Mps, ops: &[&Mpo], ket: &Mps, up_to: usize) {
        for k in 0..up_to {
            self.update_left(bra, ops, ket, k);
        }
    }

    /// Recompute `left[k + 1]` from `left[k]` and site `k`.
    pub(crate) fn update_left(&mut self, bra: &Mps, ops: &[&Mpo], ket: &Mps, k: usize) {
        debug_assert_eq!(ops.len(), self.layers);
        let ws: Vec<&Array4<C64>> = ops.iter().map(|m| m.tensor(k)).collect();
        let e = self.left[k].as_ref().expect("left environment present");
        self.left[k + 1] = Some(extend_left(e, bra.tensor(k), &ws, ket.tensor(k)));
    }

    /// Recompute `right[k - 1]` from `right[k]` and site `k`.
    pub(crate) fn update_right(&mut self, bra: &Mps, ops: &[&Mpo], ket: &Mps, k: usize) {
        let ws: Vec<&Array4<C64>> = ops.iter().map(|m| m.tensor(k)).collect();
        let f = self.right[k].as_ref().expect("right environment present");
        self.right[k - 1] = Some(extend_right(f, bra.tensor(k), &ws, ket.tensor(k)));
    }

    pub(crate) fn left(&self, k: usize) -> &ArrayD<C64> {
        self.left[k].as_ref().expect("left environment present")
    }

    pub(crate) fn right(&self, k: usize) -> &ArrayD<C64> {
        self.right[k].as_ref().expect("right environment present")
    }
}

/// Effective operator of a layer stack at one site, in the gauge of the
/// surrounding tensors.
#[derive(Clone, Debug)]
pub struct LocalOperator {
    /// `[a, w, a']`, flattened.
    left: Vec<C64>,
    /// `[v, b', b]`, flattened.
    right: Vec<C64>,
    op: SiteOperator,
    pub(crate) shape: (usize, usize, usize),
}

impl LocalOperator {
    pub(crate) fn new(envs: &Environments, layers: &[&Mpo], site: usize, shape: (usize, usize, usize)) -> Self {
        let ops: Vec<&Array4<C64>> = layers.iter().map(|m| m.tensor(site)).collect();
        let op = SiteOperator::new(&ops, shape.1);
        let right = right_matrix(&flat(envs.right(site)), shape.2, op.v, shape.2);
        Self {
            left: flat(envs.left(site)).into_owned(),
            right,
            op,
            shape,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    /// Operator applied to a site tensor flattened row-major.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let (l, d, r) = self.shape;
        let t2 = absorb(&self.left, l, l, &self.op, x, r);
        close_right(&t2, l, r, d, self.op.v, &self.right, r)
    }

    /// Dense matrix (row = output index), Hermitian-symmetrized.
    pub fn dense(&self) -> ndarray::Array2<C64> {
        let (l, d, r) = self.shape;
        let (w, v) = (self.op.w, self.op.v);
        // P[a, a', s, u, v] = sum_w E[a, w, a'] W[w, s, u, v]
        let e = permute4(&self.left, [1, l, w, l], [0, 1, 3, 2]);
        let p = gemm(&e, l * l, w, &flat(&self.op.raw), d * d * v);
        // Q[a, a', s, u, b, b'] = sum_v P[.., v] F[b, v, b']
        let f = permute4(&self.right, [1, v, r, r], [0, 1, 3, 2]);
        let q = gemm(&p, l * l * d * d, v, &f, r * r);
        let n = l * d * r;
        let mut m = ndarray::Array2::<C64>::zeros((n, n));
        let mut idx = 0;
        for a in 0..l {
            for ap in 0..l {
                for s in 0..d {
                    for u in 0..d {
                        for b in 0..r {
                            for bp in 0..r {
                                m[[(a * d + s) * r + b, (ap * d + u) * r + bp]] = q[idx];
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
        for i in 0..n {
            m[[i, i]].im = 0.0;
            for j in i + 1..n {
                let avg = (m[[i, j]] + m[[j, i]].conj()) * 0.5;
                m[[i, j]] = avg;
                m[[j, i]] = avg.conj();
            }
        }
        m
    }
}

/// Everything needed to evaluate and minimize the step cost at one site:
/// `D^2(x) = x^H M x - 2 Re x^H v + <psi|G^2|psi>`, where `M` comes from the
/// `<psi'|H_s H_s|psi'>` environments and `v` from `<psi'|H_s G|psi>`.
#[derive(Clone, Debug)]
pub struct LocalEnvironment {
    pub site: usize,
    pub metric: LocalOperator,
    /// The right-hand side `v`, shaped like the site tensor.
    pub rhs: Array3<C64>,
    /// `<psi|G^2|psi>`, the part of the cost independent of `psi'`.
    pub constant: f64,
}

impl LocalEnvironment {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn rhs_flat(&self) -> Vec<C64> {
        self.rhs.iter().copied().collect()
    }

    /// `D^2` for a candidate site tensor.
    pub fn cost_squared(&self, x: &[C64]) -> f64 {
        let mx = self.metric.apply(x);
        let v = self.rhs_flat();
        linalg::dotc(x, &mx).re - 2.0 * linalg::dotc(x, &v).re + self.constant
    }
}
