//! Dense factorizations (through faer) and matrix-free Krylov / quasi-Newton
//! solvers over complex vectors.

use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, MatRef, Par, Side};
use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

pub fn to_faer(a: &Array2<C64>) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn to_faer_real(a: &Array2<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_faer<T: Copy>(m: MatRef<'_, T>) -> Array2<T> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Row-major `(m x k) * (k x n)` product.
pub fn gemm(a: &[C64], m: usize, k: usize, b: &[C64], n: usize) -> Vec<C64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![ZERO; m * n];
    if m == 0 || n == 0 {
        return out;
    }
    if k == 0 {
        return out;
    }
    // row-major C = A B is column-major C^T = B^T A^T
    let at = MatRef::from_column_major_slice(a, k, m);
    let bt = MatRef::from_column_major_slice(b, n, k);
    let ct = faer::MatMut::from_column_major_slice_mut(&mut out, n, m);
    faer::linalg::matmul::matmul(ct, Accum::Replace, bt, at, C64::new(1.0, 0.0), Par::Seq);
    out
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub fn hermitian_eigen(a: &Array2<C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let evd = to_faer(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(format!("eigendecomposition failed: {e:?}")))?;
    let vals = (0..a.nrows()).map(|i| evd.S()[i].re).collect();
    Ok((vals, evd.U().to_owned()))
}

pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    symmetric_eigen_faer(&to_faer_real(a))
}

pub fn symmetric_eigen_faer(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(format!("eigendecomposition failed: {e:?}")))?;
    let vals = (0..a.nrows()).map(|i| evd.S()[i]).collect();
    Ok((vals, evd.U().to_owned()))
}

pub fn hermitian_eigenvalues(a: &Array2<C64>) -> Result<Vec<f64>> {
    let vals = to_faer(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(format!("eigenvalues failed: {e:?}")))?;
    Ok(vals)
}

/// Thin SVD `a = U diag(s) V^H`; returns `(U, s, V^H)` with `s` descending.
pub fn thin_svd(a: &Array2<C64>) -> Result<(Array2<C64>, Vec<f64>, Array2<C64>)> {
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::Linalg(format!("SVD failed: {e:?}")))?;
    let k = a.nrows().min(a.ncols());
    let s = (0..k).map(|i| svd.S()[i].re).collect();
    let u = from_faer(svd.U());
    let v = svd.V();
    let vh = Array2::from_shape_fn((k, a.ncols()), |(i, j)| v[(j, i)].conj());
    Ok((u, s, vh))
}

pub fn singular_values(a: &Array2<C64>) -> Result<Vec<f64>> {
    to_faer(a)
        .singular_values()
        .map_err(|e| Error::Linalg(format!("SVD failed: {e:?}")))
}

/// Thin QR `a = Q R`, `Q` with orthonormal columns.
pub fn thin_qr(a: &Array2<C64>) -> (Array2<C64>, Array2<C64>) {
    let qr = to_faer(a).qr();
    (from_faer(qr.compute_thin_Q().as_ref()), from_faer(qr.thin_R()))
}

/// Solve a Hermitian positive (semi)definite system densely: Cholesky, with
/// a pivoted LU fallback when the factorization breaks down.
pub fn solve_hpd(m: &Array2<C64>, b: &[C64]) -> Vec<C64> {
    let fm = to_faer(m);
    let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    match fm.llt(Side::Lower) {
        Ok(llt) => llt.solve_in_place(rhs.as_mut()),
        Err(_) => fm.partial_piv_lu().solve_in_place(rhs.as_mut()),
    }
    (0..b.len()).map(|i| rhs[(i, 0)]).collect()
}

/// Minimizer of `x^H M x - 2 Re(b^H x)` for Hermitian positive semidefinite
/// `M` closest to `x0`. Falls back to an eigendecomposition when `M` is
/// singular; directions in its null space keep their values from `x0`.
pub fn solve_hpsd_near(m: &Array2<C64>, b: &[C64], x0: &[C64]) -> Vec<C64> {
    let fm = to_faer(m);
    if let Ok(llt) = fm.llt(Side::Lower) {
        let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        llt.solve_in_place(rhs.as_mut());
        let x: Vec<C64> = (0..b.len()).map(|i| rhs[(i, 0)]).collect();
        if x.iter().all(|v| v.is_finite()) {
            return x;
        }
    }
    let Ok((vals, vecs)) = hermitian_eigen(m) else {
        return x0.to_vec();
    };
    let top = vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cut = top * 1e-13;
    let n = b.len();
    // residual of the normal equations at x0, projected onto the range
    let mx0 = m.dot(&ndarray::ArrayView1::from(x0));
    let mut x = x0.to_vec();
    for j in 0..n {
        if vals[j] <= cut {
            continue;
        }
        let mut c = C64::new(0.0, 0.0);
        for i in 0..n {
            c += vecs[(i, j)].conj() * (b[i] - mx0[i]);
        }
        let c = c / vals[j];
        for i in 0..n {
            x[i] += vecs[(i, j)] * c;
        }
    }
    x
}

pub fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    /// Estimated (MINRES) or recomputed (CG) residual norm relative to `|b|`.
    pub relative_residual: f64,
    /// Growing lower bound on the condition number (MINRES only).
    pub condition: f64,
}

/// MINRES for Hermitian (possibly indefinite) `A x = b`, following
/// Paige & Saunders. `apply(v, out)` writes `A v` into `out`.
pub fn minres(apply: impl Fn(&[C64], &mut [C64]), b: &[C64], rtol: f64, max_iter: usize) -> KrylovOutcome {
    let n = b.len();
    let eps = f64::EPSILON;
    let mut x = vec![ZERO; n];
    let beta1 = norm(b);
    if beta1 == 0.0 {
        return KrylovOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
            condition: 1.0,
        };
    }
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = b.to_vec();
    let mut v = vec![ZERO; n];
    let mut w = vec![ZERO; n];
    let mut w1 = vec![ZERO; n];
    let mut w2 = vec![ZERO; n];

    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut tnorm2 = 0.0;
    let mut gmax: f64 = 0.0;
    let mut gmin = f64::MAX;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut rnorm = beta1;
    let mut acond = 1.0;
    let mut itn = 0;

    while itn < max_iter {
        itn += 1;
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = yi * s;
        }
        apply(&v, &mut y);
        if itn >= 2 {
            axpy(C64::new(-beta / oldb, 0.0), &r1, &mut y);
        }
        let alfa = dotc(&v, &y).re;
        axpy(C64::new(-alfa / beta, 0.0), &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        oldb = beta;
        beta = norm(&y);
        tnorm2 += alfa * alfa + oldb * oldb + beta * beta;

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;

        let gamma = gbar.hypot(beta).max(eps);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - w1[i] * oldeps - w2[i] * delta) * denom;
            x[i] += w[i] * phi;
        }

        gmax = gmax.max(gamma);
        gmin = gmin.min(gamma);
        acond = gmax / gmin;
        rnorm = phibar;

        let anorm = tnorm2.sqrt();
        let ynorm = norm(&x);
        if rnorm <= rtol * beta1 {
            break;
        }
        // residual has stagnated at rounding level
        if rnorm <= eps * anorm * ynorm {
            break;
        }
        if beta <= eps * beta1 {
            break;
        }
    }
    KrylovOutcome {
        x,
        iterations: itn,
        relative_residual: rnorm / beta1,
        condition: acond,
    }
}

/// Conjugate gradients for a Hermitian positive definite operator, warm
/// started at `x0`. Stops when `|b - A x| <= rtol |b|`.
pub fn conjugate_gradient(
    apply: impl Fn(&[C64], &mut [C64]),
    b: &[C64],
    x0: Vec<C64>,
    rtol: f64,
    max_iter: usize,
) -> KrylovOutcome {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0;
    let mut ap = vec![ZERO; n];
    apply(&x, &mut ap);
    let mut r: Vec<C64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    if bnorm == 0.0 {
        return KrylovOutcome {
            relative_residual: norm(&r),
            x,
            iterations: 0,
            condition: 1.0,
        };
    }
    let mut p = r.clone();
    let mut rr = dotc(&r, &r).re;
    let mut itn = 0;
    while itn < max_iter && rr.sqrt() > rtol * bnorm {
        itn += 1;
        apply(&p, &mut ap);
        let pap = dotc(&p, &ap).re;
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        axpy(C64::new(alpha, 0.0), &p, &mut x);
        axpy(C64::new(-alpha, 0.0), &ap, &mut r);
        let rr_new = dotc(&r, &r).re;
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + *pi * beta;
        }
    }
    KrylovOutcome {
        x,
        iterations: itn,
        relative_residual: rr.sqrt() / bnorm,
        condition: f64::NAN,
    }
}

/// Lowest eigenpair of a Hermitian operator by restarted Lanczos with full
/// reorthogonalization, started from `x0`.
pub fn lanczos_lowest(
    apply: impl Fn(&[C64]) -> Vec<C64>,
    x0: &[C64],
    krylov: usize,
    restarts: usize,
    tol: f64,
) -> (f64, Vec<C64>) {
    let n = x0.len();
    let mut x: Vec<C64> = x0.to_vec();
    if norm(&x) == 0.0 {
        x[0] = C64::new(1.0, 0.0);
    }
    let mut theta = f64::NAN;
    for _ in 0..restarts.max(1) {
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let m = krylov.min(n).max(1);
        let mut basis: Vec<Vec<C64>> = vec![x.clone()];
        let mut alpha: Vec<f64> = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        for j in 0..m {
            let mut w = apply(&basis[j]);
            alpha.push(dotc(&basis[j], &w).re);
            for b in &basis {
                let c = dotc(b, &w);
                axpy(-c, b, &mut w);
            }
            for b in &basis {
                let c = dotc(b, &w);
                axpy(-c, b, &mut w);
            }
            let bn = norm(&w);
            if j + 1 == m || bn < 1e-14 {
                break;
            }
            beta.push(bn);
            w.iter_mut().for_each(|v| *v /= bn);
            basis.push(w);
        }
        let k = alpha.len();
        let t = Mat::<f64>::from_fn(k, k, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let Ok((vals, vecs)) = symmetric_eigen_faer(&t) else {
            break;
        };
        theta = vals[0];
        let mut y = vec![ZERO; n];
        for (i, b) in basis.iter().take(k).enumerate() {
            axpy(C64::new(vecs[(i, 0)], 0.0), b, &mut y);
        }
        let ny = norm(&y);
        y.iter_mut().for_each(|v| *v /= ny);
        let mut r = apply(&y);
        axpy(C64::new(-theta, 0.0), &y, &mut r);
        x = y;
        if norm(&r) <= tol * theta.abs().max(1.0) {
            break;
        }
    }
    (theta, x)
}

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the gradient infinity norm drops below this.
    pub gtol: f64,
    /// Stop when the relative objective decrease per iteration drops below this.
    pub ftol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 20,
            max_iter: 5000,
            gtol: 1e-12,
            ftol: 1e-16,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with a strong-Wolfe line search.
/// `fg(x, grad)` returns the objective and writes its gradient.
pub fn lbfgs(mut fg: impl FnMut(&[f64], &mut [f64]) -> f64, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsOutcome {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut evals = 1;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iters = 0;

    while iters < opts.max_iter {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= opts.gtol {
            break;
        }
        iters += 1;

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alphas[i] * yj;
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alphas[i] - beta) * sj;
            }
        }
        let mut dg = dot(&d, &g);
        if dg >= 0.0 {
            // not a descent direction; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v).collect();
            dg = dot(&d, &g);
        }
        let step0 = if k == 0 {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };
        let ls = wolfe_search(&mut fg, &x, f, &g, &d, dg, step0, &mut evals);
        let Some((step, f_new, g_new)) = ls else {
            break;
        };
        let s: Vec<f64> = d.iter().map(|v| v * step).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let decrease = f - f_new;
        f = f_new;
        g = g_new;
        if dot(&s, &y) > 1e-300 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        if decrease <= opts.ftol * f.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    LbfgsOutcome {
        x,
        value: f,
        iterations: iters,
        evaluations: evals,
    }
}

#[allow(clippy::too_many_arguments)]
fn wolfe_search(
    fg: &mut impl FnMut(&[f64], &mut [f64]) -> f64,
    x: &[f64],
    f0: f64,
    _g0: &[f64],
    d: &[f64],
    dg0: f64,
    step0: f64,
    evals: &mut usize,
) -> Option<(f64, f64, Vec<f64>)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let n = x.len();
    let mut trial = vec![0.0; n];
    let mut eval = |a: f64| {
        let mut g = vec![0.0; n];
        for i in 0..n {
            trial[i] = x[i] + a * d[i];
        }
        *evals += 1;
        let f = fg(&trial, &mut g);
        let dg = dot(&g, d);
        (f, dg, g)
    };

    // bracketing phase
    let (mut a_prev, mut f_prev, mut dg_prev) = (0.0, f0, dg0);
    let mut a = step0;
    let bracket = 'outer: {
        for i in 0..50 {
            let (f, dg, g) = eval(a);
            if !f.is_finite() || f > f0 + C1 * a * dg0 || (i > 0 && f >= f_prev) {
                break 'outer (a_prev, f_prev, dg_prev, a, f);
            }
            if dg.abs() <= -C2 * dg0 {
                return Some((a, f, g));
            }
            if dg >= 0.0 {
                break 'outer (a, f, dg, a_prev, f_prev);
            }
            a_prev = a;
            f_prev = f;
            dg_prev = dg;
            a *= 2.0;
        }
        return None;
    };

    // zoom phase
    let (mut a_lo, mut f_lo, mut dg_lo, mut a_hi, mut f_hi) = bracket;
    for _ in 0..60 {
        let width = a_hi - a_lo;
        let mut a_j = a_lo + 0.5 * width;
        if f_hi.is_finite() {
            let denom = 2.0 * (f_hi - f_lo - dg_lo * width);
            if denom > 0.0 {
                a_j = a_lo - dg_lo * width * width / denom;
            }
        }
        let (lo, hi) = (a_lo.min(a_hi), a_lo.max(a_hi));
        let margin = 0.1 * (hi - lo);
        if !(a_j > lo + margin && a_j < hi - margin) {
            a_j = 0.5 * (a_lo + a_hi);
        }
        let (f, dg, g) = eval(a_j);
        if !f.is_finite() || f > f0 + C1 * a_j * dg0 || f >= f_lo {
            a_hi = a_j;
            f_hi = f;
        } else {
            if dg.abs() <= -C2 * dg0 {
                return Some((a_j, f, g));
            }
            if dg * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
            }
            a_lo = a_j;
            f_lo = f;
            dg_lo = dg;
        }
        if (a_hi - a_lo).abs() <= 1e-15 * a_lo.abs().max(a_hi.abs()) {
            break;
        }
    }
    // the interval collapsed: take the best sufficient-decrease point
    if a_lo > 0.0 && f_lo < f0 {
        let (f, _, g) = eval(a_lo);
        return Some((a_lo, f, g));
    }
    None
}
