//! Statevector backend: the exact oracle for every other module.
//!
//! Operators are applied term by term from bit masks; the dense matrix is
//! only formed for diagonalization. When an operator conserves the number of
//! down spins (as the disordered Heisenberg chain does) the spectrum is
//! computed sector by sector, which is exact and much cheaper.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, lbfgs, minres, LbfgsOptions};
use crate::models::{check_cap, OperatorTerms, DENSE_CAP};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Condition estimates above this make the shift-invert solve untrustworthy.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Required true residual of the least-squares linear solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    length: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn from_amplitudes(length: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 1usize << length {
            return Err(Error::DimensionMismatch {
                expected: 1 << length,
                found: amps.len(),
            });
        }
        Ok(Self { length, amps })
    }

    pub fn zeros(length: usize) -> Self {
        Self {
            length,
            amps: vec![ZERO; 1 << length],
        }
    }

    pub fn basis(length: usize, index: usize) -> Self {
        let mut s = Self::zeros(length);
        s.amps[index] = C64::new(1.0, 0.0);
        s
    }

    /// Basis state from a `0`/`1` string; character `k` is site `k`.
    pub fn from_bitstring(bits: &str) -> Result<Self> {
        let index = bitstring_index(bits)?;
        Ok(Self::basis(bits.len(), index))
    }

    /// `|0101...>`, i.e. up, down, up, ...
    pub fn neel(length: usize) -> Self {
        let bits: String = (0..length).map(|k| if k % 2 == 0 { '0' } else { '1' }).collect();
        Self::from_bitstring(&bits).expect("valid pattern")
    }

    /// Normalized state with independent Gaussian-like amplitudes.
    pub fn random(length: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps = (0..1usize << length)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let mut s = Self { length, amps };
        s.normalize();
        s
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.amps)
    }

    /// Scale to unit norm; returns the previous norm.
    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amps.iter_mut().for_each(|a| *a *= inv);
        }
        n
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        linalg::dotc(&self.amps, &other.amps)
    }

    /// `|<self|other>|^2` for normalized states.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn scaled(mut self, s: C64) -> Self {
        self.amps.iter_mut().for_each(|a| *a *= s);
        self
    }

    /// `self + s * other`.
    pub fn add_scaled(mut self, s: C64, other: &StateVector) -> Self {
        linalg::axpy(s, &other.amps, &mut self.amps);
        self
    }
}

pub fn bitstring_index(bits: &str) -> Result<usize> {
    if bits.is_empty() || bits.len() > 63 {
        return Err(Error::InvalidArgument(format!("bad bitstring length {}", bits.len())));
    }
    bits.chars().try_fold(0usize, |acc, c| match c {
        '0' => Ok(acc << 1),
        '1' => Ok((acc << 1) | 1),
        _ => Err(Error::InvalidArgument(format!("bad bitstring character {c:?}"))),
    })
}

/// An operator prepared for repeated application: terms grouped by their
/// bit-flip mask, so each group is one pass over the amplitudes.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    length: usize,
    shift: f64,
    groups: Vec<(u64, Vec<(u64, C64)>)>,
}

impl SparseOperator {
    pub fn new(h: &OperatorTerms) -> Self {
        let mut by_x: BTreeMap<u64, Vec<(u64, C64)>> = BTreeMap::new();
        for (c, m) in h.compile() {
            by_x.entry(m.x).or_default().push((m.z, m.phase * c));
        }
        Self {
            length: h.length(),
            shift: h.constant_shift(),
            groups: by_x.into_iter().collect(),
        }
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// `out = H v`.
    pub fn apply_into(&self, v: &[C64], out: &mut [C64]) {
        for (o, x) in out.iter_mut().zip(v) {
            *o = x * self.shift;
        }
        for (x, zs) in &self.groups {
            for (b, &amp) in v.iter().enumerate() {
                if amp == ZERO {
                    continue;
                }
                let b = b as u64;
                let mut c = ZERO;
                for &(z, coeff) in zs {
                    if (b & z).count_ones() & 1 == 0 {
                        c += coeff;
                    } else {
                        c -= coeff;
                    }
                }
                out[(b ^ x) as usize] += c * amp;
            }
        }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; v.len()];
        self.apply_into(v, &mut out);
        out
    }

    /// Matrix element `<b ^ x| H |b>` for every group, as `(target, value)`.
    fn column(&self, b: u64) -> impl Iterator<Item = (u64, C64)> + '_ {
        self.groups.iter().map(move |(x, zs)| {
            let mut c = ZERO;
            for &(z, coeff) in zs {
                if (b & z).count_ones() & 1 == 0 {
                    c += coeff;
                } else {
                    c -= coeff;
                }
            }
            (b ^ x, c)
        })
    }

    /// True when no matrix element connects different numbers of set bits.
    pub fn conserves_popcount(&self) -> bool {
        let dim = 1u64 << self.length;
        for b in 0..dim {
            for (t, c) in self.column(b) {
                if t.count_ones() != b.count_ones() && c.norm() > 1e-13 {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_real(&self) -> bool {
        self.groups.iter().all(|(_, zs)| zs.iter().all(|(_, c)| c.im == 0.0))
    }
}

pub fn apply_operator(h: &OperatorTerms, psi: &StateVector) -> Result<StateVector> {
    check_length(h.length(), psi.length)?;
    Ok(StateVector {
        length: psi.length,
        amps: SparseOperator::new(h).apply(&psi.amps),
    })
}

fn check_length(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// `<psi|H|psi>`; panics if the imaginary part exceeds `1e-10`.
pub fn energy(h: &OperatorTerms, psi: &StateVector) -> Result<f64> {
    let hpsi = apply_operator(h, psi)?;
    let e = psi.inner(&hpsi);
    assert!(e.im.abs() < 1e-10 * e.re.abs().max(1.0), "non-real energy {e}");
    Ok(e.re)
}

/// `|(H - E) psi|^2` with `E = <psi|H|psi>`.
pub fn variance(h: &OperatorTerms, psi: &StateVector) -> Result<f64> {
    let op = SparseOperator::new(h);
    check_length(op.length, psi.length)?;
    Ok(energy_variance(&op, &psi.amps).1)
}

/// Energy and variance in one application of the operator.
pub fn energy_variance(op: &SparseOperator, amps: &[C64]) -> (f64, f64) {
    let mut hpsi = op.apply(amps);
    let e = linalg::dotc(amps, &hpsi).re;
    linalg::axpy(C64::new(-e, 0.0), amps, &mut hpsi);
    (e, linalg::dotc(&hpsi, &hpsi).re)
}

#[derive(Clone, Debug)]
enum BlockVectors {
    Real(Mat<f64>),
    Complex(Mat<C64>),
}

#[derive(Clone, Debug)]
struct Block {
    /// Basis indices spanned by this block.
    indices: Vec<usize>,
    vectors: BlockVectors,
}

/// Full spectrum with an orthonormal eigenbasis.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    length: usize,
    energies: Vec<f64>,
    blocks: Vec<Block>,
    /// Global index -> (block, column).
    order: Vec<(usize, usize)>,
}

impl EigenSystem {
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn e_min(&self) -> f64 {
        self.energies[0]
    }

    pub fn e_max(&self) -> f64 {
        *self.energies.last().expect("nonempty spectrum")
    }

    pub fn state(&self, k: usize) -> StateVector {
        let (bi, col) = self.order[k];
        let block = &self.blocks[bi];
        let mut s = StateVector::zeros(self.length);
        for (row, &idx) in block.indices.iter().enumerate() {
            s.amps[idx] = match &block.vectors {
                BlockVectors::Real(m) => C64::new(m[(row, col)], 0.0),
                BlockVectors::Complex(m) => m[(row, col)],
            };
        }
        s
    }

    /// Coefficients `<phi_k|psi>` in global (ascending energy) order.
    pub fn overlaps(&self, psi: &StateVector) -> Vec<C64> {
        assert_eq!(psi.length, self.length, "state length mismatch");
        let mut per_block: Vec<Vec<C64>> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let sub: Vec<C64> = block.indices.iter().map(|&i| psi.amps[i]).collect();
            let n = sub.len();
            let coeffs = match &block.vectors {
                BlockVectors::Real(m) => {
                    let mut out = vec![ZERO; n];
                    for col in 0..n {
                        let column = m.col(col);
                        let mut acc = ZERO;
                        for (row, s) in sub.iter().enumerate() {
                            acc += s * column[row];
                        }
                        out[col] = acc;
                    }
                    out
                }
                BlockVectors::Complex(m) => (0..n)
                    .map(|col| {
                        let column = m.col(col);
                        sub.iter().enumerate().map(|(row, s)| column[row].conj() * s).sum()
                    })
                    .collect(),
            };
            per_block.push(coeffs);
        }
        self.order.iter().map(|&(b, c)| per_block[b][c]).collect()
    }

    /// `sum_k f(k) c_k |phi_k>`.
    pub fn synthesize(&self, coeffs: &[C64]) -> StateVector {
        let mut s = StateVector::zeros(self.length);
        for (k, &(bi, col)) in self.order.iter().enumerate() {
            let c = coeffs[k];
            if c == ZERO {
                continue;
            }
            let block = &self.blocks[bi];
            match &block.vectors {
                BlockVectors::Real(m) => {
                    let column = m.col(col);
                    for (row, &idx) in block.indices.iter().enumerate() {
                        s.amps[idx] += c * column[row];
                    }
                }
                BlockVectors::Complex(m) => {
                    let column = m.col(col);
                    for (row, &idx) in block.indices.iter().enumerate() {
                        s.amps[idx] += c * column[row];
                    }
                }
            }
        }
        s
    }
}

/// Full diagonalization with the default size cap.
pub fn diagonalize(h: &OperatorTerms) -> Result<EigenSystem> {
    diagonalize_capped(h, DENSE_CAP)
}

pub fn diagonalize_capped(h: &OperatorTerms, cap: usize) -> Result<EigenSystem> {
    check_cap("exact diagonalization", h.length(), cap)?;
    let op = SparseOperator::new(h);
    let length = h.length();
    let dim = 1usize << length;
    let sectors: Vec<Vec<usize>> = if op.conserves_popcount() {
        let mut s = vec![Vec::new(); length + 1];
        for b in 0..dim {
            s[b.count_ones() as usize].push(b);
        }
        s
    } else {
        vec![(0..dim).collect()]
    };
    let real = op.is_real();

    let mut blocks = Vec::with_capacity(sectors.len());
    let mut tagged: Vec<(f64, usize, usize)> = Vec::with_capacity(dim);
    let mut position = vec![usize::MAX; dim];
    for (bi, indices) in sectors.into_iter().enumerate() {
        let n = indices.len();
        for (row, &b) in indices.iter().enumerate() {
            position[b] = row;
        }
        let (vals, vectors) = if real {
            let mut m = Mat::<f64>::zeros(n, n);
            for (col, &b) in indices.iter().enumerate() {
                m[(col, col)] += op.shift;
                for (t, c) in op.column(b as u64) {
                    let row = position[t as usize];
                    if row != usize::MAX {
                        m[(row, col)] += c.re;
                    }
                }
            }
            let (vals, vecs) = linalg::symmetric_eigen_faer(&m)?;
            (vals, BlockVectors::Real(vecs))
        } else {
            let mut m = ndarray::Array2::<C64>::zeros((n, n));
            for (col, &b) in indices.iter().enumerate() {
                m[[col, col]] += C64::new(op.shift, 0.0);
                for (t, c) in op.column(b as u64) {
                    let row = position[t as usize];
                    if row != usize::MAX {
                        m[[row, col]] += c;
                    }
                }
            }
            let (vals, vecs) = linalg::hermitian_eigen(&m)?;
            (vals, BlockVectors::Complex(vecs))
        };
        for &b in &indices {
            position[b] = usize::MAX;
        }
        for (col, v) in vals.into_iter().enumerate() {
            tagged.push((v, bi, col));
        }
        blocks.push(Block { indices, vectors });
    }
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(EigenSystem {
        length,
        energies: tagged.iter().map(|t| t.0).collect(),
        blocks,
        order: tagged.iter().map(|t| (t.1, t.2)).collect(),
    })
}

/// Largest `|<psi|phi_k>|^2` and its index; ties (up to rounding, `1e-12`)
/// go to the lowest index.
pub fn max_fidelity(psi: &StateVector, eig: &EigenSystem) -> (f64, usize) {
    let mut best = (-1.0, 0);
    for (k, c) in eig.overlaps(psi).iter().enumerate() {
        let f = c.norm_sqr();
        if f > best.0 + 1e-12 {
            best = (f, k);
        }
    }
    (best.0.clamp(0.0, 1.0), best.1)
}

/// `normalize(exp(-H d_tau) psi)` evaluated in the eigenbasis.
pub fn conventional_ite_step(h: &OperatorTerms, psi: &StateVector, d_tau: f64) -> Result<StateVector> {
    let eig = diagonalize(h)?;
    ite_step_eigenbasis(&eig, psi, d_tau)
}

pub fn ite_step_eigenbasis(eig: &EigenSystem, psi: &StateVector, d_tau: f64) -> Result<StateVector> {
    if d_tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "imaginary time step must be > 0, got {d_tau}"
        )));
    }
    check_length(eig.length, psi.length)?;
    let e0 = eig.e_min();
    let coeffs: Vec<C64> = eig
        .overlaps(psi)
        .iter()
        .zip(eig.energies())
        .map(|(c, e)| c * (-(e - e0) * d_tau).exp())
        .collect();
    Ok(eig.synthesize(&coeffs).normalized())
}

/// Truncated Taylor series for `exp(-H d_tau) psi`, summed until the next
/// term is below `1e-15` relative; used to cross-check the eigenbasis path.
pub fn ite_step_series(h: &OperatorTerms, psi: &StateVector, d_tau: f64) -> Result<StateVector> {
    check_length(h.length(), psi.length)?;
    let op = SparseOperator::new(h);
    let mut term = psi.amps.clone();
    let mut acc = term.clone();
    for k in 1..200 {
        let next = op.apply(&term);
        let scale = -d_tau / k as f64;
        term = next.into_iter().map(|v| v * scale).collect();
        linalg::axpy(C64::new(1.0, 0.0), &term, &mut acc);
        if linalg::norm(&term) < 1e-15 * linalg::norm(&acc) {
            break;
        }
    }
    Ok(StateVector {
        length: psi.length,
        amps: acc,
    }
    .normalized())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExactSolver {
    #[default]
    LeastSquares,
    Variational,
}

#[derive(Clone, Debug)]
pub struct ExactStep {
    pub state: StateVector,
    /// Cost `|H_s psi' - (H_s - d_tau) psi|` at the unnormalized minimizer.
    pub distance: f64,
    /// Condition estimate of `H_s` (least squares) or `NaN`.
    pub condition: f64,
}

/// One exact step: minimize `|H_s psi' - (H_s - d_tau) psi|` and normalize.
pub fn siite_step_exact(
    h_shift: &OperatorTerms,
    psi: &StateVector,
    d_tau: f64,
    solver: ExactSolver,
) -> Result<StateVector> {
    let op = SparseOperator::new(h_shift);
    siite_step_sparse(&op, psi, d_tau, solver).map(|s| s.state)
}

pub fn siite_step_sparse(op: &SparseOperator, psi: &StateVector, d_tau: f64, solver: ExactSolver) -> Result<ExactStep> {
    check_length(op.length, psi.length)?;
    let (unnormalized, condition) = match solver {
        ExactSolver::LeastSquares => {
            let (x, cond) = shift_invert_solve(op, &psi.amps)?;
            let mut out = psi.amps.clone();
            linalg::axpy(C64::new(-d_tau, 0.0), &x, &mut out);
            (out, cond)
        }
        ExactSolver::Variational => (variational_minimizer(op, &psi.amps, d_tau), f64::NAN),
    };
    let distance = step_distance(op, &unnormalized, &psi.amps, d_tau);
    let state = StateVector {
        length: psi.length,
        amps: unnormalized,
    }
    .normalized();
    Ok(ExactStep {
        state,
        distance,
        condition,
    })
}

/// `|H_s a - (H_s - d_tau) b|`.
pub fn step_distance(op: &SparseOperator, a: &[C64], b: &[C64], d_tau: f64) -> f64 {
    let mut r = op.apply(a);
    let hb = op.apply(b);
    for i in 0..r.len() {
        r[i] -= hb[i] - b[i] * d_tau;
    }
    linalg::norm(&r)
}

/// Solve `H_s x = b` by MINRES with iterative refinement until the true
/// residual is below [`SOLVE_TOLERANCE`] relative to `|b|`.
pub fn shift_invert_solve(op: &SparseOperator, b: &[C64]) -> Result<(Vec<C64>, f64)> {
    let apply = |v: &[C64], out: &mut [C64]| op.apply_into(v, out);
    let bnorm = linalg::norm(b);
    let dim = b.len();
    let max_iter = (20 * dim).max(1000);
    let mut x = vec![ZERO; dim];
    let mut r = b.to_vec();
    let mut condition: f64 = 1.0;
    let mut residual = bnorm;
    for _round in 0..6 {
        let out = minres(apply, &r, 1e-14, max_iter);
        condition = condition.max(out.condition);
        if condition > CONDITION_LIMIT {
            return Err(Error::NearDegenerate {
                condition,
                limit: CONDITION_LIMIT,
            });
        }
        linalg::axpy(C64::new(1.0, 0.0), &out.x, &mut x);
        let ax = op.apply(&x);
        r = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        residual = linalg::norm(&r);
        if residual <= SOLVE_TOLERANCE * bnorm {
            return Ok((x, condition));
        }
    }
    if residual > 1e-6 * bnorm {
        // a residual stuck at this level means b has weight on a null vector
        return Err(Error::NearDegenerate {
            condition: f64::INFINITY,
            limit: CONDITION_LIMIT,
        });
    }
    Err(Error::NoConvergence {
        residual,
        iterations: max_iter,
    })
}

/// General-purpose minimization of `|H_s psi' - (H_s - d_tau) psi|^2` over
/// the real and imaginary parts of every amplitude, started at `psi`.
fn variational_minimizer(op: &SparseOperator, psi: &[C64], d_tau: f64) -> Vec<C64> {
    let dim = psi.len();
    let mut target = op.apply(psi);
    linalg::axpy(C64::new(-d_tau, 0.0), psi, &mut target);
    let pack = |v: &[C64]| v.iter().flat_map(|c| [c.re, c.im]).collect::<Vec<f64>>();
    let unpack = |z: &[f64]| (0..dim).map(|i| C64::new(z[2 * i], z[2 * i + 1])).collect::<Vec<C64>>();
    let target_norm2 = linalg::dotc(&target, &target).re.max(1e-300);
    let fg = |z: &[f64], g: &mut [f64]| {
        let v = unpack(z);
        let mut r = op.apply(&v);
        for i in 0..dim {
            r[i] -= target[i];
        }
        let grad = op.apply(&r);
        for i in 0..dim {
            g[2 * i] = 2.0 * grad[i].re / target_norm2;
            g[2 * i + 1] = 2.0 * grad[i].im / target_norm2;
        }
        linalg::dotc(&r, &r).re / target_norm2
    };
    let opts = LbfgsOptions {
        memory: 30,
        max_iter: 20_000,
        gtol: 1e-15,
        ftol: 0.0,
    };
    unpack(&lbfgs(fg, pack(psi), &opts).x)
}

/// Von Neumann entropy (natural log) across `cut`, i.e. between sites
/// `cut - 1` and `cut`.
pub fn entropy_statevector(psi: &StateVector, cut: usize) -> Result<f64> {
    let l = psi.length;
    if cut == 0 || cut >= l {
        return Err(Error::InvalidArgument(format!("cut must be in 1..{l}, got {cut}")));
    }
    let rows = 1usize << cut;
    let cols = 1usize << (l - cut);
    let m = ndarray::Array2::from_shape_fn((rows, cols), |(i, j)| psi.amps[i * cols + j]);
    let sv = linalg::singular_values(&m)?;
    Ok(entropy_from_singular_values(&sv))
}

/// `-sum p ln p` with `p = s^2 / sum s^2`, dropping `s < 1e-12`.
pub fn entropy_from_singular_values(sv: &[f64]) -> f64 {
    let kept: Vec<f64> = sv.iter().copied().filter(|&s| s >= 1e-12).collect();
    let total: f64 = kept.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    kept.iter()
        .map(|s| s * s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum::<f64>()
        .max(0.0)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    #[serde(rename = "L")]
    pub length: usize,
    pub norm: f64,
    pub tag: String,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write the amplitudes as little-endian `(re, im)` doubles plus a JSON
/// sidecar next to `path` (same stem, `.json`).
pub fn write_snapshot(psi: &StateVector, path: &Path, tag: &str) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 * psi.dim());
    for a in &psi.amps {
        bytes.extend_from_slice(&a.re.to_le_bytes());
        bytes.extend_from_slice(&a.im.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&bytes)?;
    let meta = SnapshotMeta {
        length: psi.length,
        norm: psi.norm(),
        tag: tag.to_string(),
    };
    fs::write(sidecar(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(StateVector, SnapshotMeta)> {
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let expected = 16usize << meta.length;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let amps = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect();
    let psi = StateVector {
        length: meta.length,
        amps,
    };
    if (psi.norm() - meta.norm).abs() > 1e-12 * meta.norm.max(1.0) {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "stored norm does not match amplitudes".into(),
        });
    }
    Ok((psi, meta))
}
