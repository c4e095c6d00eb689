//! Matrix product state backend.
//!
//! Site tensors are `A[left, phys, right]` with physical index 0 = spin up.
//! Bond `k` joins sites `k` and `k + 1`.

mod env;
mod growth;
mod io;
mod mpo;
mod sweep;

pub use env::{Environments, LocalEnvironment, LocalOperator};
pub use growth::{apply_mpo, grow_bond_random, grow_bond_subspace, GrowthStrategy};
pub use io::{read_checkpoint, write_checkpoint, CheckpointManifest};
pub use mpo::{to_mpo, Mpo};
pub use sweep::{
    cost_squared, expectation, folded_ground_state, overlap, rayleigh_ground_state, siite_sweep, spectral_bounds,
    variance_mps, RayleighOptions, SweepMode, SweepOptions, SweepOutcome,
};

use ndarray::{Array2, Array3};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exact::{bitstring_index, entropy_from_singular_values, StateVector};
use crate::linalg;
use crate::models::{check_cap, DENSE_CAP};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Singular values below this (relative to the norm) are discarded.
pub const TRUNCATION_CUTOFF: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Mps {
    tensors: Vec<Array3<C64>>,
    ortho_center: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductPattern<'a> {
    Neel,
    Up,
    Bits(&'a str),
}

/// Largest useful dimension of bond `k` in a chain of `length` sites.
pub fn natural_bond_dim(length: usize, k: usize) -> usize {
    let left = (k + 1).min(62);
    let right = (length - k - 1).min(62);
    1usize << left.min(right)
}

impl Mps {
    pub fn from_tensors(tensors: Vec<Array3<C64>>) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::InvalidArgument("empty MPS".into()));
        }
        let l = tensors.len();
        if tensors[0].shape()[0] != 1 || tensors[l - 1].shape()[2] != 1 {
            return Err(Error::InvalidArgument("MPS boundary bonds must be 1".into()));
        }
        for k in 0..l {
            if tensors[k].shape()[1] != 2 {
                return Err(Error::DimensionMismatch {
                    expected: 2,
                    found: tensors[k].shape()[1],
                });
            }
            if k + 1 < l && tensors[k].shape()[2] != tensors[k + 1].shape()[0] {
                return Err(Error::DimensionMismatch {
                    expected: tensors[k].shape()[2],
                    found: tensors[k + 1].shape()[0],
                });
            }
        }
        Ok(Self {
            tensors,
            ortho_center: None,
        })
    }

    /// Bond dimension one state for a basis pattern.
    pub fn product(pattern: ProductPattern<'_>, length: usize) -> Result<Self> {
        let bits: String = match pattern {
            ProductPattern::Neel => (0..length).map(|k| if k % 2 == 0 { '0' } else { '1' }).collect(),
            ProductPattern::Up => "0".repeat(length),
            ProductPattern::Bits(b) => {
                if b.len() != length {
                    return Err(Error::DimensionMismatch {
                        expected: length,
                        found: b.len(),
                    });
                }
                bitstring_index(b)?;
                b.to_string()
            }
        };
        if length == 0 {
            return Err(Error::InvalidArgument("empty MPS".into()));
        }
        let tensors = bits
            .chars()
            .map(|c| {
                let mut a = Array3::zeros((1, 2, 1));
                a[[0, if c == '1' { 1 } else { 0 }, 0]] = C64::new(1.0, 0.0);
                a
            })
            .collect();
        Ok(Self {
            tensors,
            ortho_center: Some(0),
        })
    }

    /// Seeded random state with real entries, bond dimensions
    /// `min(chi, natural)`, normalized and centered on site 0.
    pub fn random(length: usize, chi: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Self::capped_dims(length, chi.max(1));
        let tensors = (0..length)
            .map(|k| {
                let l = if k == 0 { 1 } else { dims[k - 1] };
                let r = if k + 1 == length { 1 } else { dims[k] };
                Array3::from_shape_fn((l, 2, r), |_| C64::new(rng.random::<f64>() - 0.5, 0.0))
            })
            .collect();
        let mut m = Self {
            tensors,
            ortho_center: None,
        };
        m.normalize();
        m
    }

    fn capped_dims(length: usize, chi: usize) -> Vec<usize> {
        (0..length.saturating_sub(1))
            .map(|k| natural_bond_dim(length, k).min(chi))
            .collect()
    }

    pub fn length(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensors(&self) -> &[Array3<C64>] {
        &self.tensors
    }

    pub fn tensor(&self, k: usize) -> &Array3<C64> {
        &self.tensors[k]
    }

    /// Replace a site tensor; the caller keeps bond dimensions consistent.
    pub fn set_tensor(&mut self, k: usize, a: Array3<C64>) {
        self.tensors[k] = a;
        self.ortho_center = None;
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut Vec<Array3<C64>> {
        self.ortho_center = None;
        &mut self.tensors
    }

    pub fn ortho_center(&self) -> Option<usize> {
        self.ortho_center
    }

    pub(crate) fn set_ortho_center(&mut self, c: Option<usize>) {
        self.ortho_center = c;
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.length() - 1].iter().map(|a| a.shape()[2]).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Make site `k` left-orthonormal and push the remainder into `k + 1`.
    pub fn move_right(&mut self, k: usize) {
        let a = &self.tensors[k];
        let (l, d, r) = a.dim();
        let m = a.to_shape((l * d, r)).expect("reshape").to_owned();
        let (q, rr) = linalg::thin_qr(&m);
        let kdim = q.ncols();
        self.tensors[k] = q.to_shape((l, d, kdim)).expect("reshape").into_owned();
        let next = &self.tensors[k + 1];
        let (nl, nd, nr) = next.dim();
        let nm = next.to_shape((nl, nd * nr)).expect("reshape").to_owned();
        self.tensors[k + 1] = rr.dot(&nm).to_shape((kdim, nd, nr)).expect("reshape").into_owned();
        if self.ortho_center == Some(k) {
            self.ortho_center = Some(k + 1);
        }
    }

    /// Make site `k` right-orthonormal and push the remainder into `k - 1`.
    pub fn move_left(&mut self, k: usize) {
        let a = &self.tensors[k];
        let (l, d, r) = a.dim();
        // A = R^H Q^H from the QR of A^H
        let mh = a.to_shape((l, d * r)).expect("reshape").t().mapv(|v| v.conj());
        let (q, rr) = linalg::thin_qr(&mh);
        let kdim = q.ncols();
        let qh = q.t().mapv(|v| v.conj());
        self.tensors[k] = qh.to_shape((kdim, d, r)).expect("reshape").into_owned();
        let rh = rr.t().mapv(|v| v.conj());
        let prev = &self.tensors[k - 1];
        let (pl, pd, pr) = prev.dim();
        let pm = prev.to_shape((pl * pd, pr)).expect("reshape").to_owned();
        self.tensors[k - 1] = pm.dot(&rh).to_shape((pl, pd, kdim)).expect("reshape").into_owned();
        if self.ortho_center == Some(k) {
            self.ortho_center = Some(k - 1);
        }
    }

    /// Mixed canonical form with orthogonality center `c`.
    pub fn canonicalize(&mut self, c: usize) {
        assert!(c < self.length(), "center out of range");
        match self.ortho_center {
            Some(cur) => {
                for k in cur..c {
                    self.move_right(k);
                }
                for k in (c + 1..=cur).rev() {
                    self.move_left(k);
                }
            }
            None => {
                for k in 0..c {
                    self.move_right(k);
                }
                for k in (c + 1..self.length()).rev() {
                    self.move_left(k);
                }
            }
        }
        self.ortho_center = Some(c);
    }

    pub fn norm(&self) -> f64 {
        match self.ortho_center {
            Some(c) => frobenius(&self.tensors[c]),
            None => overlap(self, self).norm().sqrt(),
        }
    }

    /// Normalize (canonicalizing if needed); returns the previous norm.
    pub fn normalize(&mut self) -> f64 {
        let c = self.ortho_center.unwrap_or(0);
        self.canonicalize(c);
        let n = frobenius(&self.tensors[c]);
        if n > 0.0 {
            self.tensors[c].mapv_inplace(|v| v / n);
        }
        n
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    pub fn scale(&mut self, s: C64) {
        let c = self.ortho_center.unwrap_or(0);
        self.tensors[c].mapv_inplace(|v| v * s);
    }

    /// Contract to a statevector (site 0 most significant).
    pub fn to_statevector(&self) -> Result<StateVector> {
        check_cap("MPS contraction", self.length(), DENSE_CAP)?;
        let mut acc: Array2<C64> = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
        for a in &self.tensors {
            let (l, d, r) = a.dim();
            let am = a.to_shape((l, d * r)).expect("reshape").to_owned();
            let rows = acc.nrows();
            acc = acc.dot(&am).to_shape((rows * d, r)).expect("reshape").into_owned();
        }
        StateVector::from_amplitudes(self.length(), acc.into_iter().collect())
    }

    /// Exact decomposition by successive SVDs, keeping singular values above
    /// `1e-14` relative to the largest (optionally at most `max_chi`).
    pub fn from_statevector(psi: &StateVector, max_chi: Option<usize>) -> Result<Self> {
        let l = psi.length();
        let mut tensors = Vec::with_capacity(l);
        let mut rest = Array2::from_shape_vec((1, psi.dim()), psi.amplitudes().to_vec()).expect("shape");
        let mut left = 1usize;
        for _ in 0..l - 1 {
            let cols = rest.ncols() / 2;
            let m = rest.to_shape((left * 2, cols)).expect("reshape").into_owned();
            let (u, s, vh) = linalg::thin_svd(&m)?;
            let smax = s.first().copied().unwrap_or(0.0);
            let mut keep = s.iter().filter(|&&v| v > 1e-14 * smax).count().max(1);
            if let Some(chi) = max_chi {
                keep = keep.min(chi.max(1));
            }
            let uk = u.slice(ndarray::s![.., ..keep]).to_owned();
            tensors.push(uk.to_shape((left, 2, keep)).expect("reshape").into_owned());
            let mut svh = vh.slice(ndarray::s![..keep, ..]).to_owned();
            for (i, mut row) in svh.rows_mut().into_iter().enumerate() {
                row.mapv_inplace(|v| v * s[i]);
            }
            rest = svh;
            left = keep;
        }
        tensors.push(rest.to_shape((left, 2, 1)).expect("reshape").into_owned());
        Ok(Self {
            tensors,
            ortho_center: Some(l - 1),
        })
    }

    /// Zero-pad every bond to `min(natural, chi_cap)` and re-orthonormalize;
    /// the state is unchanged but single-site updates see the full space.
    pub fn pad_bonds(&mut self, chi_cap: Option<usize>) {
        let l = self.length();
        let target: Vec<usize> = (0..l - 1)
            .map(|k| {
                let nat = natural_bond_dim(l, k);
                let want = chi_cap.map_or(nat, |c| nat.min(c));
                want.max(self.tensors[k].shape()[2])
            })
            .collect();
        self.resize_bonds(&target);
        self.ortho_center = None;
        self.canonicalize(l - 1);
        self.canonicalize(0);
    }

    /// Zero-pad bonds up to the given dimensions (never shrinks).
    fn resize_bonds(&mut self, target: &[usize]) {
        let l = self.length();
        for k in 0..l {
            let (lo, d, ro) = self.tensors[k].dim();
            let ln = if k == 0 { 1 } else { target[k - 1].max(lo) };
            let rn = if k + 1 == l { 1 } else { target[k].max(ro) };
            if ln == lo && rn == ro {
                continue;
            }
            let mut a = Array3::zeros((ln, d, rn));
            a.slice_mut(ndarray::s![..lo, .., ..ro]).assign(&self.tensors[k]);
            self.tensors[k] = a;
        }
    }

    /// SVD truncation sweep with per-bond caps and the relative cutoff
    /// [`TRUNCATION_CUTOFF`]. Returns the discarded weight (sum of dropped `s^2`
    /// relative to the norm squared).
    pub fn truncate(&mut self, caps: &[usize]) -> Result<f64> {
        let l = self.length();
        self.canonicalize(l - 1);
        let mut discarded = 0.0;
        for k in (1..l).rev() {
            let a = &self.tensors[k];
            let (ld, d, r) = a.dim();
            let m = a.to_shape((ld, d * r)).expect("reshape").to_owned();
            let (u, s, vh) = linalg::thin_svd(&m)?;
            let total: f64 = s.iter().map(|v| v * v).sum();
            let norm = total.sqrt();
            let mut keep = s.iter().filter(|&&v| v > TRUNCATION_CUTOFF * norm).count().max(1);
            keep = keep.min(caps[k - 1].max(1));
            discarded += s[keep..].iter().map(|v| v * v).sum::<f64>() / total.max(f64::MIN_POSITIVE);
            let vk = vh.slice(ndarray::s![..keep, ..]).to_owned();
            self.tensors[k] = vk.to_shape((keep, d, r)).expect("reshape").into_owned();
            let mut us = u.slice(ndarray::s![.., ..keep]).to_owned();
            for (j, mut col) in us.columns_mut().into_iter().enumerate() {
                col.mapv_inplace(|v| v * s[j]);
            }
            let prev = &self.tensors[k - 1];
            let (pl, pd, pr) = prev.dim();
            let pm = prev.to_shape((pl * pd, pr)).expect("reshape").to_owned();
            self.tensors[k - 1] = pm.dot(&us).to_shape((pl, pd, keep)).expect("reshape").into_owned();
        }
        self.ortho_center = Some(0);
        Ok(discarded)
    }

    /// Singular values across every bond.
    pub fn schmidt_values(&self) -> Result<Vec<Vec<f64>>> {
        let mut m = self.clone();
        m.canonicalize(0);
        let l = m.length();
        let mut out = Vec::with_capacity(l - 1);
        for k in 0..l - 1 {
            let a = &m.tensors[k];
            let (ld, d, r) = a.dim();
            let mat = a.to_shape((ld * d, r)).expect("reshape").to_owned();
            let (u, s, vh) = linalg::thin_svd(&mat)?;
            let kdim = s.len();
            m.tensors[k] = u.to_shape((ld, d, kdim)).expect("reshape").into_owned();
            let mut svh = vh;
            for (i, mut row) in svh.rows_mut().into_iter().enumerate() {
                row.mapv_inplace(|v| v * s[i]);
            }
            let next = &m.tensors[k + 1];
            let (nl, nd, nr) = next.dim();
            let nm = next.to_shape((nl, nd * nr)).expect("reshape").to_owned();
            m.tensors[k + 1] = svh.dot(&nm).to_shape((kdim, nd, nr)).expect("reshape").into_owned();
            out.push(s);
        }
        Ok(out)
    }

    /// Largest bond dimension actually needed (singular values above cutoff).
    pub fn effective_max_bond_dim(&self) -> Result<usize> {
        Ok(self
            .schmidt_values()?
            .iter()
            .map(|s| {
                let n: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                s.iter().filter(|&&v| v > TRUNCATION_CUTOFF * n).count()
            })
            .max()
            .unwrap_or(1))
    }
}

pub(crate) fn frobenius(a: &Array3<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyProfile {
    /// Entropy across bond `k` (between sites `k` and `k + 1`).
    pub per_bond: Vec<f64>,
    pub mean: f64,
    /// Entropy across the cut after site `L/2 - 1`, i.e. `per_bond[L/2 - 1]`.
    pub central: f64,
}

pub fn entropy_profile(mps: &Mps) -> Result<EntropyProfile> {
    let l = mps.length();
    if l < 2 {
        return Ok(EntropyProfile {
            per_bond: Vec::new(),
            mean: 0.0,
            central: 0.0,
        });
    }
    let per_bond: Vec<f64> = mps
        .schmidt_values()?
        .iter()
        .map(|s| entropy_from_singular_values(s))
        .collect();
    let mean = per_bond.iter().sum::<f64>() / per_bond.len() as f64;
    let central = per_bond[l / 2 - 1];
    Ok(EntropyProfile {
        per_bond,
        mean,
        central,
    })
}

pub fn mps_to_statevector(mps: &Mps) -> Result<StateVector> {
    mps.to_statevector()
}

pub fn product_mps(pattern: ProductPattern<'_>, length: usize) -> Result<Mps> {
    Mps::product(pattern, length)
}

#[allow(dead_code)]
pub(crate) fn zero_tensor(l: usize, r: usize) -> Array3<C64> {
    Array3::from_elem((l, 2, r), ZERO)
}
