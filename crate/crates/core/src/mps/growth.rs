//! Bond-dimension growth.

use ndarray::{s, Array3};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{natural_bond_dim, Mpo, Mps};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthStrategy {
    /// `psi -> (1 + a H_s) psi`, then truncate to the grown dimensions.
    #[default]
    Subspace,
    /// Add a small random product state.
    Random,
}

/// Apply an MPO exactly; bond dimensions multiply.
pub fn apply_mpo(mpo: &Mpo, mps: &Mps) -> Result<Mps> {
    if mpo.length() != mps.length() {
        return Err(Error::DimensionMismatch {
            expected: mpo.length(),
            found: mps.length(),
        });
    }
    let tensors = (0..mps.length())
        .map(|k| {
            let a = mps.tensor(k);
            let w = mpo.tensor(k);
            let (al, d, ar) = a.dim();
            let (wl, wo, _, wr) = w.dim();
            let mut out = Array3::<C64>::zeros((al * wl, wo, ar * wr));
            for x in 0..al {
                for y in 0..wl {
                    for o in 0..wo {
                        for i in 0..d {
                            for z in 0..wr {
                                let wv = w[[y, o, i, z]];
                                if wv.norm_sqr() == 0.0 {
                                    continue;
                                }
                                for r in 0..ar {
                                    out[[x * wl + y, o, r * wr + z]] += wv * a[[x, i, r]];
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    Mps::from_tensors(tensors)
}

/// Subspace expansion: `normalize((1 + a H_s) psi)` with the MPO applied
/// exactly, then SVD truncation to `old + increment` per bond (capped by
/// the natural dimension and `chi_max`).
pub fn grow_bond_subspace(mps: &Mps, h_shift: &Mpo, a: f64, increment: usize, chi_max: Option<usize>) -> Result<Mps> {
    let mut expander = h_shift.scaled(a);
    expander.add_identity(1.0);
    let l = mps.length();
    let caps: Vec<usize> = mps
        .bond_dims()
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let c = (d + increment).min(natural_bond_dim(l, k));
            chi_max.map_or(c, |m| c.min(m.max(d)))
        })
        .collect();
    let mut out = apply_mpo(&expander, mps)?;
    out.truncate(&caps)?;
    out.normalize();
    Ok(out)
}

/// `normalize(psi + eps r)` with `r` a seeded random product state scaled to
/// `eps` times the norm of `psi`; realized as a direct sum, so every interior
/// bond grows by exactly one.
pub fn grow_bond_random(mps: &Mps, seed: u64, eps: f64) -> Result<Mps> {
    let l = mps.length();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = eps * mps.norm();
    let vectors: Vec<[C64; 2]> = (0..l)
        .map(|k| {
            let v = [
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
            ];
            let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
            let f = if k == 0 { scale / n } else { 1.0 / n };
            [v[0] * f, v[1] * f]
        })
        .collect();
    if l == 1 {
        let mut t = mps.tensor(0).clone();
        t[[0, 0, 0]] += vectors[0][0];
        t[[0, 1, 0]] += vectors[0][1];
        let mut out = Mps::from_tensors(vec![t])?;
        out.normalize();
        return Ok(out);
    }
    let tensors = (0..l)
        .map(|k| {
            let a = mps.tensor(k);
            let (al, d, ar) = a.dim();
            let nl = if k == 0 { 1 } else { al + 1 };
            let nr = if k + 1 == l { 1 } else { ar + 1 };
            let mut t = Array3::<C64>::zeros((nl, d, nr));
            t.slice_mut(s![..al, .., ..ar]).assign(a);
            let (li, ri) = (nl - 1, nr - 1);
            for p in 0..d {
                t[[li, p, ri]] += vectors[k][p];
            }
            t
        })
        .collect();
    let mut out = Mps::from_tensors(tensors)?;
    out.normalize();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{apply_operator, diagonalize};
    use crate::models::{build_heisenberg, shift_operator};
    use crate::mps::ProductPattern;

    #[test]
    fn random_growth_adds_one_per_bond() {
        let m = Mps::product(ProductPattern::Neel, 4).unwrap();
        let g = grow_bond_random(&m, 1, 1e-6).unwrap();
        assert_eq!(g.bond_dims(), vec![2, 2, 2]);
        let f = g.to_statevector().unwrap().fidelity(&m.to_statevector().unwrap());
        assert!(f >= 1.0 - 1e-10);
        let g2 = grow_bond_random(&g, 2, 1e-6).unwrap();
        assert_eq!(g2.bond_dims(), vec![3, 3, 2]);
    }

    #[test]
    fn subspace_growth_matches_dense() {
        let (_, h) = build_heisenberg(6, 1.0, 3.0, 4).unwrap();
        let hs = shift_operator(&h, 0.2);
        let mpo = Mpo::from_terms(&hs);
        let m = Mps::random(6, 2, 9);
        let grown = grow_bond_subspace(&m, &mpo, 1e-3, 2, None).unwrap();
        assert!(grown.bond_dims().iter().zip(m.bond_dims()).all(|(g, o)| *g <= o + 2));
        let psi = m.to_statevector().unwrap();
        let hpsi = apply_operator(&hs, &psi).unwrap();
        let want = psi.clone().add_scaled(C64::new(1e-3, 0.0), &hpsi).normalized();
        let got = grown.to_statevector().unwrap();
        assert!(got.fidelity(&want) > 1.0 - 1e-8);
    }

    #[test]
    fn subspace_growth_fixes_eigenstates() {
        let (_, h) = build_heisenberg(6, 1.0, 3.0, 4).unwrap();
        let hs = shift_operator(&h, 0.0);
        let eig = diagonalize(&hs).unwrap();
        let phi = eig.state(30);
        let m = Mps::from_statevector(&phi, None).unwrap();
        let grown = grow_bond_subspace(&m, &Mpo::from_terms(&hs), 1e-3, 2, None).unwrap();
        assert!(grown.to_statevector().unwrap().fidelity(&phi) > 1.0 - 1e-10);
    }
}
