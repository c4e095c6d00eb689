use std::collections::HashMap;

use ndarray::{Array2, Array4};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::models::{check_cap, OperatorTerms};
use crate::pauli::Pauli;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Matrix product operator; site tensors are `W[left, out, in, right]`.
///
/// Built as a finite-state automaton: on every interior bond index 0 means
/// "nothing placed yet" and index 1 means "term complete". The remaining
/// indices are partially applied terms, shared between terms whose remaining
/// operator strings coincide.
#[derive(Clone, Debug, PartialEq)]
pub struct Mpo {
    tensors: Vec<Array4<C64>>,
}

impl Mpo {
    pub fn from_tensors(tensors: Vec<Array4<C64>>) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::InvalidArgument("empty MPO".into()));
        }
        let l = tensors.len();
        if tensors[0].shape()[0] != 1 || tensors[l - 1].shape()[3] != 1 {
            return Err(Error::InvalidArgument("MPO boundary bonds must be 1".into()));
        }
        for k in 0..l - 1 {
            if tensors[k].shape()[3] != tensors[k + 1].shape()[0] {
                return Err(Error::DimensionMismatch {
                    expected: tensors[k].shape()[3],
                    found: tensors[k + 1].shape()[0],
                });
            }
        }
        Ok(Self { tensors })
    }

    pub fn from_terms(h: &OperatorTerms) -> Self {
        let l = h.length();
        // per bond k (right of site k): remaining-suffix key -> index
        let mut states: Vec<HashMap<Vec<Pauli>, usize>> = vec![HashMap::new(); l.saturating_sub(1)];
        // (site, left index, right index, op, coefficient)
        let mut entries: Vec<(usize, usize, usize, Pauli, f64)> = Vec::new();
        let done = |k: usize| if k + 1 == l { 0 } else { 1 };
        let start = 0usize;

        let mut next_index = vec![2usize; l.saturating_sub(1)];
        let mut index_of = |states: &mut Vec<HashMap<Vec<Pauli>, usize>>, k: usize, key: &[Pauli]| {
            if let Some(&i) = states[k].get(key) {
                return (i, false);
            }
            let i = next_index[k];
            next_index[k] += 1;
            states[k].insert(key.to_vec(), i);
            (i, true)
        };

        for t in h.terms() {
            let (a, b) = t.ops.support().expect("identity terms live in the shift");
            let ops = t.ops.ops();
            if a == b {
                entries.push((a, start, done(a), ops[a], t.coefficient));
                continue;
            }
            let (mut idx, fresh) = index_of(&mut states, a, &ops[a + 1..=b]);
            entries.push((a, start, idx, ops[a], t.coefficient));
            if !fresh {
                // the rest of the chain already exists
                continue;
            }
            for k in a + 1..=b {
                if k == b {
                    entries.push((k, idx, done(k), ops[k], 1.0));
                    break;
                }
                let (nidx, fresh) = index_of(&mut states, k, &ops[k + 1..=b]);
                entries.push((k, idx, nidx, ops[k], 1.0));
                if !fresh {
                    break;
                }
                idx = nidx;
            }
        }

        let dims: Vec<usize> = (0..=l)
            .map(|bond| {
                if bond == 0 || bond == l {
                    1
                } else {
                    next_index[bond - 1]
                }
            })
            .collect();
        let mut tensors: Vec<Array4<C64>> = (0..l).map(|k| Array4::zeros((dims[k], 2, 2, dims[k + 1]))).collect();
        let eye = Pauli::I.matrix();
        for k in 0..l {
            let w = &mut tensors[k];
            // pass-through channels
            for s in 0..2 {
                for t in 0..2 {
                    if k + 1 < l {
                        w[[0, s, t, 0]] += eye[s][t];
                    }
                    if k > 0 {
                        w[[1, s, t, done(k)]] += eye[s][t];
                    }
                }
            }
        }
        for (k, li, ri, op, c) in entries {
            let m = op.matrix();
            for s in 0..2 {
                for t in 0..2 {
                    tensors[k][[li, s, t, ri]] += m[s][t] * c;
                }
            }
        }
        let mut mpo = Self { tensors };
        mpo.add_identity(h.constant_shift());
        mpo
    }

    /// Add `c` times the identity. Only valid for automaton-built MPOs.
    pub fn add_identity(&mut self, c: f64) {
        if c == 0.0 {
            return;
        }
        let l = self.tensors.len();
        let ri = if l == 1 { 0 } else { 1 };
        for s in 0..2 {
            self.tensors[0][[0, s, s, ri]] += C64::new(c, 0.0);
        }
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.add_identity(c);
        out
    }

    /// `a` times the operator (only site 0 is touched).
    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.tensors[0].mapv_inplace(|v| v * a);
        out
    }

    pub fn length(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensors(&self) -> &[Array4<C64>] {
        &self.tensors
    }

    pub fn tensor(&self, k: usize) -> &Array4<C64> {
        &self.tensors[k]
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.tensors.len() - 1]
            .iter()
            .map(|w| w.shape()[3])
            .collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Full contraction to a dense matrix (site 0 most significant).
    pub fn to_dense(&self) -> Result<Array2<C64>> {
        let l = self.length();
        check_cap("MPO contraction", l, 12)?;
        // acc[(out, in), right]
        let mut acc: Vec<C64> = vec![C64::new(1.0, 0.0)];
        let mut rows = 1usize; // product of out dims
        let mut cols = 1usize; // product of in dims
        let mut bond = 1usize;
        for w in &self.tensors {
            let r = w.shape()[3];
            let mut next = vec![ZERO; rows * 2 * cols * 2 * r];
            for o in 0..rows {
                for i in 0..cols {
                    for a in 0..bond {
                        let v = acc[(o * cols + i) * bond + a];
                        if v == ZERO {
                            continue;
                        }
                        for s in 0..2 {
                            for t in 0..2 {
                                for c in 0..r {
                                    let wv = w[[a, s, t, c]];
                                    if wv != ZERO {
                                        let oo = o * 2 + s;
                                        let ii = i * 2 + t;
                                        next[(oo * cols * 2 + ii) * r + c] += v * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            acc = next;
            rows *= 2;
            cols *= 2;
            bond = r;
        }
        Ok(Array2::from_shape_vec((rows, cols), acc).expect("square"))
    }
}

pub fn to_mpo(h: &OperatorTerms) -> Mpo {
    Mpo::from_terms(h)
}
