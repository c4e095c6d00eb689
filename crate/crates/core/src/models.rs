//! Spin-chain Hamiltonians as Pauli-term sums.
//!
//! Conventions shared by every backend:
//! - spin operators are `S^a = sigma^a / 2`;
//! - open boundaries;
//! - site 0 is the most significant bit of a basis index and `|0>` is spin up.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mps::Mpo;
use crate::pauli::{BitMasks, Pauli, PauliString, PauliTerm};

/// Largest chain handled by dense matrices and full statevector contractions.
pub const DENSE_CAP: usize = 14;

/// Coefficients below this magnitude are dropped when like terms merge.
pub const MERGE_THRESHOLD: f64 = 1e-14;

/// Identifier of the pinned disorder generator: ChaCha8 seeded through
/// `seed_from_u64`, one `next_u64` per site, top 53 bits mapped to `[0, 1)`.
pub const DISORDER_RNG: &str = "chacha8-u53-v1";

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    HeisenbergDisordered,
    TransverseIsing,
}

/// Everything needed to rebuild a Hamiltonian instance bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub model: Model,
    #[serde(rename = "L")]
    pub length: usize,
    #[serde(rename = "J", default = "one")]
    pub coupling: f64,
    /// Disorder half-width `W` (Heisenberg only).
    #[serde(rename = "W", default)]
    pub disorder: f64,
    /// Transverse field `h` (Ising only).
    #[serde(rename = "h", default)]
    pub field: f64,
    /// Longitudinal tilt `h_x` (Ising only).
    #[serde(rename = "h_x", default)]
    pub tilt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rng")]
    pub disorder_rng: String,
    /// Realized on-site fields `h_i`; filled in by [`HamiltonianSpec::realize`].
    #[serde(rename = "fields_h", default)]
    pub fields: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_rng() -> String {
    DISORDER_RNG.to_string()
}

impl HamiltonianSpec {
    pub fn heisenberg(length: usize, coupling: f64, disorder: f64, seed: u64) -> Self {
        Self {
            model: Model::HeisenbergDisordered,
            length,
            coupling,
            disorder,
            field: 0.0,
            tilt: 0.0,
            seed,
            disorder_rng: default_rng(),
            fields: Vec::new(),
        }
    }

    pub fn tfim(length: usize, coupling: f64, field: f64, tilt: f64) -> Self {
        Self {
            model: Model::TransverseIsing,
            length,
            coupling,
            disorder: 0.0,
            field,
            tilt,
            seed: 0,
            disorder_rng: default_rng(),
            fields: Vec::new(),
        }
    }

    /// Validate parameters and draw the disorder. If `fields_h` was supplied
    /// (e.g. from a run echo) it must match the regenerated values exactly.
    pub fn realize(mut self) -> Result<Self> {
        if self.length < 2 {
            return Err(Error::InvalidSpec(format!(
                "chain length must be at least 2, got {}",
                self.length
            )));
        }
        if self.disorder_rng != DISORDER_RNG {
            return Err(Error::InvalidSpec(format!(
                "unknown disorder_rng {:?}; supported: {DISORDER_RNG}",
                self.disorder_rng
            )));
        }
        let finite = [self.coupling, self.disorder, self.field, self.tilt];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite model parameter".into()));
        }
        let fields = match self.model {
            Model::HeisenbergDisordered => {
                if self.disorder < 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "disorder half-width must be >= 0, got {}",
                        self.disorder
                    )));
                }
                disorder_fields(self.length, self.disorder, self.seed)
            }
            Model::TransverseIsing => Vec::new(),
        };
        if !self.fields.is_empty() && self.fields != fields {
            return Err(Error::InvalidSpec(
                "fields_h does not match the values regenerated from seed".into(),
            ));
        }
        self.fields = fields;
        Ok(self)
    }

    /// Realize the spec and lower it to Pauli terms.
    pub fn operator(&self) -> Result<OperatorTerms> {
        let spec = self.clone().realize()?;
        Ok(match spec.model {
            Model::HeisenbergDisordered => heisenberg_terms(spec.length, spec.coupling, &spec.fields),
            Model::TransverseIsing => tfim_terms(spec.length, spec.coupling, spec.field, spec.tilt),
        })
    }
}

/// `h_i = W (2u - 1)` with `u` drawn from the pinned generator.
pub fn disorder_fields(length: usize, disorder: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..length)
        .map(|_| {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            disorder * (2.0 * u - 1.0)
        })
        .collect()
}

/// A real-weighted Hermitian Pauli sum plus a multiple of the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorTerms {
    length: usize,
    terms: Vec<PauliTerm>,
    constant_shift: f64,
}

impl OperatorTerms {
    pub fn zero(length: usize) -> Self {
        Self {
            length,
            terms: Vec::new(),
            constant_shift: 0.0,
        }
    }

    pub fn identity(length: usize, scale: f64) -> Self {
        Self {
            length,
            terms: Vec::new(),
            constant_shift: scale,
        }
    }

    /// Merge like strings (first-seen order), fold identities into the shift
    /// and drop coefficients that cancel below [`MERGE_THRESHOLD`].
    pub fn from_terms(length: usize, terms: impl IntoIterator<Item = PauliTerm>, constant_shift: f64) -> Result<Self> {
        let mut order: Vec<PauliString> = Vec::new();
        let mut acc: HashMap<PauliString, f64> = HashMap::new();
        let mut shift = constant_shift;
        for t in terms {
            if t.ops.len() != length {
                return Err(Error::DimensionMismatch {
                    expected: length,
                    found: t.ops.len(),
                });
            }
            if !t.coefficient.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite coefficient on {}", t.ops)));
            }
            if t.ops.is_identity() {
                shift += t.coefficient;
                continue;
            }
            match acc.get_mut(&t.ops) {
                Some(c) => *c += t.coefficient,
                None => {
                    order.push(t.ops.clone());
                    acc.insert(t.ops, t.coefficient);
                }
            }
        }
        let terms = order
            .into_iter()
            .filter_map(|ops| {
                let c = acc[&ops];
                (c.abs() >= MERGE_THRESHOLD).then(|| PauliTerm::new(c, ops))
            })
            .collect();
        Ok(Self {
            length,
            terms,
            constant_shift: shift,
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn terms(&self) -> &[PauliTerm] {
        &self.terms
    }

    pub fn constant_shift(&self) -> f64 {
        self.constant_shift
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `alpha * self + beta`.
    pub fn scaled(&self, alpha: f64, beta: f64) -> Self {
        Self {
            length: self.length,
            terms: self
                .terms
                .iter()
                .map(|t| PauliTerm::new(alpha * t.coefficient, t.ops.clone()))
                .collect(),
            constant_shift: alpha * self.constant_shift + beta,
        }
    }

    /// True when every string has an even number of `Y`s, i.e. the dense
    /// matrix is real symmetric.
    pub fn is_real(&self) -> bool {
        self.terms.iter().all(|t| t.ops.y_count() % 2 == 0)
    }

    /// Sum of |coefficient| including the shift: an upper bound on the norm.
    pub fn one_norm(&self) -> f64 {
        self.terms.iter().map(|t| t.coefficient.abs()).sum::<f64>() + self.constant_shift.abs()
    }

    /// Bit-mask form for statevector application (L <= 63).
    pub fn compile(&self) -> Vec<(f64, BitMasks)> {
        self.terms.iter().map(|t| (t.coefficient, t.ops.masks())).collect()
    }
}

/// `J sum S_i.S_{i+1} + sum h_i S^z_i` on an open chain.
fn heisenberg_terms(length: usize, coupling: f64, fields: &[f64]) -> OperatorTerms {
    let mut terms = Vec::with_capacity(4 * length);
    for i in 0..length - 1 {
        for p in [Pauli::X, Pauli::Y, Pauli::Z] {
            terms.push(PauliTerm::new(
                coupling / 4.0,
                PauliString::pair(length, (i, i + 1), (p, p)),
            ));
        }
    }
    for (i, &h) in fields.iter().enumerate() {
        terms.push(PauliTerm::new(h / 2.0, PauliString::single(length, i, Pauli::Z)));
    }
    OperatorTerms::from_terms(length, terms, 0.0).expect("well-formed terms")
}

/// `-J sum X_i X_{i+1} - h sum Z_i + h_x sum X_i` on an open chain.
fn tfim_terms(length: usize, coupling: f64, field: f64, tilt: f64) -> OperatorTerms {
    let mut terms = Vec::with_capacity(3 * length);
    for i in 0..length - 1 {
        terms.push(PauliTerm::new(
            -coupling,
            PauliString::pair(length, (i, i + 1), (Pauli::X, Pauli::X)),
        ));
    }
    for i in 0..length {
        terms.push(PauliTerm::new(-field, PauliString::single(length, i, Pauli::Z)));
    }
    for i in 0..length {
        terms.push(PauliTerm::new(tilt, PauliString::single(length, i, Pauli::X)));
    }
    OperatorTerms::from_terms(length, terms, 0.0).expect("well-formed terms")
}

pub fn build_heisenberg(
    length: usize,
    coupling: f64,
    disorder: f64,
    seed: u64,
) -> Result<(HamiltonianSpec, OperatorTerms)> {
    let spec = HamiltonianSpec::heisenberg(length, coupling, disorder, seed).realize()?;
    let ops = heisenberg_terms(length, coupling, &spec.fields);
    Ok((spec, ops))
}

pub fn build_tfim(length: usize, coupling: f64, field: f64, tilt: f64) -> Result<(HamiltonianSpec, OperatorTerms)> {
    let spec = HamiltonianSpec::tfim(length, coupling, field, tilt).realize()?;
    let ops = tfim_terms(length, coupling, field, tilt);
    Ok((spec, ops))
}

/// `H - delta`; only the constant shift changes.
pub fn shift_operator(h: &OperatorTerms, delta: f64) -> OperatorTerms {
    let mut out = h.clone();
    out.constant_shift -= delta;
    out
}

/// Pauli decomposition of `H_shift (H_shift - d_tau)`.
///
/// Products are formed pairwise through the multiplication table with complex
/// phases and collected per string; the collected coefficients are real for a
/// Hermitian input and any residual imaginary part above `1e-12` is an error.
pub fn product_decomposition(h_shift: &OperatorTerms, d_tau: f64) -> Result<OperatorTerms> {
    let length = h_shift.length;
    let a_shift = h_shift.constant_shift;
    let b_shift = a_shift - d_tau;
    let mut acc: BTreeMap<PauliString, C64> = BTreeMap::new();
    let mut add = |ops: PauliString, c: C64| {
        *acc.entry(ops).or_insert(C64::new(0.0, 0.0)) += c;
    };
    for a in &h_shift.terms {
        for b in &h_shift.terms {
            let (phase, ops) = a.ops.mul(&b.ops);
            add(ops, phase * a.coefficient * b.coefficient);
        }
    }
    for t in &h_shift.terms {
        // a_shift * B + A * b_shift, restricted to the non-identity parts
        add(t.ops.clone(), C64::new(t.coefficient * (a_shift + b_shift), 0.0));
    }
    let scale = h_shift.one_norm().powi(2).max(1.0);
    let mut terms = Vec::with_capacity(acc.len());
    for (ops, c) in acc {
        if c.im.abs() > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!(
                "product has imaginary coefficient {:.3e} on {ops}; input not Hermitian",
                c.im
            )));
        }
        terms.push(PauliTerm::new(c.re, ops));
    }
    OperatorTerms::from_terms(length, terms, a_shift * b_shift)
}

/// Dense `2^L x 2^L` matrix with the default cap.
pub fn to_dense(h: &OperatorTerms) -> Result<Array2<C64>> {
    to_dense_capped(h, DENSE_CAP)
}

pub fn to_dense_capped(h: &OperatorTerms, cap: usize) -> Result<Array2<C64>> {
    check_cap("dense matrix", h.length, cap)?;
    let dim = 1usize << h.length;
    let mut m = Array2::<C64>::zeros((dim, dim));
    for b in 0..dim {
        m[[b, b]] += C64::new(h.constant_shift, 0.0);
    }
    for (c, masks) in h.compile() {
        for b in 0..dim as u64 {
            let target = (b ^ masks.x) as usize;
            m[[target, b as usize]] += masks.phase * (c * masks.sign(b));
        }
    }
    Ok(m)
}

/// Real symmetric dense matrix, or `None` when some string has odd `Y` count.
pub fn to_dense_real(h: &OperatorTerms, cap: usize) -> Result<Option<Array2<f64>>> {
    check_cap("dense matrix", h.length, cap)?;
    if !h.is_real() {
        return Ok(None);
    }
    let dim = 1usize << h.length;
    let mut m = Array2::<f64>::zeros((dim, dim));
    for b in 0..dim {
        m[[b, b]] += h.constant_shift;
    }
    for (c, masks) in h.compile() {
        let phase = masks.phase.re;
        for b in 0..dim as u64 {
            m[[(b ^ masks.x) as usize, b as usize]] += phase * c * masks.sign(b);
        }
    }
    Ok(Some(m))
}

/// Lower to a matrix product operator.
pub fn to_mpo(h: &OperatorTerms) -> Mpo {
    Mpo::from_terms(h)
}

pub(crate) fn check_cap(what: &'static str, length: usize, cap: usize) -> Result<()> {
    if length > cap {
        Err(Error::ResourceLimit { what, length, cap })
    } else {
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermsDoc {
    length: usize,
    constant_shift: f64,
    terms: Vec<TermDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermDoc {
    coeff: f64,
    ops: String,
}

impl Serialize for OperatorTerms {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TermsDoc {
            length: self.length,
            constant_shift: self.constant_shift,
            terms: self
                .terms
                .iter()
                .map(|t| TermDoc {
                    coeff: t.coefficient,
                    ops: t.ops.to_string(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OperatorTerms {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = TermsDoc::deserialize(d)?;
        let terms = doc
            .terms
            .into_iter()
            .map(|t| t.ops.parse::<PauliString>().map(|ops| PauliTerm::new(t.coeff, ops)))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        OperatorTerms::from_terms(doc.length, terms, doc.constant_shift).map_err(D::Error::custom)
    }
}
