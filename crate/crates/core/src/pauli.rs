//! Single-qubit Pauli operators and Pauli strings.
//!
//! A [`PauliString`] is a tensor product of one Pauli per site. Products of
//! strings are resolved site by site through the single-qubit multiplication
//! table, accumulating the phase `i^k` separately.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    /// `self * rhs = phase * result`, with `phase` in `{1, i, -1, -i}`.
    pub fn mul(self, rhs: Pauli) -> (C64, Pauli) {
        use Pauli::*;
        let i = C64::new(0.0, 1.0);
        let one = C64::new(1.0, 0.0);
        match (self, rhs) {
            (I, p) | (p, I) => (one, p),
            (X, X) | (Y, Y) | (Z, Z) => (one, I),
            (X, Y) => (i, Z),
            (Y, X) => (-i, Z),
            (Y, Z) => (i, X),
            (Z, Y) => (-i, X),
            (Z, X) => (i, Y),
            (X, Z) => (-i, Y),
        }
    }

    /// 2x2 matrix in the `{|0>, |1>}` basis, `|0>` being spin up.
    pub fn matrix(self) -> [[C64; 2]; 2] {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => [[l, o], [o, l]],
            Pauli::X => [[o, l], [l, o]],
            Pauli::Y => [[o, -i], [i, o]],
            Pauli::Z => [[l, o], [o, -l]],
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn from_char(c: char) -> Option<Pauli> {
        match c {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    /// Qubit-wise commutation: equal or at least one identity.
    pub fn commutes_qubitwise(self, other: Pauli) -> bool {
        self == Pauli::I || other == Pauli::I || self == other
    }
}

/// Tensor product of single-site Paulis; index 0 is site 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString(Vec<Pauli>);

impl PauliString {
    pub fn new(ops: Vec<Pauli>) -> Self {
        Self(ops)
    }

    pub fn identity(length: usize) -> Self {
        Self(vec![Pauli::I; length])
    }

    /// String acting with `op` on `site` and identity elsewhere.
    pub fn single(length: usize, site: usize, op: Pauli) -> Self {
        let mut ops = vec![Pauli::I; length];
        ops[site] = op;
        Self(ops)
    }

    pub fn pair(length: usize, sites: (usize, usize), ops: (Pauli, Pauli)) -> Self {
        let mut v = vec![Pauli::I; length];
        v[sites.0] = ops.0;
        v[sites.1] = ops.1;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ops(&self) -> &[Pauli] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&p| p == Pauli::I)
    }

    /// First and last non-identity site, `None` for the identity.
    pub fn support(&self) -> Option<(usize, usize)> {
        let first = self.0.iter().position(|&p| p != Pauli::I)?;
        let last = self.0.iter().rposition(|&p| p != Pauli::I)?;
        Some((first, last))
    }

    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&p| p != Pauli::I).count()
    }

    pub fn y_count(&self) -> usize {
        self.0.iter().filter(|&&p| p == Pauli::Y).count()
    }

    /// `self * rhs = phase * string`.
    pub fn mul(&self, rhs: &PauliString) -> (C64, PauliString) {
        assert_eq!(self.len(), rhs.len(), "Pauli strings of unequal length");
        let mut phase = C64::new(1.0, 0.0);
        let ops = self
            .0
            .iter()
            .zip(&rhs.0)
            .map(|(&a, &b)| {
                let (p, c) = a.mul(b);
                phase *= p;
                c
            })
            .collect();
        (phase, PauliString(ops))
    }

    pub fn commutes_qubitwise(&self, other: &PauliString) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| a.commutes_qubitwise(b))
    }

    /// Bit masks for the basis action `P|b> = phase * (-1)^{|b & z|} |b ^ x>`.
    ///
    /// Site `k` maps to bit `L - 1 - k`, so site 0 is the most significant bit.
    pub fn masks(&self) -> BitMasks {
        assert!(self.len() <= 63, "bit masks need L <= 63");
        let n = self.len();
        let mut x = 0u64;
        let mut z = 0u64;
        for (k, &p) in self.0.iter().enumerate() {
            let bit = 1u64 << (n - 1 - k);
            match p {
                Pauli::I => {}
                Pauli::X => x |= bit,
                Pauli::Z => z |= bit,
                Pauli::Y => {
                    x |= bit;
                    z |= bit;
                }
            }
        }
        // Y = i X Z
        let phase = match self.y_count() % 4 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        };
        BitMasks { x, z, phase }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct BitMasks {
    pub x: u64,
    pub z: u64,
    pub phase: C64,
}

impl BitMasks {
    /// Amplitude picked up by basis state `b`; the image is `b ^ self.x`.
    #[inline]
    pub fn sign(&self, b: u64) -> f64 {
        if (b & self.z).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| Pauli::from_char(c).ok_or_else(|| Error::InvalidArgument(format!("bad Pauli character {c:?}"))))
            .collect::<Result<Vec<_>>>()
            .map(PauliString)
    }
}

/// One weighted Pauli string.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliTerm {
    pub coefficient: f64,
    pub ops: PauliString,
}

impl PauliTerm {
    pub fn new(coefficient: f64, ops: PauliString) -> Self {
        Self { coefficient, ops }
    }
}
