//! Shot-noise simulation of the modified Hadamard test used to measure the
//! cross term `Re<a|b>` of the step cost on hardware.

use rand::distr::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{SparseOperator, StateVector};
use crate::linalg;
use crate::models::{product_decomposition, OperatorTerms};
use crate::pauli::PauliString;
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Label attached to shot budgets: the constant is ours, only the scaling
/// comes from the Chernoff argument.
pub const SHOT_BOUND: &str = "hoeffding";

#[derive(Clone, Debug)]
pub struct OverlapTask {
    pub psi1: StateVector,
    pub psi2: StateVector,
    pub exact_overlap_real: f64,
}

impl OverlapTask {
    pub fn new(psi1: StateVector, psi2: StateVector) -> Result<Self> {
        if psi1.length() != psi2.length() {
            return Err(Error::DimensionMismatch {
                expected: psi1.length(),
                found: psi2.length(),
            });
        }
        let exact_overlap_real = psi1.inner(&psi2).re;
        Ok(Self {
            psi1,
            psi2,
            exact_overlap_real,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub shots: u64,
}

/// `p(0) = (1 + Re<psi1|psi2>) / 2`.
pub fn hadamard_probability(psi1: &StateVector, psi2: &StateVector) -> f64 {
    ((1.0 + psi1.inner(psi2).re) / 2.0).clamp(0.0, 1.0)
}

/// A unitary with `V|0> = psi`: a phased Householder reflection.
fn preparation(psi: &StateVector) -> impl Fn(&mut [C64]) {
    let amps = psi.amplitudes();
    let phase = if amps[0].norm() > 0.0 {
        amps[0] / amps[0].norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let mut w: Vec<C64> = amps.iter().map(|a| -a / phase).collect();
    w[0] += 1.0;
    let wn2 = linalg::dotc(&w, &w).re;
    move |v: &mut [C64]| {
        if wn2 > 1e-300 {
            let c = linalg::dotc(&w, v) * (2.0 / wn2);
            linalg::axpy(-c, &w, v);
        }
        v.iter_mut().for_each(|x| *x *= phase);
    }
}

/// Statevector simulation of the one-ancilla circuit: Hadamard on the
/// ancilla, `V_1` controlled on ancilla `0`, `V_2` controlled on ancilla
/// `1`, Hadamard, then the probability of reading `0`. The ancilla is the
/// most significant qubit.
pub fn simulate_hadamard_circuit(psi1: &StateVector, psi2: &StateVector) -> Result<f64> {
    if psi1.length() != psi2.length() {
        return Err(Error::DimensionMismatch {
            expected: psi1.length(),
            found: psi2.length(),
        });
    }
    let dim = psi1.dim();
    let mut reg = vec![ZERO; 2 * dim];
    reg[0] = C64::new(1.0, 0.0);
    let hadamard = |reg: &mut [C64]| {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..dim {
            let (a, b) = (reg[i], reg[dim + i]);
            reg[i] = (a + b) * s;
            reg[dim + i] = (a - b) * s;
        }
    };
    hadamard(&mut reg);
    let (low, high) = reg.split_at_mut(dim);
    preparation(psi1)(low);
    preparation(psi2)(high);
    hadamard(&mut reg);
    Ok(reg[..dim].iter().map(|a| a.norm_sqr()).sum())
}

/// `N` Bernoulli draws of the ancilla; `mean = 2 p_hat - 1`.
pub fn sample_overlap(task: &OverlapTask, shots: u64, seed: u64) -> Result<ShotEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(hadamard_probability(&task.psi1, &task.psi2), shots, &mut rng)
}

fn sample_with(p0: f64, shots: u64, rng: &mut ChaCha8Rng) -> Result<ShotEstimate> {
    if shots == 0 {
        return Err(Error::InvalidArgument("need at least one shot".into()));
    }
    let dist = Bernoulli::new(p0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let zeros = (0..shots).filter(|_| dist.sample(rng)).count() as f64;
    let n = shots as f64;
    let p = zeros / n;
    Ok(ShotEstimate {
        mean: 2.0 * p - 1.0,
        stderr: 2.0 * (p * (1.0 - p) / n).sqrt(),
        shots,
    })
}

/// `ceil(ln(2 / failure_prob) / (2 eps^2))`.
pub fn shots_required(epsilon: f64, failure_prob: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(failure_prob > 0.0 && failure_prob < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "failure probability must lie in (0, 1), got {failure_prob}"
        )));
    }
    Ok(((2.0 / failure_prob).ln() / (2.0 * epsilon * epsilon)).ceil() as u64)
}

/// Greedy partition into qubit-wise commuting groups, in input order.
pub fn group_qubitwise(strings: &[PauliString]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, s) in strings.iter().enumerate() {
        match groups
            .iter_mut()
            .find(|g| g.iter().all(|&j| strings[j].commutes_qubitwise(s)))
        {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotAllocation {
    /// The same number of shots for every measured circuit.
    #[default]
    Uniform,
    /// Total budget split in proportion to `|alpha_i|` (at least one each).
    Proportional,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    /// `None` evaluates the infinite-shot limit.
    pub shots_per_string: Option<u64>,
    pub allocation: ShotAllocation,
    /// Measure qubit-wise commuting groups as one circuit each.
    pub grouped: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossTermEstimate {
    pub term_count: usize,
    /// Circuits actually run (groups when grouping, strings otherwise).
    pub measurement_settings: usize,
    pub shots_per_string: Option<u64>,
    pub mean: f64,
    pub stderr: f64,
    /// Oracle value `Re<psi_new|H_s (H_s - d_tau)|psi_old>`.
    pub exact: f64,
    pub shot_bound: String,
}

/// One measured circuit: `Re<psi_new|Q psi_old>` with `Q` a weighted sum of
/// strings, estimated via the normalized `Q psi_old`.
struct Setting {
    weight: f64,
    state: StateVector,
    exact: f64,
}

/// Estimate `Re<a|b> = sum_i alpha_i Re<psi_new|P_i|psi_old>` from the Pauli
/// decomposition of `H_s (H_s - d_tau)`, sampling one Hadamard test per
/// string (or per commuting group). Every setting draws from its own
/// generator keyed by `(seed, index)`.
pub fn estimate_cross_term(
    psi_new: &StateVector,
    psi_old: &StateVector,
    h_shift: &OperatorTerms,
    d_tau: f64,
    opts: &EstimatorOptions,
) -> Result<CrossTermEstimate> {
    let decomposition = product_decomposition(h_shift, d_tau)?;
    estimate_decomposed(psi_new, psi_old, &decomposition, opts)
}

/// As [`estimate_cross_term`] for an already decomposed operator.
pub fn estimate_decomposed(
    psi_new: &StateVector,
    psi_old: &StateVector,
    decomposition: &OperatorTerms,
    opts: &EstimatorOptions,
) -> Result<CrossTermEstimate> {
    if psi_new.length() != decomposition.length() || psi_old.length() != decomposition.length() {
        return Err(Error::DimensionMismatch {
            expected: decomposition.length(),
            found: psi_new.length(),
        });
    }
    let n_new = psi_new.norm();
    let n_old = psi_old.norm();
    let unit_new = psi_new.clone().normalized();
    let unit_old = psi_old.clone().normalized();
    let l = decomposition.length();

    let mut strings: Vec<PauliString> = Vec::new();
    let mut coeffs: Vec<f64> = Vec::new();
    if decomposition.constant_shift() != 0.0 {
        strings.push(PauliString::identity(l));
        coeffs.push(decomposition.constant_shift());
    }
    for t in decomposition.terms() {
        strings.push(t.ops.clone());
        coeffs.push(t.coefficient);
    }
    let groups: Vec<Vec<usize>> = if opts.grouped {
        group_qubitwise(&strings)
    } else {
        (0..strings.len()).map(|i| vec![i]).collect()
    };

    let settings: Vec<Setting> = groups
        .iter()
        .map(|g| {
            let members: Vec<crate::PauliTerm> = g
                .iter()
                .map(|&i| crate::PauliTerm::new(coeffs[i], strings[i].clone()))
                .collect();
            let q = OperatorTerms::from_terms(l, members, 0.0)?;
            let qpsi = StateVector::from_amplitudes(l, SparseOperator::new(&q).apply(unit_old.amplitudes()))?;
            let weight = qpsi.norm();
            let state = if weight > 0.0 { qpsi.normalized() } else { qpsi };
            let exact = unit_new.inner(&state).re;
            Ok(Setting { weight, state, exact })
        })
        .collect::<Result<_>>()?;

    let scale = n_new * n_old;
    let exact = scale * settings.iter().map(|s| s.weight * s.exact).sum::<f64>();
    let (mean, stderr) = match opts.shots_per_string {
        None => (exact, 0.0),
        Some(per) => {
            let total_weight: f64 = settings.iter().map(|s| s.weight).sum();
            let budget = per * settings.len() as u64;
            let shots: Vec<u64> = settings
                .iter()
                .map(|s| match opts.allocation {
                    ShotAllocation::Uniform => per,
                    ShotAllocation::Proportional => {
                        ((budget as f64 * s.weight / total_weight.max(1e-300)).round() as u64).max(1)
                    }
                })
                .collect();
            let parts: Vec<ShotEstimate> = settings
                .par_iter()
                .zip(&shots)
                .enumerate()
                .map(|(i, (s, &n))| {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                    rng.set_stream(i as u64);
                    sample_with(hadamard_probability(&unit_new, &s.state), n, &mut rng)
                })
                .collect::<Result<_>>()?;
            let mean = scale * settings.iter().zip(&parts).map(|(s, p)| s.weight * p.mean).sum::<f64>();
            let var = settings
                .iter()
                .zip(&parts)
                .map(|(s, p)| (s.weight * p.stderr).powi(2))
                .sum::<f64>();
            (mean, scale * var.sqrt())
        }
    };
    Ok(CrossTermEstimate {
        term_count: strings.len(),
        measurement_settings: settings.len(),
        shots_per_string: opts.shots_per_string,
        mean,
        stderr,
        exact,
        shot_bound: SHOT_BOUND.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    /// `<a|a> = |H_s psi_new|^2`, exact.
    pub aa: f64,
    /// `<b|b> = |(H_s - d_tau) psi_old|^2`, exact.
    pub bb: f64,
    pub cross: CrossTermEstimate,
    pub distance_exact: f64,
    pub distance_estimate: f64,
}

/// `D = sqrt(<a|a> + <b|b> - 2 Re<a|b>)` with only the cross term sampled.
pub fn reassemble_distance(
    psi_new: &StateVector,
    psi_old: &StateVector,
    h_shift: &OperatorTerms,
    d_tau: f64,
    opts: &EstimatorOptions,
) -> Result<DistanceEstimate> {
    let op = SparseOperator::new(h_shift);
    let a = op.apply(psi_new.amplitudes());
    let mut b = op.apply(psi_old.amplitudes());
    linalg::axpy(C64::new(-d_tau, 0.0), psi_old.amplitudes(), &mut b);
    let aa = linalg::dotc(&a, &a).re;
    let bb = linalg::dotc(&b, &b).re;
    let cross = estimate_cross_term(psi_new, psi_old, h_shift, d_tau, opts)?;
    let diff: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(DistanceEstimate {
        aa,
        bb,
        distance_exact: linalg::norm(&diff),
        distance_estimate: (aa + bb - 2.0 * cross.mean).max(0.0).sqrt(),
        cross,
    })
}

/// JSON report for one cross-term estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotReport {
    pub term_count: usize,
    pub shots_per_string: Option<u64>,
    pub mean: f64,
    pub stderr: f64,
    pub exact: Option<f64>,
    pub shot_bound: String,
}

impl From<&CrossTermEstimate> for ShotReport {
    fn from(e: &CrossTermEstimate) -> Self {
        Self {
            term_count: e.term_count,
            shots_per_string: e.shots_per_string,
            mean: e.mean,
            stderr: e.stderr,
            exact: Some(e.exact),
            shot_bound: e.shot_bound.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{diagonalize, siite_step_exact, ExactSolver};
    use crate::models::{build_heisenberg, shift_operator, to_dense};

    #[test]
    fn probability_limits() {
        let a = StateVector::random(3, 1);
        assert!((hadamard_probability(&a, &a) - 1.0).abs() < 1e-15);
        assert!(hadamard_probability(&a, &a.clone().scaled(C64::new(-1.0, 0.0))).abs() < 1e-15);
        let b = StateVector::basis(3, 0);
        let c = StateVector::basis(3, 5);
        assert!((hadamard_probability(&b, &c) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn circuit_matches_formula() {
        for seed in 0..10 {
            let a = StateVector::random(4, seed);
            let b = StateVector::random(4, seed + 100);
            let p = simulate_hadamard_circuit(&a, &b).unwrap();
            assert!((p - hadamard_probability(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn certain_outcome_has_no_error() {
        let a = StateVector::random(2, 4);
        let t = OverlapTask::new(a.clone(), a).unwrap();
        let e = sample_overlap(&t, 1000, 1).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn shot_budget() {
        assert_eq!(shots_required(0.01, 0.05).unwrap(), 18445);
        assert!(shots_required(0.01, 2.0).is_err());
        assert!(shots_required(0.0, 0.1).is_err());
    }

    #[test]
    fn exact_cross_term_matches_dense() {
        let (_, h) = build_heisenberg(4, 1.0, 2.0, 3).unwrap();
        let hs = shift_operator(&h, 0.2);
        let d_tau = 0.05;
        let old = StateVector::random(4, 1);
        let new = siite_step_exact(&hs, &old, d_tau, ExactSolver::LeastSquares).unwrap();
        let m = to_dense(&hs).unwrap();
        let eye = ndarray::Array2::<C64>::eye(16);
        let prod = m.dot(&(&m - &eye.mapv(|v| v * d_tau)));
        let v = ndarray::Array1::from(old.amplitudes().to_vec());
        let pv = prod.dot(&v);
        let want = linalg::dotc(new.amplitudes(), pv.as_slice().unwrap()).re;
        for grouped in [false, true] {
            let opts = EstimatorOptions {
                grouped,
                ..EstimatorOptions::default()
            };
            let got = estimate_cross_term(&new, &old, &hs, d_tau, &opts).unwrap();
            assert!((got.mean - want).abs() < 1e-10);
            assert_eq!(got.stderr, 0.0);
        }
    }

    #[test]
    fn eigenstate_cross_term() {
        let (_, h) = build_heisenberg(4, 1.0, 2.0, 3).unwrap();
        let delta = 0.3;
        let hs = shift_operator(&h, delta);
        let eig = diagonalize(&h).unwrap();
        let phi = eig.state(5);
        let e = eig.energies()[5];
        let d_tau = 0.1;
        let got = estimate_cross_term(&phi, &phi, &hs, d_tau, &EstimatorOptions::default()).unwrap();
        assert!((got.mean - (e - delta) * (e - delta - d_tau)).abs() < 1e-10);
    }

    #[test]
    fn grouping_reduces_settings() {
        let strings: Vec<PauliString> = ["ZZI", "ZIZ", "XXI", "IZZ", "XIX"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let g = group_qubitwise(&strings);
        assert_eq!(g, vec![vec![0, 1, 3], vec![2, 4]]);
    }
}
