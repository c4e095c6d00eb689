//! Variational SIITE sweeps and Rayleigh-quotient sweeps.

use ndarray::Array3;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;

use super::env::{apply_local, sandwich, Environments, LocalEnvironment, LocalOperator};
use super::{Mpo, Mps};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `<a|b>`.
pub fn overlap(a: &Mps, b: &Mps) -> C64 {
    sandwich(a, &[], b)
}

/// `<psi|O|psi> / <psi|psi>`.
pub fn expectation(mps: &Mps, mpo: &Mpo) -> Result<f64> {
    check_lengths(mps, mpo)?;
    let n2 = overlap(mps, mps).re;
    Ok(sandwich(mps, &[mpo], mps).re / n2)
}

/// `<psi|(H - E)^2|psi> / <psi|psi>`, clamped at zero. `H - E` is applied
/// once on each side.
pub fn variance_mps(mps: &Mps, h: &Mpo, e: f64) -> Result<f64> {
    check_lengths(mps, h)?;
    let shifted = h.shifted(-e);
    let n2 = overlap(mps, mps).re;
    Ok((sandwich(mps, &[&shifted, &shifted], mps).re / n2).max(0.0))
}

/// Brute-force `D^2 = |H_s phi - (H_s - d_tau) psi|^2`.
pub fn cost_squared(phi: &Mps, psi: &Mps, h_shift: &Mpo, d_tau: f64) -> Result<f64> {
    check_lengths(phi, h_shift)?;
    check_lengths(psi, h_shift)?;
    let g = h_shift.shifted(-d_tau);
    let aa = sandwich(phi, &[h_shift, h_shift], phi).re;
    let ab = sandwich(phi, &[h_shift, &g], psi).re;
    let bb = sandwich(psi, &[&g, &g], psi).re;
    Ok(aa - 2.0 * ab + bb)
}

fn check_lengths(mps: &Mps, mpo: &Mpo) -> Result<()> {
    if mps.length() != mpo.length() {
        return Err(Error::DimensionMismatch {
            expected: mpo.length(),
            found: mps.length(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SweepMode {
    Sequential,
    Parallel,
    /// Sequential schedule, each site optimizing a random `fraction` of its
    /// elements with the rest held fixed.
    Stochastic {
        fraction: f64,
    },
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub mode: SweepMode,
    /// Local problems up to this dimension are solved densely.
    pub dense_threshold: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Seeds the stochastic element masks.
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            mode: SweepMode::Sequential,
            dense_threshold: 2048,
            cg_tol: 1e-12,
            cg_max_iter: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    /// Normalized candidate state, orthogonality center at site 0.
    pub state: Mps,
    /// `D` at the unnormalized minimizer.
    pub distance: f64,
    /// `D^2` of the starting point (always `d_tau^2` up to rounding).
    pub initial_cost: f64,
    /// `D^2` after each local update, in schedule order (sequential modes).
    pub site_costs: Vec<f64>,
}

/// Local environment for the step cost at `site`, with `phi` centered there.
pub(crate) fn local_environment(
    env_m: &Environments,
    env_v: &Environments,
    layers_m: [&Mpo; 2],
    layers_v: [&Mpo; 2],
    phi: &Mps,
    psi: &Mps,
    site: usize,
    constant: f64,
) -> LocalEnvironment {
    let shape = phi.tensor(site).dim();
    let metric = LocalOperator::new(env_m, &layers_m, site, shape);
    let ops = [layers_v[0].tensor(site), layers_v[1].tensor(site)];
    let rhs = apply_local(env_v.left(site), &ops, env_v.right(site), psi.tensor(site));
    LocalEnvironment {
        site,
        metric,
        rhs,
        constant,
    }
}

/// Minimize the local quadratic cost; `mask[i] == false` pins element `i`
/// to its value in `x0`.
fn solve_local(local: &LocalEnvironment, x0: &[C64], mask: Option<&[bool]>, opts: &SweepOptions) -> Vec<C64> {
    let n = local.dim();
    let v = local.rhs_flat();
    if n <= opts.dense_threshold {
        let m = local.metric.dense();
        let Some(mask) = mask else {
            return linalg::solve_hpsd_near(&m, &v, x0);
        };
        let free: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        if free.is_empty() {
            return x0.to_vec();
        }
        let fixed: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
        let mss = ndarray::Array2::from_shape_fn((free.len(), free.len()), |(a, b)| m[[free[a], free[b]]]);
        let b: Vec<C64> = free
            .iter()
            .map(|&i| v[i] - fixed.iter().map(|&j| m[[i, j]] * x0[j]).sum::<C64>())
            .collect();
        let start: Vec<C64> = free.iter().map(|&i| x0[i]).collect();
        let xs = linalg::solve_hpsd_near(&mss, &b, &start);
        let mut x = x0.to_vec();
        for (a, &i) in free.iter().enumerate() {
            x[i] = xs[a];
        }
        return x;
    }
    match mask {
        None => {
            let apply = |y: &[C64], out: &mut [C64]| out.copy_from_slice(&local.metric.apply(y));
            linalg::conjugate_gradient(apply, &v, x0.to_vec(), opts.cg_tol, opts.cg_max_iter).x
        }
        Some(mask) => {
            let pinned: Vec<C64> = (0..n).map(|i| if mask[i] { ZERO } else { x0[i] }).collect();
            let mp = local.metric.apply(&pinned);
            let b: Vec<C64> = (0..n).map(|i| if mask[i] { v[i] - mp[i] } else { ZERO }).collect();
            let start: Vec<C64> = (0..n).map(|i| if mask[i] { x0[i] } else { ZERO }).collect();
            let apply = |y: &[C64], out: &mut [C64]| {
                let ym: Vec<C64> = (0..n).map(|i| if mask[i] { y[i] } else { ZERO }).collect();
                let my = local.metric.apply(&ym);
                for i in 0..n {
                    out[i] = if mask[i] { my[i] } else { ZERO };
                }
            };
            let xs = linalg::conjugate_gradient(apply, &b, start, opts.cg_tol, opts.cg_max_iter).x;
            (0..n).map(|i| if mask[i] { xs[i] } else { x0[i] }).collect()
        }
    }
}

fn flatten(a: &Array3<C64>) -> Vec<C64> {
    a.iter().copied().collect()
}

fn unflatten(x: Vec<C64>, shape: (usize, usize, usize)) -> Array3<C64> {
    Array3::from_shape_vec(shape, x).expect("shape")
}

/// One variational SIITE sweep: approximately minimize
/// `|H_s psi' - (H_s - d_tau) psi|` over MPS of the input's bond dimensions.
pub fn siite_sweep(mps: &Mps, h_shift: &Mpo, d_tau: f64, opts: &SweepOptions) -> Result<SweepOutcome> {
    check_lengths(mps, h_shift)?;
    if d_tau == 0.0 || !d_tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "d_tau must be finite and nonzero, got {d_tau}"
        )));
    }
    let mut psi = mps.clone();
    psi.canonicalize(0);
    let g = h_shift.shifted(-d_tau);
    let constant = sandwich(&psi, &[&g, &g], &psi).re;
    match opts.mode {
        SweepMode::Parallel => parallel_sweep(&psi, h_shift, &g, d_tau, constant, opts),
        SweepMode::Sequential => sequential_sweep(&psi, h_shift, &g, constant, None, opts),
        SweepMode::Stochastic { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "stochastic fraction {fraction} outside (0, 1]"
                )));
            }
            sequential_sweep(&psi, h_shift, &g, constant, Some(fraction), opts)
        }
    }
}

fn sequential_sweep(
    psi: &Mps,
    hs: &Mpo,
    g: &Mpo,
    constant: f64,
    fraction: Option<f64>,
    opts: &SweepOptions,
) -> Result<SweepOutcome> {
    let l = psi.length();
    let mut phi = psi.clone();
    let layers_m = [hs, hs];
    let layers_v = [hs, g];
    let mut env_m = Environments::new(l, 2);
    let mut env_v = Environments::new(l, 2);
    env_m.build_right(&phi, &layers_m, &phi, 0);
    env_v.build_right(&phi, &layers_v, psi, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let schedule: Vec<usize> = (0..l).chain((0..l.saturating_sub(1)).rev()).collect();
    let mut site_costs = Vec::with_capacity(schedule.len());
    let mut initial_cost = f64::NAN;
    for (step, &k) in schedule.iter().enumerate() {
        let local = local_environment(&env_m, &env_v, layers_m, layers_v, &phi, psi, k, constant);
        let x0 = flatten(phi.tensor(k));
        let before = local.cost_squared(&x0);
        if step == 0 {
            initial_cost = before;
        }
        let mask: Option<Vec<bool>> = fraction.map(|f| (0..x0.len()).map(|_| rng.random::<f64>() < f).collect());
        let x = solve_local(&local, &x0, mask.as_deref(), opts);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SiteFailure {
                site: k,
                reason: "non-finite local solution".into(),
            });
        }
        let after = local.cost_squared(&x);
        let (x, cost) = if after <= before { (x, after) } else { (x0, before) };
        site_costs.push(cost);
        phi.tensors_mut()[k] = unflatten(x, local.metric.shape);
        phi.set_ortho_center(Some(k));

        let going_right = step + 1 < l;
        if step + 1 == schedule.len() {
            break;
        }
        if going_right {
            phi.move_right(k);
            env_m.update_left(&phi, &layers_m, &phi, k);
            env_v.update_left(&phi, &layers_v, psi, k);
        } else {
            phi.move_left(k);
            env_m.update_right(&phi, &layers_m, &phi, k);
            env_v.update_right(&phi, &layers_v, psi, k);
        }
    }
    let last = site_costs.last().copied().unwrap_or(initial_cost);
    phi.normalize();
    Ok(SweepOutcome {
        state: phi,
        distance: last.max(0.0).sqrt(),
        initial_cost,
        site_costs,
    })
}

fn parallel_sweep(
    psi: &Mps,
    hs: &Mpo,
    g: &Mpo,
    d_tau: f64,
    constant: f64,
    opts: &SweepOptions,
) -> Result<SweepOutcome> {
    let l = psi.length();
    let layers_m = [hs, hs];
    let layers_v = [hs, g];
    let mut env_m = Environments::new(l, 2);
    let mut env_v = Environments::new(l, 2);
    env_m.build_right(psi, &layers_m, psi, 0);
    env_m.build_left(psi, &layers_m, psi, l - 1);
    env_v.build_right(psi, &layers_v, psi, 0);
    env_v.build_left(psi, &layers_v, psi, l - 1);
    let solved: Vec<Result<Array3<C64>>> = (0..l)
        .into_par_iter()
        .map(|k| {
            let local = local_environment(&env_m, &env_v, layers_m, layers_v, psi, psi, k, constant);
            let x0 = flatten(psi.tensor(k));
            let x = solve_local(&local, &x0, None, opts);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::SiteFailure {
                    site: k,
                    reason: "non-finite local solution".into(),
                });
            }
            Ok(unflatten(x, local.metric.shape))
        })
        .collect();
    let mut phi = psi.clone();
    for (k, t) in solved.into_iter().enumerate() {
        phi.tensors_mut()[k] = t?;
    }
    let cost = cost_squared(&phi, psi, hs, d_tau)?;
    phi.normalize();
    Ok(SweepOutcome {
        state: phi,
        distance: cost.max(0.0).sqrt(),
        initial_cost: d_tau * d_tau,
        site_costs: Vec::new(),
    })
}

#[derive(Clone, Debug)]
pub struct RayleighOptions {
    pub max_sweeps: usize,
    /// Stop when a full sweep improves the quotient by less than this,
    /// relative to its magnitude.
    pub tol: f64,
    pub dense_threshold: usize,
    pub krylov: usize,
}

impl Default for RayleighOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 50,
            tol: 1e-8,
            dense_threshold: 512,
            krylov: 40,
        }
    }
}

fn lowest_local(op: &LocalOperator, x0: &[C64], opts: &RayleighOptions) -> Result<(f64, Vec<C64>)> {
    if op.dim() <= opts.dense_threshold {
        let (vals, vecs) = linalg::hermitian_eigen(&op.dense())?;
        let x = (0..op.dim()).map(|i| vecs[(i, 0)]).collect();
        return Ok((vals[0], x));
    }
    Ok(linalg::lanczos_lowest(|x| op.apply(x), x0, opts.krylov, 30, 1e-10))
}

/// Minimize `<phi|O_1 .. O_n|phi> / <phi|phi>` over MPS at the bond
/// dimensions of `init` by sweeping local eigenproblems. Returns the
/// normalized state and the final quotient.
pub fn rayleigh_ground_state(layers: &[&Mpo], init: Mps, opts: &RayleighOptions) -> Result<(Mps, f64)> {
    for m in layers {
        check_lengths(&init, m)?;
    }
    let l = init.length();
    let mut phi = init;
    phi.normalize();
    phi.canonicalize(0);
    if l == 1 {
        let op = LocalOperator::new(&Environments::new(1, layers.len()), layers, 0, phi.tensor(0).dim());
        let (val, x) = lowest_local(&op, &flatten(phi.tensor(0)), opts)?;
        phi.tensors_mut()[0] = unflatten(x, op.shape);
        phi.set_ortho_center(Some(0));
        return Ok((phi, val));
    }
    let mut env = Environments::new(l, layers.len());
    env.build_right(&phi, layers, &phi, 0);
    let mut previous = f64::INFINITY;
    let mut value = f64::NAN;
    for _sweep in 0..opts.max_sweeps.max(1) {
        let schedule: Vec<usize> = (0..l - 1).chain((1..l).rev()).collect();
        for (step, &k) in schedule.iter().enumerate() {
            let op = LocalOperator::new(&env, layers, k, phi.tensor(k).dim());
            let x0 = flatten(phi.tensor(k));
            let (val, x) = lowest_local(&op, &x0, opts)?;
            value = val;
            phi.tensors_mut()[k] = unflatten(x, op.shape);
            phi.set_ortho_center(Some(k));
            if step < l - 1 {
                phi.move_right(k);
                env.update_left(&phi, layers, &phi, k);
            } else {
                phi.move_left(k);
                env.update_right(&phi, layers, &phi, k);
            }
        }
        if (previous - value).abs() <= opts.tol * value.abs().max(1e-12) {
            break;
        }
        previous = value;
    }
    phi.normalize();
    Ok((phi, value))
}

/// Low-χ approximation to the ground state of `H_s^2`, the spectral-folding
/// warm start. Starts from a seeded random MPS of bond dimension `chi0`.
pub fn folded_ground_state(h_shift: &Mpo, chi0: usize, seed: u64, opts: &RayleighOptions) -> Result<Mps> {
    if chi0 == 0 {
        return Err(Error::InvalidArgument("chi0 must be at least 1".into()));
    }
    let init = Mps::random(h_shift.length(), chi0, seed);
    rayleigh_ground_state(&[h_shift, h_shift], init, opts).map(|(m, _)| m)
}

/// Variational `(E_min, E_max)` from Rayleigh sweeps on `H` and `-H`.
pub fn spectral_bounds(h: &Mpo, chi: usize, seed: u64, opts: &RayleighOptions) -> Result<(f64, f64)> {
    let l = h.length();
    let (_, lo) = rayleigh_ground_state(&[h], Mps::random(l, chi, seed), opts)?;
    let neg = h.scaled(-1.0);
    let (_, hi) = rayleigh_ground_state(&[&neg], Mps::random(l, chi, seed.wrapping_add(1)), opts)?;
    Ok((lo, -hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{diagonalize, energy, max_fidelity, siite_step_exact, variance, ExactSolver, StateVector};
    use crate::models::{build_heisenberg, build_tfim, shift_operator};
    use crate::mps::ProductPattern;

    fn heis(l: usize, w: f64, seed: u64, delta: f64) -> (crate::OperatorTerms, Mpo) {
        let (_, h) = build_heisenberg(l, 1.0, w, seed).unwrap();
        let hs = shift_operator(&h, delta);
        let m = Mpo::from_terms(&hs);
        (hs, m)
    }

    #[test]
    fn expectation_and_variance_match_statevector() {
        let (h, m) = heis(8, 3.0, 4, 0.0);
        let mps = Mps::random(8, 4, 11);
        let psi = mps.to_statevector().unwrap();
        let e = expectation(&mps, &m).unwrap();
        assert!((e - energy(&h, &psi).unwrap()).abs() < 1e-10);
        let var = variance_mps(&mps, &m, e).unwrap();
        assert!((var - variance(&h, &psi).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn neel_two_sites() {
        let (_, m) = heis(2, 0.0, 0, 0.0);
        let mps = Mps::product(ProductPattern::Neel, 2).unwrap();
        let e = expectation(&mps, &m).unwrap();
        assert!((e + 0.25).abs() < 1e-14);
        assert!((variance_mps(&mps, &m, e).unwrap() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn local_cost_matches_brute_force() {
        let (_, m) = heis(6, 2.0, 3, 0.3);
        let psi = Mps::random(6, 4, 1);
        let mut phi = Mps::random(6, 4, 2);
        let d_tau = 0.07;
        let g = m.shifted(-d_tau);
        let constant = sandwich(&psi, &[&g, &g], &psi).re;
        let brute = cost_squared(&phi, &psi, &m, d_tau).unwrap();
        for site in 0..6 {
            phi.canonicalize(site);
            let mut em = Environments::new(6, 2);
            let mut ev = Environments::new(6, 2);
            em.build_right(&phi, &[&m, &m], &phi, site);
            em.build_left(&phi, &[&m, &m], &phi, site);
            ev.build_right(&phi, &[&m, &g], &psi, site);
            ev.build_left(&phi, &[&m, &g], &psi, site);
            let local = local_environment(&em, &ev, [&m, &m], [&m, &g], &phi, &psi, site, constant);
            let c = local.cost_squared(&flatten(phi.tensor(site)));
            assert!(
                (c - brute).abs() < 1e-10 * brute.abs().max(1.0),
                "site {site}: {c} vs {brute}"
            );
        }
    }

    #[test]
    fn initial_cost_is_d_tau_squared_and_sweep_is_monotone() {
        let (_, m) = heis(6, 4.0, 9, 0.1);
        let psi = Mps::random(6, 3, 5);
        let out = siite_sweep(&psi, &m, 0.05, &SweepOptions::default()).unwrap();
        assert!((out.initial_cost - 0.0025).abs() < 1e-10);
        let mut prev = out.initial_cost;
        for &c in &out.site_costs {
            assert!(c <= prev + 1e-12);
            prev = c;
        }
    }

    #[test]
    fn full_bond_sweep_reproduces_exact_step() {
        let (hs, m) = heis(8, 6.0, 21, 0.0);
        let mut mps = Mps::random(8, 2, 3);
        mps.pad_bonds(None);
        let psi = mps.to_statevector().unwrap();
        let d_tau = 0.1;
        let exact = siite_step_exact(&hs, &psi, d_tau, ExactSolver::LeastSquares).unwrap();
        let out = siite_sweep(&mps, &m, d_tau, &SweepOptions::default()).unwrap();
        let got = out.state.to_statevector().unwrap();
        assert!(got.fidelity(&exact) > 1.0 - 1e-8, "fidelity {}", got.fidelity(&exact));
        assert!(out.distance < 1e-6);
    }

    #[test]
    fn eigenstate_is_a_fixed_point() {
        let (hs, m) = heis(6, 3.0, 2, 0.05);
        let eig = diagonalize(&hs).unwrap();
        let phi = eig.state(17);
        let mut mps = Mps::from_statevector(&phi, None).unwrap();
        mps.pad_bonds(None);
        let d_tau = 0.02;
        let out = siite_sweep(&mps, &m, d_tau, &SweepOptions::default()).unwrap();
        let got = out.state.to_statevector().unwrap();
        assert!(got.fidelity(&phi) > 1.0 - 1e-8);
    }

    #[test]
    fn stochastic_and_cg_paths_decrease_cost() {
        let (_, m) = heis(6, 2.0, 8, 0.0);
        let psi = Mps::random(6, 4, 7);
        let opts = SweepOptions {
            mode: SweepMode::Stochastic { fraction: 0.5 },
            dense_threshold: 4,
            seed: 3,
            ..SweepOptions::default()
        };
        let out = siite_sweep(&psi, &m, 0.05, &opts).unwrap();
        let mut prev = out.initial_cost;
        for &c in &out.site_costs {
            assert!(c <= prev + 1e-12);
            prev = c;
        }
        assert!(prev < out.initial_cost);
    }

    #[test]
    fn parallel_sweep_moves_toward_exact_step() {
        let (hs, m) = heis(6, 4.0, 12, 0.0);
        let mut mps = Mps::random(6, 2, 4);
        mps.pad_bonds(None);
        let psi = mps.to_statevector().unwrap();
        let exact = siite_step_exact(&hs, &psi, 0.01, ExactSolver::LeastSquares).unwrap();
        let opts = SweepOptions {
            mode: SweepMode::Parallel,
            ..SweepOptions::default()
        };
        let out = siite_sweep(&mps, &m, 0.01, &opts).unwrap();
        let got = out.state.to_statevector().unwrap();
        assert!(got.fidelity(&exact) > psi.fidelity(&exact) - 1e-12);
    }

    #[test]
    fn rayleigh_finds_ground_state() {
        let (_, h) = build_tfim(8, 1.0, 0.5, 0.05).unwrap();
        let m = Mpo::from_terms(&h);
        let eig = diagonalize(&h).unwrap();
        let (gs, val) = rayleigh_ground_state(&[&m], Mps::random(8, 8, 1), &RayleighOptions::default()).unwrap();
        assert!((val - eig.e_min()).abs() < 1e-8);
        let (f, idx) = max_fidelity(&gs.to_statevector().unwrap(), &eig);
        assert_eq!(idx, 0);
        assert!(f > 1.0 - 1e-8);
        let (lo, hi) = spectral_bounds(&m, 8, 2, &RayleighOptions::default()).unwrap();
        assert!((lo - eig.e_min()).abs() < 1e-8);
        assert!((hi - eig.e_max()).abs() < 1e-8);
    }

    #[test]
    fn lanczos_path_agrees_with_dense() {
        let (_, h) = build_tfim(8, 1.0, 1.0, 0.05).unwrap();
        let m = Mpo::from_terms(&h);
        let dense = rayleigh_ground_state(&[&m], Mps::random(8, 6, 1), &RayleighOptions::default()).unwrap();
        let opts = RayleighOptions {
            dense_threshold: 8,
            ..RayleighOptions::default()
        };
        let krylov = rayleigh_ground_state(&[&m], Mps::random(8, 6, 1), &opts).unwrap();
        assert!((dense.1 - krylov.1).abs() < 1e-8);
    }

    #[test]
    fn folded_start_is_near_target() {
        let (hs, m) = heis(8, 6.0, 5, -100.0);
        let eig = diagonalize(&hs).unwrap();
        let ws = folded_ground_state(&m, 8, 1, &RayleighOptions::default()).unwrap();
        let sv: StateVector = ws.to_statevector().unwrap();
        let (f, idx) = max_fidelity(&sv, &eig);
        assert_eq!(idx, 0);
        assert!(f >= 0.9);
    }
}
