use ndarray::{Array1, Array2};
use proptest::prelude::*;
use siite::exact::{
    bitstring_index, diagonalize, energy, entropy_statevector, siite_step_exact, variance, ExactSolver, StateVector,
};
use siite::models::{build_heisenberg, shift_operator, to_dense};
use siite::mps::{
    cost_squared, entropy_profile, expectation, folded_ground_state, grow_bond_random, grow_bond_subspace,
    read_checkpoint, siite_sweep, variance_mps, write_checkpoint, Mpo, Mps, ProductPattern, RayleighOptions, SweepMode,
    SweepOptions,
};
use siite::C64;

fn dense_apply(m: &Array2<C64>, v: &[C64]) -> Vec<C64> {
    m.dot(&Array1::from(v.to_vec())).to_vec()
}

fn identity_dev(m: &Array2<C64>) -> f64 {
    let mut d: f64 = 0.0;
    for ((i, j), v) in m.indexed_iter() {
        let want = if i == j { 1.0 } else { 0.0 };
        d = d.max((v - want).norm());
    }
    d
}

#[test]
fn product_states() {
    let neel = Mps::product(ProductPattern::Neel, 4).unwrap().to_statevector().unwrap();
    assert_eq!(neel.amplitudes()[bitstring_index("0101").unwrap()], C64::new(1.0, 0.0));
    let up = Mps::product(ProductPattern::Up, 3).unwrap().to_statevector().unwrap();
    assert_eq!(up.amplitudes()[0], C64::new(1.0, 0.0));
    let bits = Mps::product(ProductPattern::Bits("0110"), 4).unwrap();
    assert_eq!(bits.bond_dims(), vec![1, 1, 1]);
    assert_eq!(bits.to_statevector().unwrap().amplitudes()[6], C64::new(1.0, 0.0));
}

#[test]
fn canonical_form_identities() {
    let mut m = Mps::random(7, 6, 4);
    for c in 0..7 {
        m.canonicalize(c);
        assert_eq!(m.ortho_center(), Some(c));
        for (k, a) in m.tensors().iter().enumerate() {
            let (l, d, r) = a.dim();
            if k < c {
                let mat = a.to_shape((l * d, r)).unwrap().to_owned();
                assert!(identity_dev(&mat.t().mapv(|v| v.conj()).dot(&mat)) < 1e-10);
            } else if k > c {
                let mat = a.to_shape((l, d * r)).unwrap().to_owned();
                assert!(identity_dev(&mat.dot(&mat.t().mapv(|v| v.conj()))) < 1e-10);
            }
        }
        assert!((m.norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn statevector_round_trip() {
    let psi = StateVector::random(8, 3);
    let m = Mps::from_statevector(&psi, None).unwrap();
    let back = m.to_statevector().unwrap();
    let dev = psi
        .amplitudes()
        .iter()
        .zip(back.amplitudes())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(dev < 1e-10);
    assert!((back.norm() - 1.0).abs() < 1e-10);
}

#[test]
fn expectation_and_variance_match_statevectors() {
    let (_, h2) = build_heisenberg(2, 1.0, 0.0, 0).unwrap();
    let neel = Mps::product(ProductPattern::Neel, 2).unwrap();
    let mpo2 = Mpo::from_terms(&h2);
    let e = expectation(&neel, &mpo2).unwrap();
    assert!((e + 0.25).abs() < 1e-12);
    assert!((variance_mps(&neel, &mpo2, e).unwrap() - 0.25).abs() < 1e-12);

    let (_, h) = build_heisenberg(8, 1.0, 4.0, 6).unwrap();
    let mpo = Mpo::from_terms(&h);
    for seed in 0..4 {
        let m = Mps::random(8, 4, seed);
        let psi = m.to_statevector().unwrap();
        let e = expectation(&m, &mpo).unwrap();
        assert!((e - energy(&h, &psi).unwrap()).abs() < 1e-8);
        let v = variance_mps(&m, &mpo, e).unwrap();
        assert!(v >= 0.0);
        assert!((v - variance(&h, &psi).unwrap()).abs() < 1e-8);
    }
}

#[test]
fn eigenstates_have_no_variance() {
    let (_, h) = build_heisenberg(6, 1.0, 3.0, 2).unwrap();
    let eig = diagonalize(&h).unwrap();
    let mpo = Mpo::from_terms(&h);
    for k in [0, 17, 40] {
        let m = Mps::from_statevector(&eig.state(k), None).unwrap();
        let e = expectation(&m, &mpo).unwrap();
        assert!(variance_mps(&m, &mpo, e).unwrap() < 1e-8);
    }
}

#[test]
fn cost_terms_add_up_to_the_brute_force_distance() {
    for l in 3..=6 {
        let (_, h) = build_heisenberg(l, 1.0, 2.0, l as u64).unwrap();
        let hs = shift_operator(&h, 0.2);
        let mpo = Mpo::from_terms(&hs);
        let dense = to_dense(&hs).unwrap();
        let phi = Mps::random(l, 3, 1);
        let psi = Mps::random(l, 2, 2);
        let d_tau = 0.07;
        let a = dense_apply(&dense, phi.to_statevector().unwrap().amplitudes());
        let pv = psi.to_statevector().unwrap();
        let b = dense_apply(&dense, pv.amplitudes());
        let brute: f64 = a
            .iter()
            .zip(&b)
            .zip(pv.amplitudes())
            .map(|((x, y), p)| (x - (y - p * d_tau)).norm_sqr())
            .sum();
        let got = cost_squared(&phi, &psi, &mpo, d_tau).unwrap();
        assert!((got - brute).abs() < 1e-10 * brute.max(1.0), "L={l}: {got} vs {brute}");
        // starting point psi' = psi costs exactly d_tau^2
        assert!((cost_squared(&psi, &psi, &mpo, d_tau).unwrap() - d_tau * d_tau).abs() < 1e-12);
    }
}

#[test]
fn sweep_keeps_eigenstates() {
    let (_, h) = build_heisenberg(6, 1.0, 4.0, 8).unwrap();
    let eig = diagonalize(&h).unwrap();
    let delta = 0.05;
    let mpo = Mpo::from_terms(&shift_operator(&h, delta));
    for k in [10, 31, 50] {
        let v = eig.state(k);
        let m = Mps::from_statevector(&v, None).unwrap();
        let out = siite_sweep(&m, &mpo, 0.02, &SweepOptions::default()).unwrap();
        assert!(out.state.to_statevector().unwrap().fidelity(&v) >= 1.0 - 1e-8);
        assert!(out.distance < 1e-6, "k={k}: D = {}", out.distance);
    }
}

#[test]
fn exact_bond_dimension_sweep_matches_the_exact_step() {
    let (_, h) = build_heisenberg(8, 1.0, 6.0, 3).unwrap();
    let hs = shift_operator(&h, 0.0);
    let mpo = Mpo::from_terms(&hs);
    let m = Mps::random(8, 16, 5);
    let psi = m.to_statevector().unwrap();
    let want = siite_step_exact(&hs, &psi, 0.01, ExactSolver::LeastSquares).unwrap();
    let got = siite_sweep(&m, &mpo, 0.01, &SweepOptions::default()).unwrap();
    let f = got.state.to_statevector().unwrap().fidelity(&want);
    assert!(f >= 1.0 - 1e-6, "fidelity {f}");
}

#[test]
fn sequential_sweeps_never_raise_the_cost() {
    let (_, h) = build_heisenberg(7, 1.0, 3.0, 9).unwrap();
    let mpo = Mpo::from_terms(&shift_operator(&h, 0.1));
    for (seed, mode) in [
        (1, SweepMode::Sequential),
        (2, SweepMode::Sequential),
        (3, SweepMode::Stochastic { fraction: 0.5 }),
    ] {
        let m = Mps::random(7, 4, seed);
        let opts = SweepOptions {
            mode,
            seed,
            ..SweepOptions::default()
        };
        let out = siite_sweep(&m, &mpo, 0.05, &opts).unwrap();
        let mut prev = out.initial_cost;
        for &c in &out.site_costs {
            assert!(c <= prev * (1.0 + 1e-10) + 1e-14, "{prev} -> {c}");
            prev = c;
        }
        assert!(out.distance * out.distance <= out.initial_cost * (1.0 + 1e-10));
        assert!((out.state.norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn parallel_sweep_returns_a_normalized_state() {
    let (_, h) = build_heisenberg(6, 1.0, 3.0, 9).unwrap();
    let mpo = Mpo::from_terms(&shift_operator(&h, 0.1));
    let m = Mps::random(6, 4, 2);
    let opts = SweepOptions {
        mode: SweepMode::Parallel,
        ..SweepOptions::default()
    };
    let out = siite_sweep(&m, &mpo, 0.05, &opts).unwrap();
    assert!(out.distance.is_finite());
    assert!((out.state.norm() - 1.0).abs() < 1e-10);
}

#[test]
fn folded_warm_start_lands_near_the_target() {
    let mut wins = 0;
    for seed in 0..10 {
        let (_, h) = build_heisenberg(6, 1.0, 8.0, seed).unwrap();
        let mpo = Mpo::from_terms(&shift_operator(&h, 0.0));
        let m = folded_ground_state(&mpo, 4, seed, &RayleighOptions::default()).unwrap();
        assert!(m.max_bond_dim() <= 4);
        let e = energy(&h, &m.to_statevector().unwrap()).unwrap();
        let bits: String = (0..6).map(|k| if (seed >> k) & 1 == 1 { '1' } else { '0' }).collect();
        let product = StateVector::from_bitstring(&bits).unwrap();
        if e.abs() < energy(&h, &product).unwrap().abs() {
            wins += 1;
        }
    }
    assert!(wins >= 9, "{wins}/10");
}

#[test]
fn folded_state_below_the_spectrum_is_the_ground_state() {
    let (_, h) = build_heisenberg(8, 1.0, 6.0, 4).unwrap();
    let eig = diagonalize(&h).unwrap();
    let mpo = Mpo::from_terms(&shift_operator(&h, eig.e_min() - 1.0));
    let m = folded_ground_state(&mpo, 8, 1, &RayleighOptions::default()).unwrap();
    assert!(m.to_statevector().unwrap().fidelity(&eig.state(0)) >= 0.9);
}

#[test]
fn entropy_profiles() {
    let prod = Mps::product(ProductPattern::Neel, 6).unwrap();
    let p = entropy_profile(&prod).unwrap();
    assert!(p.per_bond.iter().all(|s| s.abs() < 1e-12));

    // Bell pair on sites 1 and 2 of four: only the central cut sees it
    let mut bell = StateVector::zeros(4);
    bell.amplitudes_mut()[bitstring_index("0000").unwrap()] = C64::new(1.0, 0.0);
    bell.amplitudes_mut()[bitstring_index("0110").unwrap()] = C64::new(1.0, 0.0);
    let m = Mps::from_statevector(&bell.normalized(), None).unwrap();
    let p = entropy_profile(&m).unwrap();
    assert!((p.central - 2f64.ln()).abs() < 1e-12);
    assert!(p.per_bond[0].abs() < 1e-12 && p.per_bond[2].abs() < 1e-12);

    let m = Mps::random(8, 8, 12);
    let psi = m.to_statevector().unwrap();
    let p = entropy_profile(&m).unwrap();
    for cut in 1..8 {
        assert!((p.per_bond[cut - 1] - entropy_statevector(&psi, cut).unwrap()).abs() < 1e-8);
    }
    let mean = p.per_bond.iter().sum::<f64>() / 7.0;
    assert!((p.mean - mean).abs() < 1e-14);
}

#[test]
fn random_growth() {
    let m = Mps::product(ProductPattern::Neel, 4).unwrap();
    let g = grow_bond_random(&m, 3, 1e-6).unwrap();
    assert_eq!(g.bond_dims(), vec![2, 2, 2]);
    let f = g.to_statevector().unwrap().fidelity(&m.to_statevector().unwrap());
    assert!(f >= 1.0 - 1e-10);
    let big = Mps::product(ProductPattern::Neel, 10).unwrap();
    let mut g = big.clone();
    for step in 1..=3 {
        g = grow_bond_random(&g, step, 1e-6).unwrap();
        assert_eq!(g.bond_dims()[4], 1 + step as usize);
    }
}

#[test]
fn subspace_growth() {
    let (_, h) = build_heisenberg(6, 1.0, 3.0, 5).unwrap();
    let hs = shift_operator(&h, 0.1);
    let mpo = Mpo::from_terms(&hs);
    let eig = diagonalize(&h).unwrap();
    let v = eig.state(20);
    let m = Mps::from_statevector(&v, None).unwrap();
    let g = grow_bond_subspace(&m, &mpo, 1e-3, 2, None).unwrap();
    assert!(g.to_statevector().unwrap().fidelity(&v) >= 1.0 - 1e-10);

    let m = Mps::random(6, 2, 7);
    let g = grow_bond_subspace(&m, &mpo, 1e-3, 2, None).unwrap();
    assert!(g.bond_dims().iter().zip(m.bond_dims()).all(|(a, b)| *a <= b + 2));
    let psi = m.to_statevector().unwrap();
    let mut want = dense_apply(&to_dense(&hs).unwrap(), psi.amplitudes());
    for (w, p) in want.iter_mut().zip(psi.amplitudes()) {
        *w = p + *w * 1e-3;
    }
    let want = StateVector::from_amplitudes(6, want).unwrap().normalized();
    assert!(g.to_statevector().unwrap().fidelity(&want) >= 1.0 - 1e-8);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = Mps::random(6, 4, 3);
    let manifest = write_checkpoint(&m, dir.path(), 1.25).unwrap();
    let (back, read) = read_checkpoint(dir.path()).unwrap();
    assert_eq!(manifest, read);
    assert_eq!(read.tau, 1.25);
    assert_eq!(read.bond_dims, m.bond_dims());
    assert_eq!(back.tensors(), m.tensors());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn normalization_holds(l in 2usize..9, chi in 1usize..9, seed in any::<u64>(), s in 0.1f64..10.0) {
        let mut m = Mps::random(l, chi, seed);
        m.scale(C64::new(s, 0.0));
        m.normalize();
        prop_assert!((m.norm() - 1.0).abs() < 1e-10);
        prop_assert!((m.to_statevector().unwrap().norm() - 1.0).abs() < 1e-10);
        prop_assert!(m.bond_dims().iter().all(|&d| d >= 1 && d <= chi));
    }

    #[test]
    fn truncation_error_is_bounded(seed in any::<u64>()) {
        let m = Mps::random(8, 8, seed);
        let mut t = m.clone();
        let discarded = t.truncate(&[2; 7]).unwrap();
        let f = t.to_statevector().unwrap().fidelity(&m.to_statevector().unwrap());
        prop_assert!(t.max_bond_dim() <= 2);
        prop_assert!(discarded >= 0.0);
        prop_assert!(f > 0.0 && f <= 1.0 + 1e-12);
    }
}
