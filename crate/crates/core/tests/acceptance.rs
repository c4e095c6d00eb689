//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,2,7` restricts the run; `ACCEPTANCE_STRICT=1` turns any
//! FAIL into a non-zero exit. Trajectories are stored under
//! `$CARGO_TARGET_TMPDIR/acceptance` (or `ACCEPTANCE_OUT`).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siite::analysis::{
    effective_gap, folding_baseline, gap_ratio, late_variance_slope, relative_energy_error, spectrum_bounds,
};
use siite::engine::{
    choose_sign, choose_timestep, compare_ite, read_steps_csv, run_ensemble, run_trajectory, timestep_violations,
    write_trajectory, EnsembleOptions, EnsembleSummary, RunConfig, RunSummary, UpdateMode,
};
use siite::exact::{diagonalize, energy, siite_step_exact, siite_step_sparse, variance, ExactSolver, SparseOperator};
use siite::linalg::hermitian_eigenvalues;
use siite::models::{build_heisenberg, product_decomposition, shift_operator, to_dense};
use siite::mps::{folded_ground_state, siite_sweep, Mpo, RayleighOptions, SweepOptions};
use siite::shots::{
    hadamard_probability, reassemble_distance, sample_overlap, simulate_hadamard_circuit, EstimatorOptions, OverlapTask,
};
use siite::{HamiltonianSpec, C64};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn random_complex(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

// 1

fn fixed_points() -> Outcome {
    let mut worst_f: f64 = 1.0;
    let mut worst_var: f64 = 0.0;
    let mut count = 0;
    for w in [2.0, 6.0, 10.0] {
        for seed in 0..5u64 {
            let (_, h) = build_heisenberg(8, 1.0, w, 1000 + seed).unwrap();
            let eig = diagonalize(&h).unwrap();
            // off any level: midway between the two central ones
            let n = eig.len() / 2;
            let delta = 0.5 * (eig.energies()[n - 1] + eig.energies()[n]);
            let op = SparseOperator::new(&shift_operator(&h, delta));
            for k in 0..eig.len() {
                let v = eig.state(k);
                let out = siite_step_sparse(&op, &v, 0.05, ExactSolver::LeastSquares).unwrap();
                worst_f = worst_f.min(out.state.fidelity(&v));
                worst_var = worst_var.max(variance(&h, &out.state).unwrap());
                count += 1;
            }
        }
    }
    outcome(
        1.0 - worst_f <= 1e-10 && worst_var < 1e-10,
        format!(
            "{count} eigenstates, min F = 1 - {:.2e}, max variance {worst_var:.2e}",
            1.0 - worst_f
        ),
    )
}

// 2

fn amplification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for trial in 0..50u64 {
        let (_, h) = build_heisenberg(8, 1.0, rng.random_range(1.0..8.0), 2000 + trial).unwrap();
        let eig = diagonalize(&h).unwrap();
        let e = eig.energies();
        let a = rng.random_range(0..e.len());
        let mut b = rng.random_range(0..e.len());
        while b == a || (e[b] - e[a]).abs() < 1e-8 {
            b = rng.random_range(0..e.len());
        }
        let lo = e[a].min(e[b]);
        let hi = e[a].max(e[b]);
        let delta = lo + rng.random_range(0.2..0.8) * (hi - lo);
        let d_tau = rng.random_range(0.01..0.2) * (e[a] - delta).abs().min((e[b] - delta).abs());
        let psi = eig
            .state(a)
            .scaled(random_complex(&mut rng))
            .add_scaled(random_complex(&mut rng), &eig.state(b))
            .normalized();
        let out = siite_step_exact(&shift_operator(&h, delta), &psi, d_tau, ExactSolver::LeastSquares).unwrap();
        let before = eig.overlaps(&psi);
        let after = eig.overlaps(&out);
        let observed = (after[a].norm() / after[b].norm()) / (before[a].norm() / before[b].norm());
        let law = ((1.0 - d_tau / (e[a] - delta)) / (1.0 - d_tau / (e[b] - delta))).abs();
        worst = worst.max((observed - law).abs() / law);
    }
    outcome(
        worst <= 1e-8,
        format!("50 superpositions, max relative deviation {worst:.2e}"),
    )
}

// 3

fn ground_state_comparison() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for h in [0.1, 0.5, 1.0, 1.5] {
        let spec = HamiltonianSpec::tfim(8, 1.0, h, 0.05);
        let r = compare_ite(&spec, 0.1, 0.1, 0.999, 20_000).unwrap();
        let ok = match (r.siite_steps, r.ite_steps) {
            (Some(s), Some(i)) => s < i,
            (Some(_), None) => true,
            _ => false,
        };
        pass &= ok;
        let show = |v: Option<usize>| v.map_or(">20000".to_string(), |n| n.to_string());
        parts.push(format!("h={h}: {} vs {}", show(r.siite_steps), show(r.ite_steps)));
    }
    outcome(pass, format!("steps SIITE vs ITE: {}", parts.join(", ")))
}

// 4

const DISORDER: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];

fn mid_spectrum_config(w: f64) -> RunConfig {
    let mut cfg = RunConfig::new(HamiltonianSpec::heisenberg(12, 1.0, w, 0), 0.0, 1e-6);
    cfg.fidelity_target = Some(0.999);
    cfg.update_mode = UpdateMode::Sequential;
    cfg
}

fn mid_spectrum(out: &Path, ensembles: &mut Vec<EnsembleSummary>) -> Outcome {
    let seeds: Vec<u64> = (1..=15).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for w in DISORDER {
        let t = Instant::now();
        let opts = EnsembleOptions {
            relaunch_on_restart: true,
            out_dir: Some(out.to_path_buf()),
        };
        let ens = run_ensemble(&mid_spectrum_config(w), &seeds, 1, opts).unwrap();
        let ok = ens
            .rows
            .iter()
            .filter(|r| r.fidelity.is_some_and(|f| f >= 0.999))
            .count();
        let failed = ens.rows.iter().filter(|r| r.error.is_some()).count();
        let a = &ens.aggregate;
        let entangled = a.entropy_target_mean > a.entropy_ground_mean;
        pass &= ok >= 12 && entangled;
        let line = format!(
            "W={w}: {ok}/15 F>=0.999 ({failed} errors, {} relaunched), S_mid {:.3} vs S_gs {:.3}",
            ens.rows.iter().filter(|r| r.relaunched).count(),
            a.entropy_target_mean,
            a.entropy_ground_mean
        );
        println!("    {line} [{:.0} s]", t.elapsed().as_secs_f64());
        for r in &ens.rows {
            println!(
                "      seed {:>2}: F {:.6} sigma {:.2e} chi {:>2} steps {:>4} {:?}{}",
                r.seed,
                r.fidelity.unwrap_or(f64::NAN),
                r.sigma_final,
                r.chi_final,
                r.steps,
                r.termination,
                r.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default()
            );
        }
        parts.push(line);
        ensembles.push(ens);
    }
    outcome(pass, parts.join("; "))
}

// 5

fn backend_equivalence() -> Outcome {
    let (_, h) = build_heisenberg(8, 1.0, 6.0, 5).unwrap();
    let hs = shift_operator(&h, 0.0);
    let mpo = Mpo::from_terms(&hs);
    let cfg = RunConfig::new(HamiltonianSpec::heisenberg(8, 1.0, 6.0, 5), 0.0, 1e-12);
    let mut m = folded_ground_state(&mpo, cfg.chi0, 5, &RayleighOptions::default()).unwrap();
    m.pad_bonds(None);
    m.normalize();
    let mut psi = m.to_statevector().unwrap().normalized();
    let sign = choose_sign(energy(&h, &psi).unwrap(), 0.0);
    let mut worst: f64 = 1.0;
    for _ in 0..50 {
        let (dt, _) = choose_timestep(energy(&h, &psi).unwrap(), 0.0, &cfg);
        let d_tau = sign * dt;
        psi = siite_step_exact(&hs, &psi, d_tau, ExactSolver::LeastSquares).unwrap();
        m = siite_sweep(&m, &mpo, d_tau, &SweepOptions::default()).unwrap().state;
        worst = worst.min(m.to_statevector().unwrap().fidelity(&psi));
    }
    let sigma = variance(&h, &psi).unwrap();
    outcome(
        1.0 - worst <= 1e-5,
        format!(
            "50 steps, min per-step F = 1 - {:.2e}, final variance {sigma:.2e}",
            1.0 - worst
        ),
    )
}

// 6

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn folding_comparison(ensembles: &[EnsembleSummary]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for w in [4.0, 8.0] {
        let ens = ensembles.iter().find(|e| e.aggregate.disorder == w);
        let rows: Vec<_> = match ens {
            Some(e) => e.rows.iter().filter(|r| r.error.is_none()).take(10).cloned().collect(),
            None => {
                // criterion 4 was skipped; run the ten seeds here
                let e = run_ensemble(
                    &mid_spectrum_config(w),
                    &(1..=10).collect::<Vec<_>>(),
                    1,
                    EnsembleOptions::default(),
                )
                .unwrap();
                e.rows.into_iter().filter(|r| r.error.is_none()).collect()
            }
        };
        let mut ours = Vec::new();
        let mut theirs = Vec::new();
        let mut worst_de: f64 = 0.0;
        for r in &rows {
            let h = HamiltonianSpec::heisenberg(12, 1.0, w, r.seed).operator().unwrap();
            let eig = diagonalize(&h).unwrap();
            let bounds = spectrum_bounds(&h, Some(&eig), r.chi_final, r.seed).unwrap();
            let b = folding_baseline(
                &h,
                0.0,
                r.chi_final,
                r.seed,
                bounds,
                Some(&eig),
                &RayleighOptions::default(),
            )
            .unwrap();
            ours.push(r.sigma_final);
            theirs.push(b.variance);
            worst_de = worst_de.max(b.energy_error.abs());
        }
        let (m_ours, m_theirs) = (median(ours), median(theirs));
        let ok = rows.len() == 10 && m_ours * 10.0 <= m_theirs && worst_de < 5e-2;
        pass &= ok;
        parts.push(format!(
            "W={w}: median sigma {m_ours:.2e} vs baseline {m_theirs:.2e} (x{:.0}), max baseline |dE| {worst_de:.2e}",
            m_theirs / m_ours
        ));
    }
    outcome(pass, parts.join("; "))
}

// 7

fn hadamard_suite() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();

    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let l = 1 + (k % 6) as usize;
        let a = siite::exact::StateVector::random(l, 7000 + 2 * k);
        let b = siite::exact::StateVector::random(l, 7001 + 2 * k);
        worst = worst.max((simulate_hadamard_circuit(&a, &b).unwrap() - hadamard_probability(&a, &b)).abs());
    }
    pass &= worst <= 1e-10;
    parts.push(format!("circuit deviation {worst:.1e}"));

    let task = OverlapTask::new(
        siite::exact::StateVector::random(4, 71),
        siite::exact::StateVector::random(4, 72),
    )
    .unwrap();
    let small: Vec<_> = (0..100).map(|s| sample_overlap(&task, 10_000, s).unwrap()).collect();
    let mean = small.iter().map(|r| r.mean).sum::<f64>() / 100.0;
    let pooled = small.iter().map(|r| r.stderr.powi(2)).sum::<f64>().sqrt() / 100.0;
    let bias = (mean - task.exact_overlap_real).abs();
    pass &= bias <= 3.0 * pooled;
    parts.push(format!("bias {:.2} pooled stderr", bias / pooled));

    let big: Vec<_> = (100..200).map(|s| sample_overlap(&task, 40_000, s).unwrap()).collect();
    let se = |v: &[siite::shots::ShotEstimate]| v.iter().map(|r| r.stderr).sum::<f64>() / v.len() as f64;
    let ratio = se(&small) / se(&big);
    pass &= (ratio - 2.0).abs() <= 0.2;
    parts.push(format!("stderr ratio {ratio:.3}"));

    let (_, h) = build_heisenberg(4, 1.0, 2.0, 73).unwrap();
    let hs = shift_operator(&h, 0.1);
    let old = siite::exact::StateVector::random(4, 74);
    let new = siite_step_exact(&hs, &old, 0.05, ExactSolver::LeastSquares).unwrap();
    let opts = EstimatorOptions {
        shots_per_string: Some(1_000_000),
        seed: 75,
        ..EstimatorOptions::default()
    };
    let d = reassemble_distance(&new, &old, &hs, 0.05, &opts).unwrap();
    let dev = (d.distance_estimate - d.distance_exact).abs();
    pass &= dev <= 1e-2;
    parts.push(format!(
        "D {:.4} vs {:.4} over {} strings",
        d.distance_estimate, d.distance_exact, d.cross.term_count
    ));
    outcome(pass, parts.join(", "))
}

// 8

fn pauli_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let l = rng.random_range(2..=6);
        let (_, h) = build_heisenberg(l, 1.0, rng.random_range(0.0..10.0), 8000 + k).unwrap();
        let delta = rng.random_range(-2.0..2.0);
        let d_tau = rng.random_range(-0.5..0.5);
        let hs = shift_operator(&h, delta);
        let p = to_dense(&product_decomposition(&hs, d_tau).unwrap()).unwrap();
        let a = to_dense(&hs).unwrap();
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[[i, i]] -= c(d_tau);
        }
        let want = a.dot(&b);
        worst = worst.max((&p - &want).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }

    let ls: Vec<usize> = (4..=10).collect();
    let counts: Vec<f64> = ls
        .iter()
        .map(|&l| {
            let (_, h) = build_heisenberg(l, 1.0, 3.0, 1).unwrap();
            product_decomposition(&shift_operator(&h, 0.2), 0.05).unwrap().len() as f64
        })
        .collect();
    let x: Vec<f64> = ls.iter().map(|&l| (l as f64).ln()).collect();
    let y: Vec<f64> = counts.iter().map(|n| n.ln()).collect();
    let exponent = slope(&x, &y);
    let second: Vec<f64> = counts.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    let quadratic = second.iter().all(|&d| d == second[0]);
    outcome(
        worst <= 1e-10 && (exponent - 2.0).abs() <= 0.2,
        format!(
            "dense deviation {worst:.1e}; counts {counts:?}, log-log exponent {exponent:.2}, second differences {} ({})",
            second[0],
            if quadratic { "exactly quadratic" } else { "not constant" }
        ),
    )
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

// 9

fn invert(a: &ndarray::Array2<C64>) -> ndarray::Array2<C64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = ndarray::Array2::<C64>::eye(n);
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| m[[i, col]].norm().total_cmp(&m[[j, col]].norm()))
            .unwrap();
        for k in 0..n {
            m.swap([col, k], [p, k]);
            inv.swap([col, k], [p, k]);
        }
        let d = m[[col, col]];
        for k in 0..n {
            m[[col, k]] /= d;
            inv[[col, k]] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[[r, col]];
                for k in 0..n {
                    let (x, y) = (m[[col, k]], inv[[col, k]]);
                    m[[r, k]] -= f * x;
                    inv[[r, k]] -= f * y;
                }
            }
        }
    }
    inv
}

fn gap_formulas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let l = rng.random_range(3..=8);
        let (_, h) = build_heisenberg(l, 1.0, rng.random_range(0.5..8.0), 9000 + k).unwrap();
        let e = diagonalize(&h).unwrap().energies().to_vec();
        let mut n = rng.random_range(0..e.len() - 1);
        while e[n + 1] - e[n] < 1e-6 {
            n = (n + 1) % (e.len() - 1);
        }
        let delta = e[n] + rng.random_range(0.1..0.9) * (e[n + 1] - e[n]);
        let inv = invert(&to_dense(&shift_operator(&h, delta)).unwrap());
        // the levels straddling delta become the extremes of the inverse
        let vals = hermitian_eigenvalues(&inv).unwrap();
        let want = vals[vals.len() - 1] - vals[0];
        let got = effective_gap(e[n], e[n + 1], delta).unwrap();
        worst = worst.max((got - want).abs() / want.max(1.0));
    }

    let mut min_ratio = f64::INFINITY;
    let mut worst_asym: f64 = 1.0;
    for i in 0..=10 {
        let gap0 = 10f64.powf(-6.0 + 0.6 * i as f64);
        for j in 1..20 {
            let eps = 0.05 * j as f64;
            if (eps - gap0).abs() < 1e-9 {
                continue;
            }
            let r = gap_ratio(-1.0, -1.0 + gap0, eps).unwrap();
            min_ratio = min_ratio.min(r);
            if gap0 <= 1e-3 * eps {
                let q = r * eps * eps;
                worst_asym = worst_asym.max(q.max(1.0 / q));
            }
        }
    }
    outcome(
        worst <= 1e-8 && min_ratio > 1.0 && worst_asym <= 2.0,
        format!(
            "20 instances, max deviation {worst:.1e}; min ratio on grid {min_ratio:.3}; worst ratio eps^2 factor {worst_asym:.4}"
        ),
    )
}

// 10

fn stored_trajectories(out: &Path) -> Outcome {
    let mut dirs: Vec<PathBuf> = match fs::read_dir(out) {
        Ok(d) => d
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.join("run.json").exists())
            .collect(),
        Err(_) => Vec::new(),
    };
    dirs.sort();
    if dirs.is_empty() {
        return outcome(false, "no stored trajectories");
    }
    let mut rows = 0;
    let mut floors = 0;
    let mut bad = Vec::new();
    for d in &dirs {
        let summary: RunSummary = serde_json::from_str(&fs::read_to_string(d.join("run.json")).unwrap()).unwrap();
        let steps = read_steps_csv(&d.join("steps.csv")).unwrap();
        rows += steps.len();
        floors += steps.iter().filter(|s| s.floor_clamped).count();
        for v in timestep_violations(&steps, &summary.config) {
            bad.push(format!("{}: {v}", d.display()));
        }
    }
    let detail = format!(
        "{} trajectories, {rows} rows, {floors} floor clamps, {} violations{}",
        dirs.len(),
        bad.len(),
        bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
    );
    outcome(bad.is_empty(), detail)
}

// 11

fn smoke_run(out: &Path) -> Outcome {
    let spec = HamiltonianSpec::heisenberg(32, 1.0, 6.0, 1);
    let mut cfg = RunConfig::new(spec.clone(), 0.0, 1e-4);
    cfg.seed = 1;
    cfg.update_mode = UpdateMode::Sequential;
    let mut rec = run_trajectory(&cfg).unwrap();
    write_trajectory(&mut rec, &out.join("L32_W6_seed1")).unwrap();
    let last = rec.last().clone();
    let slope = late_variance_slope(&rec.steps, 20);
    let h = spec.operator().unwrap();
    let bounds = spectrum_bounds(&h, None, 32, 1).unwrap();
    let de = relative_energy_error(last.energy, 0.0, bounds.0, bounds.1)
        .unwrap()
        .abs();
    let monotone = slope.is_none_or(|s| s <= 0.0);
    outcome(
        last.sigma < 1e-4 && monotone && de < 1e-3,
        format!(
            "{:?} after {} rows, sigma {:.2e}, chi {}, late log10 sigma slope {}, |dE| {de:.2e} within [{:.3}, {:.3}]",
            rec.termination,
            rec.steps.len(),
            last.sigma,
            last.chi_max,
            slope.map_or("n/a".into(), |s| format!("{s:.3}")),
            bounds.0,
            bounds.1
        ),
    )
}

fn main() {
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let out = std::env::var("ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|_| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    let _ = fs::remove_dir_all(&out);
    fs::create_dir_all(&out).unwrap();

    let mut ensembles = Vec::new();
    let mut failures = 0;
    let mut ran = 0;
    // the policy check reads the trajectories stored by 4 and 11, so it runs last
    for id in [1u32, 2, 3, 4, 5, 6, 7, 8, 9, 11, 10] {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let name = match id {
            1 => "oracle fixed points",
            2 => "amplification law",
            3 => "ground state vs conventional ITE",
            4 => "mid-spectrum preparation",
            5 => "backend equivalence",
            6 => "folding baseline",
            7 => "Hadamard test",
            8 => "Pauli algebra",
            9 => "gap formulas",
            10 => "timestep policy",
            _ => "moderate-scale smoke run",
        };
        let t = Instant::now();
        let o = match id {
            1 => fixed_points(),
            2 => amplification(),
            3 => ground_state_comparison(),
            4 => mid_spectrum(&out, &mut ensembles),
            5 => backend_equivalence(),
            6 => folding_comparison(&ensembles),
            7 => hadamard_suite(),
            8 => pauli_algebra(),
            9 => gap_formulas(),
            10 => stored_trajectories(&out),
            _ => smoke_run(&out),
        };
        ran += 1;
        if !o.pass {
            failures += 1;
        }
        println!(
            "{} criterion {id:>2} ({name}): {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failures);
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
