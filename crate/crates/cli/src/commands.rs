use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use siite::analysis::{
    folding_baseline, gap_report, relative_energy_error, spectrum_bounds, write_comparison_csv, BaselineResult,
    ComparisonRow, GapReport,
};
use siite::engine::{
    compare_ite, fmt_f64, load_final_state, read_steps_csv, run_ensemble, run_trajectory, write_realizations_csv,
    write_summary_csv, write_trajectory, EnsembleOptions, RunConfig, RunSummary, Termination,
};
use siite::exact::{diagonalize, max_fidelity, siite_step_exact, ExactSolver, StateVector};
use siite::models::{shift_operator, DENSE_CAP};
use siite::mps::{entropy_profile, Mps, RayleighOptions};
use siite::shots::{reassemble_distance, DistanceEstimate, EstimatorOptions, ShotReport};
use siite::HamiltonianSpec;

use crate::config;

/// Options shared by every subcommand.
pub struct Common {
    pub config: PathBuf,
    pub out: PathBuf,
    pub set: Vec<String>,
    pub parallel: usize,
    pub seed: Option<u64>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_MAX_STEPS: i32 = 2;
pub const EXIT_RESTART: i32 = 3;

fn exit_code(t: Termination) -> i32 {
    match t {
        Termination::VarianceReached | Termination::FidelityReached => EXIT_OK,
        Termination::MaxSteps => EXIT_MAX_STEPS,
        Termination::RestartAdvised => EXIT_RESTART,
    }
}

fn reseed(spec: &mut HamiltonianSpec, seed: u64) {
    spec.seed = seed;
    spec.fields.clear();
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    Ok(())
}

// run

pub fn run(c: &Common) -> Result<i32> {
    let mut cfg: RunConfig = config::load(&c.config, &c.set)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
        reseed(&mut cfg.hamiltonian, s);
    }
    cfg.validate()?;
    let mut rec = run_trajectory(&cfg)?;
    let summary = write_trajectory(&mut rec, &c.out)?;
    println!(
        "{}: {} rows, E = {}, sigma = {:.3e}, chi = {}{}",
        termination_label(summary.termination),
        summary.steps,
        summary.energy,
        summary.sigma_final,
        summary.chi_final,
        summary
            .fidelity_final
            .map(|f| format!(", F = {f:.6}"))
            .unwrap_or_default()
    );
    Ok(exit_code(summary.termination))
}

fn termination_label(t: Termination) -> &'static str {
    match t {
        Termination::VarianceReached => "variance_reached",
        Termination::FidelityReached => "fidelity_reached",
        Termination::MaxSteps => "max_steps",
        Termination::RestartAdvised => "restart_advised",
    }
}

// sweep

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Template run; its disorder and seeds are replaced per realization.
    pub base: RunConfig,
    pub disorder: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "yes")]
    pub relaunch_on_restart: bool,
    /// Also write every trajectory under `runs/`.
    #[serde(default)]
    pub store_runs: bool,
}

pub fn sweep(c: &Common) -> Result<i32> {
    let mut cfg: SweepConfig = config::load(&c.config, &c.set)?;
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if cfg.disorder.is_empty() {
        bail!("invalid config at `disorder`: the grid is empty");
    }
    if cfg.seeds.is_empty() {
        bail!("invalid config at `seeds`: the seed list is empty");
    }
    fs::create_dir_all(&c.out)?;
    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for &w in &cfg.disorder {
        let mut base = cfg.base.clone();
        base.hamiltonian.disorder = w;
        base.hamiltonian.fields.clear();
        let opts = EnsembleOptions {
            relaunch_on_restart: cfg.relaunch_on_restart,
            out_dir: cfg.store_runs.then(|| c.out.join("runs")),
        };
        let ens = run_ensemble(&base, &cfg.seeds, c.parallel, opts)?;
        info!(
            "W = {w}: {} of {} realizations succeeded",
            ens.aggregate.n - ens.aggregate.n_failed,
            ens.aggregate.n
        );
        rows.extend(ens.rows);
        aggregates.push(ens.aggregate);
    }
    write_realizations_csv(&rows, &c.out.join("realizations.csv"))?;
    write_summary_csv(&aggregates, &c.out.join("summary.csv"))?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        warn!(
            "W = {} seed {}: {}",
            r.disorder,
            r.seed,
            r.error.as_deref().unwrap_or("")
        );
    }
    println!("{} realizations, {failed} failed", rows.len());
    if failed == rows.len() {
        bail!("every realization failed");
    }
    Ok(EXIT_OK)
}

// compare-ite

fn default_fields() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 1.5]
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_ite_d_tau() -> f64 {
    0.1
}

fn default_ite_fidelity() -> f64 {
    0.999
}

fn default_ite_steps() -> usize {
    20_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IteConfig {
    pub hamiltonian: HamiltonianSpec,
    /// Transverse fields `h/J` to scan.
    #[serde(default = "default_fields")]
    pub fields: Vec<f64>,
    /// Target offset above the ground state.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_ite_d_tau")]
    pub d_tau: f64,
    #[serde(default = "default_ite_fidelity")]
    pub fidelity: f64,
    #[serde(default = "default_ite_steps")]
    pub max_steps: usize,
}

pub fn compare(c: &Common) -> Result<i32> {
    let cfg: IteConfig = config::load(&c.config, &c.set)?;
    if cfg.hamiltonian.length > DENSE_CAP {
        bail!(
            "invalid config at `hamiltonian.L`: the comparison needs exact diagonalization (L <= {DENSE_CAP}), got {}",
            cfg.hamiltonian.length
        );
    }
    fs::create_dir_all(&c.out)?;
    let mut w = csv_writer(&c.out.join("compare_ite.csv"))?;
    w.write_record(["h", "delta", "siite_steps", "ite_steps"])?;
    for &h in &cfg.fields {
        let mut spec = cfg.hamiltonian.clone();
        spec.field = h;
        let r = compare_ite(&spec, cfg.epsilon, cfg.d_tau, cfg.fidelity, cfg.max_steps)?;
        let show = |v: Option<usize>| v.map_or(String::new(), |n| n.to_string());
        w.write_record([fmt_f64(r.h), fmt_f64(r.delta), show(r.siite_steps), show(r.ite_steps)])?;
        println!(
            "h = {h}: SIITE {} steps, conventional {} steps",
            r.siite_steps.map_or("n/a".into(), |n| n.to_string()),
            r.ite_steps.map_or("n/a".into(), |n| n.to_string())
        );
    }
    w.flush()?;
    Ok(EXIT_OK)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

// shots

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotsConfig {
    pub hamiltonian: HamiltonianSpec,
    pub delta: f64,
    pub d_tau: f64,
    #[serde(default)]
    pub estimator: EstimatorOptions,
    /// Seeds the random state the step starts from.
    #[serde(default)]
    pub state_seed: u64,
}

#[derive(Serialize)]
struct ShotsOutput<'a> {
    config: &'a ShotsConfig,
    distance: DistanceEstimate,
    cross_term: ShotReport,
}

pub fn shots(c: &Common) -> Result<i32> {
    let mut cfg: ShotsConfig = config::load(&c.config, &c.set)?;
    if let Some(s) = c.seed {
        cfg.estimator.seed = s;
    }
    if cfg.hamiltonian.length > DENSE_CAP {
        bail!(
            "invalid config at `hamiltonian.L`: the estimator works on statevectors (L <= {DENSE_CAP}), got {}",
            cfg.hamiltonian.length
        );
    }
    let h = cfg.hamiltonian.operator()?;
    let hs = shift_operator(&h, cfg.delta);
    let old = StateVector::random(h.length(), cfg.state_seed);
    let new = siite_step_exact(&hs, &old, cfg.d_tau, ExactSolver::LeastSquares)?;
    let distance = reassemble_distance(&new, &old, &hs, cfg.d_tau, &cfg.estimator)?;
    fs::create_dir_all(&c.out)?;
    let cross_term = ShotReport::from(&distance.cross);
    println!(
        "D = {} (exact {}), cross term {} +- {} over {} strings",
        distance.distance_estimate,
        distance.distance_exact,
        distance.cross.mean,
        distance.cross.stderr,
        distance.cross.term_count
    );
    write_json(
        &c.out.join("shots.json"),
        &ShotsOutput {
            config: &cfg,
            distance,
            cross_term,
        },
    )?;
    Ok(EXIT_OK)
}

// analyze

fn default_bounds_chi() -> usize {
    32
}

/// Largest chain diagonalized by `analyze`.
const ANALYZE_DENSE_LIMIT: usize = 12;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeOptions {
    /// Also run the spectral-folding baseline at the final bond dimension.
    #[serde(default = "yes")]
    pub baseline: bool,
    /// Bond dimension of the variational spectrum bounds (no diagonalization).
    #[serde(default = "default_bounds_chi")]
    pub bounds_chi: usize,
}

#[derive(Serialize)]
struct Analysis {
    termination: Termination,
    energy: f64,
    sigma: f64,
    chi: usize,
    e_min: f64,
    e_max: f64,
    bounds: &'static str,
    relative_energy_error: f64,
    fidelity: Option<f64>,
    target_index: Option<usize>,
    gap: Option<GapReport>,
    entropy_mean: f64,
    entropy_central: f64,
    entropy_per_bond: Vec<f64>,
    baseline: Option<BaselineResult>,
}

/// `path` is a run directory or its `run.json`.
pub fn resolve_run(path: &Path) -> Result<(PathBuf, RunSummary)> {
    let (dir, json) = if path.is_dir() {
        (path.to_path_buf(), path.join("run.json"))
    } else {
        (
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            path.to_path_buf(),
        )
    };
    let text = fs::read_to_string(&json).with_context(|| format!("reading {}", json.display()))?;
    let mut summary: RunSummary = serde_json::from_str(&text).with_context(|| format!("parsing {}", json.display()))?;
    // the run directory may have moved since it was written
    if let Some(cp) = &summary.checkpoint {
        if !cp.exists() {
            if let Some(name) = cp.file_name() {
                summary.checkpoint = Some(dir.join(name));
            }
        }
    }
    Ok((dir, summary))
}

pub fn analyze(c: &Common) -> Result<i32> {
    let mut doc = Value::Object(Default::default());
    for o in &c.set {
        config::apply_override(&mut doc, o)?;
    }
    let opts: AnalyzeOptions = config::from_value(doc)?;
    let (_, summary) = resolve_run(&c.config)?;
    let cfg = &summary.config;
    let h = cfg.hamiltonian.operator()?;
    let state = load_final_state(&summary)?;
    let l = h.length();
    let seed = c.seed.unwrap_or(cfg.seed);

    let eig = if l <= ANALYZE_DENSE_LIMIT {
        Some(diagonalize(&h)?)
    } else {
        None
    };
    let (e_min, e_max) = spectrum_bounds(&h, eig.as_ref(), opts.bounds_chi, seed)?;
    let mps = match &state {
        siite::engine::FinalState::Mps(m) => m.clone(),
        siite::engine::FinalState::Exact(psi) => Mps::from_statevector(psi, None)?,
    };
    let entropy = entropy_profile(&mps)?;
    let (fidelity, target_index, gap) = match &eig {
        Some(e) => {
            let (f, idx) = max_fidelity(&state.to_statevector()?, e);
            let gap = gap_report(e.energies(), idx, cfg.delta).ok();
            (Some(f), Some(idx), gap)
        }
        None => (None, None, None),
    };
    let chi = state.max_bond_dim();
    let baseline = if opts.baseline {
        Some(folding_baseline(
            &h,
            cfg.delta,
            chi,
            seed,
            (e_min, e_max),
            eig.as_ref(),
            &RayleighOptions::default(),
        )?)
    } else {
        None
    };
    let analysis = Analysis {
        termination: summary.termination,
        energy: summary.energy,
        sigma: summary.sigma_final,
        chi,
        e_min,
        e_max,
        bounds: if eig.is_some() { "exact" } else { "variational bounds" },
        relative_energy_error: relative_energy_error(summary.energy, cfg.delta, e_min, e_max)?,
        fidelity,
        target_index,
        gap,
        entropy_mean: entropy.mean,
        entropy_central: entropy.central,
        entropy_per_bond: entropy.per_bond,
        baseline,
    };
    fs::create_dir_all(&c.out)?;
    write_json(&c.out.join("analysis.json"), &analysis)?;

    let mut rows = vec![ComparisonRow {
        disorder: cfg.hamiltonian.disorder,
        method: "siite".into(),
        fidelity_mean: fidelity.unwrap_or(f64::NAN),
        fidelity_std: 0.0,
        log10_sigma_mean: summary.sigma_final.log10(),
        energy_error_mean: analysis.relative_energy_error,
    }];
    if let Some(b) = &analysis.baseline {
        rows.push(ComparisonRow {
            disorder: cfg.hamiltonian.disorder,
            method: "folding".into(),
            fidelity_mean: b.fidelity.unwrap_or(f64::NAN),
            fidelity_std: 0.0,
            log10_sigma_mean: b.variance.log10(),
            energy_error_mean: b.energy_error,
        });
    }
    write_comparison_csv(&rows, &c.out.join("comparison.csv"))?;
    println!(
        "dE = {:.3e} against {} bounds [{e_min}, {e_max}], S_mean = {:.4}{}",
        analysis.relative_energy_error,
        analysis.bounds,
        analysis.entropy_mean,
        fidelity.map(|f| format!(", F = {f:.6}")).unwrap_or_default()
    );
    Ok(EXIT_OK)
}

// export-plotdata

#[derive(Serialize)]
struct SeriesIndex {
    files: Vec<String>,
    notes: Vec<String>,
}

pub fn export_plotdata(c: &Common) -> Result<i32> {
    let (dir, _) = resolve_run(&c.config)?;
    let steps_path = dir.join("steps.csv");
    if !steps_path.exists() {
        bail!("missing {}", steps_path.display());
    }
    let steps = read_steps_csv(&steps_path)?;
    let rows: Vec<_> = steps.iter().filter(|s| s.accepted).collect();
    fs::create_dir_all(&c.out)?;
    let mut index = SeriesIndex {
        files: Vec::new(),
        notes: Vec::new(),
    };
    let mut series = |name: &str, header: [&str; 2], values: Vec<(f64, f64)>| -> Result<()> {
        let file = format!("{name}.csv");
        let mut w = csv_writer(&c.out.join(&file))?;
        w.write_record(header)?;
        for (x, y) in values {
            w.write_record([fmt_f64(x), fmt_f64(y)])?;
        }
        w.flush()?;
        index.files.push(file);
        Ok(())
    };
    series("energy", ["tau", "E"], rows.iter().map(|s| (s.tau, s.energy)).collect())?;
    let positive: Vec<(f64, f64)> = rows
        .iter()
        .filter(|s| s.sigma > 0.0)
        .map(|s| (s.tau, s.sigma.log10()))
        .collect();
    let dropped = rows.len() - positive.len();
    series("log_sigma", ["tau", "log10_sigma"], positive)?;
    series(
        "chi",
        ["tau", "chi_max"],
        rows.iter().map(|s| (s.tau, s.chi_max as f64)).collect(),
    )?;
    let fid: Vec<(f64, f64)> = rows.iter().filter_map(|s| s.fidelity.map(|f| (s.tau, f))).collect();
    let has_fidelity = !fid.is_empty();
    if has_fidelity {
        series("fidelity", ["tau", "F"], fid)?;
    }
    if dropped > 0 {
        index
            .notes
            .push(format!("log_sigma.csv omits {dropped} rows with sigma = 0"));
    }
    if !has_fidelity {
        index
            .notes
            .push("no fidelity recorded; fidelity.csv not written".into());
    }
    write_json(&c.out.join("series.json"), &index)?;
    println!("wrote {}", index.files.join(", "));
    Ok(EXIT_OK)
}
