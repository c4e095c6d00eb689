//! The evolution driver: warm start, adaptive timestep with sign selection,
//! accept/reject, bond growth and stopping, plus ensembles and persistence.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::exact::{
    self, entropy_from_singular_values, max_fidelity, siite_step_sparse, EigenSystem, ExactSolver, SparseOperator,
    StateVector,
};
use crate::linalg;
use crate::models::{shift_operator, HamiltonianSpec, OperatorTerms, DENSE_CAP};
use crate::mps::{
    self, entropy_profile, grow_bond_random, grow_bond_subspace, natural_bond_dim, siite_sweep, GrowthStrategy, Mpo,
    Mps, ProductPattern, RayleighOptions, SweepMode, SweepOptions, TRUNCATION_CUTOFF,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Exact,
    #[default]
    Mps,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    Sequential,
    Parallel,
    /// Sequential until the bond dimension exceeds the stochastic threshold.
    #[default]
    StochasticAuto,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Low bond dimension ground state of `(H - delta)^2`.
    #[default]
    Folded,
    Neel,
    Random,
    Bits(String),
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_chi0() -> usize {
    4
}
fn default_d_tau_min() -> f64 {
    1e-3
}
fn default_safety() -> f64 {
    0.1
}
fn default_d_tau_max() -> f64 {
    0.5
}
fn default_max_steps() -> usize {
    2000
}
fn default_accept_factor() -> f64 {
    10.0
}
fn default_growth_window() -> usize {
    5
}
fn default_stall_tolerance() -> f64 {
    0.01
}
fn default_reject_threshold() -> usize {
    3
}
fn default_max_retries() -> usize {
    8
}
fn default_growth_increment() -> usize {
    2
}
fn default_subspace_a() -> f64 {
    1e-3
}
fn default_random_eps() -> f64 {
    1e-6
}
fn default_stochastic_threshold() -> usize {
    12
}
fn default_stochastic_fraction() -> f64 {
    0.5
}
fn default_restart_window() -> usize {
    40
}
fn default_dense_threshold() -> usize {
    2048
}
fn default_cg_tol() -> f64 {
    1e-12
}
fn default_cg_max_iter() -> usize {
    2000
}
fn default_rayleigh_sweeps() -> usize {
    50
}
fn default_rayleigh_tol() -> f64 {
    1e-8
}

/// JSON has no infinity; `null` stands for "no variance target".
fn ser_target<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_target<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub hamiltonian: HamiltonianSpec,
    /// Target energy.
    pub delta: f64,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub initial_state: InitialState,
    /// Warm-start bond dimension.
    #[serde(default = "default_chi0")]
    pub chi0: usize,
    /// Bond dimension cap; `None` grows up to the natural dimensions.
    #[serde(default)]
    pub chi_max: Option<usize>,
    /// Pad every bond to `min(natural, chi_max)` right after the warm start.
    #[serde(default)]
    pub full_bond_dimension: bool,
    #[serde(default = "default_d_tau_min")]
    pub d_tau_min: f64,
    /// Safety factor `c` in `d_tau = c * 2|E - delta|`.
    #[serde(default = "default_safety")]
    pub d_tau_safety: f64,
    #[serde(default = "default_d_tau_max")]
    pub d_tau_max: f64,
    #[serde(serialize_with = "ser_target", deserialize_with = "de_target")]
    pub variance_target: f64,
    #[serde(default)]
    pub fidelity_target: Option<f64>,
    /// Record the fidelity on every step even without a fidelity target.
    #[serde(default)]
    pub record_fidelity: bool,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_accept_factor")]
    pub accept_factor: f64,
    #[serde(default = "default_growth_window")]
    pub growth_window: usize,
    /// Growth also fires when the variance sits within this fraction of the
    /// window mean, i.e. has stopped falling. Zero keeps only the strict
    /// "above the mean" rule.
    #[serde(default = "default_stall_tolerance")]
    pub growth_stall_tolerance: f64,
    #[serde(default = "default_reject_threshold")]
    pub reject_threshold: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default)]
    pub growth_strategy: GrowthStrategy,
    #[serde(default = "default_growth_increment")]
    pub growth_increment: usize,
    #[serde(default = "default_subspace_a")]
    pub subspace_a: f64,
    #[serde(default = "default_random_eps")]
    pub random_eps: f64,
    #[serde(default)]
    pub update_mode: UpdateMode,
    #[serde(default = "default_stochastic_threshold")]
    pub stochastic_threshold: usize,
    #[serde(default = "default_stochastic_fraction")]
    pub stochastic_fraction: f64,
    #[serde(default)]
    pub exact_solver: ExactSolver,
    /// Accepted steps inspected by the restart heuristic.
    #[serde(default = "default_restart_window")]
    pub restart_window: usize,
    #[serde(default = "default_dense_threshold")]
    pub local_dense_threshold: usize,
    #[serde(default = "default_cg_tol")]
    pub local_cg_tol: f64,
    #[serde(default = "default_cg_max_iter")]
    pub local_cg_max_iter: usize,
    #[serde(default = "default_rayleigh_sweeps")]
    pub rayleigh_max_sweeps: usize,
    #[serde(default = "default_rayleigh_tol")]
    pub rayleigh_tol: f64,
    /// Seeds the warm start, stochastic masks and random growth.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Defaults for everything except the Hamiltonian, target and `sigma*`.
    pub fn new(hamiltonian: HamiltonianSpec, delta: f64, variance_target: f64) -> Self {
        let json = serde_json::json!({
            "hamiltonian": hamiltonian,
            "delta": delta,
            "variance_target": if variance_target.is_finite() { Some(variance_target) } else { None },
        });
        serde_json::from_value(json).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite".into());
        }
        if !(self.d_tau_min > 0.0 && self.d_tau_min <= self.d_tau_max && self.d_tau_max.is_finite()) {
            return bad(format!(
                "need 0 < d_tau_min <= d_tau_max, got {} and {}",
                self.d_tau_min, self.d_tau_max
            ));
        }
        if !(self.d_tau_safety > 0.0 && self.d_tau_safety < 1.0) {
            return bad(format!("d_tau_safety must lie in (0, 1), got {}", self.d_tau_safety));
        }
        if !(self.variance_target > 0.0) {
            return bad(format!("variance_target must be > 0, got {}", self.variance_target));
        }
        if let Some(f) = self.fidelity_target {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("fidelity_target must lie in [0, 1], got {f}"));
            }
        }
        if self.chi0 == 0 || self.chi_max == Some(0) {
            return bad("bond dimensions must be at least 1".into());
        }
        if !(self.accept_factor >= 1.0) {
            return bad(format!("accept_factor must be >= 1, got {}", self.accept_factor));
        }
        if !(0.0..1.0).contains(&self.growth_stall_tolerance) {
            return bad(format!(
                "growth_stall_tolerance must lie in [0, 1), got {}",
                self.growth_stall_tolerance
            ));
        }
        if !(self.stochastic_fraction > 0.0 && self.stochastic_fraction <= 1.0) {
            return bad(format!(
                "stochastic_fraction must lie in (0, 1], got {}",
                self.stochastic_fraction
            ));
        }
        if self.backend == Backend::Exact && self.hamiltonian.length > DENSE_CAP {
            return bad(format!(
                "exact backend supports L <= {DENSE_CAP}, got {}",
                self.hamiltonian.length
            ));
        }
        Ok(())
    }

    fn wants_fidelity(&self) -> bool {
        self.fidelity_target.is_some() || self.record_fidelity
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tau: f64,
    /// Signed timestep; zero on the warm-start row and on growth rows.
    pub d_tau: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub sigma: f64,
    pub chi_max: usize,
    #[serde(rename = "S_mean")]
    pub mean_entropy: f64,
    #[serde(rename = "S_central")]
    pub central_entropy: f64,
    /// Step cost; `NaN` on rows without a step.
    #[serde(rename = "D")]
    pub distance: f64,
    pub fidelity: Option<f64>,
    pub accepted: bool,
    pub bond_growth: bool,
    /// The rule value `c * 2|E - delta|` fell below `d_tau_min`.
    pub floor_clamped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    VarianceReached,
    FidelityReached,
    MaxSteps,
    RestartAdvised,
}

#[derive(Clone, Debug)]
pub enum FinalState {
    Exact(StateVector),
    Mps(Mps),
}

impl FinalState {
    pub fn to_statevector(&self) -> Result<StateVector> {
        match self {
            FinalState::Exact(s) => Ok(s.clone()),
            FinalState::Mps(m) => m.to_statevector(),
        }
    }

    pub fn max_bond_dim(&self) -> usize {
        match self {
            FinalState::Exact(s) => schmidt_rank(s).unwrap_or(0),
            FinalState::Mps(m) => m.max_bond_dim(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub config: RunConfig,
    pub steps: Vec<StepRecord>,
    pub termination: Termination,
    pub final_state: FinalState,
    /// Sign applied to every timestep.
    pub sign: f64,
    /// Index of the eigenstate with the largest overlap, when measured.
    pub target_index: Option<usize>,
    pub wall_time: f64,
    /// Where [`write_trajectory`] put the final state.
    pub final_state_ref: Option<PathBuf>,
}

impl TrajectoryRecord {
    /// Last accepted row.
    pub fn last(&self) -> &StepRecord {
        self.steps.iter().rev().find(|s| s.accepted).expect("warm-start row")
    }
}

/// `clamp(c * 2|E - delta|, d_tau_min, d_tau_max)` and whether the floor engaged.
pub fn choose_timestep(energy: f64, delta: f64, cfg: &RunConfig) -> (f64, bool) {
    let rule = cfg.d_tau_safety * 2.0 * (energy - delta).abs();
    (rule.clamp(cfg.d_tau_min, cfg.d_tau_max), rule < cfg.d_tau_min)
}

/// `+1` (converge to the eigenstate just below delta) when the warm start
/// lies below delta, `-1` when above. Ties go to `+1`.
pub fn choose_sign(energy0: f64, delta: f64) -> f64 {
    if energy0 > delta {
        -1.0
    } else {
        if energy0 == delta {
            info!("warm-start energy equals delta; choosing d_tau > 0");
        }
        1.0
    }
}

pub fn accept_update(sigma_new: f64, sigma_old: f64, cfg: &RunConfig) -> bool {
    sigma_new <= cfg.accept_factor * sigma_old
}

/// Grow when the variance exceeds (or has stalled at) the mean of the last
/// `growth_window` variances, or after `reject_threshold` consecutive
/// rejections.
pub fn growth_trigger(history: &[f64], sigma_now: f64, consecutive_rejects: usize, cfg: &RunConfig) -> bool {
    if consecutive_rejects >= cfg.reject_threshold {
        return true;
    }
    if cfg.growth_window == 0 || history.len() < cfg.growth_window {
        return false;
    }
    let window = &history[history.len() - cfg.growth_window..];
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    sigma_now > mean * (1.0 - cfg.growth_stall_tolerance)
}

fn amplitude_matrix(psi: &StateVector, cut: usize) -> Array2<crate::C64> {
    let cols = 1usize << (psi.length() - cut);
    Array2::from_shape_fn((1usize << cut, cols), |(i, j)| psi.amplitudes()[i * cols + j])
}

fn schmidt_rank(psi: &StateVector) -> Result<usize> {
    let mut best = 1;
    for cut in 1..psi.length() {
        let s = linalg::singular_values(&amplitude_matrix(psi, cut))?;
        let n = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        best = best.max(s.iter().filter(|&&v| v > TRUNCATION_CUTOFF * n).count());
    }
    Ok(best)
}

struct Measurement {
    energy: f64,
    sigma: f64,
    chi_max: usize,
    mean_entropy: f64,
    central_entropy: f64,
    fidelity: Option<(f64, usize)>,
}

/// Everything a trajectory needs that does not change from step to step.
struct Problem {
    delta: f64,
    sparse: Option<SparseOperator>,
    mpo: Option<Mpo>,
}

enum State {
    Exact(StateVector),
    Mps(Mps),
}

impl State {
    fn measure(&self, p: &Problem, eig: Option<&EigenSystem>) -> Result<Measurement> {
        match self {
            State::Exact(psi) => {
                let op = p.sparse.as_ref().expect("sparse operator");
                let (e, sigma) = exact::energy_variance(op, psi.amplitudes());
                let l = psi.length();
                let mut per_bond = Vec::with_capacity(l - 1);
                let mut chi = 1;
                for cut in 1..l {
                    let s = linalg::singular_values(&amplitude_matrix(psi, cut))?;
                    let n = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                    chi = chi.max(s.iter().filter(|&&v| v > TRUNCATION_CUTOFF * n).count());
                    per_bond.push(entropy_from_singular_values(&s));
                }
                Ok(Measurement {
                    energy: e + p.delta,
                    sigma,
                    chi_max: chi,
                    mean_entropy: per_bond.iter().sum::<f64>() / per_bond.len() as f64,
                    central_entropy: per_bond[l / 2 - 1],
                    fidelity: eig.map(|eig| max_fidelity(psi, eig)),
                })
            }
            State::Mps(m) => {
                let mpo = p.mpo.as_ref().expect("mpo");
                let e = mps::expectation(m, mpo)?;
                let sigma = mps::variance_mps(m, mpo, e)?;
                let ent = entropy_profile(m)?;
                let fidelity = match eig {
                    Some(eig) => Some(max_fidelity(&m.to_statevector()?, eig)),
                    None => None,
                };
                Ok(Measurement {
                    energy: e + p.delta,
                    sigma,
                    chi_max: m.max_bond_dim(),
                    mean_entropy: ent.mean,
                    central_entropy: ent.central,
                    fidelity,
                })
            }
        }
    }
}

/// Extra inputs for [`run_trajectory_with`].
#[derive(Default)]
pub struct RunContext<'a> {
    /// Spectrum of `H` (unshifted) for fidelities; computed on demand when
    /// absent and the configuration asks for fidelities.
    pub eigensystem: Option<&'a EigenSystem>,
    /// Called with every appended row.
    pub observer: Option<&'a mut dyn FnMut(&StepRecord)>,
}

pub fn run_trajectory(cfg: &RunConfig) -> Result<TrajectoryRecord> {
    run_trajectory_with(cfg, RunContext::default())
}

fn rayleigh_options(cfg: &RunConfig) -> RayleighOptions {
    RayleighOptions {
        max_sweeps: cfg.rayleigh_max_sweeps,
        tol: cfg.rayleigh_tol,
        dense_threshold: cfg.local_dense_threshold,
        ..RayleighOptions::default()
    }
}

fn warm_start(cfg: &RunConfig, mpo: &Mpo) -> Result<State> {
    let l = cfg.hamiltonian.length;
    let m = match &cfg.initial_state {
        InitialState::Folded => mps::folded_ground_state(mpo, cfg.chi0, cfg.seed, &rayleigh_options(cfg))?,
        InitialState::Neel => Mps::product(ProductPattern::Neel, l)?,
        InitialState::Random => Mps::random(l, cfg.chi0, cfg.seed),
        InitialState::Bits(b) => Mps::product(ProductPattern::Bits(b), l)?,
    };
    Ok(match cfg.backend {
        Backend::Exact => State::Exact(m.to_statevector()?.normalized()),
        Backend::Mps => {
            let mut m = m;
            if cfg.full_bond_dimension {
                m.pad_bonds(cfg.chi_max);
            }
            m.normalize();
            State::Mps(m)
        }
    })
}

fn bond_caps(l: usize, chi_max: Option<usize>) -> Vec<usize> {
    (0..l - 1)
        .map(|k| chi_max.map_or(natural_bond_dim(l, k), |c| c.min(natural_bond_dim(l, k))))
        .collect()
}

/// Plateau of the variance in `[sigma*, 10 sigma*]` without progress; with
/// fidelities, the dominant eigenstate must also be wandering.
fn restart_advised(accepted: &[&StepRecord], indices: &[Option<usize>], cfg: &RunConfig) -> bool {
    let w = cfg.restart_window;
    if w == 0 || accepted.len() < w {
        return false;
    }
    let tail = &accepted[accepted.len() - w..];
    let target = cfg.variance_target;
    if !tail.iter().all(|s| s.sigma >= target && s.sigma <= 10.0 * target) {
        return false;
    }
    let (lo, hi) = tail.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), s| {
        (lo.min(s.sigma), hi.max(s.sigma))
    });
    if hi >= 2.0 * lo {
        return false;
    }
    let fids: Vec<f64> = tail.iter().filter_map(|s| s.fidelity).collect();
    if fids.len() == tail.len() {
        let idx = &indices[indices.len() - w..];
        let wandering = idx.windows(2).any(|p| p[0] != p[1]);
        let (flo, fhi) = fids
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &f| (lo.min(f), hi.max(f)));
        return wandering || fhi - flo > 0.05;
    }
    true
}

pub fn run_trajectory_with(cfg: &RunConfig, mut ctx: RunContext<'_>) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let spec = cfg.hamiltonian.clone().realize()?;
    let h = spec.operator()?;
    let l = spec.length;
    let h_shift = shift_operator(&h, cfg.delta);
    let mpo = Mpo::from_terms(&h_shift);
    let problem = Problem {
        delta: cfg.delta,
        sparse: (cfg.backend == Backend::Exact).then(|| SparseOperator::new(&h_shift)),
        mpo: (cfg.backend == Backend::Mps).then(|| mpo.clone()),
    };
    let owned_eig;
    let eig: Option<&EigenSystem> = match ctx.eigensystem {
        Some(e) => Some(e),
        None if cfg.wants_fidelity() && l <= DENSE_CAP => {
            owned_eig = exact::diagonalize(&h)?;
            Some(&owned_eig)
        }
        None => None,
    };
    let caps = bond_caps(l, cfg.chi_max);

    let mut steps: Vec<StepRecord> = Vec::new();
    let mut indices: Vec<Option<usize>> = Vec::new();
    let mut push =
        |rec: StepRecord, idx: Option<usize>, steps: &mut Vec<StepRecord>, indices: &mut Vec<Option<usize>>| {
            if let Some(obs) = ctx.observer.as_mut() {
                obs(&rec);
            }
            steps.push(rec);
            indices.push(idx);
        };
    let row =
        |m: &Measurement, tau: f64, d_tau: f64, distance: f64, accepted: bool, growth: bool, floor: bool| StepRecord {
            tau,
            d_tau,
            energy: m.energy,
            sigma: m.sigma,
            chi_max: m.chi_max,
            mean_entropy: m.mean_entropy,
            central_entropy: m.central_entropy,
            distance,
            fidelity: m.fidelity.map(|f| f.0),
            accepted,
            bond_growth: growth,
            floor_clamped: floor,
        };

    let mut state = warm_start(cfg, &mpo)?;
    let mut current = state.measure(&problem, eig)?;
    push(
        row(&current, 0.0, 0.0, f64::NAN, true, false, false),
        current.fidelity.map(|f| f.1),
        &mut steps,
        &mut indices,
    );
    let sign = choose_sign(current.energy, cfg.delta);
    info!(
        "warm start: E = {:.6}, sigma = {:.3e}, chi = {}, sign = {sign:+}",
        current.energy, current.sigma, current.chi_max
    );

    let mut tau = 0.0;
    let mut attempts = 0usize;
    let mut history: Vec<f64> = Vec::new();
    let mut consecutive_rejects = 0usize;
    let mut retries = 0usize;

    let reached = |m: &Measurement| -> Option<Termination> {
        if m.sigma < cfg.variance_target {
            return Some(Termination::VarianceReached);
        }
        match (cfg.fidelity_target, m.fidelity) {
            (Some(t), Some((f, _))) if f >= t => Some(Termination::FidelityReached),
            _ => None,
        }
    };

    let termination = loop {
        if let Some(t) = reached(&current) {
            break t;
        }
        if attempts >= cfg.max_steps {
            break Termination::MaxSteps;
        }
        let (base, floor_clamped) = choose_timestep(current.energy, cfg.delta, cfg);
        let magnitude = (base / f64::powi(2.0, retries as i32)).max(cfg.d_tau_min);
        let d_tau = sign * magnitude;
        attempts += 1;

        let outcome: Result<(State, f64)> = match &state {
            State::Exact(psi) => {
                let op = problem.sparse.as_ref().expect("sparse operator");
                siite_step_sparse(op, psi, d_tau, cfg.exact_solver).map(|s| (State::Exact(s.state), s.distance))
            }
            State::Mps(m) => {
                let mode = match cfg.update_mode {
                    UpdateMode::Sequential => SweepMode::Sequential,
                    UpdateMode::Parallel => SweepMode::Parallel,
                    UpdateMode::StochasticAuto if m.max_bond_dim() > cfg.stochastic_threshold => {
                        SweepMode::Stochastic {
                            fraction: cfg.stochastic_fraction,
                        }
                    }
                    UpdateMode::StochasticAuto => SweepMode::Sequential,
                };
                let opts = SweepOptions {
                    mode,
                    dense_threshold: cfg.local_dense_threshold,
                    cg_tol: cfg.local_cg_tol,
                    cg_max_iter: cfg.local_cg_max_iter,
                    seed: cfg.seed ^ (attempts as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                };
                siite_sweep(m, problem.mpo.as_ref().expect("mpo"), d_tau, &opts)
                    .map(|o| (State::Mps(o.state), o.distance))
            }
        };
        let (mut candidate, distance, mut measured) = match outcome {
            Ok((s, d)) => {
                let m = s.measure(&problem, eig)?;
                (Some(s), d, Some(m))
            }
            Err(Error::SiteFailure { site, reason }) => {
                warn!("step {attempts}: local update failed at site {site}: {reason}");
                (None, f64::NAN, None)
            }
            Err(e) => return Err(e),
        };

        let accepted = measured
            .as_ref()
            .is_some_and(|m| m.sigma.is_finite() && accept_update(m.sigma, current.sigma, cfg));
        let shown = measured.as_ref().unwrap_or(&current);
        let row_tau = if accepted { tau + magnitude } else { tau };
        push(
            row(
                shown,
                row_tau,
                d_tau,
                distance,
                accepted,
                false,
                floor_clamped && retries == 0,
            ),
            shown.fidelity.map(|f| f.1),
            &mut steps,
            &mut indices,
        );

        let grow;
        if accepted {
            tau = row_tau;
            state = candidate.take().expect("accepted candidate");
            current = measured.take().expect("accepted measurement");
            grow = growth_trigger(&history, current.sigma, 0, cfg);
            history.push(current.sigma);
            consecutive_rejects = 0;
            retries = 0;
            debug!(
                "step {attempts}: tau = {tau:.4}, E = {:.8}, sigma = {:.3e}, chi = {}",
                current.energy, current.sigma, current.chi_max
            );
        } else {
            consecutive_rejects += 1;
            retries += 1;
            grow = growth_trigger(&history, current.sigma, consecutive_rejects, cfg) || retries > cfg.max_retries;
        }

        if grow {
            if let State::Mps(m) = &state {
                let can_grow = m.bond_dims().iter().zip(&caps).any(|(d, c)| d < c);
                if can_grow {
                    let grown = match cfg.growth_strategy {
                        GrowthStrategy::Subspace => grow_bond_subspace(
                            m,
                            problem.mpo.as_ref().expect("mpo"),
                            cfg.subspace_a,
                            cfg.growth_increment,
                            cfg.chi_max,
                        )?,
                        GrowthStrategy::Random => {
                            grow_bond_random(m, cfg.seed.wrapping_add(attempts as u64), cfg.random_eps)?
                        }
                    };
                    state = State::Mps(grown);
                    current = state.measure(&problem, eig)?;
                    push(
                        row(&current, tau, 0.0, f64::NAN, true, true, false),
                        current.fidelity.map(|f| f.1),
                        &mut steps,
                        &mut indices,
                    );
                    debug!("bond growth to chi = {}", current.chi_max);
                    history.clear();
                    consecutive_rejects = 0;
                    retries = 0;
                    continue;
                }
            }
            if !accepted && retries > cfg.max_retries {
                // Nothing left to try at this bond dimension; take the
                // candidate rather than spin on an identical rejection.
                if let (Some(s), Some(m)) = (candidate, measured) {
                    warn!("step {attempts}: forcing acceptance after {retries} rejections");
                    tau += magnitude;
                    if let Some(last) = steps.last_mut() {
                        last.accepted = true;
                        last.tau = tau;
                    }
                    state = s;
                    current = m;
                    history.push(current.sigma);
                }
                consecutive_rejects = 0;
                retries = 0;
            }
        }

        if accepted {
            let accepted_rows: Vec<&StepRecord> = steps.iter().filter(|s| s.accepted && s.d_tau != 0.0).collect();
            let idx: Vec<Option<usize>> = steps
                .iter()
                .zip(&indices)
                .filter(|(s, _)| s.accepted && s.d_tau != 0.0)
                .map(|(_, i)| *i)
                .collect();
            if reached(&current).is_none() && restart_advised(&accepted_rows, &idx, cfg) {
                break Termination::RestartAdvised;
            }
        }
    };

    let target_index = current.fidelity.map(|f| f.1);
    let final_state = match state {
        State::Exact(s) => FinalState::Exact(s),
        State::Mps(m) => FinalState::Mps(m),
    };
    info!(
        "finished: {termination:?} after {attempts} steps, E = {:.8}, sigma = {:.3e}",
        current.energy, current.sigma
    );
    Ok(TrajectoryRecord {
        config: cfg.clone(),
        steps,
        termination,
        final_state,
        sign,
        target_index,
        wall_time: start.elapsed().as_secs_f64(),
        final_state_ref: None,
    })
}

/// Rows violating the timestep policy: `|d_tau|` must lie in
/// `[d_tau_min, min(d_tau_max, 2|E - delta|)]` unless flagged as floor
/// clamped, and the flag must be set exactly when `c * 2|E - delta|` is
/// below the floor. `E` is the energy of the last accepted row before the
/// step. Rows without a step (`d_tau == 0`) are skipped.
pub fn timestep_violations(steps: &[StepRecord], cfg: &RunConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut e_ref: Option<f64> = None;
    for (i, s) in steps.iter().enumerate() {
        if s.d_tau != 0.0 {
            match e_ref {
                None => out.push(format!("row {i}: step before any accepted state")),
                Some(e) => {
                    let gap: f64 = 2.0 * (e - cfg.delta).abs();
                    let mag = s.d_tau.abs();
                    let rule = cfg.d_tau_safety * gap;
                    let upper = cfg.d_tau_max.min(gap);
                    let tol = 1e-12 * mag.max(1e-300);
                    if mag < cfg.d_tau_min - tol {
                        out.push(format!("row {i}: |d_tau| = {mag} below the floor"));
                    }
                    if !s.floor_clamped && mag > upper + tol {
                        out.push(format!("row {i}: |d_tau| = {mag} above {upper}"));
                    }
                    let retry = mag < rule.clamp(cfg.d_tau_min, cfg.d_tau_max) * (1.0 - 1e-12);
                    if !retry && s.floor_clamped != (rule < cfg.d_tau_min) {
                        out.push(format!("row {i}: floor flag {} but rule value {rule}", s.floor_clamped));
                    }
                }
            }
        }
        if s.accepted {
            e_ref = Some(s.energy);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// persistence

pub const STEP_COLUMNS: [&str; 12] = [
    "tau",
    "d_tau",
    "E",
    "sigma",
    "chi_max",
    "S_mean",
    "S_central",
    "D",
    "fidelity",
    "accepted",
    "bond_growth",
    "floor_clamped",
];

/// 17 significant digits; empty for `NaN`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"))
}

pub fn write_steps_csv(steps: &[StepRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(STEP_COLUMNS)?;
    for s in steps {
        w.write_record([
            fmt_f64(s.tau),
            fmt_f64(s.d_tau),
            fmt_f64(s.energy),
            fmt_f64(s.sigma),
            s.chi_max.to_string(),
            fmt_f64(s.mean_entropy),
            fmt_f64(s.central_entropy),
            fmt_f64(s.distance),
            s.fidelity.map(fmt_f64).unwrap_or_default(),
            s.accepted.to_string(),
            s.bond_growth.to_string(),
            s.floor_clamped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_steps_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 11 || headers[..11] != STEP_COLUMNS[..11] {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("unexpected header {headers:?}"),
        });
    }
    let bad = |reason: String| Error::Format {
        path: path.display().to_string(),
        reason,
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| parse_f64(&rec[i]).map_err(|e| bad(format!("column {}: {e}", STEP_COLUMNS[i])));
        let b = |i: usize| {
            rec.get(i)
                .map_or(Ok(false), |v| v.parse::<bool>())
                .map_err(|e| bad(format!("column {}: {e}", STEP_COLUMNS[i])))
        };
        out.push(StepRecord {
            tau: f(0)?,
            d_tau: f(1)?,
            energy: f(2)?,
            sigma: f(3)?,
            chi_max: rec[4].parse().map_err(|e| bad(format!("chi_max: {e}")))?,
            mean_entropy: f(5)?,
            central_entropy: f(6)?,
            distance: f(7)?,
            fidelity: if rec[8].is_empty() { None } else { Some(f(8)?) },
            accepted: b(9)?,
            bond_growth: b(10)?,
            floor_clamped: b(11)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub termination: Termination,
    pub wall_time: f64,
    pub checkpoint: Option<PathBuf>,
    pub steps: usize,
    #[serde(rename = "E_final")]
    pub energy: f64,
    pub sigma_final: f64,
    pub chi_final: usize,
    pub fidelity_final: Option<f64>,
    pub target_index: Option<usize>,
    pub sign: f64,
}

/// Write `steps.csv`, `run.json` and the final state (`checkpoint/` for MPS,
/// `final_state.bin` + sidecar for statevectors) into `dir`.
pub fn write_trajectory(record: &mut TrajectoryRecord, dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(dir)?;
    write_steps_csv(&record.steps, &dir.join("steps.csv"))?;
    let last = record.last().clone();
    let checkpoint = match &record.final_state {
        FinalState::Exact(psi) => {
            let p = dir.join("final_state.bin");
            exact::write_snapshot(psi, &p, "final")?;
            p
        }
        FinalState::Mps(m) => {
            let p = dir.join("checkpoint");
            mps::write_checkpoint(m, &p, last.tau)?;
            p
        }
    };
    record.final_state_ref = Some(checkpoint.clone());
    let summary = RunSummary {
        config: record.config.clone(),
        termination: record.termination,
        wall_time: record.wall_time,
        checkpoint: Some(checkpoint),
        steps: record.steps.len(),
        energy: last.energy,
        sigma_final: last.sigma,
        chi_final: last.chi_max,
        fidelity_final: last.fidelity,
        target_index: record.target_index,
        sign: record.sign,
    };
    let mut f = fs::File::create(dir.join("run.json"))?;
    f.write_all(serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

/// Reload the final state written by [`write_trajectory`].
pub fn load_final_state(summary: &RunSummary) -> Result<FinalState> {
    let path = summary
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("run has no checkpoint".into()))?;
    if path.is_dir() {
        Ok(FinalState::Mps(mps::read_checkpoint(path)?.0))
    } else {
        Ok(FinalState::Exact(exact::read_snapshot(path)?.0))
    }
}

// ---------------------------------------------------------------------------
// ensembles

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationRow {
    #[serde(rename = "W")]
    pub disorder: f64,
    pub seed: u64,
    pub termination: Option<Termination>,
    pub relaunched: bool,
    pub steps: usize,
    pub fidelity: Option<f64>,
    pub sigma_final: f64,
    pub chi_final: usize,
    #[serde(rename = "E_final")]
    pub energy: f64,
    /// Bond-averaged entropy of the final state.
    pub entropy_target: f64,
    /// Bond-averaged entropy of the Rayleigh ground state of `H` at the
    /// final bond dimension.
    pub entropy_ground: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    #[serde(rename = "W")]
    pub disorder: f64,
    pub n: usize,
    pub n_failed: usize,
    pub n_fidelity_reached: usize,
    pub one_minus_f_mean: f64,
    pub one_minus_f_std: f64,
    pub sigma_mean: f64,
    pub sigma_std: f64,
    pub chi_mean: f64,
    pub chi_std: f64,
    pub entropy_target_mean: f64,
    pub entropy_target_std: f64,
    pub entropy_ground_mean: f64,
    pub entropy_ground_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub rows: Vec<RealizationRow>,
    pub aggregate: AggregateRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    /// Relaunch `restart_advised` runs once with a different warm-start seed.
    pub relaunch_on_restart: bool,
    /// Store every trajectory under `<dir>/W<W>_seed<seed>/`.
    pub out_dir: Option<PathBuf>,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            relaunch_on_restart: true,
            out_dir: None,
        }
    }
}

/// Directory a realization is written to by [`run_ensemble`].
pub fn realization_dir(root: &Path, disorder: f64, seed: u64) -> PathBuf {
    root.join(format!("W{disorder}_seed{seed}"))
}

/// Population mean and standard deviation, ignoring `NaN`s.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn entropy_of(state: &FinalState) -> Result<f64> {
    match state {
        FinalState::Mps(m) => Ok(entropy_profile(m)?.mean),
        FinalState::Exact(s) => {
            let l = s.length();
            let mut total = 0.0;
            for cut in 1..l {
                total += exact::entropy_statevector(s, cut)?;
            }
            Ok(total / (l - 1) as f64)
        }
    }
}

/// Ground state of `H` by Rayleigh sweeps at bond dimension `chi`.
pub fn matched_ground_state(h: &OperatorTerms, chi: usize, seed: u64, opts: &RayleighOptions) -> Result<Mps> {
    let mpo = Mpo::from_terms(h);
    let init = Mps::random(h.length(), chi.max(1), seed);
    Ok(mps::rayleigh_ground_state(&[&mpo], init, opts)?.0)
}

fn realization(base: &RunConfig, seed: u64, opts: &EnsembleOptions) -> RealizationRow {
    let mut cfg = base.clone();
    cfg.hamiltonian.seed = seed;
    cfg.hamiltonian.fields.clear();
    cfg.seed = seed;
    let mut row = RealizationRow {
        disorder: cfg.hamiltonian.disorder,
        seed,
        termination: None,
        relaunched: false,
        steps: 0,
        fidelity: None,
        sigma_final: f64::NAN,
        chi_final: 0,
        energy: f64::NAN,
        entropy_target: f64::NAN,
        entropy_ground: f64::NAN,
        error: None,
    };
    let result = (|| -> Result<()> {
        let h = cfg.hamiltonian.operator()?;
        let eig = if cfg.wants_fidelity() && cfg.hamiltonian.length <= DENSE_CAP {
            Some(exact::diagonalize(&h)?)
        } else {
            None
        };
        let run = |c: &RunConfig| {
            run_trajectory_with(
                c,
                RunContext {
                    eigensystem: eig.as_ref(),
                    observer: None,
                },
            )
        };
        let mut rec = run(&cfg)?;
        if rec.termination == Termination::RestartAdvised && opts.relaunch_on_restart {
            let mut again = cfg.clone();
            again.seed = cfg.seed.wrapping_add(0x5851_F42D_4C95_7F2D);
            rec = run(&again)?;
            row.relaunched = true;
        }
        let last = rec.last().clone();
        row.termination = Some(rec.termination);
        row.steps = rec.steps.len();
        row.fidelity = last.fidelity;
        row.sigma_final = last.sigma;
        row.energy = last.energy;
        row.chi_final = rec.final_state.max_bond_dim();
        row.entropy_target = entropy_of(&rec.final_state)?;
        let gs = matched_ground_state(&h, row.chi_final, cfg.seed, &rayleigh_options(&cfg))?;
        row.entropy_ground = entropy_profile(&gs)?.mean;
        if let Some(root) = &opts.out_dir {
            write_trajectory(&mut rec, &realization_dir(root, row.disorder, seed))?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        warn!("realization seed {seed} failed: {e}");
        row.error = Some(e.to_string());
    }
    row
}

pub fn aggregate(rows: &[RealizationRow], fidelity_target: Option<f64>) -> AggregateRow {
    let ok: Vec<&RealizationRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let (f_m, f_s) = mean_std(ok.iter().map(|r| r.fidelity.map_or(f64::NAN, |f| 1.0 - f)));
    let (s_m, s_s) = mean_std(ok.iter().map(|r| r.sigma_final));
    let (c_m, c_s) = mean_std(ok.iter().map(|r| r.chi_final as f64));
    let (t_m, t_s) = mean_std(ok.iter().map(|r| r.entropy_target));
    let (g_m, g_s) = mean_std(ok.iter().map(|r| r.entropy_ground));
    AggregateRow {
        disorder: rows.first().map_or(f64::NAN, |r| r.disorder),
        n: rows.len(),
        n_failed: rows.len() - ok.len(),
        n_fidelity_reached: ok
            .iter()
            .filter(|r| match (r.fidelity, fidelity_target) {
                (Some(f), Some(t)) => f >= t,
                _ => false,
            })
            .count(),
        one_minus_f_mean: f_m,
        one_minus_f_std: f_s,
        sigma_mean: s_m,
        sigma_std: s_s,
        chi_mean: c_m,
        chi_std: c_s,
        entropy_target_mean: t_m,
        entropy_target_std: t_s,
        entropy_ground_mean: g_m,
        entropy_ground_std: g_s,
    }
}

/// Independent trajectories, one per disorder seed (the seed also drives the
/// warm start). Rows come back sorted by seed whatever the scheduling.
pub fn run_ensemble(
    base: &RunConfig,
    seeds: &[u64],
    parallelism: usize,
    opts: EnsembleOptions,
) -> Result<EnsembleSummary> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("seed list is empty".into()));
    }
    base.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let rows: Vec<RealizationRow> = pool.install(|| sorted.par_iter().map(|&s| realization(base, s, &opts)).collect());
    let aggregate = aggregate(&rows, base.fidelity_target);
    Ok(EnsembleSummary { rows, aggregate })
}

pub fn write_realizations_csv<'a>(rows: impl IntoIterator<Item = &'a RealizationRow>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "W",
        "seed",
        "termination",
        "relaunched",
        "steps",
        "fidelity",
        "sigma_final",
        "chi_final",
        "E_final",
        "S_mean_target",
        "S_mean_ground",
        "error",
    ])?;
    for r in rows {
        w.write_record([
            fmt_f64(r.disorder),
            r.seed.to_string(),
            termination_name(r.termination),
            r.relaunched.to_string(),
            r.steps.to_string(),
            r.fidelity.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.sigma_final),
            r.chi_final.to_string(),
            fmt_f64(r.energy),
            fmt_f64(r.entropy_target),
            fmt_f64(r.entropy_ground),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn termination_name(t: Option<Termination>) -> String {
    match t {
        Some(Termination::VarianceReached) => "variance_reached",
        Some(Termination::FidelityReached) => "fidelity_reached",
        Some(Termination::MaxSteps) => "max_steps",
        Some(Termination::RestartAdvised) => "restart_advised",
        None => "",
    }
    .to_string()
}

pub fn write_summary_csv<'a>(rows: impl IntoIterator<Item = &'a AggregateRow>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "W",
        "n",
        "n_failed",
        "n_fidelity_reached",
        "one_minus_F_mean",
        "one_minus_F_std",
        "sigma_mean",
        "sigma_std",
        "chi_mean",
        "chi_std",
        "S_mean_target_mean",
        "S_mean_target_std",
        "S_mean_ground_mean",
        "S_mean_ground_std",
    ])?;
    for a in rows {
        w.write_record([
            fmt_f64(a.disorder),
            a.n.to_string(),
            a.n_failed.to_string(),
            a.n_fidelity_reached.to_string(),
            fmt_f64(a.one_minus_f_mean),
            fmt_f64(a.one_minus_f_std),
            fmt_f64(a.sigma_mean),
            fmt_f64(a.sigma_std),
            fmt_f64(a.chi_mean),
            fmt_f64(a.chi_std),
            fmt_f64(a.entropy_target_mean),
            fmt_f64(a.entropy_target_std),
            fmt_f64(a.entropy_ground_mean),
            fmt_f64(a.entropy_ground_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// conventional imaginary time comparison

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IteComparison {
    pub h: f64,
    pub delta: f64,
    /// Steps to reach the fidelity target, `None` if the cap was hit.
    pub siite_steps: Option<usize>,
    pub ite_steps: Option<usize>,
}

/// Fixed-timestep SIITE at `delta = E_min + epsilon` against conventional
/// imaginary time evolution, both from the Néel state, counting steps to
/// the given fidelity with the exact ground state.
pub fn compare_ite(
    spec: &HamiltonianSpec,
    epsilon: f64,
    d_tau: f64,
    fidelity: f64,
    max_steps: usize,
) -> Result<IteComparison> {
    let h = spec.operator()?;
    let eig = exact::diagonalize(&h)?;
    let ground = eig.state(0);
    let delta = eig.e_min() + epsilon;
    let start = StateVector::neel(spec.length);
    let count = |mut step: Box<dyn FnMut(&StateVector) -> Result<StateVector> + '_>| -> Result<Option<usize>> {
        let mut psi = start.clone();
        for n in 0..=max_steps {
            if psi.fidelity(&ground) >= fidelity {
                return Ok(Some(n));
            }
            psi = step(&psi)?;
        }
        Ok(None)
    };
    let op = SparseOperator::new(&shift_operator(&h, delta));
    let siite_steps = count(Box::new(|psi: &StateVector| {
        Ok(siite_step_sparse(&op, psi, d_tau, ExactSolver::LeastSquares)?.state)
    }))?;
    let ite_steps = count(Box::new(|psi: &StateVector| {
        exact::ite_step_eigenbasis(&eig, psi, d_tau)
    }))?;
    Ok(IteComparison {
        h: spec.field,
        delta,
        siite_steps,
        ite_steps,
    })
}
