//! Diagnostics: relative energy error, effective gaps, the spectral-folding
//! baseline and comparison tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{fmt_f64, StepRecord};
use crate::error::{Error, Result};
use crate::exact::{self, max_fidelity, EigenSystem};
use crate::models::{shift_operator, OperatorTerms};
use crate::mps::{self, Mpo, RayleighOptions};

/// `(E_final - delta) / (E_max - E_min)`.
pub fn relative_energy_error(e_final: f64, delta: f64, e_min: f64, e_max: f64) -> Result<f64> {
    let width = e_max - e_min;
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Degenerate(format!("spectral width {width} is not positive")));
    }
    Ok((e_final - delta) / width)
}

/// `|(E_n - E_adj) / ((E_adj - delta)(E_n - delta))|`, the level spacing of
/// `(H - delta)^{-1}` between the two states.
pub fn effective_gap(e_n: f64, e_adj: f64, delta: f64) -> Result<f64> {
    let a = e_adj - delta;
    let b = e_n - delta;
    if a == 0.0 || b == 0.0 {
        return Err(Error::Degenerate(format!(
            "target {delta} coincides with a level ({e_n} or {e_adj})"
        )));
    }
    Ok(((e_n - e_adj) / (a * b)).abs())
}

/// Effective gap at `delta = E_0 + epsilon` over the bare gap `E_1 - E_0`.
pub fn gap_ratio(e0: f64, e1: f64, epsilon: f64) -> Result<f64> {
    if !(e1 > e0) {
        return Err(Error::InvalidArgument(format!("need E_1 > E_0, got {e0} and {e1}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(effective_gap(e0, e1, e0 + epsilon)? / (e1 - e0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    #[serde(rename = "E_n")]
    pub e_n: f64,
    #[serde(rename = "E_below")]
    pub e_below: Option<f64>,
    #[serde(rename = "E_above")]
    pub e_above: Option<f64>,
    pub delta: f64,
    /// `|E_n - delta|`.
    pub epsilon: f64,
    /// Smallest effective gap to a neighbor.
    pub delta_eff: f64,
    /// `delta_eff` over the bare gap to the same neighbor.
    pub ratio: f64,
}

/// Gap report for level `n` of a sorted spectrum.
pub fn gap_report(energies: &[f64], n: usize, delta: f64) -> Result<GapReport> {
    if n >= energies.len() || energies.len() < 2 {
        return Err(Error::InvalidArgument(format!("level {n} out of range")));
    }
    let e_n = energies[n];
    let e_below = n.checked_sub(1).map(|i| energies[i]);
    let e_above = energies.get(n + 1).copied();
    let mut best: Option<(f64, f64)> = None;
    for adj in [e_below, e_above].into_iter().flatten() {
        let g = effective_gap(e_n, adj, delta)?;
        if best.is_none_or(|(b, _)| g < b) {
            best = Some((g, (e_n - adj).abs()));
        }
    }
    let (delta_eff, bare) = best.expect("at least one neighbor");
    Ok(GapReport {
        e_n,
        e_below,
        e_above,
        delta,
        epsilon: (e_n - delta).abs(),
        delta_eff,
        ratio: delta_eff / bare,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub chi: usize,
    pub energy: f64,
    pub variance: f64,
    /// Against exact diagonalization, when available.
    pub fidelity: Option<f64>,
    pub energy_error: f64,
}

/// The spectral-folding baseline: Rayleigh sweeps on `(H - delta)^2` at bond
/// dimension `chi`, evaluated against the spectrum bounds `(E_min, E_max)`.
pub fn folding_baseline(
    h: &OperatorTerms,
    delta: f64,
    chi: usize,
    seed: u64,
    bounds: (f64, f64),
    eig: Option<&EigenSystem>,
    opts: &RayleighOptions,
) -> Result<BaselineResult> {
    let h_shift = shift_operator(h, delta);
    let mpo = Mpo::from_terms(&h_shift);
    let state = mps::folded_ground_state(&mpo, chi, seed, opts)?;
    let e = mps::expectation(&state, &mpo)?;
    let variance = mps::variance_mps(&state, &mpo, e)?;
    let fidelity = match eig {
        Some(eig) => Some(max_fidelity(&state.to_statevector()?, eig).0),
        None => None,
    };
    Ok(BaselineResult {
        chi,
        energy: e + delta,
        variance,
        fidelity,
        energy_error: relative_energy_error(e + delta, delta, bounds.0, bounds.1)?,
    })
}

/// Extremal energies: exact when a spectrum is given, otherwise variational
/// bounds from Rayleigh sweeps on `H` and `-H` at bond dimension `chi`.
pub fn spectrum_bounds(h: &OperatorTerms, eig: Option<&EigenSystem>, chi: usize, seed: u64) -> Result<(f64, f64)> {
    match eig {
        Some(e) => Ok((e.e_min(), e.e_max())),
        None => mps::spectral_bounds(&Mpo::from_terms(h), chi, seed, &RayleighOptions::default()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    #[serde(rename = "W")]
    pub disorder: f64,
    pub method: String,
    #[serde(rename = "F_mean")]
    pub fidelity_mean: f64,
    #[serde(rename = "F_std")]
    pub fidelity_std: f64,
    pub log10_sigma_mean: f64,
    #[serde(rename = "dE_mean")]
    pub energy_error_mean: f64,
}

pub fn write_comparison_csv(rows: &[ComparisonRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["W", "method", "F_mean", "F_std", "log10_sigma_mean", "dE_mean"])?;
    for r in rows {
        w.write_record([
            fmt_f64(r.disorder),
            r.method.clone(),
            fmt_f64(r.fidelity_mean),
            fmt_f64(r.fidelity_std),
            fmt_f64(r.log10_sigma_mean),
            fmt_f64(r.energy_error_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ys` against their index.
pub fn linear_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Slopes of `log10 sigma` over sliding windows of accepted steps after the
/// first bond growth (or over the whole run when there was none).
pub fn variance_trend(steps: &[StepRecord], window: usize) -> Vec<f64> {
    let start = steps.iter().position(|s| s.bond_growth).unwrap_or(0);
    let sig: Vec<f64> = steps[start..]
        .iter()
        .filter(|s| s.accepted && s.d_tau != 0.0 && s.sigma > 0.0)
        .map(|s| s.sigma.log10())
        .collect();
    if sig.len() < window || window < 2 {
        return Vec::new();
    }
    sig.windows(window).map(linear_slope).collect()
}

/// Slope of `log10 sigma` over the last `window` accepted steps after the
/// final bond growth; `None` with fewer than three such steps.
pub fn late_variance_slope(steps: &[StepRecord], window: usize) -> Option<f64> {
    let start = steps.iter().rposition(|s| s.bond_growth).unwrap_or(0);
    let sig: Vec<f64> = steps[start..]
        .iter()
        .filter(|s| s.accepted && s.d_tau != 0.0 && s.sigma > 0.0)
        .map(|s| s.sigma.log10())
        .collect();
    if sig.len() < 3 {
        return None;
    }
    Some(linear_slope(&sig[sig.len().saturating_sub(window.max(3))..]))
}

/// Exact fidelity of a statevector against a spectrum; convenience for tables.
pub fn fidelity_against(psi: &exact::StateVector, eig: &EigenSystem) -> f64 {
    max_fidelity(psi, eig).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_error() {
        assert_eq!(relative_energy_error(0.3, 0.3, -1.0, 1.0).unwrap(), 0.0);
        assert!((relative_energy_error(0.01, 0.0, -50.0, 50.0).unwrap() - 1e-4).abs() < 1e-18);
        assert!(relative_energy_error(0.0, 0.0, 1.0, 1.0).is_err());
        let a = relative_energy_error(0.2, 0.1, -3.0, 4.0).unwrap();
        let b = relative_energy_error(5.2, 5.1, 2.0, 9.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn gap_formula() {
        let g = effective_gap(0.0, 1.0, 0.1).unwrap();
        assert!((g - 1.0 / 0.09).abs() < 1e-12);
        let alt = (1.0 / (0.0 - 0.1) - 1.0 / (1.0 - 0.1f64)).abs();
        assert!((g - alt).abs() < 1e-12);
        assert!(effective_gap(0.0, 1.0, 0.0).is_err());
        assert!((gap_ratio(0.0, 1.0, 0.1).unwrap() - 11.111111111111112).abs() < 1e-12);
        let r = gap_ratio(0.0, 1e-6, 1e-2).unwrap();
        assert!(r > 0.5e4 && r < 2e4);
    }

    #[test]
    fn slopes() {
        assert!((linear_slope(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(linear_slope(&[2.0]), 0.0);
    }

    #[test]
    fn report_picks_nearest_neighbor() {
        let e = [-1.0, 0.0, 0.05, 2.0];
        let r = gap_report(&e, 1, 0.01).unwrap();
        assert_eq!(r.e_below, Some(-1.0));
        assert_eq!(r.e_above, Some(0.05));
        let want = effective_gap(0.0, 0.05, 0.01)
            .unwrap()
            .min(effective_gap(0.0, -1.0, 0.01).unwrap());
        assert_eq!(r.delta_eff, want);
    }
}
