//! Critical fields `λ_cr1 < λ_cr2 < …` and phase diagrams over `λ`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dual::{
    classify_regions, default_band_tol, scenario_threshold, solve_dual_from, DualMode, DualOptions,
    Scenario,
};
use crate::error::{Error, Result};
use crate::grid::{solve_london, GridDomain, ScalarField};
use crate::multiplicity::PinningStrength;

const PROFILE_TOL: f64 = 1e-10;

/// Rescaled external field `λ` (`h_ext = λ / ε²`).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FieldStrength(f64);

impl FieldStrength {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda.is_finite() && lambda >= 0.0 {
            Ok(Self(lambda))
        } else {
            Err(Error::Domain(format!("lambda must be nonnegative, got {lambda}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FieldStrength {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FieldStrength> for f64 {
    fn from(v: FieldStrength) -> f64 {
        v.0
    }
}

/// Vortex-free unit profile `f₁`: `Δf = f + 1` in Ω, `f = 0` on ∂Ω.
pub fn unit_profile(domain: &Arc<GridDomain>) -> Result<ScalarField> {
    let source = ScalarField::constant(domain, -1.0);
    solve_london(domain, &source, 0.0, PROFILE_TOL)
}

/// `λ_cr1 = γ / (2 max|f₁|)`.
pub fn lambda_cr1(domain: &Arc<GridDomain>, gamma: f64) -> Result<f64> {
    let gamma = PinningStrength::new(gamma)?;
    let peak = unit_profile(domain)?.max_abs();
    if !(peak > 0.0) {
        return Err(Error::Grid("unit profile vanishes; domain is degenerate".into()));
    }
    Ok(gamma.value() / (2.0 * peak))
}

/// Extrapolates two grid results with error `O(h^order)`, the fine grid having half the spacing.
pub fn richardson(coarse: f64, fine: f64, order: f64) -> f64 {
    let r = 2f64.powf(order);
    (r * fine - coarse) / (r - 1.0)
}

/// Result of a bisection for `λ_crj`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub j: usize,
    pub lambda: f64,
    /// Final bracket `[lo, hi]` with `hi − lo ≤ tol`.
    pub bracket: (f64, f64),
    pub tol: f64,
    pub evaluations: usize,
    /// `max|g| − (2j−1)γ/2` at the returned `λ`.
    pub residual: f64,
    /// True when the value comes from the closed form rather than bisection.
    pub closed_form: bool,
}

/// Peak `max|g_λ|` of the dual minimizer keeping `levels` vortex bands.
fn truncated_peak(
    domain: &Arc<GridDomain>,
    lambda: f64,
    gamma: f64,
    levels: u32,
    opts: &DualOptions,
    warm: Option<&ScalarField>,
) -> Result<(f64, ScalarField)> {
    let sol = solve_dual_from(domain, lambda, gamma, DualMode::Truncated { levels }, opts, warm)?;
    if !sol.converged {
        return Err(Error::NoConvergence {
            iterations: sol.iterations,
            residual: sol.final_update,
        });
    }
    let f = sol.f.expect("solution field");
    Ok((f.max_abs(), f))
}

/// Bisection for `λ_crj = max{λ : max|g_λ^{(j−1)}| ≤ (2j−1)γ/2}`, valid for `j ≥ 1`.
///
/// `j = 1` bisects the vortex-free solve, which is how the closed form is
/// cross-checked.
pub fn critical_by_bisection(
    domain: &Arc<GridDomain>,
    gamma: f64,
    j: usize,
    bracket: (f64, f64),
    tol: f64,
    opts: &DualOptions,
) -> Result<CriticalEstimate> {
    PinningStrength::new(gamma)?;
    if j == 0 {
        return Err(Error::InvalidParameter("level j must be at least 1".into()));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter(format!("invalid bracket [{lo}, {hi}]")));
    }
    let levels = (j - 1) as u32;
    let target = (2 * j - 1) as f64 * gamma / 2.0;
    let (peak_lo, mut warm) = truncated_peak(domain, lo, gamma, levels, opts, None)?;
    let (peak_hi, _) = truncated_peak(domain, hi, gamma, levels, opts, Some(&warm))?;
    let (value_lo, value_hi) = (peak_lo - target, peak_hi - target);
    if value_lo > 0.0 || value_hi < 0.0 {
        return Err(Error::Bracket {
            lo,
            hi,
            value_lo,
            value_hi,
        });
    }
    let mut evaluations = 2;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let (peak, f) = truncated_peak(domain, mid, gamma, levels, opts, Some(&warm))?;
        evaluations += 1;
        if peak - target <= 0.0 {
            lo = mid;
            warm = f;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    log::debug!("λ_cr{j} ≈ {lambda} after {evaluations} solves");
    let (peak, _) = truncated_peak(domain, lambda, gamma, levels, opts, Some(&warm))?;
    Ok(CriticalEstimate {
        j,
        lambda,
        bracket: (lo, hi),
        tol,
        evaluations: evaluations + 1,
        residual: peak - target,
        closed_form: false,
    })
}

/// Default bisection bracket `[λ_cr(j−1), λ_cr(j−1) + 4π + 2γ]`.
pub fn default_bracket(previous: f64, gamma: f64) -> (f64, f64) {
    (previous, previous + 4.0 * PI + 2.0 * gamma)
}

/// `λ_crj`; `j = 1` uses the closed form, `j ≥ 2` bisects from the default
/// bracket unless one is given.
pub fn lambda_cr_j(
    domain: &Arc<GridDomain>,
    gamma: f64,
    j: usize,
    bracket: Option<(f64, f64)>,
    tol: f64,
    opts: &DualOptions,
) -> Result<CriticalEstimate> {
    if j == 0 {
        return Err(Error::InvalidParameter("level j must be at least 1".into()));
    }
    if j == 1 {
        let lambda = lambda_cr1(domain, gamma)?;
        return Ok(CriticalEstimate {
            j,
            lambda,
            bracket: (lambda, lambda),
            tol: 0.0,
            evaluations: 0,
            residual: 0.0,
            closed_form: true,
        });
    }
    let bracket = match bracket {
        Some(b) => b,
        None => {
            let prev = lambda_cr_j(domain, gamma, j - 1, None, tol, opts)?;
            default_bracket(prev.lambda, gamma)
        }
    };
    critical_by_bisection(domain, gamma, j, bracket, tol, opts)
}

/// The critical-field ladder with scenario thresholds `t_j = 2πj + (j−½)γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalLadder {
    pub gamma: f64,
    pub lambdas: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub entries: Vec<CriticalEstimate>,
}

impl CriticalLadder {
    pub fn is_strictly_increasing(&self) -> bool {
        self.lambdas.windows(2).all(|w| w[0] < w[1])
    }
}

/// Computes `λ_cr1 … λ_crJ`, each bracket starting at the previous rung.
pub fn critical_ladder(
    domain: &Arc<GridDomain>,
    gamma: f64,
    levels: usize,
    tol: f64,
    opts: &DualOptions,
) -> Result<CriticalLadder> {
    let mut entries: Vec<CriticalEstimate> = Vec::with_capacity(levels);
    for j in 1..=levels {
        let bracket = entries.last().map(|e| default_bracket(e.lambda, gamma));
        entries.push(lambda_cr_j(domain, gamma, j, bracket, tol, opts)?);
    }
    Ok(CriticalLadder {
        gamma,
        lambdas: entries.iter().map(|e| e.lambda).collect(),
        thresholds: (1..=levels).map(|j| scenario_threshold(j, gamma)).collect(),
        entries,
    })
}

/// One `λ` of a phase diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub lambda: f64,
    /// Deepest multiplicity level `J(λ)`.
    pub levels: usize,
    pub scenario: Option<Scenario>,
    pub omega_areas: Vec<f64>,
    pub band_areas: Vec<f64>,
    pub max_abs_f: f64,
    pub iterations: usize,
    /// False when the solve did not converge; the other columns are then unreliable.
    pub valid: bool,
}

fn phase_row(domain: &Arc<GridDomain>, gamma: f64, lambda: f64, opts: &DualOptions) -> Result<PhaseRow> {
    let sol = solve_dual_from(domain, lambda, gamma, DualMode::FullPhiStar, opts, None)?;
    if !sol.converged {
        return Ok(PhaseRow {
            lambda,
            levels: 0,
            scenario: None,
            omega_areas: Vec::new(),
            band_areas: Vec::new(),
            max_abs_f: sol.field().max_abs(),
            iterations: sol.iterations,
            valid: false,
        });
    }
    let report = classify_regions(&sol, default_band_tol(gamma, sol.tol))?;
    Ok(PhaseRow {
        lambda,
        levels: report.levels,
        scenario: report.scenario,
        omega_areas: report.omega_areas,
        band_areas: report.band_areas,
        max_abs_f: report.max_abs_f,
        iterations: sol.iterations,
        valid: true,
    })
}

/// Deepest level, scenario and set areas along an ascending `λ` grid.
///
/// Rows are independent cold-start solves, so `threads > 1` gives the same
/// table as the sequential run.
pub fn phase_diagram(
    domain: &Arc<GridDomain>,
    gamma: f64,
    lambda_grid: &[f64],
    opts: &DualOptions,
    threads: usize,
) -> Result<Vec<PhaseRow>> {
    PinningStrength::new(gamma)?;
    if lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("lambda grid must be strictly ascending".into()));
    }
    for &l in lambda_grid {
        FieldStrength::new(l)?;
    }
    let threads = threads.max(1).min(lambda_grid.len().max(1));
    if threads == 1 {
        return lambda_grid.iter().map(|&l| phase_row(domain, gamma, l, opts)).collect();
    }
    let mut rows: Vec<Option<Result<PhaseRow>>> = (0..lambda_grid.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = rows
            .chunks_mut(lambda_grid.len().div_ceil(threads))
            .zip(lambda_grid.chunks(lambda_grid.len().div_ceil(threads)))
            .collect();
        for (out, lams) in chunks {
            scope.spawn(move || {
                for (slot, &l) in out.iter_mut().zip(lams) {
                    *slot = Some(phase_row(domain, gamma, l, opts));
                }
            });
        }
    });
    rows.into_iter().map(|r| r.expect("row computed")).collect()
}
