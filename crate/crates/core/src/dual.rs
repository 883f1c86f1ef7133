//! Dual functional `½∫(|∇f|² + f² + 2Φ*(f) + 2λf)` over `f ∈ H¹₀`.
//!
//! The discrete functional is minimized by cyclic exact per-node proximal
//! updates. Each node subproblem is `½ a t² − b t + Φ*(t)` with `Φ*` convex and
//! piecewise linear, so its minimizer is found by walking the kink lattice
//! `±(k − ½)γ`. Updates are over-relaxed only inside a single smooth piece
//! (clamped at the next kink), which keeps every step a descent step.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{energy_e1, same_domain, solve_london, GridDomain, ScalarField};
use crate::multiplicity::{
    phi, phi_star, phi_star_mollified, phi_star_mollified_slope, phi_star_truncated, PinningStrength,
};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

/// Tolerance of the London solves used for duality checks.
const LONDON_TOL: f64 = 1e-10;

/// Which nodal penalty replaces `Φ*` in the dual functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DualMode {
    /// The full conjugate `Φ*`.
    FullPhiStar,
    /// `Σ_{m ≤ levels} 2π(|f| − (m−½)γ)₊`; `levels = 0` is the vortex-free problem.
    Truncated { levels: u32 },
    /// Truncated penalty plus the pointwise constraint `|f| ≤ bound`.
    Obstacle { bound: f64, levels: u32 },
    /// Sliding average of `Φ*` over `[f − δ, f + δ]`.
    Mollified { delta: f64 },
}

impl DualMode {
    fn validate(self) -> Result<()> {
        match self {
            DualMode::Obstacle { bound, .. } if !(bound.is_finite() && bound > 0.0) => Err(
                Error::InvalidParameter(format!("obstacle bound must be positive, got {bound}")),
            ),
            DualMode::Mollified { delta } if !(delta.is_finite() && delta > 0.0) => Err(
                Error::Domain(format!("delta must be positive, got {delta}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Nodal convex term `Φ*` (or a variant) with its proximal map.
#[derive(Debug, Clone, Copy)]
pub struct NodalPenalty {
    gamma: PinningStrength,
    mode: DualMode,
}

impl NodalPenalty {
    pub fn new(gamma: PinningStrength, mode: DualMode) -> Result<Self> {
        mode.validate()?;
        Ok(Self { gamma, mode })
    }

    fn levels(&self) -> Option<u32> {
        match self.mode {
            DualMode::FullPhiStar | DualMode::Mollified { .. } => None,
            DualMode::Truncated { levels } | DualMode::Obstacle { levels, .. } => Some(levels),
        }
    }

    fn bound(&self) -> Option<f64> {
        match self.mode {
            DualMode::Obstacle { bound, .. } => Some(bound),
            _ => None,
        }
    }

    /// Penalty value; `+∞` outside an obstacle constraint.
    pub fn value(&self, t: f64) -> f64 {
        if let Some(bound) = self.bound() {
            if t.abs() > bound * (1.0 + 1e-12) {
                return f64::INFINITY;
            }
        }
        match self.mode {
            DualMode::FullPhiStar => phi_star(t, self.gamma).unwrap_or(f64::NAN),
            DualMode::Truncated { levels } | DualMode::Obstacle { levels, .. } => {
                phi_star_truncated(t, self.gamma, levels).unwrap_or(f64::NAN)
            }
            DualMode::Mollified { delta } => {
                phi_star_mollified(t, self.gamma, delta).unwrap_or(f64::NAN)
            }
        }
    }

    /// `argmin_t ½ a t² − b t + penalty(t)` for `a > 0`.
    pub fn prox(&self, a: f64, b: f64) -> f64 {
        let t = match self.mode {
            DualMode::Mollified { delta } => self.prox_smooth(a, b, delta),
            _ => self.prox_kinks(a, b),
        };
        match self.bound() {
            Some(bound) => t.clamp(-bound, bound),
            None => t,
        }
    }

    fn prox_kinks(&self, a: f64, b: f64) -> f64 {
        let g = self.gamma.value();
        let levels = self.levels();
        let beta = b.abs();
        let mut k = 0u32;
        loop {
            let t = (beta - 2.0 * PI * k as f64) / a;
            let lower = if k == 0 { 0.0 } else { (k as f64 - 0.5) * g };
            let last = levels.is_some_and(|j| k >= j);
            let upper = if last { f64::INFINITY } else { (k as f64 + 0.5) * g };
            if t <= upper {
                return t.max(lower).copysign(b);
            }
            k += 1;
        }
    }

    fn prox_smooth(&self, a: f64, b: f64, delta: f64) -> f64 {
        let slope = |t: f64| phi_star_mollified_slope(t, self.gamma, delta).unwrap_or(0.0);
        let beta = b.abs();
        let (mut lo, mut hi) = (0.0, beta / a);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if a * mid - beta + slope(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (0.5 * (lo + hi)).copysign(b)
    }

    /// Nearest kink (or obstacle wall) above `x`, strictly or not.
    fn kink_above(&self, x: f64, strict: bool) -> f64 {
        let g = self.gamma.value();
        let cap = self.levels().map_or(u32::MAX as i64, |l| l as i64);
        let pos = |k: i64| (k as f64 - 0.5) * g;
        let admits = |v: f64| if strict { v > x } else { v >= x };
        let mut best = f64::INFINITY;
        if cap >= 1 {
            // smallest positive kink above x
            let mut k = ((x / g + 0.5).ceil() as i64).max(1);
            while k > 1 && admits(pos(k - 1)) {
                k -= 1;
            }
            while !admits(pos(k)) {
                k += 1;
            }
            if k <= cap {
                best = best.min(pos(k));
            }
            // largest-magnitude negative kink still above x
            if x < 0.0 {
                let mut k = ((-x / g + 0.5).floor() as i64).min(cap);
                while k >= 1 && !admits(-pos(k)) {
                    k -= 1;
                }
                if k >= 1 {
                    best = best.min(-pos(k));
                }
            }
        }
        if let Some(bound) = self.bound() {
            for wall in [-bound, bound] {
                if admits(wall) {
                    best = best.min(wall);
                }
            }
        }
        best
    }

    fn kink_beyond(&self, x: f64, up: bool, strict: bool) -> f64 {
        if up {
            self.kink_above(x, strict)
        } else {
            -NodalPenalty {
                gamma: self.gamma,
                mode: self.mode,
            }
            .kink_above(-x, strict)
        }
    }

    /// Over-relaxed move from `t0` towards the exact minimizer `target`, kept
    /// inside the smooth piece that contains both. Falls back to `target`
    /// when a kink separates them.
    pub fn relax(&self, t0: f64, target: f64, omega: f64) -> f64 {
        if omega == 1.0 || target == t0 || matches!(self.mode, DualMode::Mollified { .. }) {
            return target;
        }
        let up = target > t0;
        let first = self.kink_beyond(t0, up, true);
        let separated = if up { first < target } else { first > target };
        if separated {
            return target;
        }
        let wall = self.kink_beyond(target, up, false);
        let t = t0 + omega * (target - t0);
        if up {
            t.min(wall)
        } else {
            t.max(wall)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualOptions {
    /// Stop once the largest per-sweep node update is below `tol`.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Over-relaxation factor; `None` picks the SOR optimum of the grid,
    /// `Some(1.0)` is plain cyclic exact minimization.
    pub omega: Option<f64>,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            omega: None,
        }
    }
}

impl DualOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Minimizer of the dual functional with convergence metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualSolution {
    #[serde(skip)]
    pub f: Option<ScalarField>,
    pub lambda: f64,
    pub gamma: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub mode: DualMode,
    pub tol: f64,
    pub omega: f64,
    /// Largest node update of the final sweep.
    pub final_update: f64,
    #[serde(skip)]
    pub objective_history: Vec<f64>,
}

impl DualSolution {
    pub fn field(&self) -> &ScalarField {
        self.f.as_ref().expect("dual solution carries its field")
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        self.field().domain()
    }

    /// JSON sidecar `{lambda, gamma, objective, iterations, converged, mode}`.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "lambda": self.lambda,
            "gamma": self.gamma,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "mode": self.mode,
        })
    }
}

/// SOR optimum `2 / (1 + sin(π h / L))` for the bounding box of the grid.
pub fn default_omega(domain: &GridDomain) -> f64 {
    2.0 / (1.0 + (PI * domain.h() / domain.side()).sin())
}

/// Discrete value of the dual functional at `f` (boundary values taken as zero).
pub fn dual_objective(f: &ScalarField, lambda: f64, penalty: &NodalPenalty) -> f64 {
    let domain = f.domain();
    let h2 = domain.h() * domain.h();
    let quadratic = energy_e1(f, 0.0);
    let nodal: f64 = f
        .interior_values()
        .map(|t| penalty.value(t) + lambda * t)
        .sum();
    quadratic + h2 * nodal
}

pub fn solve_dual(
    domain: &Arc<GridDomain>,
    lambda: f64,
    gamma: f64,
    mode: DualMode,
    opts: &DualOptions,
) -> Result<DualSolution> {
    solve_dual_from(domain, lambda, gamma, mode, opts, None)
}

/// [`solve_dual`] with an optional warm start.
pub fn solve_dual_from(
    domain: &Arc<GridDomain>,
    lambda: f64,
    gamma: f64,
    mode: DualMode,
    opts: &DualOptions,
    initial: Option<&ScalarField>,
) -> Result<DualSolution> {
    let gamma_s = PinningStrength::new(gamma)?;
    if !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be finite, got {lambda}")));
    }
    if !(opts.tol.is_finite() && opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {}", opts.tol)));
    }
    let penalty = NodalPenalty::new(gamma_s, mode)?;
    let omega = match mode {
        DualMode::Mollified { .. } => 1.0,
        _ => opts.omega.unwrap_or_else(|| default_omega(domain)),
    };
    if !(omega > 0.0 && omega < 2.0) {
        return Err(Error::InvalidParameter(format!("omega must lie in (0, 2), got {omega}")));
    }

    let mut f = match initial {
        Some(init) => {
            same_domain(domain, init.domain())?;
            let mut v = init.clone();
            for (node, val) in v.values_mut().iter_mut().enumerate() {
                if !domain.is_interior(node) && !val.is_nan() {
                    *val = 0.0;
                }
            }
            let bound = penalty.bound();
            for &node in domain.interior() {
                let val = &mut v.values_mut()[node];
                if let Some(b) = bound {
                    *val = val.clamp(-b, b);
                }
            }
            v
        }
        None => ScalarField::zeros(domain),
    };

    let inv_h2 = 1.0 / (domain.h() * domain.h());
    let coeff_a: Vec<f64> = (0..domain.interior_count())
        .map(|slot| domain.arms_of(slot).iter().map(|t| 1.0 / t).sum::<f64>() * inv_h2 + 1.0)
        .collect();

    let mut history = vec![dual_objective(&f, lambda, &penalty)];
    let mut ratios: Vec<f64> = Vec::new();
    let mut last_update = f64::INFINITY;
    let mut converged = false;
    let mut sweeps = 0;
    let tol = opts.tol;

    while sweeps < opts.max_sweeps {
        let values = f.values_mut();
        let mut max_update = 0.0f64;
        for (slot, &node) in domain.interior().iter().enumerate() {
            let nb = domain.neighbors_of(slot);
            let th = domain.arms_of(slot);
            let mut coupling = 0.0;
            for k in 0..4 {
                coupling += values[nb[k]] / th[k];
            }
            let b = coupling * inv_h2 - lambda;
            let t0 = values[node];
            let target = penalty.prox(coeff_a[slot], b);
            let t = penalty.relax(t0, target, omega);
            max_update = max_update.max((t - t0).abs());
            values[node] = t;
        }
        sweeps += 1;
        history.push(dual_objective(&f, lambda, &penalty));

        if last_update.is_finite() && last_update > 0.0 {
            ratios.push(max_update / last_update);
            if ratios.len() > 10 {
                ratios.remove(0);
            }
        }
        last_update = max_update;

        if max_update == 0.0 || max_update <= 1e-3 * tol {
            converged = true;
            break;
        }
        if max_update <= tol && ratios.len() >= 3 {
            // geometric mean of recent contraction factors bounds the remaining error
            let rho = (ratios.iter().map(|r| r.max(1e-300).ln()).sum::<f64>() / ratios.len() as f64)
                .exp()
                .clamp((omega - 1.0).max(0.0), 0.9999);
            if max_update * rho / (1.0 - rho) <= tol {
                converged = true;
                break;
            }
        }
    }

    let objective = dual_objective(&f, lambda, &penalty);
    if converged {
        log::debug!("dual solve λ = {lambda}: {sweeps} sweeps, objective {objective}");
    } else {
        log::warn!("dual solve λ = {lambda} stopped at the sweep cap {sweeps}, last update {last_update:e}");
    }
    Ok(DualSolution {
        f: Some(f),
        lambda,
        gamma,
        objective,
        iterations: sweeps,
        converged,
        mode,
        tol,
        omega,
        final_update: last_update,
        objective_history: history,
    })
}

/// Homogenized vorticity `D = (−Δ_h f + f + λ) / 2π`.
#[derive(Debug, Clone)]
pub struct VorticityField {
    pub d: ScalarField,
    pub lambda: f64,
    pub gamma: f64,
}

pub fn recover_vorticity(sol: &DualSolution) -> Result<VorticityField> {
    if !sol.converged {
        return Err(Error::Refused(format!(
            "dual solve did not converge ({} sweeps, last update {:e})",
            sol.iterations, sol.final_update
        )));
    }
    let f = sol.field();
    let lf = crate::grid::apply_london(f.domain(), f)?;
    let d = lf.map(|v| (v + sol.lambda) / (2.0 * PI));
    Ok(VorticityField {
        d,
        lambda: sol.lambda,
        gamma: sol.gamma,
    })
}

/// Threshold `−(2k−1)γ/2` separating multiplicity `k − 1` from `k`.
pub fn level_threshold(k: usize, gamma: f64) -> f64 {
    -((2 * k) as f64 - 1.0) * gamma / 2.0
}

/// Field value above which scenario (ii) holds at level `j`: `2πj + (j − ½)γ`.
pub fn scenario_threshold(j: usize, gamma: f64) -> f64 {
    2.0 * PI * j as f64 + (j as f64 - 0.5) * gamma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Multiplicities `j − 1` and `j` coexist on the coincidence set.
    FractionalCoexistence,
    /// `D = j` on `Ω_j`.
    Saturated,
}

impl Scenario {
    pub fn for_level(j: usize, lambda: f64, gamma: f64) -> Self {
        if lambda < scenario_threshold(j, gamma) {
            Scenario::FractionalCoexistence
        } else {
            Scenario::Saturated
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::FractionalCoexistence => "fractional_coexistence",
            Scenario::Saturated => "saturated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut min, mut max, mut sum, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            count += 1;
        }
        (count > 0).then(|| Self {
            min,
            mean: sum / count as f64,
            max,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    /// `Ω_k ∖ (Ω_{k+1} ∪ band_k ∪ band_{k+1})`, where `D ≈ k`.
    Plateau,
    /// Coincidence band `|f + (2k−1)γ/2| ≤ band_tol`.
    Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub kind: RegionKind,
    pub level: usize,
    pub nodes: usize,
    pub area: f64,
    /// D statistics over every node of the region.
    pub d: Option<Stats>,
    /// D statistics over nodes whose four neighbors share the region.
    pub d_core: Option<Stats>,
}

/// Nested multiplicity sets and coincidence bands of a dual minimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeReport {
    pub lambda: f64,
    pub gamma: f64,
    pub band_tol: f64,
    /// Deepest level `J`: largest `k` with `Ω_k` or band `k` nonempty.
    pub levels: usize,
    #[serde(skip)]
    pub omega_masks: Vec<Vec<bool>>,
    #[serde(skip)]
    pub coincidence_masks: Vec<Vec<bool>>,
    pub omega_areas: Vec<f64>,
    pub band_areas: Vec<f64>,
    pub regions: Vec<RegionStats>,
    pub scenario: Option<Scenario>,
    pub max_abs_f: f64,
}

impl RegimeReport {
    /// Label per node: `2k` on plateau `k`, `2k − 1` on band `k`, `-1` off-domain.
    pub fn region_labels(&self, domain: &GridDomain) -> Vec<i64> {
        let mut labels = vec![-1i64; domain.len()];
        for &node in domain.interior() {
            let mut label = 0i64;
            for k in 0..self.levels {
                if self.coincidence_masks[k][node] {
                    label = 2 * k as i64 + 1;
                } else if self.omega_masks[k][node] {
                    label = 2 * (k as i64 + 1);
                }
            }
            labels[node] = label;
        }
        labels
    }
}

/// Default band tolerance `10·tol·γ`.
///
/// Contact nodes sit on the threshold to rounding (the proximal step returns
/// the kink itself), so an `O(h²)` allowance would only admit free-boundary
/// neighbours where `D ≈ 0`.
pub fn default_band_tol(gamma: f64, tol: f64) -> f64 {
    10.0 * gamma * tol
}

pub fn classify_regions(sol: &DualSolution, band_tol: f64) -> Result<RegimeReport> {
    if band_tol <= sol.tol {
        return Err(Error::InvalidParameter(format!(
            "band tolerance {band_tol:e} must exceed the solver tolerance {:e}",
            sol.tol
        )));
    }
    let vort = recover_vorticity(sol)?;
    let f = sol.field();
    let domain = f.domain().clone();
    let h2 = domain.h() * domain.h();
    let gamma = sol.gamma;
    let max_abs_f = f.max_abs();

    let mut omega_masks = Vec::new();
    let mut coincidence_masks = Vec::new();
    let mut k = 1;
    loop {
        let t = level_threshold(k, gamma);
        let mut omega = vec![false; domain.len()];
        let mut band = vec![false; domain.len()];
        let mut any = false;
        for &node in domain.interior() {
            let v = f.at(node);
            if v < t - band_tol {
                omega[node] = true;
                any = true;
            } else if (v - t).abs() <= band_tol {
                band[node] = true;
                any = true;
            }
        }
        if !any {
            break;
        }
        omega_masks.push(omega);
        coincidence_masks.push(band);
        k += 1;
    }
    let levels = omega_masks.len();
    let count = |m: &Vec<bool>| m.iter().filter(|&&b| b).count();
    let omega_areas: Vec<f64> = omega_masks.iter().map(|m| count(m) as f64 * h2).collect();
    let band_areas: Vec<f64> = coincidence_masks.iter().map(|m| count(m) as f64 * h2).collect();

    let mut report = RegimeReport {
        lambda: sol.lambda,
        gamma,
        band_tol,
        levels,
        omega_masks,
        coincidence_masks,
        omega_areas,
        band_areas,
        regions: Vec::new(),
        scenario: (levels > 0).then(|| Scenario::for_level(levels, sol.lambda, gamma)),
        max_abs_f,
    };

    let labels = report.region_labels(&domain);
    let max_label = 2 * levels as i64;
    for label in 0..=max_label {
        let members: Vec<(usize, usize)> = domain
            .interior()
            .iter()
            .enumerate()
            .filter(|&(_, &node)| labels[node] == label)
            .map(|(slot, &node)| (slot, node))
            .collect();
        if members.is_empty() && label % 2 == 1 {
            // empty bands are still reported so the level count lines up
        }
        let core = members.iter().filter(|&&(slot, _)| {
            domain
                .neighbors_of(slot)
                .iter()
                .all(|&j| domain.is_interior(j) && labels[j] == label)
        });
        report.regions.push(RegionStats {
            kind: if label % 2 == 0 { RegionKind::Plateau } else { RegionKind::Band },
            level: ((label + 1) / 2) as usize,
            nodes: members.len(),
            area: members.len() as f64 * h2,
            d: Stats::of(members.iter().map(|&(_, node)| vort.d.at(node))),
            d_core: Stats::of(core.map(|&(_, node)| vort.d.at(node))),
        });
    }
    Ok(report)
}

/// Primal/dual consistency of a dual minimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityReport {
    /// `‖h̄ − (f̄ + λ)‖₂ / ‖h̄‖₂` (absolute when `h̄ ≡ 0`).
    pub mismatch: f64,
    pub tol: f64,
    pub passed: bool,
    /// Field energy `Ē₁(h̄)`.
    pub field_energy: f64,
    /// `πγ ∫ Φ(D)`.
    pub vortex_energy: f64,
    /// Direct energy `E₀(D) = Ē₁(h̄) + πγ ∫ Φ(D)`.
    pub e0: f64,
    pub dual_objective: f64,
    /// `E₀(D) + objective`; zero at a primal/dual optimal pair.
    pub duality_gap: f64,
    #[serde(skip)]
    pub hbar: Option<ScalarField>,
    #[serde(skip)]
    pub vorticity: Option<ScalarField>,
}

/// Direct energy `E₀(D) = Ē₁(h̄(D)) + πγ ∫ Φ(D)` with `h̄` from the London
/// equation with source `2πD` and boundary value `λ`.
pub fn direct_energy(d: &ScalarField, lambda: f64, gamma: f64) -> Result<(f64, f64, ScalarField)> {
    let domain = d.domain().clone();
    let source = d.map(|v| 2.0 * PI * v);
    let hbar = solve_london(&domain, &source, lambda, LONDON_TOL)?;
    let field = energy_e1(&hbar, lambda);
    let h2 = domain.h() * domain.h();
    let mut vortex = 0.0;
    for v in d.interior_values() {
        vortex += phi(v)?;
    }
    Ok((field, PI * gamma * h2 * vortex, hbar))
}

pub fn verify_duality(sol: &DualSolution, tol: f64) -> Result<DualityReport> {
    let vort = recover_vorticity(sol)?;
    let (field_energy, vortex_energy, hbar) = direct_energy(&vort.d, sol.lambda, sol.gamma)?;
    let shifted = sol.field().map(|v| v + sol.lambda);
    let diff = hbar.zip_with(&shifted, |a, b| a - b)?;
    let norm = hbar.norm_l2();
    let mismatch = if norm > 0.0 { diff.norm_l2() / norm } else { diff.norm_l2() };
    let e0 = field_energy + vortex_energy;
    Ok(DualityReport {
        mismatch,
        tol,
        passed: mismatch <= tol,
        field_energy,
        vortex_energy,
        e0,
        dual_objective: sol.objective,
        duality_gap: e0 + sol.objective,
        hbar: Some(hbar),
        vorticity: Some(vort.d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainShape;
    use approx::assert_abs_diff_eq;

    fn penalty(mode: DualMode) -> NodalPenalty {
        NodalPenalty::new(PinningStrength::new(1.0).unwrap(), mode).unwrap()
    }

    /// Brute-force minimizer of ½at² − bt + ψ(t) on a fine grid.
    fn brute_prox(p: &NodalPenalty, a: f64, b: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let n = 160_000;
        for i in 0..=n {
            let t = -40.0 + 80.0 * i as f64 / n as f64;
            let v = 0.5 * a * t * t - b * t + p.value(t);
            if v < best.0 {
                best = (v, t);
            }
        }
        best.1
    }

    #[test]
    fn prox_matches_brute_force() {
        let modes = [
            DualMode::FullPhiStar,
            DualMode::Truncated { levels: 1 },
            DualMode::Truncated { levels: 0 },
            DualMode::Obstacle { bound: 0.5, levels: 0 },
            DualMode::Obstacle { bound: 1.5, levels: 1 },
            DualMode::Mollified { delta: 0.2 },
        ];
        for mode in modes {
            let p = penalty(mode);
            for &a in &[1.0, 3.7, 12.0] {
                for i in 0..41 {
                    let b = -40.0 + 2.0 * i as f64;
                    let t = p.prox(a, b);
                    let brute = brute_prox(&p, a, b);
                    assert!((t - brute).abs() < 6e-4, "{mode:?} a={a} b={b}: {t} vs {brute}");
                }
            }
        }
    }

    #[test]
    fn prox_lands_on_kinks() {
        let p = penalty(DualMode::FullPhiStar);
        // a t − b must fall inside the subdifferential jump at t = 0.5
        let t = p.prox(2.0, 1.0 + PI);
        assert_eq!(t, 0.5);
        let t = p.prox(2.0, -(3.0 + 3.0 * PI));
        assert_eq!(t, -1.5);
    }

    #[test]
    fn relax_never_crosses_kinks() {
        let p = penalty(DualMode::FullPhiStar);
        assert_eq!(p.relax(0.2, 0.5, 1.9), 0.5);
        assert_abs_diff_eq!(p.relax(0.2, 0.3, 1.5), 0.35, epsilon = 1e-15);
        assert_eq!(p.relax(0.2, 0.45, 1.9), 0.5);
        // kink between start and target: plain exact step
        assert_eq!(p.relax(0.2, 0.7, 1.9), 0.7);
        assert_eq!(p.relax(-0.2, -0.45, 1.9), -0.5);
        assert_eq!(p.relax(0.5, 0.6, 1.9), 0.69);
        let ob = penalty(DualMode::Obstacle { bound: 0.5, levels: 0 });
        assert_eq!(ob.relax(-0.4, -0.48, 1.9), -0.5);
    }

    #[test]
    fn relaxed_step_is_descent() {
        let p = penalty(DualMode::FullPhiStar);
        for i in 0..200 {
            let a = 2.0 + (i % 7) as f64;
            let b = -15.0 + 0.15 * i as f64;
            let target = p.prox(a, b);
            for j in 0..20 {
                let t0 = -3.0 + 0.3 * j as f64;
                let t = p.relax(t0, target, 1.9);
                let obj = |t: f64| 0.5 * a * t * t - b * t + p.value(t);
                assert!(obj(t) <= obj(t0) + 1e-12, "a={a} b={b} t0={t0} t={t}");
            }
        }
    }

    #[test]
    fn zero_field_gives_zero_solution() {
        let d = GridDomain::build(&DomainShape::UnitDisk, 33).unwrap();
        let sol = solve_dual(&d, 0.0, 1.0, DualMode::FullPhiStar, &DualOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.field().max_abs(), 0.0);
        assert_eq!(sol.objective, 0.0);
        let v = recover_vorticity(&sol).unwrap();
        assert_eq!(v.d.max_abs(), 0.0);
        let report = classify_regions(&sol, 1e-3).unwrap();
        assert_eq!(report.levels, 0);
        assert!(report.scenario.is_none());
        let dual = verify_duality(&sol, 1e-6).unwrap();
        assert!(dual.passed);
        assert_eq!(dual.e0, 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let d = GridDomain::build(&DomainShape::UnitSquare, 17).unwrap();
        let opts = DualOptions::default();
        let err = solve_dual(&d, 1.0, -1.0, DualMode::FullPhiStar, &opts).unwrap_err();
        assert!(err.to_string().contains("gamma must be positive"));
        assert!(solve_dual(&d, f64::NAN, 1.0, DualMode::FullPhiStar, &opts).is_err());
        assert!(solve_dual(&d, 1.0, 1.0, DualMode::Mollified { delta: 0.0 }, &opts).is_err());
        let bad_omega = DualOptions {
            omega: Some(2.0),
            ..opts
        };
        assert!(solve_dual(&d, 1.0, 1.0, DualMode::FullPhiStar, &bad_omega).is_err());
    }

    #[test]
    fn non_converged_solution_is_flagged_and_refused() {
        let d = GridDomain::build(&DomainShape::UnitSquare, 33).unwrap();
        let opts = DualOptions {
            max_sweeps: 3,
            ..DualOptions::default()
        };
        let sol = solve_dual(&d, 10.0, 1.0, DualMode::FullPhiStar, &opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
        assert!(matches!(recover_vorticity(&sol), Err(Error::Refused(_))));
        assert!(classify_regions(&sol, 1e-3).is_err());
    }

    #[test]
    fn objective_matches_reevaluation() {
        let d = GridDomain::build(&DomainShape::UnitDisk, 33).unwrap();
        let sol = solve_dual(&d, 5.0, 1.0, DualMode::FullPhiStar, &DualOptions::default()).unwrap();
        let p = penalty(DualMode::FullPhiStar);
        assert_abs_diff_eq!(sol.objective, dual_objective(sol.field(), 5.0, &p), epsilon = 1e-10);
        for w in sol.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        for &node in d.interior() {
            assert!(sol.field().at(node) <= 0.0);
        }
    }

    #[test]
    fn band_tolerance_must_exceed_solver_tolerance() {
        let d = GridDomain::build(&DomainShape::UnitSquare, 17).unwrap();
        let sol = solve_dual(&d, 1.0, 1.0, DualMode::FullPhiStar, &DualOptions::default()).unwrap();
        assert!(classify_regions(&sol, 1e-9).is_err());
    }

    #[test]
    fn thresholds() {
        assert_eq!(level_threshold(1, 1.0), -0.5);
        assert_eq!(level_threshold(3, 2.0), -5.0);
        assert_abs_diff_eq!(scenario_threshold(1, 1.0), 2.0 * PI + 0.5);
        assert_abs_diff_eq!(scenario_threshold(2, 1.0), 4.0 * PI + 1.5);
        assert_eq!(Scenario::for_level(1, 4.0, 1.0), Scenario::FractionalCoexistence);
        assert_eq!(Scenario::for_level(1, 7.0, 1.0), Scenario::Saturated);
    }
}
