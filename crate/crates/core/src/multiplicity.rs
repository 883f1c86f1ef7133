//! Homogenized vortex energy density and its convex conjugate.
//!
//! `Φ(D)` is the minimal mean squared degree of a partition of unity over
//! integer multiplicities with mean `D`. The dual solver works with the
//! conjugate `Φ*` of `κ ↦ πγ Φ(κ / 2π)`, which is a sum of hinge functions
//! with kinks at `|f| = (k − ½)γ`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ μ_k = 1` for a [`PartitionTuple`].
pub const PARTITION_SUM_TOL: f64 = 1e-12;

/// Weights `μ_k` of a partition of unity over integer multiplicities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTuple {
    weights: BTreeMap<i64, f64>,
    truncation: i64,
}

impl PartitionTuple {
    /// Builds a tuple, dropping zero weights.
    pub fn new(weights: BTreeMap<i64, f64>, truncation: i64) -> Result<Self> {
        if truncation < 0 {
            return Err(Error::InvalidParameter(format!(
                "truncation must be nonnegative, got {truncation}"
            )));
        }
        let mut sum = 0.0;
        for (&k, &w) in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Domain(format!("weight mu_{k} = {w} is not a nonnegative number")));
            }
            if k.abs() > truncation && w > 0.0 {
                return Err(Error::Domain(format!(
                    "multiplicity {k} exceeds the truncation {truncation}"
                )));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > PARTITION_SUM_TOL {
            return Err(Error::Domain(format!("weights sum to {sum}, not 1")));
        }
        let weights = weights.into_iter().filter(|&(_, w)| w > 0.0).collect();
        Ok(Self { weights, truncation })
    }

    pub fn weights(&self) -> &BTreeMap<i64, f64> {
        &self.weights
    }

    pub fn truncation(&self) -> i64 {
        self.truncation
    }

    pub fn weight(&self, k: i64) -> f64 {
        self.weights.get(&k).copied().unwrap_or(0.0)
    }

    /// `Σ k μ_k`.
    pub fn mean(&self) -> f64 {
        self.weights.iter().map(|(&k, &w)| k as f64 * w).sum()
    }

    /// `Σ k² μ_k`.
    pub fn second_moment(&self) -> f64 {
        self.weights.iter().map(|(&k, &w)| (k * k) as f64 * w).sum()
    }
}

/// Hole-size exponent `γ` (diameter `2 e^{−γ/ε²}`).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PinningStrength(f64);

impl PinningStrength {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(Self(gamma))
        } else {
            Err(Error::Domain(format!("gamma must be positive, got {gamma}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Kink location `(k − ½)γ` of the conjugate, for `k ≥ 1`.
    pub fn kink(self, k: u32) -> f64 {
        (k as f64 - 0.5) * self.0
    }
}

impl TryFrom<f64> for PinningStrength {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<PinningStrength> for f64 {
    fn from(value: PinningStrength) -> f64 {
        value.0
    }
}

fn require_finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Domain(format!("{what} must be finite, got {x}")))
    }
}

/// `Φ(D) = (2k+1)|D| − k − k²` with `k = ⌊|D|⌋`.
pub fn phi(d: f64) -> Result<f64> {
    let d = require_finite(d, "D")?.abs();
    let k = d.floor();
    Ok((2.0 * k + 1.0) * d - k - k * k)
}

/// Conjugate of `κ ↦ πγ Φ(κ/2π)`: zero on `|f| ≤ γ/2`, `2πk|f| − πγk²` on
/// the band `(k−½)γ ≤ |f| ≤ (k+½)γ`.
pub fn phi_star(f: f64, gamma: PinningStrength) -> Result<f64> {
    let a = require_finite(f, "f")?.abs();
    Ok(phi_star_abs(a, gamma.value()))
}

fn phi_star_abs(a: f64, gamma: f64) -> f64 {
    let k = (a / gamma + 0.5).floor();
    if k < 1.0 {
        0.0
    } else {
        2.0 * PI * k * a - PI * gamma * k * k
    }
}

/// `Σ_{m=1}^{levels} 2π (|f| − (m−½)γ)₊`, the conjugate with only the first
/// `levels` kinks kept. Agrees with [`phi_star`] for `|f| ≤ (levels + ½)γ`.
pub fn phi_star_truncated(f: f64, gamma: PinningStrength, levels: u32) -> Result<f64> {
    let a = require_finite(f, "f")?.abs();
    let g = gamma.value();
    let mut sum = 0.0;
    for m in 1..=levels {
        let excess = a - (m as f64 - 0.5) * g;
        if excess <= 0.0 {
            break;
        }
        sum += 2.0 * PI * excess;
    }
    Ok(sum)
}

/// Antiderivative of `Φ*` vanishing at zero: `Σ_m π (z − (m−½)γ)₊²`, odd in `z`.
fn phi_star_antiderivative(z: f64, gamma: f64) -> f64 {
    let a = z.abs();
    let mut sum = 0.0;
    let mut m = 1.0;
    loop {
        let excess = a - (m - 0.5) * gamma;
        if excess <= 0.0 {
            break;
        }
        sum += PI * excess * excess;
        m += 1.0;
    }
    sum.copysign(z)
}

/// Sliding average `(1/2δ) ∫_{f−δ}^{f+δ} Φ*(z) dz`.
pub fn phi_star_mollified(f: f64, gamma: PinningStrength, delta: f64) -> Result<f64> {
    let f = require_finite(f, "f")?;
    check_delta(delta)?;
    let g = gamma.value();
    Ok((phi_star_antiderivative(f + delta, g) - phi_star_antiderivative(f - delta, g))
        / (2.0 * delta))
}

/// Derivative of [`phi_star_mollified`] in `f`.
pub fn phi_star_mollified_slope(f: f64, gamma: PinningStrength, delta: f64) -> Result<f64> {
    let f = require_finite(f, "f")?;
    check_delta(delta)?;
    let g = gamma.value();
    Ok((phi_star_abs((f + delta).abs(), g) - phi_star_abs((f - delta).abs(), g)) / (2.0 * delta))
}

fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("delta must be positive, got {delta}")))
    }
}

/// Default truncation `⌈|D|⌉ + 3` for [`cell_minimum_oracle`].
pub fn default_truncation(d: f64) -> i64 {
    d.abs().ceil() as i64 + 3
}

/// Solves `min Σ k² μ_k` over partitions of unity on `[−K, K]` with mean `D`
/// by enumerating every two-point support. A linear program with two
/// equality constraints has an optimal vertex with at most two nonzeros.
pub fn cell_minimum_oracle(d: f64, truncation: i64) -> Result<(f64, PartitionTuple)> {
    let d = require_finite(d, "D")?;
    if truncation < 1 || d.abs() > (truncation - 1) as f64 {
        return Err(Error::Truncation {
            value: d.abs(),
            limit: truncation - 1,
        });
    }

    let mut best: Option<(f64, i64, i64, f64, f64)> = None;
    for k in -truncation..=truncation {
        for l in (k + 1)..=truncation {
            let (kf, lf) = (k as f64, l as f64);
            if d < kf || d > lf {
                continue;
            }
            let mu_l = (d - kf) / (lf - kf);
            let mu_k = 1.0 - mu_l;
            let value = kf * kf * mu_k + lf * lf * mu_l;
            if best.is_none_or(|b| value < b.0) {
                best = Some((value, k, l, mu_k, mu_l));
            }
        }
    }
    // Feasible because |D| ≤ K − 1 admits the pair (⌊D⌋, ⌊D⌋ + 1).
    let (value, k, l, mu_k, mu_l) = best.expect("nonempty support enumeration");

    let mut weights = BTreeMap::new();
    if mu_k > 0.0 {
        weights.insert(k, mu_k);
    }
    if mu_l > 0.0 {
        weights.insert(l, mu_l);
    }
    Ok((value, PartitionTuple::new(weights, truncation)?))
}

/// Outcome of the sampled Legendre transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegendreEstimate {
    pub value: f64,
    pub argmax: f64,
    /// False when the maximum sits on the edge of the sampled κ range.
    pub reliable: bool,
}

/// `max_κ f·κ − πγ Φ(κ/2π)` over `κ = i·step`, `|κ| ≤ range`.
///
/// The integrand is piecewise linear with kinks at `κ = 2πk`; the estimate is
/// exact when the step divides `2π`.
pub fn legendre_numeric(
    f: f64,
    gamma: PinningStrength,
    kappa_range: f64,
    kappa_step: f64,
) -> Result<LegendreEstimate> {
    let f = require_finite(f, "f")?;
    if !(kappa_step.is_finite() && kappa_step > 0.0) {
        return Err(Error::Domain(format!("kappa_step must be positive, got {kappa_step}")));
    }
    if !(kappa_range.is_finite() && kappa_range >= kappa_step) {
        return Err(Error::Domain(format!(
            "kappa_range must be at least one step, got {kappa_range}"
        )));
    }
    let g = gamma.value();
    let count = (kappa_range / kappa_step + 1e-9).floor() as i64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0i64);
    for i in -count..=count {
        let kappa = i as f64 * kappa_step;
        let value = f * kappa - PI * g * phi(kappa / (2.0 * PI))?;
        if value > best.0 {
            best = (value, kappa, i);
        }
    }
    Ok(LegendreEstimate {
        value: best.0,
        argmax: best.1,
        reliable: best.2.abs() < count,
    })
}
