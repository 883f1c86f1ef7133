//! Python bindings for the pinning model: grids, dual solves, critical fields
//! and ε-lattice degree problems.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pinning_core::critical;
use pinning_core::dual::{self, DualMode, DualOptions};
use pinning_core::grid::{DomainShape, GridDomain, MaskGrid, ScalarField};
use pinning_core::micro::{self, DegreeAssignment, MinimizeOptions};
use pinning_core::multiplicity::{self as mult, PinningStrength};
use pinning_core::Error;

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::NoConvergence { .. } | Error::Io(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn gamma_of(gamma: f64) -> PyResult<PinningStrength> {
    PinningStrength::new(gamma).map_err(to_py_err)
}

/// Serializes through JSON into plain Python objects.
fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Masked uniform grid over the unit square, the unit disk or a mask file.
#[pyclass(name = "Domain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDomain {
    inner: Arc<GridDomain>,
}

#[pymethods]
impl PyDomain {
    /// `shape` is "square" or "disk".
    #[new]
    #[pyo3(signature = (shape, n = 129))]
    fn new(shape: &str, n: usize) -> PyResult<Self> {
        let shape = match shape {
            "square" => DomainShape::UnitSquare,
            "disk" => DomainShape::UnitDisk,
            other => return Err(PyValueError::new_err(format!("unknown shape `{other}`"))),
        };
        Ok(Self {
            inner: GridDomain::build(&shape, n).map_err(to_py_err)?,
        })
    }

    /// Builds a domain from mask text (first line "n_rows n_cols", codes 0/1/2).
    #[staticmethod]
    fn from_mask(text: &str) -> PyResult<Self> {
        let mask = MaskGrid::parse(text).map_err(to_py_err)?;
        Ok(Self {
            inner: GridDomain::build(&DomainShape::Mask(mask), 0).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    #[getter]
    fn interior_count(&self) -> usize {
        self.inner.interior_count()
    }

    #[getter]
    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn __repr__(&self) -> String {
        format!(
            "Domain(n={}, interior={}, h={})",
            self.inner.n(),
            self.inner.interior_count(),
            self.inner.h()
        )
    }
}

/// Nodal values on a domain; exterior nodes hold NaN.
#[pyclass(name = "Field", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyField {
    inner: ScalarField,
}

#[pymethods]
impl PyField {
    /// Values as an `n × n` nested list indexed `[iy][ix]`.
    fn to_list(&self) -> Vec<Vec<f64>> {
        let d = self.inner.domain();
        let n = d.n();
        (0..n)
            .map(|iy| (0..n).map(|ix| self.inner.at(d.index(ix, iy))).collect())
            .collect()
    }

    fn at(&self, ix: usize, iy: usize) -> PyResult<f64> {
        let n = self.inner.domain().n();
        if ix >= n || iy >= n {
            return Err(PyValueError::new_err(format!("node ({ix}, {iy}) outside an {n}×{n} grid")));
        }
        Ok(self.inner.at(self.inner.domain().index(ix, iy)))
    }

    /// Nearest-node value at `(x, y)`.
    fn sample(&self, x: f64, y: f64) -> f64 {
        self.inner.sample_nearest(x, y)
    }

    fn max_abs(&self) -> f64 {
        self.inner.max_abs()
    }

    fn integral(&self) -> f64 {
        self.inner.integral()
    }

    /// Long-format CSV `ix,iy,x,y,value`.
    fn to_csv(&self) -> String {
        pinning_core::io::field_to_csv(&self.inner)
    }
}

#[pyclass(name = "DualSolution", frozen)]
struct PyDualSolution {
    inner: dual::DualSolution,
}

#[pymethods]
impl PyDualSolution {
    #[getter]
    fn objective(&self) -> f64 {
        self.inner.objective
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    fn f(&self) -> PyField {
        PyField {
            inner: self.inner.field().clone(),
        }
    }

    /// Homogenized vorticity `D`.
    fn vorticity(&self) -> PyResult<PyField> {
        let v = dual::recover_vorticity(&self.inner).map_err(to_py_err)?;
        Ok(PyField { inner: v.d })
    }

    /// Nested multiplicity sets, bands and per-region statistics of `D`.
    #[pyo3(signature = (band_tol = None))]
    fn regions<'py>(&self, py: Python<'py>, band_tol: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let tol = band_tol.unwrap_or_else(|| dual::default_band_tol(self.inner.gamma, self.inner.tol));
        let report = dual::classify_regions(&self.inner, tol).map_err(to_py_err)?;
        to_python(py, &report)
    }

    /// Primal/dual consistency and the direct energy `E₀(D)`.
    #[pyo3(signature = (tol = 1e-6))]
    fn duality<'py>(&self, py: Python<'py>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
        let report = dual::verify_duality(&self.inner, tol).map_err(to_py_err)?;
        to_python(py, &report)
    }

    fn __repr__(&self) -> String {
        format!(
            "DualSolution(lambda={}, gamma={}, objective={}, iterations={}, converged={})",
            self.inner.lambda, self.inner.gamma, self.inner.objective, self.inner.iterations, self.inner.converged
        )
    }
}

fn parse_mode(mode: &str, levels: Option<u32>, bound: Option<f64>, delta: Option<f64>, gamma: f64) -> PyResult<DualMode> {
    Ok(match mode {
        "full" => DualMode::FullPhiStar,
        "truncated" => DualMode::Truncated {
            levels: levels.unwrap_or(1),
        },
        "obstacle" => DualMode::Obstacle {
            bound: bound.unwrap_or(gamma / 2.0),
            levels: levels.unwrap_or(0),
        },
        "mollified" => DualMode::Mollified {
            delta: delta.unwrap_or(0.1),
        },
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
    })
}

/// Minimizes the dual functional; `mode` is full, truncated, obstacle or mollified.
#[pyfunction]
#[pyo3(signature = (domain, lambda_, gamma, mode = "full", levels = None, bound = None, delta = None, tol = 1e-8, max_sweeps = 100_000))]
#[allow(clippy::too_many_arguments)]
fn solve_dual(
    py: Python<'_>,
    domain: &PyDomain,
    lambda_: f64,
    gamma: f64,
    mode: &str,
    levels: Option<u32>,
    bound: Option<f64>,
    delta: Option<f64>,
    tol: f64,
    max_sweeps: usize,
) -> PyResult<PyDualSolution> {
    let mode = parse_mode(mode, levels, bound, delta, gamma)?;
    let opts = DualOptions {
        tol,
        max_sweeps,
        omega: None,
    };
    let inner = py
        .detach(|| dual::solve_dual(&domain.inner, lambda_, gamma, mode, &opts))
        .map_err(to_py_err)?;
    Ok(PyDualSolution { inner })
}

/// Vortex-free unit profile `f₁` (Δf = f + 1, zero boundary values).
#[pyfunction]
fn unit_profile(py: Python<'_>, domain: &PyDomain) -> PyResult<PyField> {
    let inner = py.detach(|| critical::unit_profile(&domain.inner)).map_err(to_py_err)?;
    Ok(PyField { inner })
}

#[pyfunction]
fn lambda_cr1(py: Python<'_>, domain: &PyDomain, gamma: f64) -> PyResult<f64> {
    py.detach(|| critical::lambda_cr1(&domain.inner, gamma)).map_err(to_py_err)
}

/// Critical fields `λ_cr1 … λ_crJ` with scenario thresholds.
#[pyfunction]
#[pyo3(signature = (domain, gamma, levels, bisect_tol = 1e-4, tol = 1e-8))]
fn critical_ladder<'py>(
    py: Python<'py>,
    domain: &PyDomain,
    gamma: f64,
    levels: usize,
    bisect_tol: f64,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = DualOptions::with_tol(tol);
    let ladder = py
        .detach(|| critical::critical_ladder(&domain.inner, gamma, levels, bisect_tol, &opts))
        .map_err(to_py_err)?;
    to_python(py, &ladder)
}

#[pyfunction]
fn phi(d: f64) -> PyResult<f64> {
    mult::phi(d).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (f, gamma, levels = None))]
fn phi_star(f: f64, gamma: f64, levels: Option<u32>) -> PyResult<f64> {
    let g = gamma_of(gamma)?;
    match levels {
        Some(j) => mult::phi_star_truncated(f, g, j),
        None => mult::phi_star(f, g),
    }
    .map_err(to_py_err)
}

#[pyfunction]
fn phi_star_mollified(f: f64, gamma: f64, delta: f64) -> PyResult<f64> {
    mult::phi_star_mollified(f, gamma_of(gamma)?, delta).map_err(to_py_err)
}

/// Cell problem minimum and a minimizing partition `{k: μ_k}`.
#[pyfunction]
#[pyo3(signature = (d, truncation = None))]
fn cell_minimum(d: f64, truncation: Option<i64>) -> PyResult<(f64, BTreeMap<i64, f64>)> {
    let k = truncation.unwrap_or_else(|| mult::default_truncation(d));
    let (value, tuple) = mult::cell_minimum_oracle(d, k).map_err(to_py_err)?;
    Ok((value, tuple.weights().clone()))
}

/// Sampled Legendre transform of `πγΦ(κ/2π)`.
#[pyfunction]
fn legendre_numeric(f: f64, gamma: f64, kappa_range: f64, kappa_step: f64) -> PyResult<f64> {
    let est = mult::legendre_numeric(f, gamma_of(gamma)?, kappa_range, kappa_step).map_err(to_py_err)?;
    if !est.reliable {
        return Err(PyValueError::new_err("supremum sits on the edge of the κ range"));
    }
    Ok(est.value)
}

/// An ε-lattice of pinning holes inside a domain.
#[pyclass(name = "MicroProblem", frozen)]
struct PyMicroProblem {
    inner: micro::MicroProblem,
}

#[pymethods]
impl PyMicroProblem {
    #[new]
    fn new(domain: &PyDomain, epsilon: f64, lambda_: f64, gamma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: micro::build_micro(&domain.inner, epsilon, lambda_, gamma).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn hole_count(&self) -> usize {
        self.inner.hole_count()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    /// Lattice cell `(cx, cy)` of each hole.
    fn cells(&self) -> Vec<(usize, usize)> {
        self.inner.holes().iter().map(|h| h.cell).collect()
    }

    /// Energy breakdown `{field_part, self_part, total}` of a degree list.
    fn energy<'py>(&self, py: Python<'py>, degrees: Vec<i64>) -> PyResult<Bound<'py, PyAny>> {
        let d = DegreeAssignment { d: degrees };
        let e = py.detach(|| micro::micro_energy(&self.inner, &d)).map_err(to_py_err)?;
        to_python(py, &e)
    }

    /// Integer minimization: descent by default, exhaustive with `exact=True`.
    #[pyo3(signature = (exact = false, d_max = 2, max_holes = 9))]
    fn minimize<'py>(
        &self,
        py: Python<'py>,
        exact: bool,
        d_max: i64,
        max_holes: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = if exact {
            MinimizeOptions::exact(d_max, max_holes)
        } else {
            MinimizeOptions::default()
        };
        let r = py
            .detach(|| micro::minimize_degrees(&self.inner, &opts))
            .map_err(to_py_err)?;
        let out = PyDict::new(py);
        out.set_item("degrees", r.degrees.d.clone())?;
        out.set_item("energy", to_python(py, &r.energy)?)?;
        out.set_item("model_energy", r.model_energy)?;
        out.set_item("steps", r.steps)?;
        Ok(out)
    }

    /// Block recovery construction for a target vorticity.
    fn recovery(&self, py: Python<'_>, target: &PyField, m: usize) -> PyResult<Vec<i64>> {
        let rec = py
            .detach(|| micro::recovery_sequence(&self.inner, &target.inner, m))
            .map_err(to_py_err)?;
        Ok(rec.degrees.d)
    }

    /// Empirical fractions `{k: μ_k field}` of a degree list on `(2M+1)`-blocks.
    fn partition(&self, degrees: Vec<i64>, m: usize) -> PyResult<BTreeMap<i64, PyField>> {
        let d = DegreeAssignment { d: degrees };
        let part = micro::empirical_partition(&self.inner, &d, m).map_err(to_py_err)?;
        Ok(part.mu.into_iter().map(|(k, f)| (k, PyField { inner: f })).collect())
    }
}

#[pymodule]
mod vortex_pinning {
    #[pymodule_export]
    use super::{
        cell_minimum, critical_ladder, lambda_cr1, legendre_numeric, phi, phi_star, phi_star_mollified,
        solve_dual, unit_profile, PyDomain, PyDualSolution, PyField, PyMicroProblem,
    };
}
