//! Degree assignments on an ε-lattice of pinning holes.
//!
//! Holes are never resolved on the grid. A hole of degree `d` contributes the
//! uniform source `2π d` on its cell `Π_j` and the self-energy `πγε² d²`.
//! For a fixed problem the energy is an exact quadratic form
//! `½ dᵀQd + bᵀd + c`, which drives the integer minimization.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dual::{solve_dual, verify_duality, DualMode, DualOptions};
use crate::error::{Error, Result};
use crate::grid::{energy_e1, same_domain, solve_london, GridDomain, ScalarField};
use crate::multiplicity::PinningStrength;

const SOLVE_TOL: f64 = 1e-10;
/// Slack on cell-edge coordinates so that nodes on a cell edge are assigned consistently.
const EDGE_EPS: f64 = 1e-9;
/// Block means within this distance of an integer are treated as that integer.
const SNAP_EPS: f64 = 1e-9;

/// One lattice cell `Π_j` carrying a hole at its center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    /// Lattice cell index `(cx, cy)`.
    pub cell: (usize, usize),
    pub center: (f64, f64),
    /// Grid nodes of the half-open cell `[x₀, x₀+ε) × [y₀, y₀+ε)`.
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MicroProblem {
    domain: Arc<GridDomain>,
    epsilon: f64,
    lambda: f64,
    gamma: f64,
    cells_per_side: usize,
    holes: Vec<Hole>,
    /// Hole index per node, `usize::MAX` outside every admitted cell.
    cell_of_node: Vec<usize>,
}

impl MicroProblem {
    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn holes(&self) -> &[Hole] {
        &self.holes
    }

    /// `N_ε`.
    pub fn hole_count(&self) -> usize {
        self.holes.len()
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    pub fn hole_of_node(&self, node: usize) -> Option<usize> {
        let j = self.cell_of_node[node];
        (j != usize::MAX).then_some(j)
    }

    /// Hole radius scale `ρ_ε = e^{−γ/ε²}`; metadata only.
    pub fn rho(&self) -> f64 {
        (-self.gamma / (self.epsilon * self.epsilon)).exp()
    }

    /// Grid nodes per cell side, `ε / h`.
    pub fn nodes_per_cell(&self) -> f64 {
        self.epsilon / self.domain.h()
    }

    /// Same lattice with another field strength.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::Domain(format!("lambda must be finite, got {lambda}")));
        }
        Ok(Self {
            lambda,
            ..self.clone()
        })
    }
}

/// Lays the ε-lattice over the bounding box and keeps cells whose closed
/// footprint is entirely interior.
pub fn build_micro(domain: &Arc<GridDomain>, epsilon: f64, lambda: f64, gamma: f64) -> Result<MicroProblem> {
    let gamma = PinningStrength::new(gamma)?.value();
    if !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be finite, got {lambda}")));
    }
    let h = domain.h();
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if epsilon < 4.0 * h * (1.0 - EDGE_EPS) {
        return Err(Error::Grid(format!(
            "epsilon {epsilon} resolves fewer than 4 grid spacings (h = {h})"
        )));
    }
    let n = domain.n();
    let side = domain.side();
    let (ox, oy) = domain.origin();
    let cells = (side / epsilon + EDGE_EPS).floor() as usize;
    let ratio = h / epsilon;

    let mut holes = Vec::new();
    let mut cell_of_node = vec![usize::MAX; domain.len()];
    for cy in 0..cells {
        for cx in 0..cells {
            // closed footprint index ranges
            let lo = |c: usize| ((c as f64 / ratio) - EDGE_EPS).ceil().max(0.0) as usize;
            let hi = |c: usize| (((c + 1) as f64 / ratio) + EDGE_EPS).floor().min((n - 1) as f64) as usize;
            let (x0, x1, y0, y1) = (lo(cx), hi(cx), lo(cy), hi(cy));
            let admitted = (y0..=y1).all(|iy| (x0..=x1).all(|ix| domain.is_interior(domain.index(ix, iy))));
            if !admitted {
                continue;
            }
            let mut nodes = Vec::new();
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    let inside_x = ((ix as f64 * ratio) + EDGE_EPS).floor() as usize == cx;
                    let inside_y = ((iy as f64 * ratio) + EDGE_EPS).floor() as usize == cy;
                    if inside_x && inside_y {
                        nodes.push(domain.index(ix, iy));
                    }
                }
            }
            let j = holes.len();
            for &node in &nodes {
                cell_of_node[node] = j;
            }
            holes.push(Hole {
                cell: (cx, cy),
                center: (ox + (cx as f64 + 0.5) * epsilon, oy + (cy as f64 + 0.5) * epsilon),
                nodes,
            });
        }
    }
    Ok(MicroProblem {
        domain: domain.clone(),
        epsilon,
        lambda,
        gamma,
        cells_per_side: cells,
        holes,
        cell_of_node,
    })
}

/// Integer degree `d_j` per hole.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeAssignment {
    pub d: Vec<i64>,
}

impl DegreeAssignment {
    pub fn zeros(holes: usize) -> Self {
        Self { d: vec![0; holes] }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn sum_squares(&self) -> i64 {
        self.d.iter().map(|d| d * d).sum()
    }

    /// `ε² Σ d_j²`.
    pub fn scaled_sum_squares(&self, epsilon: f64) -> f64 {
        epsilon * epsilon * self.sum_squares() as f64
    }

    fn check(&self, problem: &MicroProblem) -> Result<()> {
        if self.d.len() != problem.hole_count() {
            return Err(Error::InvalidParameter(format!(
                "assignment has {} degrees for {} holes",
                self.d.len(),
                problem.hole_count()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroEnergyBreakdown {
    /// `Ē₁(h̄)` of the spread-source solve.
    pub field_part: f64,
    /// `πγε² Σ d_j²`.
    pub self_part: f64,
    pub total: f64,
}

/// `D^ε = d_j` on `Π_j`, zero elsewhere.
pub fn spread_vorticity(problem: &MicroProblem, degrees: &DegreeAssignment) -> Result<ScalarField> {
    degrees.check(problem)?;
    let mut d = ScalarField::zeros(&problem.domain);
    let values = d.values_mut();
    for (hole, &deg) in problem.holes.iter().zip(&degrees.d) {
        for &node in &hole.nodes {
            values[node] = deg as f64;
        }
    }
    Ok(d)
}

/// Field energy of the spread source with boundary value `λ`, plus the self-energy.
pub fn micro_energy(problem: &MicroProblem, degrees: &DegreeAssignment) -> Result<MicroEnergyBreakdown> {
    let d = spread_vorticity(problem, degrees)?;
    let source = d.map(|v| 2.0 * PI * v);
    let hbar = solve_london(&problem.domain, &source, problem.lambda, SOLVE_TOL)?;
    let field_part = energy_e1(&hbar, problem.lambda);
    let self_part = PI * problem.gamma * degrees.scaled_sum_squares(problem.epsilon);
    Ok(MicroEnergyBreakdown {
        field_part,
        self_part,
        total: field_part + self_part,
    })
}

/// `E(d) = ½ dᵀQd + bᵀd + c` with columns of `Q` computed on demand.
///
/// `Q_ij = (2π)² h² Σ_{Π_i} G_j + 2πγε² δ_ij` with `G_j` the zero-boundary
/// London response to `𝟙_{Π_j}`; `b_j = −2πλ h² Σ_{Π_j} ψ` and
/// `c = ½ λ² h² Σ ψ` with `ψ` the response to `𝟙`.
#[derive(Debug, Clone)]
pub struct InteractionModel {
    problem: MicroProblem,
    columns: Vec<Option<Vec<f64>>>,
    b: Vec<f64>,
    c: f64,
    self_diag: f64,
}

impl InteractionModel {
    pub fn new(problem: &MicroProblem) -> Result<Self> {
        let domain = &problem.domain;
        let h2 = domain.h() * domain.h();
        let lambda = problem.lambda;
        let (b, c) = if lambda == 0.0 {
            (vec![0.0; problem.hole_count()], 0.0)
        } else {
            let one = ScalarField::constant(domain, 1.0);
            let psi = solve_london(domain, &one, 0.0, SOLVE_TOL)?;
            let b = problem
                .holes
                .iter()
                .map(|hole| -2.0 * PI * lambda * h2 * hole.nodes.iter().map(|&i| psi.at(i)).sum::<f64>())
                .collect();
            let c = 0.5 * lambda * lambda * h2 * psi.interior_values().sum::<f64>();
            (b, c)
        };
        Ok(Self {
            problem: problem.clone(),
            columns: vec![None; problem.hole_count()],
            b,
            c,
            self_diag: 2.0 * PI * problem.gamma * problem.epsilon * problem.epsilon,
        })
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn linear(&self) -> &[f64] {
        &self.b
    }

    pub fn constant(&self) -> f64 {
        self.c
    }

    /// Lower bound on every diagonal entry (the self-energy part).
    pub fn diag_floor(&self) -> f64 {
        self.self_diag
    }

    fn compute_column(problem: &MicroProblem, self_diag: f64, j: usize) -> Result<Vec<f64>> {
        let domain = &problem.domain;
        let h2 = domain.h() * domain.h();
        let mut indicator = ScalarField::zeros(domain);
        for &node in &problem.holes[j].nodes {
            indicator.values_mut()[node] = 1.0;
        }
        let g = solve_london(domain, &indicator, 0.0, SOLVE_TOL)?;
        let scale = 4.0 * PI * PI * h2;
        let mut col: Vec<f64> = problem
            .holes
            .iter()
            .map(|hole| scale * hole.nodes.iter().map(|&i| g.at(i)).sum::<f64>())
            .collect();
        col[j] += self_diag;
        Ok(col)
    }

    pub fn column(&mut self, j: usize) -> Result<&[f64]> {
        if self.columns[j].is_none() {
            self.columns[j] = Some(Self::compute_column(&self.problem, self.self_diag, j)?);
        }
        Ok(self.columns[j].as_deref().expect("column present"))
    }

    /// Fills every column, spreading the solves over `threads` workers.
    pub fn complete(&mut self, threads: usize) -> Result<()> {
        let missing: Vec<usize> = (0..self.len()).filter(|&j| self.columns[j].is_none()).collect();
        if missing.is_empty() {
            return Ok(());
        }
        let threads = threads.max(1).min(missing.len());
        let problem = &self.problem;
        let diag = self.self_diag;
        let chunk = missing.len().div_ceil(threads);
        let results: Vec<Vec<(usize, Result<Vec<f64>>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = missing
                .chunks(chunk)
                .map(|js| {
                    scope.spawn(move || {
                        js.iter()
                            .map(|&j| (j, Self::compute_column(problem, diag, j)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("column worker")).collect()
        });
        for (j, col) in results.into_iter().flatten() {
            self.columns[j] = Some(col?);
        }
        Ok(())
    }

    /// Dense `Q` (row-major); computes missing columns.
    pub fn matrix(&mut self, threads: usize) -> Result<Vec<f64>> {
        self.complete(threads)?;
        let n = self.len();
        let mut q = vec![0.0; n * n];
        for j in 0..n {
            let col = self.columns[j].as_ref().expect("column present");
            for i in 0..n {
                q[i * n + j] = col[i];
            }
        }
        Ok(q)
    }

    /// `½ dᵀQd + bᵀd + c`; computes the columns of nonzero degrees.
    pub fn energy(&mut self, degrees: &DegreeAssignment) -> Result<f64> {
        if degrees.len() != self.len() {
            return Err(Error::InvalidParameter("assignment size does not match the model".into()));
        }
        let mut total = self.c;
        for (j, &dj) in degrees.d.iter().enumerate() {
            if dj == 0 {
                continue;
            }
            let b = self.b[j];
            let col = self.column(j)?;
            let quad: f64 = degrees.d.iter().zip(col).map(|(&di, q)| di as f64 * q).sum();
            total += dj as f64 * (0.5 * quad + b);
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MinimizeMode {
    /// Lexicographic first-improvement `±1` moves until no single move helps.
    Descent,
    /// Exhaustive search over `d_j ∈ [−d_max, d_max]`.
    Exact { d_max: i64, max_holes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub mode: MinimizeMode,
    /// Workers for precomputing interaction columns.
    pub threads: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            mode: MinimizeMode::Descent,
            threads: 1,
        }
    }
}

impl MinimizeOptions {
    pub fn exact(d_max: i64, max_holes: usize) -> Self {
        Self {
            mode: MinimizeMode::Exact { d_max, max_holes },
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeResult {
    pub degrees: DegreeAssignment,
    /// Energy from a fresh London solve of the returned assignment.
    pub energy: MicroEnergyBreakdown,
    /// Energy according to the quadratic model.
    pub model_energy: f64,
    /// Accepted moves (descent) or assignments visited (exact).
    pub steps: u64,
}

pub fn minimize_degrees(problem: &MicroProblem, opts: &MinimizeOptions) -> Result<MinimizeResult> {
    let mut model = InteractionModel::new(problem)?;
    minimize_with_model(problem, &mut model, opts)
}

/// [`minimize_degrees`] reusing a model across calls.
pub fn minimize_with_model(
    problem: &MicroProblem,
    model: &mut InteractionModel,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult> {
    if model.len() != problem.hole_count() {
        return Err(Error::InvalidParameter("model built for another lattice".into()));
    }
    let (degrees, model_energy, steps) = match opts.mode {
        MinimizeMode::Descent => descend(model, DegreeAssignment::zeros(problem.hole_count()))?,
        MinimizeMode::Exact { d_max, max_holes } => exhaustive(model, d_max, max_holes, opts.threads)?,
    };
    let energy = micro_energy(problem, &degrees)?;
    Ok(MinimizeResult {
        degrees,
        energy,
        model_energy,
        steps,
    })
}

/// Coordinate descent with `±1` moves from `start`.
pub fn descend(model: &mut InteractionModel, start: DegreeAssignment) -> Result<(DegreeAssignment, f64, u64)> {
    let n = model.len();
    let mut d = start;
    let mut energy = model.energy(&d)?;
    // gradient Qd + b
    let mut grad = model.b.clone();
    for j in 0..n {
        if d.d[j] != 0 {
            let dj = d.d[j] as f64;
            let col = model.column(j)?;
            for (g, q) in grad.iter_mut().zip(col) {
                *g += dj * q;
            }
        }
    }
    let floor = model.diag_floor();
    let mut moves = 0u64;
    loop {
        let mut improved = false;
        for j in 0..n {
            for step in [1i64, -1] {
                let s = step as f64;
                // ΔE = s·g_j + ½Q_jj, and Q_jj ≥ floor
                if s * grad[j] + 0.5 * floor >= 0.0 {
                    continue;
                }
                let col = model.column(j)?;
                let delta = s * grad[j] + 0.5 * col[j];
                let scale = energy.abs().max(col[j]).max(f64::MIN_POSITIVE);
                if delta < -1e-12 * scale {
                    d.d[j] += step;
                    for (g, q) in grad.iter_mut().zip(col) {
                        *g += s * q;
                    }
                    energy += delta;
                    moves += 1;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok((d, energy, moves))
}

fn exhaustive(
    model: &mut InteractionModel,
    d_max: i64,
    max_holes: usize,
    threads: usize,
) -> Result<(DegreeAssignment, f64, u64)> {
    let n = model.len();
    if n > max_holes {
        return Err(Error::Refused(format!(
            "exact search over {n} holes exceeds the cap of {max_holes}"
        )));
    }
    if d_max < 0 {
        return Err(Error::InvalidParameter(format!("d_max must be nonnegative, got {d_max}")));
    }
    let q = model.matrix(threads)?;
    let b = model.b.clone();
    let mut d = vec![-d_max; n];
    let mut best = (f64::INFINITY, d.clone());
    let mut visited = 0u64;
    loop {
        let mut e = model.c;
        for i in 0..n {
            if d[i] == 0 {
                continue;
            }
            let di = d[i] as f64;
            let row = &q[i * n..(i + 1) * n];
            let qd: f64 = row.iter().zip(&d).map(|(q, &dj)| q * dj as f64).sum();
            e += di * (0.5 * qd + b[i]);
        }
        visited += 1;
        if e < best.0 {
            best = (e, d.clone());
        }
        // odometer increment
        let mut k = 0;
        while k < n && d[k] == d_max {
            d[k] = -d_max;
            k += 1;
        }
        if k == n {
            break;
        }
        d[k] += 1;
    }
    Ok((DegreeAssignment { d: best.1 }, best.0, visited))
}

/// A `(2M+1) × (2M+1)` block of lattice cells, all admitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Hole indices in row-major order within the block.
    pub holes: Vec<usize>,
    /// Lower-left lattice cell of the block.
    pub origin: (usize, usize),
}

/// Full blocks of side `2M+1` anchored at the lowest admitted cell indices.
pub fn tile_blocks(problem: &MicroProblem, m: usize) -> Result<Vec<Block>> {
    if m == 0 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    if problem.holes.is_empty() {
        return Ok(Vec::new());
    }
    let side = 2 * m + 1;
    let cells = problem.cells_per_side;
    let mut lookup = vec![usize::MAX; cells * cells];
    for (j, hole) in problem.holes.iter().enumerate() {
        lookup[hole.cell.1 * cells + hole.cell.0] = j;
    }
    let x0 = problem.holes.iter().map(|h| h.cell.0).min().expect("nonempty");
    let y0 = problem.holes.iter().map(|h| h.cell.1).min().expect("nonempty");
    let mut blocks = Vec::new();
    let mut by = y0;
    while by + side <= cells {
        let mut bx = x0;
        while bx + side <= cells {
            let holes: Vec<usize> = (by..by + side)
                .flat_map(|cy| (bx..bx + side).map(move |cx| (cx, cy)))
                .map(|(cx, cy)| lookup[cy * cells + cx])
                .collect();
            if holes.iter().all(|&j| j != usize::MAX) {
                blocks.push(Block { holes, origin: (bx, by) });
            }
            bx += side;
        }
        by += side;
    }
    Ok(blocks)
}

/// Per-block recovery data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryBlock {
    pub origin: (usize, usize),
    /// Block mean `D_k` of the target.
    pub mean: f64,
    /// Integer part `d_k`.
    pub degree: i64,
    /// Weight `α_k` with `D_k = α_k d_k + (1 − α_k)(d_k + 1)`.
    pub alpha: f64,
    /// Number `R` of holes given degree `d_k`.
    pub low_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub degrees: DegreeAssignment,
    pub m: usize,
    pub blocks: Vec<RecoveryBlock>,
}

/// Upper-bound construction: per full block, `R = ⌊α (2M+1)²⌋` holes get
/// `d_k` and the rest `d_k + 1`; holes outside full blocks get 0.
pub fn recovery_sequence(problem: &MicroProblem, target: &ScalarField, m: usize) -> Result<Recovery> {
    same_domain(&problem.domain, target.domain())?;
    let blocks = tile_blocks(problem, m)?;
    let mut degrees = DegreeAssignment::zeros(problem.hole_count());
    let mut summary = Vec::with_capacity(blocks.len());
    for block in &blocks {
        let (mut sum, mut count) = (0.0, 0usize);
        for &j in &block.holes {
            for &node in &problem.holes[j].nodes {
                sum += target.at(node);
                count += 1;
            }
        }
        let mut mean = sum / count as f64;
        if !mean.is_finite() {
            return Err(Error::InvalidParameter("target vorticity is not finite on a block".into()));
        }
        if (mean - mean.round()).abs() <= SNAP_EPS {
            mean = mean.round();
        }
        let degree = mean.floor() as i64;
        let alpha = degree as f64 + 1.0 - mean;
        let size = block.holes.len();
        let low = ((alpha * size as f64) + SNAP_EPS).floor() as usize;
        let low = low.min(size);
        // spread the R low-degree holes evenly through the block
        for (q, &j) in block.holes.iter().enumerate() {
            let takes_low = (q + 1) * low / size > q * low / size;
            degrees.d[j] = if takes_low { degree } else { degree + 1 };
        }
        summary.push(RecoveryBlock {
            origin: block.origin,
            mean,
            degree,
            alpha,
            low_count: low,
        });
    }
    Ok(Recovery {
        degrees,
        m,
        blocks: summary,
    })
}

/// Empirical multiplicity fractions `μ_k` and the induced `D^ε = Σ k μ_k`.
#[derive(Debug, Clone)]
pub struct EmpiricalPartition {
    pub m: usize,
    pub mu: BTreeMap<i64, ScalarField>,
    pub d_eps: ScalarField,
    /// Degree counts per full block.
    pub block_counts: Vec<BTreeMap<i64, usize>>,
}

impl EmpiricalPartition {
    /// `Σ_k μ_k` at every interior node.
    pub fn total(&self) -> ScalarField {
        let domain = self.d_eps.domain();
        let mut sum = ScalarField::zeros(domain);
        for field in self.mu.values() {
            for &node in domain.interior() {
                sum.values_mut()[node] += field.at(node);
            }
        }
        sum
    }

    /// `Σ_k k² ∫ μ_k`.
    pub fn second_moment(&self) -> f64 {
        self.mu.iter().map(|(&k, f)| (k * k) as f64 * f.integral()).sum()
    }
}

/// Block fractions of each degree on full blocks; a leftover hole keeps its
/// own degree on its cell and nodes outside all cells get `μ₀ = 1`.
pub fn empirical_partition(problem: &MicroProblem, degrees: &DegreeAssignment, m: usize) -> Result<EmpiricalPartition> {
    degrees.check(problem)?;
    let blocks = tile_blocks(problem, m)?;
    let domain = &problem.domain;
    let mut weights: Vec<BTreeMap<i64, f64>> = vec![BTreeMap::new(); domain.len()];
    let mut covered = vec![false; problem.hole_count()];
    let mut block_counts = Vec::with_capacity(blocks.len());
    for block in &blocks {
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for &j in &block.holes {
            *counts.entry(degrees.d[j]).or_default() += 1;
            covered[j] = true;
        }
        let size = block.holes.len() as f64;
        for &j in &block.holes {
            for &node in &problem.holes[j].nodes {
                weights[node] = counts.iter().map(|(&k, &c)| (k, c as f64 / size)).collect();
            }
        }
        block_counts.push(counts);
    }
    for (j, hole) in problem.holes.iter().enumerate() {
        if !covered[j] {
            for &node in &hole.nodes {
                weights[node] = BTreeMap::from([(degrees.d[j], 1.0)]);
            }
        }
    }
    for &node in domain.interior() {
        if weights[node].is_empty() {
            weights[node].insert(0, 1.0);
        }
    }
    let mut mu: BTreeMap<i64, ScalarField> = BTreeMap::new();
    let mut d_eps = ScalarField::zeros(domain);
    for &node in domain.interior() {
        let mut mean = 0.0;
        for (&k, &w) in &weights[node] {
            mu.entry(k).or_insert_with(|| ScalarField::zeros(domain)).values_mut()[node] = w;
            mean += k as f64 * w;
        }
        d_eps.values_mut()[node] = mean;
    }
    Ok(EmpiricalPartition {
        m,
        mu,
        d_eps,
        block_counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaOptions {
    pub dual: DualOptions,
    pub minimize: MinimizeOptions,
    /// Block half-width `M` for the block-averaged vorticity error.
    pub block_m: usize,
}

impl Default for GammaOptions {
    fn default() -> Self {
        Self {
            dual: DualOptions::default(),
            minimize: MinimizeOptions::default(),
            block_m: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub epsilon: f64,
    pub holes: usize,
    pub micro_energy: f64,
    pub limit_energy: f64,
    /// `|micro − limit|`.
    pub gap: f64,
    pub relative_gap: f64,
    /// `‖D^ε_blocks − D*‖₂`.
    pub vorticity_error: f64,
    /// `ε² Σ d_j²` of the minimizer.
    pub degree_bound: f64,
    pub moves: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub lambda: f64,
    pub gamma: f64,
    /// `min E₀ = E₀(D*)`.
    pub limit_energy: f64,
    pub rows: Vec<GammaRow>,
}

impl GammaReport {
    /// Gaps nonincreasing along the sweep, up to `floor`.
    pub fn gaps_decrease(&self, floor: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].gap <= w[0].gap + floor)
    }

    /// `(max − min) / max` of the degree bound over the sweep (0 when all vanish).
    pub fn degree_bound_spread(&self) -> f64 {
        let max = self.rows.iter().map(|r| r.degree_bound).fold(0.0, f64::max);
        let min = self.rows.iter().map(|r| r.degree_bound).fold(f64::INFINITY, f64::min);
        if max > 0.0 {
            (max - min) / max
        } else {
            0.0
        }
    }
}

/// Minimized micro energies against the limit minimum along a decreasing ε sweep.
pub fn gamma_convergence_report(
    domain: &Arc<GridDomain>,
    lambda: f64,
    gamma: f64,
    epsilons: &[f64],
    opts: &GammaOptions,
) -> Result<GammaReport> {
    if epsilons.is_empty() {
        return Err(Error::InvalidParameter("epsilon list is empty".into()));
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("epsilons must be strictly decreasing".into()));
    }
    let problems = epsilons
        .iter()
        .map(|&eps| build_micro(domain, eps, lambda, gamma))
        .collect::<Result<Vec<_>>>()?;
    let sol = solve_dual(domain, lambda, gamma, DualMode::FullPhiStar, &opts.dual)?;
    if !sol.converged {
        return Err(Error::NoConvergence {
            iterations: sol.iterations,
            residual: sol.final_update,
        });
    }
    let limit = verify_duality(&sol, 1.0)?;
    let d_star = limit.vorticity.clone().expect("vorticity present");
    let limit_energy = limit.e0;
    let h2 = domain.h() * domain.h();
    let mut rows = Vec::with_capacity(problems.len());
    for problem in &problems {
        let result = minimize_degrees(problem, &opts.minimize)?;
        let partition = empirical_partition(problem, &result.degrees, opts.block_m)?;
        let diff = partition.d_eps.zip_with(&d_star, |a, b| a - b)?;
        let err = (h2 * diff.interior_values().map(|v| v * v).sum::<f64>()).sqrt();
        let gap = (result.energy.total - limit_energy).abs();
        rows.push(GammaRow {
            epsilon: problem.epsilon,
            holes: problem.hole_count(),
            micro_energy: result.energy.total,
            limit_energy,
            gap,
            relative_gap: if limit_energy != 0.0 { gap / limit_energy.abs() } else { gap },
            vorticity_error: err,
            degree_bound: result.degrees.scaled_sum_squares(problem.epsilon),
            moves: result.steps,
        });
    }
    Ok(GammaReport {
        lambda,
        gamma,
        limit_energy,
        rows,
    })
}
