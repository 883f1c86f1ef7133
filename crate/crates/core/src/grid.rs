//! Uniform-grid finite differences for the London operator `−Δu + u`.
//!
//! Nodes are classified as interior (unknowns), boundary (Dirichlet data) or
//! exterior. Every interior node carries four arm lengths `θh`, `0 < θ ≤ 1`;
//! an arm shorter than `h` ends on a curved boundary. The discrete operator
//!
//! ```text
//! (L u)_i = Σ_arms (u_i − u_arm) / (θ h²) + u_i
//! ```
//!
//! is the gradient of the discrete energy `½ Σ_edges (u_i − u_j)²/θ + ½ h² Σ_i u_i²`,
//! so it is symmetric positive definite and the solver, the energy quadrature
//! and the dual functional all share one variational structure.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible arm fraction on a cut edge.
pub const MIN_ARM_FRACTION: f64 = 1e-3;

/// Smallest grid accepted by [`GridDomain::build`].
pub const MIN_NODES: usize = 5;

/// East, west, north, south.
const DIRECTIONS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Exterior,
    Interior,
    Boundary,
}

impl NodeKind {
    fn code(self) -> u8 {
        match self {
            NodeKind::Exterior => 0,
            NodeKind::Interior => 1,
            NodeKind::Boundary => 2,
        }
    }
}

/// Node classification read from a mask file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    pub n_rows: usize,
    pub n_cols: usize,
    pub kinds: Vec<NodeKind>,
}

impl MaskGrid {
    /// Parses `"n_rows n_cols"` followed by rows of `0`/`1`/`2` codes
    /// (exterior/interior/boundary), whitespace-separated or packed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty mask file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad mask header {header:?}: {e}")))?;
        let [n_rows, n_cols] = dims[..] else {
            return Err(Error::Parse(format!("mask header must be \"n_rows n_cols\", got {header:?}")));
        };
        let mut kinds = Vec::with_capacity(n_rows * n_cols);
        for (r, line) in lines.enumerate() {
            let row: Vec<NodeKind> = line
                .chars()
                .filter(|c| !c.is_whitespace() && *c != ',')
                .map(|c| match c {
                    '0' => Ok(NodeKind::Exterior),
                    '1' => Ok(NodeKind::Interior),
                    '2' => Ok(NodeKind::Boundary),
                    other => Err(Error::Parse(format!("row {r}: invalid mask code {other:?}"))),
                })
                .collect::<Result<_>>()?;
            if row.len() != n_cols {
                return Err(Error::Parse(format!(
                    "row {r} has {} entries, expected {n_cols}",
                    row.len()
                )));
            }
            kinds.extend(row);
        }
        if kinds.len() != n_rows * n_cols {
            return Err(Error::Parse(format!(
                "mask has {} rows, expected {n_rows}",
                kinds.len() / n_cols.max(1)
            )));
        }
        Ok(Self { n_rows, n_cols, kinds })
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            let row: Vec<String> = (0..self.n_cols)
                .map(|c| self.kinds[r * self.n_cols + c].code().to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainShape {
    /// `[0, 1]²`, boundary nodes on the box edges.
    UnitSquare,
    /// `|x| < 1` inside the box `[−1, 1]²`, with cut arms at the circle.
    UnitDisk,
    /// Explicit node classification on `[0, 1]²`.
    Mask(MaskGrid),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    UnitSquare,
    UnitDisk,
    Mask,
}

/// A masked uniform `n × n` grid over a square bounding box.
#[derive(Debug, Clone)]
pub struct GridDomain {
    shape: ShapeKind,
    n: usize,
    h: f64,
    origin: (f64, f64),
    kinds: Vec<NodeKind>,
    interior: Vec<usize>,
    /// Position of each node in `interior`, `usize::MAX` otherwise.
    slot: Vec<usize>,
    neighbors: Vec<[usize; 4]>,
    arms: Vec<[f64; 4]>,
}

impl GridDomain {
    pub fn build(shape: &DomainShape, n: usize) -> Result<Arc<Self>> {
        let domain = match shape {
            DomainShape::UnitSquare => {
                check_n(n)?;
                let h = 1.0 / (n - 1) as f64;
                let mut kinds = vec![NodeKind::Exterior; n * n];
                for iy in 0..n {
                    for ix in 0..n {
                        let edge_x = ix == 0 || ix == n - 1;
                        let edge_y = iy == 0 || iy == n - 1;
                        kinds[iy * n + ix] = match (edge_x, edge_y) {
                            (false, false) => NodeKind::Interior,
                            (true, true) => NodeKind::Exterior,
                            _ => NodeKind::Boundary,
                        };
                    }
                }
                Self::assemble(ShapeKind::UnitSquare, n, h, (0.0, 0.0), kinds, |_, _, _| 1.0)?
            }
            DomainShape::UnitDisk => {
                check_n(n)?;
                let h = 2.0 / (n - 1) as f64;
                let origin = (-1.0, -1.0);
                let coord = |i: usize| -1.0 + i as f64 * h;
                let mut kinds = vec![NodeKind::Exterior; n * n];
                for iy in 0..n {
                    for ix in 0..n {
                        let (x, y) = (coord(ix), coord(iy));
                        if x * x + y * y < 1.0 {
                            kinds[iy * n + ix] = NodeKind::Interior;
                        }
                    }
                }
                mark_boundary_ring(n, &mut kinds);
                let arm = move |node: usize, dir: usize, nb_kind: NodeKind| {
                    if nb_kind == NodeKind::Interior {
                        return 1.0;
                    }
                    let (x, y) = (coord(node % n), coord(node / n));
                    let theta = match dir {
                        0 => ((1.0 - y * y).sqrt() - x) / h,
                        1 => (x + (1.0 - y * y).sqrt()) / h,
                        2 => ((1.0 - x * x).sqrt() - y) / h,
                        _ => (y + (1.0 - x * x).sqrt()) / h,
                    };
                    theta.clamp(MIN_ARM_FRACTION, 1.0)
                };
                Self::assemble(ShapeKind::UnitDisk, n, h, origin, kinds, arm)?
            }
            DomainShape::Mask(mask) => {
                if mask.n_rows != mask.n_cols {
                    return Err(Error::Grid(format!(
                        "mask must be square, got {} x {}",
                        mask.n_rows, mask.n_cols
                    )));
                }
                let n = mask.n_rows;
                check_n(n)?;
                let h = 1.0 / (n - 1) as f64;
                Self::assemble(ShapeKind::Mask, n, h, (0.0, 0.0), mask.kinds.clone(), |_, _, _| 1.0)?
            }
        };
        Ok(Arc::new(domain))
    }

    fn assemble(
        shape: ShapeKind,
        n: usize,
        h: f64,
        origin: (f64, f64),
        kinds: Vec<NodeKind>,
        arm: impl Fn(usize, usize, NodeKind) -> f64,
    ) -> Result<Self> {
        let mut interior = Vec::new();
        let mut slot = vec![usize::MAX; n * n];
        let mut neighbors = Vec::new();
        let mut arms = Vec::new();
        for node in 0..n * n {
            if kinds[node] != NodeKind::Interior {
                continue;
            }
            let (ix, iy) = ((node % n) as isize, (node / n) as isize);
            let mut nb = [0usize; 4];
            let mut th = [1.0f64; 4];
            for (dir, (dx, dy)) in DIRECTIONS.iter().enumerate() {
                let (jx, jy) = (ix + dx, iy + dy);
                if jx < 0 || jy < 0 || jx >= n as isize || jy >= n as isize {
                    return Err(Error::Grid(format!(
                        "interior node ({ix}, {iy}) touches the edge of the bounding box"
                    )));
                }
                let j = jy as usize * n + jx as usize;
                if kinds[j] == NodeKind::Exterior {
                    return Err(Error::Grid(format!(
                        "interior node ({ix}, {iy}) has an exterior neighbor"
                    )));
                }
                nb[dir] = j;
                th[dir] = arm(node, dir, kinds[j]);
            }
            slot[node] = interior.len();
            interior.push(node);
            neighbors.push(nb);
            arms.push(th);
        }

        let domain = Self {
            shape,
            n,
            h,
            origin,
            kinds,
            interior,
            slot,
            neighbors,
            arms,
        };
        domain.validate()?;
        Ok(domain)
    }

    fn validate(&self) -> Result<()> {
        if self.interior.is_empty() {
            return Err(Error::Grid("domain has no interior nodes".into()));
        }
        if !self.kinds.contains(&NodeKind::Boundary) {
            return Err(Error::Grid("boundary mask is empty".into()));
        }
        let n = self.n;

        // interior must form one 4-connected component
        let mut seen = vec![false; n * n];
        let mut queue = VecDeque::from([self.interior[0]]);
        seen[self.interior[0]] = true;
        let mut reached = 0;
        while let Some(node) = queue.pop_front() {
            reached += 1;
            for &j in &self.neighbors[self.slot[node]] {
                if self.kinds[j] == NodeKind::Interior && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if reached != self.interior.len() {
            return Err(Error::Grid(format!(
                "interior is disconnected ({reached} of {} nodes reachable)",
                self.interior.len()
            )));
        }

        // the complement must reach the bounding box frame: no enclosed holes
        let mut seen = vec![false; n * n];
        let mut queue = VecDeque::new();
        for i in 0..n {
            for node in [i, (n - 1) * n + i, i * n, i * n + n - 1] {
                if self.kinds[node] != NodeKind::Interior && !seen[node] {
                    seen[node] = true;
                    queue.push_back(node);
                }
            }
        }
        while let Some(node) = queue.pop_front() {
            let (ix, iy) = ((node % n) as isize, (node / n) as isize);
            for (dx, dy) in DIRECTIONS {
                let (jx, jy) = (ix + dx, iy + dy);
                if jx < 0 || jy < 0 || jx >= n as isize || jy >= n as isize {
                    continue;
                }
                let j = jy as usize * n + jx as usize;
                if self.kinds[j] != NodeKind::Interior && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(node) = (0..n * n).find(|&j| self.kinds[j] != NodeKind::Interior && !seen[j]) {
            return Err(Error::Grid(format!(
                "interior is not simply connected: enclosed hole at node ({}, {})",
                node % n,
                node / n
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> ShapeKind {
        self.shape
    }

    /// Nodes per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Side length of the bounding box.
    pub fn side(&self) -> f64 {
        self.h * (self.n - 1) as f64
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n + ix
    }

    pub fn coords(&self, node: usize) -> (f64, f64) {
        (
            self.origin.0 + (node % self.n) as f64 * self.h,
            self.origin.1 + (node / self.n) as f64 * self.h,
        )
    }

    /// Interior node indices in row-major order.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.kinds[node] == NodeKind::Interior
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        self.kinds.iter().map(|&k| k == NodeKind::Interior).collect()
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        self.kinds.iter().map(|&k| k == NodeKind::Boundary).collect()
    }

    /// Neighbor node indices (E, W, N, S) of the `slot`-th interior node.
    pub fn neighbors_of(&self, slot: usize) -> &[usize; 4] {
        &self.neighbors[slot]
    }

    /// Arm fractions `θ` (E, W, N, S) of the `slot`-th interior node.
    pub fn arms_of(&self, slot: usize) -> &[f64; 4] {
        &self.arms[slot]
    }

    /// Area carried by interior nodes, `h² · #interior`.
    pub fn area(&self) -> f64 {
        self.h * self.h * self.interior.len() as f64
    }

    pub fn mask(&self) -> MaskGrid {
        MaskGrid {
            n_rows: self.n,
            n_cols: self.n,
            kinds: self.kinds.clone(),
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < MIN_NODES {
        Err(Error::Grid(format!("need at least {MIN_NODES} nodes per side, got {n}")))
    } else {
        Ok(())
    }
}

/// Non-interior nodes 4-adjacent to an interior node become boundary nodes.
fn mark_boundary_ring(n: usize, kinds: &mut [NodeKind]) {
    let snapshot = kinds.to_vec();
    for iy in 0..n {
        for ix in 0..n {
            let node = iy * n + ix;
            if snapshot[node] == NodeKind::Interior {
                continue;
            }
            let adjacent = DIRECTIONS.iter().any(|(dx, dy)| {
                let (jx, jy) = (ix as isize + dx, iy as isize + dy);
                jx >= 0
                    && jy >= 0
                    && jx < n as isize
                    && jy < n as isize
                    && snapshot[jy as usize * n + jx as usize] == NodeKind::Interior
            });
            if adjacent {
                kinds[node] = NodeKind::Boundary;
            }
        }
    }
}

/// Real values on the nodes of a [`GridDomain`]; exterior nodes hold `NaN`.
#[derive(Debug, Clone)]
pub struct ScalarField {
    domain: Arc<GridDomain>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: Arc<GridDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values for {} nodes",
                values.len(),
                domain.len()
            )));
        }
        let mut values = values;
        for (node, v) in values.iter_mut().enumerate() {
            match domain.kind(node) {
                NodeKind::Exterior => *v = f64::NAN,
                NodeKind::Interior if !v.is_finite() => {
                    return Err(Error::Domain(format!("non-finite value at interior node {node}")))
                }
                _ => {}
            }
        }
        Ok(Self { domain, values })
    }

    /// Same value on interior and boundary nodes.
    pub fn constant(domain: &Arc<GridDomain>, c: f64) -> Self {
        Self::from_fn(domain, |_, _| c)
    }

    pub fn zeros(domain: &Arc<GridDomain>) -> Self {
        Self::constant(domain, 0.0)
    }

    pub fn from_fn(domain: &Arc<GridDomain>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..domain.len())
            .map(|node| match domain.kind(node) {
                NodeKind::Exterior => f64::NAN,
                _ => {
                    let (x, y) = domain.coords(node);
                    f(x, y)
                }
            })
            .collect();
        Self {
            domain: domain.clone(),
            values,
        }
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Value at the interior node nearest to `(x, y)`.
    pub fn sample_nearest(&self, x: f64, y: f64) -> f64 {
        let d = &self.domain;
        let (ox, oy) = d.origin();
        let ix = (((x - ox) / d.h()).round() as isize).clamp(0, d.n() as isize - 1) as usize;
        let iy = (((y - oy) / d.h()).round() as isize).clamp(0, d.n() as isize - 1) as usize;
        self.values[d.index(ix, iy)]
    }

    pub fn interior_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.domain.interior().iter().map(move |&i| self.values[i])
    }

    pub fn max_abs(&self) -> f64 {
        self.interior_values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.interior_values().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.interior_values().fold(f64::INFINITY, f64::min)
    }

    /// Midpoint-rule integral over interior nodes.
    pub fn integral(&self) -> f64 {
        let h = self.domain.h();
        h * h * self.interior_values().sum::<f64>()
    }

    pub fn norm_l2(&self) -> f64 {
        let h = self.domain.h();
        (h * h * self.interior_values().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Pointwise map over interior and boundary nodes.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(node, &v)| if self.domain.kind(node) == NodeKind::Exterior { f64::NAN } else { f(v) })
            .collect();
        Self {
            domain: self.domain.clone(),
            values,
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_domain(&self.domain, &other.domain)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(node, (&a, &b))| {
                if self.domain.kind(node) == NodeKind::Exterior {
                    f64::NAN
                } else {
                    f(a, b)
                }
            })
            .collect();
        Ok(Self {
            domain: self.domain.clone(),
            values,
        })
    }
}

pub(crate) fn same_domain(a: &Arc<GridDomain>, b: &Arc<GridDomain>) -> Result<()> {
    if Arc::ptr_eq(a, b) || (a.n == b.n && a.shape == b.shape && a.kinds == b.kinds) {
        Ok(())
    } else {
        Err(Error::InvalidParameter("fields live on different grids".into()))
    }
}

/// `−Δ_h u + u` on interior nodes; boundary and exterior nodes hold `NaN`.
pub fn apply_london(domain: &Arc<GridDomain>, u: &ScalarField) -> Result<ScalarField> {
    same_domain(domain, u.domain())?;
    let inv_h2 = 1.0 / (domain.h() * domain.h());
    let uv = u.values();
    let mut out = vec![f64::NAN; domain.len()];
    for (slot, &node) in domain.interior().iter().enumerate() {
        let ui = uv[node];
        let nb = domain.neighbors_of(slot);
        let th = domain.arms_of(slot);
        let flux: f64 = (0..4).map(|d| (ui - uv[nb[d]]) / th[d]).sum();
        out[node] = flux * inv_h2 + ui;
    }
    Ok(ScalarField {
        domain: domain.clone(),
        values: out,
    })
}

/// Maximum-norm residual `‖−Δ_h u + u − source‖∞` over interior nodes.
pub fn london_residual(domain: &Arc<GridDomain>, u: &ScalarField, source: &ScalarField) -> Result<f64> {
    same_domain(domain, source.domain())?;
    let lu = apply_london(domain, u)?;
    Ok(domain
        .interior()
        .iter()
        .map(|&i| (lu.values[i] - source.values[i]).abs())
        .fold(0.0, f64::max))
}

/// Solves `−Δ_h u + u = source` on interior nodes with `u = dirichlet` on the
/// boundary, by Jacobi-preconditioned conjugate gradients, to the residual
/// `‖−Δ_h u + u − source‖∞ ≤ tol (1 + ‖source‖∞)`.
pub fn solve_london(
    domain: &Arc<GridDomain>,
    source: &ScalarField,
    dirichlet: f64,
    tol: f64,
) -> Result<ScalarField> {
    same_domain(domain, source.domain())?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    if !dirichlet.is_finite() {
        return Err(Error::Domain(format!("dirichlet value must be finite, got {dirichlet}")));
    }
    let m = domain.interior_count();
    let h2 = domain.h() * domain.h();
    let src: Vec<f64> = domain.interior().iter().map(|&i| source.values[i]).collect();
    if let Some(bad) = src.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite source at interior node {}", domain.interior()[bad])));
    }
    let src_max = src.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let target = tol * (1.0 + src_max);

    // Shift by the constant boundary value: L(g + y) = s  ⇔  L y = s − g with
    // y = 0 on the boundary. Solve K y = h²(s − g), K = h² L on interior unknowns.
    let mut diag = vec![0.0; m];
    let rhs: Vec<f64> = src.iter().map(|s| h2 * (s - dirichlet)).collect();
    for (slot, d) in diag.iter_mut().enumerate() {
        *d = h2 + domain.arms_of(slot).iter().map(|t| 1.0 / t).sum::<f64>();
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        for slot in 0..m {
            let nb = domain.neighbors_of(slot);
            let th = domain.arms_of(slot);
            let xi = x[slot];
            let mut acc = h2 * xi;
            for k in 0..4 {
                let xj = if domain.is_interior(nb[k]) { x[domain.slot[nb[k]]] } else { 0.0 };
                acc += (xi - xj) / th[k];
            }
            out[slot] = acc;
        }
    };

    let mut y = vec![0.0; m];
    let mut r = vec![0.0; m];
    let mut z = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut q = vec![0.0; m];
    let max_iter = 50 * m + 1000;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut stalled = 0;

    // restart loop: the recursive residual drifts, so confirm with a true residual
    while iterations < max_iter {
        apply(&y, &mut q);
        for i in 0..m {
            r[i] = rhs[i] - q[i];
        }
        let true_residual = r.iter().fold(0.0f64, |a, v| a.max(v.abs())) / h2;
        if true_residual > 0.5 * residual {
            stalled += 1;
        }
        residual = residual.min(true_residual);
        if true_residual <= target || stalled >= 3 {
            residual = true_residual;
            break;
        }
        for i in 0..m {
            z[i] = r[i] / diag[i];
            p[i] = z[i];
        }
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut inner = 0;
        while iterations < max_iter {
            apply(&p, &mut q);
            let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
            if pq <= 0.0 {
                break;
            }
            let alpha = rz / pq;
            let mut rmax = 0.0f64;
            for i in 0..m {
                y[i] += alpha * p[i];
                r[i] -= alpha * q[i];
                rmax = rmax.max(r[i].abs());
            }
            iterations += 1;
            inner += 1;
            if rmax / h2 <= 0.25 * target || inner >= 4 * m + 100 {
                break;
            }
            let mut rz_new = 0.0;
            for i in 0..m {
                z[i] = r[i] / diag[i];
                rz_new += r[i] * z[i];
            }
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
    if residual > target {
        return Err(Error::NoConvergence { iterations, residual });
    }

    let mut values: Vec<f64> = domain
        .kinds()
        .iter()
        .map(|k| match k {
            NodeKind::Exterior => f64::NAN,
            _ => dirichlet,
        })
        .collect();
    for (slot, &node) in domain.interior().iter().enumerate() {
        values[node] = dirichlet + y[slot];
    }
    Ok(ScalarField {
        domain: domain.clone(),
        values,
    })
}

/// Discrete `½ Σ_edges (u_i − u_j)²/θ + ½ h² Σ_interior (u_i − λ)²`.
pub fn energy_e1(hbar: &ScalarField, lambda: f64) -> f64 {
    let domain = hbar.domain();
    let h2 = domain.h() * domain.h();
    let v = hbar.values();
    let mut grad = 0.0;
    let mut mass = 0.0;
    for (slot, &node) in domain.interior().iter().enumerate() {
        let nb = domain.neighbors_of(slot);
        let th = domain.arms_of(slot);
        for k in 0..4 {
            // interior-interior edges are visited from both ends: keep E and N
            if domain.is_interior(nb[k]) && (k == 1 || k == 3) {
                continue;
            }
            let diff = v[node] - v[nb[k]];
            grad += diff * diff / th[k];
        }
        let dm = v[node] - lambda;
        mass += dm * dm;
    }
    0.5 * grad + 0.5 * h2 * mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_square_counts() {
        let d = GridDomain::build(&DomainShape::UnitSquare, 33).unwrap();
        assert_eq!(d.interior_count(), 31 * 31);
        assert_abs_diff_eq!(d.h(), 1.0 / 32.0);
        assert_eq!(d.boundary_mask().iter().filter(|&&b| b).count(), 4 * 31);
    }

    #[test]
    fn unit_disk_interior_is_inside() {
        let d = GridDomain::build(&DomainShape::UnitDisk, 9).unwrap();
        for &i in d.interior() {
            let (x, y) = d.coords(i);
            assert!(x * x + y * y < 1.0);
        }
        for slot in 0..d.interior_count() {
            for &j in d.neighbors_of(slot) {
                assert_ne!(d.kind(j), NodeKind::Exterior);
            }
            for &t in d.arms_of(slot) {
                assert!((MIN_ARM_FRACTION..=1.0).contains(&t));
            }
        }
    }

    #[test]
    fn masks_are_disjoint() {
        let d = GridDomain::build(&DomainShape::UnitDisk, 41).unwrap();
        let im = d.interior_mask();
        let bm = d.boundary_mask();
        assert!(im.iter().zip(&bm).all(|(a, b)| !(a & b)));
    }

    #[test]
    fn rejects_small_grid() {
        assert!(GridDomain::build(&DomainShape::UnitSquare, 4).is_err());
    }

    fn square_mask(n: usize) -> MaskGrid {
        let d = GridDomain::build(&DomainShape::UnitSquare, n).unwrap();
        d.mask()
    }

    #[test]
    fn mask_round_trip() {
        let mask = square_mask(9);
        let parsed = MaskGrid::parse(&mask.to_text()).unwrap();
        assert_eq!(parsed, mask);
        let d = GridDomain::build(&DomainShape::Mask(parsed), 0).unwrap();
        assert_eq!(d.interior_count(), 49);
    }

    #[test]
    fn mask_with_hole_is_rejected() {
        let mut mask = square_mask(11);
        // punch a hole in the middle: one exterior node wrapped in boundary nodes
        let n = 11;
        mask.kinds[5 * n + 5] = NodeKind::Exterior;
        for (x, y) in [(4, 5), (6, 5), (5, 4), (5, 6)] {
            mask.kinds[y * n + x] = NodeKind::Boundary;
        }
        let err = GridDomain::build(&DomainShape::Mask(mask), 0).unwrap_err();
        assert!(err.to_string().contains("simply connected"), "{err}");
    }

    #[test]
    fn mask_disconnected_interior_is_rejected() {
        let mut mask = square_mask(11);
        let n = 11;
        for y in 1..n - 1 {
            mask.kinds[y * n + 5] = NodeKind::Boundary;
        }
        let err = GridDomain::build(&DomainShape::Mask(mask), 0).unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn mask_parse_errors() {
        assert!(MaskGrid::parse("").is_err());
        assert!(MaskGrid::parse("2 2\n01\n0").is_err());
        assert!(MaskGrid::parse("2 2\n01\n03").is_err());
        assert!(MaskGrid::parse("2\n01\n00").is_err());
        let packed = MaskGrid::parse("2 3\n012\n210\n").unwrap();
        assert_eq!(packed.kinds[1], NodeKind::Interior);
    }

    #[test]
    fn constant_solution() {
        for shape in [DomainShape::UnitSquare, DomainShape::UnitDisk] {
            let d = GridDomain::build(&shape, 33).unwrap();
            let src = ScalarField::constant(&d, 2.5);
            let u = solve_london(&d, &src, 2.5, 1e-12).unwrap();
            for v in u.interior_values() {
                assert_abs_diff_eq!(v, 2.5, epsilon = 1e-10);
            }
            let zero = solve_london(&d, &ScalarField::zeros(&d), 0.0, 1e-12).unwrap();
            assert_eq!(zero.max_abs(), 0.0);
        }
    }

    #[test]
    fn apply_inverts_solve() {
        let d = GridDomain::build(&DomainShape::UnitDisk, 41).unwrap();
        let g = ScalarField::from_fn(&d, |x, y| (3.0 * x).sin() + x * y);
        let u = solve_london(&d, &g, 0.7, 1e-10).unwrap();
        let lu = apply_london(&d, &u).unwrap();
        for &i in d.interior() {
            assert_abs_diff_eq!(lu.at(i), g.at(i), epsilon = 1e-8);
        }
        assert!(london_residual(&d, &u, &g).unwrap() <= 1e-10 * (1.0 + g.max_abs()));
        let c = apply_london(&d, &ScalarField::constant(&d, 4.0)).unwrap();
        for &i in d.interior() {
            assert_abs_diff_eq!(c.at(i), 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn energy_vanishes_at_lambda_and_scales_quadratically() {
        let d = GridDomain::build(&DomainShape::UnitDisk, 33).unwrap();
        assert_eq!(energy_e1(&ScalarField::constant(&d, 1.3), 1.3), 0.0);
        let src = ScalarField::from_fn(&d, |x, _| 1.0 + x);
        let u = solve_london(&d, &src, 1.0, 1e-11).unwrap();
        let e = energy_e1(&u, 1.0);
        let e3 = energy_e1(&u.map(|v| 3.0 * v), 3.0);
        assert!(e > 0.0);
        assert_abs_diff_eq!(e3, 9.0 * e, epsilon = 1e-10 * e3);
    }

    #[test]
    fn energy_is_the_operator_potential() {
        // E(u) with u = λ + g on the boundary satisfies ∂E/∂u_i = h² (L u − λ)_i
        let d = GridDomain::build(&DomainShape::UnitDisk, 25).unwrap();
        let lambda = 0.4;
        let u = ScalarField::from_fn(&d, |x, y| lambda + 0.3 * (1.0 - x * x - y * y) * (1.0 + x));
        let lu = apply_london(&d, &u).unwrap();
        let h2 = d.h() * d.h();
        for &i in d.interior().iter().step_by(7) {
            let e = 1e-6;
            let mut up = u.clone();
            up.values_mut()[i] += e;
            let mut dn = u.clone();
            dn.values_mut()[i] -= e;
            let fd = (energy_e1(&up, lambda) - energy_e1(&dn, lambda)) / (2.0 * e);
            assert_abs_diff_eq!(fd, h2 * (lu.at(i) - lambda), epsilon = 1e-8);
        }
    }

    #[test]
    fn field_rejects_nonfinite_interior() {
        let d = GridDomain::build(&DomainShape::UnitSquare, 9).unwrap();
        let mut v = vec![0.0; d.len()];
        v[d.interior()[3]] = f64::NAN;
        assert!(ScalarField::new(d.clone(), v).is_err());
        assert!(solve_london(&d, &ScalarField::zeros(&d), 0.0, 0.0).is_err());
    }
}
