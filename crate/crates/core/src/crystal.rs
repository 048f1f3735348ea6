//! Crystals: configurations whose pairwise distances are either exactly the
//! well minimum `a` or beyond the interaction range `b`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, PairViolation, Result};
use crate::points::{dist2, Configuration};
use crate::potential::PotentialSpec;

/// Relative tolerance for recognising a neighbor pair: `|r − a| ≤ EDGE_TOL·a`.
pub const EDGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CrystalFile", try_from = "CrystalFile")]
pub struct Crystal {
    dim: usize,
    a: f64,
    positions: Configuration,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    radius: usize,
    centered: bool,
}

/// On-disk layout of a crystal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalFile {
    pub dim: usize,
    pub a: f64,
    pub positions: Vec<Vec<f64>>,
    pub edges: Vec<[usize; 2]>,
}

impl From<Crystal> for CrystalFile {
    fn from(c: Crystal) -> Self {
        CrystalFile {
            dim: c.dim,
            a: c.a,
            positions: c.positions.points().map(<[f64]>::to_vec).collect(),
            edges: c.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }
}

impl TryFrom<CrystalFile> for Crystal {
    type Error = Error;

    fn try_from(f: CrystalFile) -> Result<Self> {
        let positions = Configuration::from_points(f.dim, &f.positions)?;
        let crystal = Crystal::from_points(f.a, positions)?;
        let mut stored: Vec<(usize, usize)> = f
            .edges
            .iter()
            .map(|&[i, j]| (i.min(j), i.max(j)))
            .collect();
        stored.sort_unstable();
        if stored != crystal.edges {
            return Err(Error::Malformed(format!(
                "stored edge list ({} edges) disagrees with the distance graph ({} edges)",
                stored.len(),
                crystal.edges.len()
            )));
        }
        Ok(crystal)
    }
}

impl Crystal {
    /// Builds a crystal from raw points; neighbor pairs are all pairs at distance `a`.
    pub fn from_points(a: f64, positions: Configuration) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyCrystal("no points".into()));
        }
        let dim = positions.dim();
        let n = positions.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let r = dist2(positions.point(i), positions.point(j)).sqrt();
                if (r - a).abs() <= EDGE_TOL * a {
                    edges.push((i, j));
                }
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        let centroid = positions.centroid();
        let centered = centroid.norm() <= 1e-9 * a * n as f64;
        let mut c = Crystal {
            dim,
            a,
            positions,
            edges,
            neighbors,
            radius: 0,
            centered,
        };
        c.radius = graph_radius(&c);
        Ok(c)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lattice spacing / neighbor distance.
    pub fn spacing(&self) -> f64 {
        self.a
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &Configuration {
        &self.positions
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.positions.point(i)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Graph diameter in hops, `R(z)`.
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Copy translated so that `Σ z_i = 0`.
    pub fn centered(&self) -> Self {
        let mut c = self.clone();
        let shift = -c.positions.centroid();
        c.positions.translate(shift.as_slice());
        c.centered = true;
        c
    }

    /// Applies `z_i ↦ θ z_i` (edges are preserved by isometries).
    pub fn rotated(&self, theta: &DMatrix<f64>) -> Self {
        let mut c = self.clone();
        c.positions = self.positions.transformed(theta, &DVector::zeros(self.dim));
        c
    }

    /// `Σ_i |z_i|²` about the origin.
    pub fn second_moment_trace(&self) -> f64 {
        self.positions.as_slice().iter().map(|v| v * v).sum()
    }
}

/// Recenters `c` in place.
pub fn center(c: &mut Crystal) {
    *c = c.centered();
}

/// `R(z)`: maximum over pairs of the shortest-path hop count. Pairs in
/// different components are ignored.
pub fn graph_radius(c: &Crystal) -> usize {
    let n = c.len();
    let mut best = 0;
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[s] = 0;
        queue.clear();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &v in &c.neighbors[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    best = best.max(dist[v]);
                    queue.push_back(v);
                }
            }
        }
    }
    best
}

fn connected_components(n: usize, neighbors: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut k = 0;
        while k < comp.len() {
            let u = comp[k];
            for &v in &neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Result of [`validate_crystal`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrystalReport {
    pub n: usize,
    pub edges: usize,
    pub connected: bool,
    pub radius: usize,
    pub centroid_norm: f64,
}

/// Checks the neighbor/far dichotomy for every pair, connectivity and `R(z)`.
pub fn validate_crystal(c: &Crystal, spec: &PotentialSpec) -> Result<CrystalReport> {
    let n = c.len();
    let b = spec.b();
    let mut violations = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let r = dist2(c.point(i), c.point(j)).sqrt();
            let neighbor = (r - c.a).abs() <= EDGE_TOL * c.a;
            if !neighbor && r <= b {
                violations.push(PairViolation { i, j, distance: r });
            }
        }
    }
    if (c.a - spec.a).abs() > EDGE_TOL * spec.a {
        return Err(Error::InvalidConstruction(format!(
            "crystal spacing {} differs from the potential minimum {}",
            c.a, spec.a
        )));
    }
    if !violations.is_empty() {
        return Err(Error::CrystalViolation(violations));
    }
    let comps = connected_components(n, &c.neighbors);
    Ok(CrystalReport {
        n,
        edges: c.edges.len(),
        connected: comps.len() == 1,
        radius: c.radius,
        centroid_norm: c.positions.centroid().norm(),
    })
}

/// Unit vectors with Gram matrix `(1 + δ_{αβ})/2`, as the rows of the
/// Cholesky factor (so the basis matrix with these columns is upper triangular).
pub fn triangular_basis(d: usize) -> Vec<DVector<f64>> {
    assert!(d >= 1, "dimension must be positive");
    let gram = DMatrix::from_fn(d, d, |p, q| if p == q { 1.0 } else { 0.5 });
    let l = gram
        .cholesky()
        .expect("Gram matrix of the triangular lattice is positive definite")
        .l();
    (0..d).map(|alpha| l.row(alpha).transpose()).collect()
}

/// `c(Λ_d)`: the shortest non-unit length in the triangular lattice.
pub fn lattice_gap_factor(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 3f64.sqrt(),
        _ => 2f64.sqrt(),
    }
}

/// Macroscopic domain whose `ε⁻¹` dilation is intersected with the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Domain {
    fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } => center.len(),
            Domain::Box { lo, .. } => lo.len(),
        }
    }

    /// Membership of the (already macroscopic) point `y`, with a relative slack.
    fn contains(&self, y: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        match self {
            Domain::Ball { center, radius } => {
                dist2(y, center).sqrt() <= radius * (1.0 + SLACK)
            }
            Domain::Box { lo, hi } => y
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= l - SLACK * l.abs().max(1.0) && *v <= h + SLACK * h.abs().max(1.0)),
        }
    }
}

/// `ε⁻¹·D ∩ aΛ_d`, pruned to a face-attached core and recentered.
///
/// Pruning is delete-only: points that do not belong to any `(d+1)`-clique of
/// the neighbor graph are removed repeatedly, then the largest connected
/// component is kept.
pub fn lattice_patch(
    dim: usize,
    spec: &PotentialSpec,
    domain: &Domain,
    epsilon: f64,
) -> Result<Crystal> {
    if dim == 0 || domain.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: domain.dim(),
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConstruction(format!("epsilon must be positive, got {epsilon}")));
    }
    let a = spec.a;
    let bound = lattice_gap_factor(dim) * a;
    if !(spec.b() < bound) {
        return Err(Error::RangeViolation {
            dim,
            b: spec.b(),
            bound,
        });
    }

    let basis = triangular_basis(dim);
    let basis_mat = DMatrix::from_fn(dim, dim, |p, q| a * basis[q][p]);
    let inv = basis_mat
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidConstruction("singular lattice basis".into()))?;

    // Integer coefficient bounds from the bounding box of ε⁻¹·D.
    let (lo, hi): (Vec<f64>, Vec<f64>) = match domain {
        Domain::Ball { center, radius } => (
            center.iter().map(|c| (c - radius) / epsilon).collect(),
            center.iter().map(|c| (c + radius) / epsilon).collect(),
        ),
        Domain::Box { lo, hi } => (
            lo.iter().map(|v| v / epsilon).collect(),
            hi.iter().map(|v| v / epsilon).collect(),
        ),
    };
    let mut ranges = Vec::with_capacity(dim);
    for alpha in 0..dim {
        let row = inv.row(alpha);
        let mut mn = 0.0;
        let mut mx = 0.0;
        for beta in 0..dim {
            let mid = 0.5 * (lo[beta] + hi[beta]);
            let half = 0.5 * (hi[beta] - lo[beta]);
            mn += row[beta] * mid - row[beta].abs() * half;
            mx += row[beta] * mid + row[beta].abs() * half;
        }
        ranges.push((mn.floor() as i64 - 1, mx.ceil() as i64 + 1));
    }

    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut xi: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    let mut y = vec![0.0; dim];
    let mut scaled = vec![0.0; dim];
    'outer: loop {
        for p in 0..dim {
            y[p] = (0..dim).map(|q| basis_mat[(p, q)] * xi[q] as f64).sum();
            scaled[p] = epsilon * y[p];
        }
        if domain.contains(&scaled) {
            points.push(y.clone());
        }
        for alpha in 0..dim {
            if xi[alpha] < ranges[alpha].1 {
                xi[alpha] += 1;
                continue 'outer;
            }
            xi[alpha] = ranges[alpha].0;
        }
        break;
    }
    if points.is_empty() {
        return Err(Error::EmptyCrystal("domain contains no lattice points".into()));
    }

    let raw = Crystal::from_points(a, Configuration::from_points(dim, &points)?)?;
    let pruned = prune_to_cells(&raw)?;
    let crystal = pruned.centered();
    validate_crystal(&crystal, spec)?;
    Ok(crystal)
}

fn in_clique(c: &Crystal, i: usize, alive: &[bool], size: usize) -> bool {
    // Looks for `size - 1` mutually adjacent live neighbors of `i`.
    fn extend(c: &Crystal, cands: &[usize], alive: &[bool], need: usize) -> bool {
        if need == 0 {
            return true;
        }
        for (k, &u) in cands.iter().enumerate() {
            if !alive[u] {
                continue;
            }
            let next: Vec<usize> = cands[k + 1..]
                .iter()
                .copied()
                .filter(|v| alive[*v] && c.neighbors[u].contains(v))
                .collect();
            if extend(c, &next, alive, need - 1) {
                return true;
            }
        }
        false
    }
    let cands: Vec<usize> = c.neighbors[i].iter().copied().filter(|&v| alive[v]).collect();
    extend(c, &cands, alive, size - 1)
}

fn prune_to_cells(c: &Crystal) -> Result<Crystal> {
    let n = c.len();
    let mut alive = vec![true; n];
    let clique = c.dim + 1;
    loop {
        let dead: Vec<usize> = (0..n)
            .filter(|&i| alive[i] && !in_clique(c, i, &alive, clique))
            .collect();
        if dead.is_empty() {
            break;
        }
        for i in dead {
            alive[i] = false;
        }
    }
    let live_neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            if alive[i] {
                c.neighbors[i].iter().copied().filter(|&v| alive[v]).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    let best = connected_components(n, &live_neighbors)
        .into_iter()
        .filter(|comp| alive[comp[0]])
        .max_by_key(|comp| comp.len())
        .ok_or_else(|| Error::EmptyCrystal("no point survives cell pruning".into()))?;
    let pts: Vec<&[f64]> = best.iter().map(|&i| c.point(i)).collect();
    Crystal::from_points(c.a, Configuration::from_points(c.dim, &pts)?)
}

/// `n+1` points in `ℝ^d` at mutual distance `a` with an `n`-dimensional affine hull, centered.
pub fn simplex_cell(n: usize, d: usize, a: f64) -> Result<Crystal> {
    if n > d {
        return Err(Error::InvalidConstruction(format!(
            "a {n}-dimensional cell does not fit in R^{d}"
        )));
    }
    let mut pts = vec![vec![0.0; d]];
    if n > 0 {
        for e in triangular_basis(n) {
            let mut p = vec![0.0; d];
            for (k, v) in e.iter().enumerate() {
                p[k] = a * v;
            }
            pts.push(p);
        }
    }
    Ok(Crystal::from_points(a, Configuration::from_points(d, &pts)?)?.centered())
}

/// Dimension of the affine hull of `points` (0 for a single point).
pub fn affine_dimension(points: &[&[f64]], tol: f64) -> usize {
    if points.len() <= 1 {
        return 0;
    }
    let d = points[0].len();
    let m = DMatrix::from_fn(d, points.len() - 1, |p, k| points[k + 1][p] - points[0][p]);
    m.svd(false, false)
        .singular_values
        .iter()
        .filter(|s| **s > tol)
        .count()
}

/// Union of two crystals sharing at least a `(d−1)`-dimensional face.
/// Returns the joined crystal and the overlap's affine dimension.
pub fn join(c1: &Crystal, c2: &Crystal) -> Result<(Crystal, usize)> {
    if c1.dim != c2.dim {
        return Err(Error::DimensionMismatch {
            expected: c1.dim,
            found: c2.dim,
        });
    }
    if (c1.a - c2.a).abs() > EDGE_TOL * c1.a {
        return Err(Error::InvalidConstruction("crystals have different spacings".into()));
    }
    let tol = EDGE_TOL * c1.a;
    let mut pts: Vec<&[f64]> = c1.positions.points().collect();
    let mut overlap: Vec<&[f64]> = Vec::new();
    for q in c2.positions.points() {
        match c1.positions.points().find(|p| dist2(p, q).sqrt() <= tol) {
            Some(p) => overlap.push(p),
            None => pts.push(q),
        }
    }
    let required = c1.dim.saturating_sub(1);
    let overlap_dim = affine_dimension(&overlap, 1e-9 * c1.a);
    if overlap.is_empty() || overlap_dim < required {
        return Err(Error::JoinDeficient {
            overlap_dim,
            required,
        });
    }
    let joined = Crystal::from_points(c1.a, Configuration::from_points(c1.dim, &pts)?)?;
    Ok((joined, overlap_dim))
}
