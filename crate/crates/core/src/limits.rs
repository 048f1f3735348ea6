//! Macroscopic quantities: moments of the body, the rescaled empirical measure,
//! the rotational martingale of a θ-path, the reference Brownian motion on
//! SO(d) and comparisons of simulated ensembles against the limiting law.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crystal::Crystal;
use crate::dynamics::{kappa, path_seed, PathRecord};
use crate::error::{Error, Result};
use crate::fit::ThetaCalculus;
use crate::lie::{exp_so, log_so, proj, so_from_coords, so_pairs};
use crate::points::{matrix_rows, Configuration};
use crate::stats;

/// Fewer surviving paths than this make the law statistics meaningless.
pub const MIN_SURVIVORS: usize = 30;

/// Largest admissible `‖θ_k⁻¹θ_{k+1} − I‖_F` for increment extraction.
pub const MAX_INCREMENT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroscopicBody {
    pub rho_bar: f64,
    #[serde(with = "matrix_rows")]
    pub qbar: DMatrix<f64>,
    /// Diagonal moments, ascending.
    pub qbar_alpha: Vec<f64>,
    /// `R ∈ SO(d)` with `Rᵀ Q̄ R = diag(q̄)`.
    #[serde(with = "matrix_rows")]
    pub diag_rotation: DMatrix<f64>,
}

impl MacroscopicBody {
    /// Body with a prescribed diagonal second moment.
    pub fn diagonal(rho_bar: f64, qbar_alpha: &[f64]) -> Self {
        let d = qbar_alpha.len();
        MacroscopicBody {
            rho_bar,
            qbar: DMatrix::from_diagonal(&DVector::from_column_slice(qbar_alpha)),
            qbar_alpha: qbar_alpha.to_vec(),
            diag_rotation: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.qbar_alpha.len()
    }

    /// `1/(q̄^α + q̄^β)`.
    pub fn rotational_rate(&self, alpha: usize, beta: usize) -> Result<f64> {
        let sum = self.qbar_alpha[alpha] + self.qbar_alpha[beta];
        if !(sum > 0.0) {
            return Err(Error::DegenerateDiffusion { alpha, beta, sum });
        }
        Ok(1.0 / sum)
    }
}

/// `ρ̄ = ε^d N`, `Q̄ = ε^κ Σ z_i ⊗ z_i`, and its diagonalization.
pub fn crystal_moments(c: &Crystal, epsilon: f64) -> Result<MacroscopicBody> {
    let d = c.dim();
    let n = c.len();
    let centroid = c.positions().centroid();
    if centroid.norm() > 1e-9 * c.spacing() {
        return Err(Error::NotCentered(centroid.norm() * n as f64));
    }
    let mut q = DMatrix::zeros(d, d);
    for z in c.positions().points() {
        for a in 0..d {
            for b in 0..d {
                q[(a, b)] += z[a] * z[b];
            }
        }
    }
    let qbar = q * epsilon.powi(kappa(d));
    let (qbar_alpha, diag_rotation) = diagonalize(&qbar);
    Ok(MacroscopicBody {
        rho_bar: epsilon.powi(d as i32) * n as f64,
        qbar,
        qbar_alpha,
        diag_rotation,
    })
}

fn diagonalize(q: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = q.nrows();
    let eig = SymmetricEigen::new(q.clone());
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals: Vec<f64> = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let cols: Vec<DVector<f64>> = idx.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
    let mut r = DMatrix::from_columns(&cols);
    if d > 0 && r.determinant() < 0.0 {
        let mut last = r.column_mut(d - 1);
        last *= -1.0;
    }
    (vals, r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cells_per_dim: usize,
    /// Explicit `(lo, hi)` corners; default is the bounding box of `εx` plus 10%.
    #[serde(default)]
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cells_per_dim: 64,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub shape: Vec<usize>,
    /// Particle counts per cell, first axis fastest.
    pub counts: Vec<u64>,
    pub overflow: u64,
    /// Mass carried by one particle, `ε^d`.
    pub particle_mass: f64,
}

impl DensityGrid {
    pub fn cell_volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(&self.shape)
            .map(|((l, h), n)| (h - l) / *n as f64)
            .product()
    }

    pub fn mass(&self, cell: usize) -> f64 {
        self.counts[cell] as f64 * self.particle_mass
    }

    pub fn density(&self, cell: usize) -> f64 {
        self.mass(cell) / self.cell_volume()
    }

    pub fn overflow_mass(&self) -> f64 {
        self.overflow as f64 * self.particle_mass
    }

    /// Grid mass plus overflow mass.
    pub fn total_mass(&self) -> f64 {
        (self.counts.iter().sum::<u64>() + self.overflow) as f64 * self.particle_mass
    }

    /// Center of a cell given its flat index.
    pub fn cell_center(&self, mut cell: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shape.len());
        for k in 0..self.shape.len() {
            let i = cell % self.shape[k];
            cell /= self.shape[k];
            let w = (self.hi[k] - self.lo[k]) / self.shape[k] as f64;
            out.push(self.lo[k] + (i as f64 + 0.5) * w);
        }
        out
    }
}

/// Bins `ε x_i` with mass `ε^d` each.
pub fn empirical_measure(x: &Configuration, epsilon: f64, grid: &GridSpec) -> Result<DensityGrid> {
    let d = x.dim();
    if grid.cells_per_dim == 0 {
        return Err(Error::Config(vec!["grid needs at least one cell per dimension".into()]));
    }
    let (lo, hi) = match &grid.bounds {
        Some((lo, hi)) => {
            if lo.len() != d || hi.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: lo.len(),
                });
            }
            (lo.clone(), hi.clone())
        }
        None => {
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for p in x.points() {
                for k in 0..d {
                    lo[k] = lo[k].min(epsilon * p[k]);
                    hi[k] = hi[k].max(epsilon * p[k]);
                }
            }
            for k in 0..d {
                let span = (hi[k] - lo[k]).max(epsilon);
                lo[k] -= 0.1 * span;
                hi[k] += 0.1 * span;
            }
            (lo, hi)
        }
    };
    let shape = vec![grid.cells_per_dim; d];
    let mut counts = vec![0u64; shape.iter().product()];
    let mut overflow = 0;
    'points: for p in x.points() {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..d {
            let y = epsilon * p[k];
            let t = (y - lo[k]) / (hi[k] - lo[k]);
            if !(0.0..1.0).contains(&t) {
                overflow += 1;
                continue 'points;
            }
            let i = ((t * shape[k] as f64) as usize).min(shape[k] - 1);
            idx += i * stride;
            stride *= shape[k];
        }
        counts[idx] += 1;
    }
    Ok(DensityGrid {
        lo,
        hi,
        shape,
        counts,
        overflow,
        particle_mass: epsilon.powi(d as i32),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingalePath {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub m: Vec<DMatrix<f64>>,
    /// Increments `Δm_k`.
    #[serde(skip)]
    pub increments: Vec<DMatrix<f64>>,
    /// `Σ_k (Δm_k^{αβ})²` for `α < β`, in the order of [`so_pairs`].
    pub quadratic_variation: Vec<f64>,
}

/// Cumulative `m` with `θ_{k+1} = θ_k exp(Δm_k)`.
pub fn extract_m(times: &[f64], thetas: &[DMatrix<f64>], first_order: bool) -> Result<MartingalePath> {
    if times.len() != thetas.len() || thetas.is_empty() {
        return Err(Error::Malformed(format!(
            "need matching non-empty times and thetas ({} vs {})",
            times.len(),
            thetas.len()
        )));
    }
    let d = thetas[0].nrows();
    let pairs = so_pairs(d);
    let mut m = vec![DMatrix::zeros(d, d)];
    let mut increments = Vec::with_capacity(thetas.len() - 1);
    let mut qv = vec![0.0; pairs.len()];
    for k in 0..thetas.len() - 1 {
        let rel = thetas[k].transpose() * &thetas[k + 1];
        let norm = (&rel - DMatrix::identity(d, d)).norm();
        if norm >= MAX_INCREMENT {
            return Err(Error::UnderSampled { index: k, norm });
        }
        let dm = if first_order {
            proj(&(rel - DMatrix::identity(d, d)))
        } else {
            log_so(&rel).map_err(|_| Error::UnderSampled { index: k, norm })?
        };
        for (u, &(a, b)) in pairs.iter().enumerate() {
            qv[u] += dm[(a, b)] * dm[(a, b)];
        }
        let next = m.last().unwrap() + &dm;
        m.push(next);
        increments.push(dm);
    }
    Ok(MartingalePath {
        times: times.to_vec(),
        m,
        increments,
        quadratic_variation: qv,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPath {
    pub times: Vec<f64>,
    pub thetas: Vec<DMatrix<f64>>,
}

/// Left Brownian motion on SO(d) with `d⟨m^{αβ}⟩ = dt/(q̄^α + q̄^β)`, started at I.
pub fn reference_sod_bm(body: &MacroscopicBody, t_final: f64, dt: f64, seed: u64) -> Result<ThetaPath> {
    let d = body.dim();
    if !(t_final > 0.0 && dt > 0.0) {
        return Err(Error::Config(vec![format!(
            "t_final and dt must be positive (got {t_final}, {dt})"
        )]));
    }
    let pairs = so_pairs(d);
    let scales: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| body.rotational_rate(a, b).map(f64::sqrt))
        .collect::<Result<_>>()?;
    let steps = (t_final / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = t_final / steps as f64;
    let sq = h.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = DMatrix::identity(d, d);
    let mut times = Vec::with_capacity(steps + 1);
    let mut thetas = Vec::with_capacity(steps + 1);
    times.push(0.0);
    thetas.push(theta.clone());
    let mut coords = vec![0.0; pairs.len()];
    for k in 1..=steps {
        for (c, s) in coords.iter_mut().zip(&scales) {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *c = s * sq * xi;
        }
        theta = &theta * exp_so(&so_from_coords(d, &coords));
        times.push(k as f64 * h);
        thetas.push(theta.clone());
    }
    Ok(ThetaPath { times, thetas })
}

/// `m` reference paths with derived seeds, in index order.
pub fn reference_ensemble(
    body: &MacroscopicBody,
    t_final: f64,
    dt: f64,
    seed: u64,
    m: usize,
) -> Result<Vec<ThetaPath>> {
    (0..m)
        .into_par_iter()
        .map(|k| reference_sod_bm(body, t_final, dt, path_seed(seed, k as u64)))
        .collect()
}

/// Rotation angle of a planar rotation.
pub fn planar_angle(theta: &DMatrix<f64>) -> f64 {
    theta[(1, 0)].atan2(theta[(0, 0)])
}

/// Finite-N prediction of the macroscopic QV rate of each `m^{αβ}` at the crystal:
/// `ε^{−κ} Σ_{i,γ} ((∂θ/∂x_i^γ)^{αβ})²` evaluated at `x = z`.
pub fn qv_rate_prediction(c: &Crystal, epsilon: f64) -> Result<Vec<f64>> {
    let d = c.dim();
    let calc = ThetaCalculus::new(c.positions(), c)?;
    let pairs = so_pairs(d);
    let mut out = vec![0.0; pairs.len()];
    for i in 0..c.len() {
        for gamma in 0..d {
            let dt = calc.derivative(i, gamma)?;
            for (u, &(a, b)) in pairs.iter().enumerate() {
                out[u] += dt[(a, b)].powi(2);
            }
        }
    }
    let scale = epsilon.powi(-kappa(d));
    Ok(out.into_iter().map(|v| v * scale).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationalStat {
    pub coord: usize,
    pub sample_variance: f64,
    pub predicted: f64,
    pub standard_error: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationalStat {
    pub alpha: usize,
    pub beta: usize,
    pub qv_rate: f64,
    pub predicted_finite_n: f64,
    pub predicted_asymptotic: f64,
    pub rel_err_finite_n: f64,
    pub rel_err_asymptotic: f64,
    pub increments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStat {
    pub coord: usize,
    pub alpha: usize,
    pub beta: usize,
    pub correlation: f64,
    pub samples: usize,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawReport {
    pub epsilon: f64,
    pub t_final: f64,
    pub paths: usize,
    pub survivors: usize,
    pub censored: usize,
    pub translational: Vec<TranslationalStat>,
    pub rotational: Vec<RotationalStat>,
    pub correlations: Vec<CorrelationStat>,
}

impl LawReport {
    pub fn survival_fraction(&self) -> f64 {
        self.survivors as f64 / self.paths.max(1) as f64
    }
}

/// Compares surviving paths against the limiting translational and rotational laws.
///
/// Rotations are analysed in the frame diagonalizing `Q̄`, so the pair rates line
/// up with `1/(q̄^α + q̄^β)`.
pub fn law_comparison(
    paths: &[PathRecord],
    c: &Crystal,
    body: &MacroscopicBody,
    epsilon: f64,
) -> Result<LawReport> {
    let d = c.dim();
    let n = c.len();
    let survivors: Vec<&PathRecord> = paths.iter().filter(|p| p.survived()).collect();
    let censored = paths.len() - survivors.len();
    if survivors.len() < MIN_SURVIVORS {
        return Err(Error::InsufficientData(format!(
            "{} surviving paths, need at least {MIN_SURVIVORS}",
            survivors.len()
        )));
    }
    let t_final = survivors[0].samples.last().map_or(0.0, |s| s.time);
    if survivors
        .iter()
        .any(|p| (p.samples.last().map_or(0.0, |s| s.time) - t_final).abs() > 1e-9 * t_final.max(1.0))
    {
        return Err(Error::Malformed("surviving paths end at different times".into()));
    }

    // Translational variance of ε·η(t).
    let predicted = epsilon.powi(2 - kappa(d)) * t_final / n as f64;
    let translational = (0..d)
        .map(|p| {
            let vals: Vec<f64> = survivors
                .iter()
                .map(|r| epsilon * (r.samples.last().unwrap().eta[p] - r.samples[0].eta[p]))
                .collect();
            let var = stats::variance(&vals);
            let se = stats::variance_standard_error(predicted, vals.len());
            TranslationalStat {
                coord: p,
                sample_variance: var,
                predicted,
                standard_error: se,
                z_score: (var - predicted) / se,
            }
        })
        .collect();

    // Rotational martingale in the body frame.
    let r = &body.diag_rotation;
    let rt = r.transpose();
    let pairs = so_pairs(d);
    let mut qv = vec![0.0; pairs.len()];
    let mut n_incr = 0usize;
    let mut deta: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut dm: Vec<Vec<f64>> = vec![Vec::new(); pairs.len()];
    for rec in &survivors {
        let times: Vec<f64> = rec.samples.iter().map(|s| s.time).collect();
        let thetas: Vec<DMatrix<f64>> = rec
            .samples
            .iter()
            .map(|s| &rt * DMatrix::from_row_slice(d, d, &s.theta) * r)
            .collect();
        let mp = extract_m(&times, &thetas, false)?;
        for (u, v) in mp.quadratic_variation.iter().enumerate() {
            qv[u] += v;
        }
        n_incr += mp.increments.len();
        for (k, inc) in mp.increments.iter().enumerate() {
            let e0 = DVector::from_column_slice(&rec.samples[k].eta);
            let e1 = DVector::from_column_slice(&rec.samples[k + 1].eta);
            let de = &rt * (e1 - e0);
            for p in 0..d {
                deta[p].push(epsilon * de[p]);
            }
            for (u, &(a, b)) in pairs.iter().enumerate() {
                dm[u].push(inc[(a, b)]);
            }
        }
    }
    let horizon = survivors.len() as f64 * t_final;
    let finite_n = qv_rate_prediction(&c.rotated(&rt), epsilon)?;
    let rotational = pairs
        .iter()
        .enumerate()
        .map(|(u, &(a, b))| {
            let rate = qv[u] / horizon;
            let asym = body.rotational_rate(a, b)?;
            Ok(RotationalStat {
                alpha: a,
                beta: b,
                qv_rate: rate,
                predicted_finite_n: finite_n[u],
                predicted_asymptotic: asym,
                rel_err_finite_n: (rate - finite_n[u]).abs() / finite_n[u],
                rel_err_asymptotic: (rate - asym).abs() / asym,
                increments: n_incr,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut correlations = Vec::new();
    for p in 0..d {
        for (u, &(a, b)) in pairs.iter().enumerate() {
            let samples = deta[p].len();
            correlations.push(CorrelationStat {
                coord: p,
                alpha: a,
                beta: b,
                correlation: stats::pearson(&deta[p], &dm[u]),
                samples,
                bound: 3.0 / (samples as f64).sqrt(),
            });
        }
    }

    Ok(LawReport {
        epsilon,
        t_final,
        paths: paths.len(),
        survivors: survivors.len(),
        censored,
        translational,
        rotational,
        correlations,
    })
}
