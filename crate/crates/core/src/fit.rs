//! Best-fitting rigid motion of a reference crystal and the derivative of the
//! fitted rotation with respect to particle positions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::crystal::Crystal;
use crate::dynamics::{total_force, ForceMethod};
use crate::error::{Error, Result};
use crate::lie::{generator, proj, so_coords, so_from_coords, so_pairs};
use crate::points::{dist2, Configuration, DisplacementField};
use crate::potential::PotentialSpec;

/// `x = θz + η + h` with `h` orthogonal to the trivial motions at `θz + η`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub theta: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub zfit: Configuration,
    pub h: DisplacementField,
    pub h_inf: f64,
    pub gradh_inf: f64,
    /// Singular values of the cross-moment, descending.
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeKind {
    /// `‖h‖_∞ ≤ cap`.
    Sup,
    /// `max_edges |h_i − h_j| ≤ cap`.
    EdgeSup,
}

/// `Q(x) = Σ_i z_i ⊗ x_i`, i.e. `q^{αβ} = Σ_i z_i^α x_i^β`.
pub fn q_matrix(z: &Configuration, x: &Configuration) -> DMatrix<f64> {
    let d = z.dim();
    let mut q = DMatrix::zeros(d, d);
    for (zi, xi) in z.points().zip(x.points()) {
        for a in 0..d {
            for b in 0..d {
                q[(a, b)] += zi[a] * xi[b];
            }
        }
    }
    q
}

/// `max_edges |h_i − h_j|`.
pub fn edge_sup(c: &Crystal, h: &DisplacementField) -> f64 {
    c.edges()
        .iter()
        .map(|&(i, j)| dist2(h.point(i), h.point(j)).sqrt())
        .fold(0.0, f64::max)
}

fn require_centered(c: &Crystal) -> Result<()> {
    let norm = c.positions().centroid().norm() * c.len() as f64;
    if norm > 1e-9 * c.spacing() * c.len() as f64 {
        return Err(Error::NotCentered(norm));
    }
    Ok(())
}

/// Least-squares rigid fit of `c` to `x` over SO(d) × ℝ^d.
pub fn fit_isometry(x: &Configuration, c: &Crystal) -> Result<Decomposition> {
    let z = c.positions();
    x.check_same_shape(z)?;
    require_centered(c)?;
    let d = c.dim();
    let eta = x.centroid();
    if c.len() == 1 {
        // A single point carries no orientation.
        let theta = DMatrix::identity(d, d);
        return Ok(Decomposition {
            zfit: x.clone(),
            h: Configuration::zeros(d, 1),
            theta,
            eta,
            h_inf: 0.0,
            gradh_inf: 0.0,
            singular_values: vec![0.0; d],
        });
    }
    let q = q_matrix(z, x);
    let svd = q.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();

    // nalgebra returns singular values in descending order.
    let smax = sv.first().copied().unwrap_or(0.0);
    if d >= 2 && sv[d - 1] <= 1e-12 * smax.max(f64::MIN_POSITIVE) && sv[d - 2] <= 1e-12 * smax.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateFit(sv));
    }

    // Maximize tr(θQ): with Q = U S Vᵀ, θ = V D Uᵀ.
    let v = vt.transpose();
    let mut dmat = DMatrix::identity(d, d);
    if (&v * u.transpose()).determinant() < 0.0 {
        dmat[(d - 1, d - 1)] = -1.0;
    }
    let theta = &v * dmat * u.transpose();

    let zfit = z.transformed(&theta, &eta);
    let h = x.sub(&zfit);
    let h_inf = h.points().map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let gradh_inf = edge_sup(c, &h);
    Ok(Decomposition {
        theta,
        eta,
        zfit,
        h,
        h_inf,
        gradh_inf,
        singular_values: sv,
    })
}

pub fn tube_membership(dec: &Decomposition, cap: f64, kind: TubeKind) -> bool {
    match kind {
        TubeKind::Sup => dec.h_inf <= cap,
        TubeKind::EdgeSup => dec.gradh_inf <= cap,
    }
}

/// Matrix of the map `X ↦ Proj(M X)` on so(d) in the coordinates `X^{αβ}`, `α < β`.
pub fn phi_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let pairs = so_pairs(d);
    let k = pairs.len();
    let mut l = DMatrix::zeros(k, k);
    for (col, &(a, b)) in pairs.iter().enumerate() {
        let img = proj(&(m * generator(d, a, b)));
        for (row, &(p, q)) in pairs.iter().enumerate() {
            l[(row, col)] = img[(p, q)];
        }
    }
    l
}

/// Smallest and largest singular values of the `Φ` operator.
pub fn phi_singular_range(m: &DMatrix<f64>) -> (f64, f64) {
    let l = phi_matrix(m);
    if l.nrows() == 0 {
        return (f64::INFINITY, 0.0);
    }
    let sv = l.singular_values();
    (sv.min(), sv.max())
}

/// Solves `Proj(M X) = Y` for antisymmetric `X`.
pub fn phi_inverse(m: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if y.nrows() != d || y.ncols() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: y.nrows(),
        });
    }
    if d < 2 {
        return Ok(DMatrix::zeros(d, d));
    }
    let l = phi_matrix(m);
    let (smin, smax) = phi_singular_range(m);
    if smin <= 1e-13 * smax.max(f64::MIN_POSITIVE) {
        return Err(Error::NonInvertible(smax / smin.max(f64::MIN_POSITIVE)));
    }
    let rhs = DVector::from_vec(so_coords(&proj(y)));
    let sol = l
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonInvertible(smax / smin))?;
    Ok(so_from_coords(d, sol.as_slice()))
}

/// Reusable pieces for `∂θ/∂x_i^γ` at one configuration.
pub struct ThetaCalculus {
    theta: DMatrix<f64>,
    theta_inv: DMatrix<f64>,
    phi_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    z: Configuration,
}

impl ThetaCalculus {
    pub fn new(x: &Configuration, c: &Crystal) -> Result<Self> {
        let dec = fit_isometry(x, c)?;
        let qtheta = q_matrix(c.positions(), x) * &dec.theta;
        let (smin, smax) = phi_singular_range(&qtheta);
        if c.dim() >= 2 && smin <= 1e-13 * smax.max(f64::MIN_POSITIVE) {
            return Err(Error::NonInvertible(smax / smin.max(f64::MIN_POSITIVE)));
        }
        Ok(ThetaCalculus {
            theta_inv: dec.theta.transpose(),
            theta: dec.theta,
            phi_lu: phi_matrix(&qtheta).lu(),
            z: c.positions().clone(),
        })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    /// `θ Φ⁻¹ Proj((θ⁻¹e_γ) ⊗ z_i)`.
    pub fn derivative(&self, i: usize, gamma: usize) -> Result<DMatrix<f64>> {
        let d = self.theta.nrows();
        if i >= self.z.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.z.len(),
            });
        }
        if gamma >= d {
            return Err(Error::IndexOutOfRange { index: gamma, len: d });
        }
        if d < 2 {
            return Ok(DMatrix::zeros(d, d));
        }
        let col = self.theta_inv.column(gamma);
        let zi = self.z.point(i);
        let outer = DMatrix::from_fn(d, d, |a, b| col[a] * zi[b]);
        let rhs = DVector::from_vec(so_coords(&proj(&outer)));
        let sol = self
            .phi_lu
            .solve(&rhs)
            .ok_or(Error::NonInvertible(f64::INFINITY))?;
        Ok(&self.theta * so_from_coords(d, sol.as_slice()))
    }
}

pub fn theta_derivative(
    x: &Configuration,
    c: &Crystal,
    i: usize,
    gamma: usize,
) -> Result<DMatrix<f64>> {
    ThetaCalculus::new(x, c)?.derivative(i, gamma)
}

/// `max_{α,β} |(∇θ^{αβ}, ∇H)| / (‖∇θ^{αβ}‖ ‖∇H‖)`, or 0 when `∇H` vanishes.
pub fn gradient_orthogonality(x: &Configuration, c: &Crystal, spec: &PotentialSpec) -> Result<f64> {
    let force = total_force(x, spec, ForceMethod::Auto)?;
    let gnorm = force.norm();
    let scale = spec.k / spec.w * (x.len() as f64).sqrt();
    if gnorm <= 1e-14 * scale {
        return Ok(0.0);
    }
    let calc = ThetaCalculus::new(x, c)?;
    let d = c.dim();
    let n = c.len();
    let mut dots = DMatrix::<f64>::zeros(d, d);
    let mut norms = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        let f = force.point(i);
        for gamma in 0..d {
            let dt = calc.derivative(i, gamma)?;
            // ∇H = −force.
            dots -= &dt * f[gamma];
            norms += dt.map(|v| v * v);
        }
    }
    let mut worst: f64 = 0.0;
    for a in 0..d {
        for b in 0..d {
            let nrm = norms[(a, b)].sqrt();
            if nrm > 0.0 {
                worst = worst.max(dots[(a, b)].abs() / (nrm * gnorm));
            }
        }
    }
    Ok(worst)
}
