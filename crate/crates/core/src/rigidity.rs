//! Second-order expansion of the energy at a crystal: the Hessian form,
//! trivial motions and the spectral constants λ⁽¹⁾, λ⁽²⁾.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::crystal::Crystal;
use crate::error::{Error, Result};
use crate::points::DisplacementField;

/// Eigenvalues below `ZERO_TOL_REL·č` count as zero modes.
pub const ZERO_TOL_REL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityReport {
    #[serde(skip)]
    pub hessian: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub trivial_dim: usize,
    pub zero_count: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rigid: bool,
}

/// The matrix `A` with `(Ah, h) = E₁(h) = (č/a²) Σ_edges (h_i − h_j, z_i − z_j)²`.
pub fn assemble_hessian(c: &Crystal, chk: f64) -> DMatrix<f64> {
    let d = c.dim();
    let n = c.len();
    let s = chk / (c.spacing() * c.spacing());
    let mut a = DMatrix::zeros(d * n, d * n);
    for &(i, j) in c.edges() {
        let (zi, zj) = (c.point(i), c.point(j));
        for p in 0..d {
            for q in 0..d {
                let v = s * (zi[p] - zj[p]) * (zi[q] - zj[q]);
                a[(d * i + p, d * i + q)] += v;
                a[(d * j + p, d * j + q)] += v;
                a[(d * i + p, d * j + q)] -= v;
                a[(d * j + p, d * i + q)] -= v;
            }
        }
    }
    a
}

/// Edge-difference form `Σ_edges |h_i − h_j|²` as a matrix (graph Laplacian ⊗ I_d).
pub fn edge_difference_matrix(c: &Crystal) -> DMatrix<f64> {
    let d = c.dim();
    let n = c.len();
    let mut b = DMatrix::zeros(d * n, d * n);
    for &(i, j) in c.edges() {
        for p in 0..d {
            b[(d * i + p, d * i + p)] += 1.0;
            b[(d * j + p, d * j + p)] += 1.0;
            b[(d * i + p, d * j + p)] -= 1.0;
            b[(d * j + p, d * i + p)] -= 1.0;
        }
    }
    b
}

fn check_field(c: &Crystal, h: &DisplacementField) -> Result<()> {
    if h.dim() != c.dim() || h.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.dim() * c.len(),
            found: h.dim() * h.len(),
        });
    }
    Ok(())
}

fn edge_projection(c: &Crystal, h: &DisplacementField, i: usize, j: usize) -> f64 {
    let (zi, zj) = (c.point(i), c.point(j));
    let (hi, hj) = (h.point(i), h.point(j));
    (0..c.dim()).map(|p| (hi[p] - hj[p]) * (zi[p] - zj[p])).sum()
}

pub fn e1(c: &Crystal, chk: f64, h: &DisplacementField) -> Result<f64> {
    check_field(c, h)?;
    let s = chk / c.spacing().powi(2);
    Ok(s * c
        .edges()
        .iter()
        .map(|&(i, j)| edge_projection(c, h, i, j).powi(2))
        .sum::<f64>())
}

/// `E₂(h) = ‖Ah‖²`.
pub fn e2(c: &Crystal, chk: f64, h: &DisplacementField) -> Result<f64> {
    check_field(c, h)?;
    let d = c.dim();
    let s = chk / c.spacing().powi(2);
    let mut ah = vec![0.0; d * c.len()];
    for &(i, j) in c.edges() {
        let t = s * edge_projection(c, h, i, j);
        let (zi, zj) = (c.point(i), c.point(j));
        for p in 0..d {
            let u = zi[p] - zj[p];
            ah[d * i + p] += t * u;
            ah[d * j + p] -= t * u;
        }
    }
    Ok(ah.iter().map(|v| v * v).sum())
}

/// Orthonormal basis of the trivial motions `ℋ_z`: translations, then the
/// rotation fields `X z` for elementary antisymmetric `X`. Fields that are
/// linearly dependent (lower-dimensional affine hull) are dropped.
pub fn trivial_motion_basis(c: &Crystal) -> Vec<DVector<f64>> {
    let d = c.dim();
    let n = c.len();
    let mut raw: Vec<DVector<f64>> = Vec::new();
    for alpha in 0..d {
        raw.push(DVector::from_fn(d * n, |k, _| if k % d == alpha { 1.0 } else { 0.0 }));
    }
    for alpha in 0..d {
        for beta in alpha + 1..d {
            // X = E_αβ − E_βα, so (Xz)^α = z^β and (Xz)^β = −z^α.
            let mut v = DVector::zeros(d * n);
            for i in 0..n {
                let z = c.point(i);
                v[d * i + alpha] = z[beta];
                v[d * i + beta] = -z[alpha];
            }
            raw.push(v);
        }
    }
    let scale = (n as f64).sqrt() * c.spacing().max(1.0);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for mut v in raw {
        for _ in 0..2 {
            for u in &basis {
                let p = u.dot(&v);
                v.axpy(-p, u, 1.0);
            }
        }
        let nv = v.norm();
        if nv > 1e-9 * scale {
            basis.push(v / nv);
        }
    }
    let full = d * (d + 1) / 2;
    if basis.len() < full {
        log::warn!(
            "affine hull is degenerate: {} trivial motions instead of {full}",
            basis.len()
        );
    }
    basis
}

/// Removes the `ℋ_z` component of `h` given an orthonormal trivial basis.
pub fn project_out_trivial(basis: &[DVector<f64>], h: &DVector<f64>) -> DVector<f64> {
    let mut v = h.clone();
    for u in basis {
        let p = u.dot(&v);
        v.axpy(-p, u, 1.0);
    }
    v
}

/// Orthonormal basis (as columns) of the orthogonal complement of `basis` in ℝ^n.
pub fn complement_basis(basis: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::identity(n, n);
    for u in basis {
        p -= u * u.transpose();
    }
    let eig = SymmetricEigen::new(p);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&k| eig.eigenvalues[k] > 0.5)
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| Error::EigenFailure("symmetric eigensolver did not converge".into()))?;
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure("non-finite eigenvalue".into()));
    }
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Smallest generalized Rayleigh quotient `(Ah,h)/Σ_edges|h_i−h_j|²` over `ℋ_z^⊥`.
pub fn lambda1(c: &Crystal, hessian: &DMatrix<f64>, basis: &[DVector<f64>]) -> Result<f64> {
    let n = hessian.nrows();
    let p = complement_basis(basis, n);
    if p.ncols() == 0 {
        return Ok(f64::INFINITY);
    }
    let ap = p.transpose() * hessian * &p;
    let bp = p.transpose() * edge_difference_matrix(c) * &p;
    let chol = bp.cholesky().ok_or_else(|| {
        Error::EigenFailure(
            "edge-difference form is not positive definite off the trivial motions (disconnected crystal?)"
                .into(),
        )
    })?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(l.nrows(), l.nrows()))
        .ok_or_else(|| Error::EigenFailure("singular Cholesky factor".into()))?;
    let m = &linv * ap * linv.transpose();
    let sym = (&m + m.transpose()) * 0.5;
    Ok(sorted_eigenvalues(sym)?[0])
}

pub fn rigidity_report(c: &Crystal, chk: f64) -> Result<RigidityReport> {
    rigidity_report_with_tol(c, chk, ZERO_TOL_REL)
}

pub fn rigidity_report_with_tol(c: &Crystal, chk: f64, zero_tol_rel: f64) -> Result<RigidityReport> {
    let hessian = assemble_hessian(c, chk);
    let eigenvalues = sorted_eigenvalues(hessian.clone())?;
    let tol = zero_tol_rel * chk;
    let zero_count = eigenvalues.iter().filter(|v| **v < tol).count();
    let lambda2 = eigenvalues.iter().copied().find(|v| *v >= tol).unwrap_or(0.0);
    let basis = trivial_motion_basis(c);
    let trivial_dim = basis.len();
    let rigid = zero_count == trivial_dim;
    let lambda1 = if rigid {
        lambda1(c, &hessian, &basis)?
    } else {
        // Extra zero modes live in ℋ_z^⊥, so the infimum is zero.
        lambda1(c, &hessian, &basis).map(|v| v.max(0.0)).unwrap_or(0.0)
    };
    Ok(RigidityReport {
        hessian,
        eigenvalues,
        trivial_dim,
        zero_count,
        lambda1,
        lambda2,
        rigid,
    })
}

/// Finds `X ∈ so(d)` and `t` with `h_k = X p_k + t` for the points
/// `p_0 = origin, p_1..p_d = cell`, by least squares with a residual check.
pub fn recover_isometry(
    origin: &[f64],
    cell: &[Vec<f64>],
    displacements: &[Vec<f64>],
    tol: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = origin.len();
    if cell.len() != d || displacements.len() != d + 1 {
        return Err(Error::DimensionMismatch {
            expected: d + 1,
            found: displacements.len().min(cell.len() + 1),
        });
    }
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|a| (a + 1..d).map(move |b| (a, b)))
        .collect();
    let m = pairs.len();
    let unknowns = m + d;
    let rows = d * (d + 1);
    let mut lhs = DMatrix::zeros(rows, unknowns);
    let mut rhs = DVector::zeros(rows);
    let points: Vec<&[f64]> = std::iter::once(origin).chain(cell.iter().map(Vec::as_slice)).collect();
    for (k, p) in points.iter().enumerate() {
        if p.len() != d || displacements[k].len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.len(),
            });
        }
        for row in 0..d {
            let r = d * k + row;
            for (u, &(a, b)) in pairs.iter().enumerate() {
                // (E_ab − E_ba) p
                if row == a {
                    lhs[(r, u)] += p[b];
                } else if row == b {
                    lhs[(r, u)] -= p[a];
                }
            }
            lhs[(r, m + row)] = 1.0;
            rhs[r] = displacements[k][row];
        }
    }
    let svd = lhs.clone().svd(true, true);
    let smin = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smin <= 1e-12 * smax.max(1.0) {
        return Err(Error::NonInvertible(smax / smin.max(f64::MIN_POSITIVE)));
    }
    let sol = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::EigenFailure(e.to_string()))?;
    let residual = (&lhs * &sol - &rhs).norm();
    if residual > tol * rhs.norm().max(1.0) {
        return Err(Error::NotInfinitesimalIsometry(residual));
    }
    let mut x = DMatrix::zeros(d, d);
    for (u, &(a, b)) in pairs.iter().enumerate() {
        x[(a, b)] = sol[u];
        x[(b, a)] = -sol[u];
    }
    let t = DVector::from_fn(d, |k, _| sol[m + k]);
    Ok((x, t))
}
