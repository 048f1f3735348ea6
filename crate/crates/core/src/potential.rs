//! Compactly supported radial pair potential with a single nondegenerate well.
//!
//! On `|r − a| < w` the potential is `U(r) = −k((r−a)² − w²)⁴ / w⁸` and it
//! vanishes elsewhere. The quartic power makes `U`, `U'`, `U''` and `U'''`
//! vanish at the seams `r = a ± w`, so `U ∈ C³`, and the curvature at the
//! minimum is `č = U''(a) = 8k/w²`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    /// Position of the well minimum.
    pub a: f64,
    /// Half-width of the well.
    pub w: f64,
    /// Well depth.
    pub k: f64,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self {
            a: 1.0,
            w: 0.3,
            k: 1.0,
        }
    }
}

impl PotentialSpec {
    /// Builds a spec and rejects parameters violating `0 < w < a`, `k > 0`.
    pub fn new(a: f64, w: f64, k: f64) -> Result<Self> {
        let spec = Self { a, w, k };
        let violations = spec.parameter_violations();
        if violations.is_empty() {
            Ok(spec)
        } else {
            Err(Error::InvalidPotential(violations.join(", ")))
        }
    }

    fn parameter_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.a > 0.0 && self.a.is_finite()) {
            out.push(format!("a > 0 (a = {})", self.a));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            out.push(format!("w > 0 (w = {})", self.w));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            out.push(format!("k > 0 (k = {})", self.k));
        }
        if !(self.w < self.a) {
            out.push(format!("w < a (w = {}, a = {})", self.w, self.a));
        }
        out
    }

    /// Interaction range `b = a + w`.
    #[inline]
    pub fn b(&self) -> f64 {
        self.a + self.w
    }

    /// Curvature at the minimum, `č = 8k/w²`.
    #[inline]
    pub fn chk(&self) -> f64 {
        8.0 * self.k / (self.w * self.w)
    }

    #[inline]
    fn in_well(&self, r: f64) -> bool {
        (r - self.a).abs() < self.w
    }

    /// `U(r)`.
    pub fn eval(&self, r: f64) -> f64 {
        if !self.in_well(r) {
            return 0.0;
        }
        let one_minus_t = 1.0 - sq((r - self.a) / self.w);
        -self.k * one_minus_t.powi(4)
    }

    /// `U(r) − U(a)`, evaluated without cancellation near the minimum.
    pub fn excess(&self, r: f64) -> f64 {
        if !self.in_well(r) {
            return self.k;
        }
        let t = sq((r - self.a) / self.w);
        // 1 − (1 − t)⁴ expanded.
        self.k * t * (4.0 - 6.0 * t + 4.0 * t * t - t * t * t)
    }

    /// `U'(r)`.
    pub fn deriv1(&self, r: f64) -> f64 {
        if !self.in_well(r) {
            return 0.0;
        }
        let u = r - self.a;
        let s = u * u - self.w * self.w;
        -8.0 * self.k * u * s * s * s / self.w.powi(8)
    }

    /// `U''(r)`.
    pub fn deriv2(&self, r: f64) -> f64 {
        if !self.in_well(r) {
            return 0.0;
        }
        let u = r - self.a;
        let s = u * u - self.w * self.w;
        -8.0 * self.k * (s * s * s + 6.0 * u * u * s * s) / self.w.powi(8)
    }

    /// `U'''(r)`.
    pub fn deriv3(&self, r: f64) -> f64 {
        if !self.in_well(r) {
            return 0.0;
        }
        let u = r - self.a;
        let s = u * u - self.w * self.w;
        -8.0 * self.k * (18.0 * u * s * s + 24.0 * u * u * u * s) / self.w.powi(8)
    }

    /// `−U'(r)/r`, the scalar such that the force on `x_i` is this times `x_i − x_j`.
    #[inline]
    pub fn force_factor(&self, r: f64) -> f64 {
        if !self.in_well(r) {
            return 0.0;
        }
        -self.deriv1(r) / r
    }
}

#[inline]
fn sq(v: f64) -> f64 {
    v * v
}

/// Free-function form of [`PotentialSpec::eval`].
pub fn eval_potential(spec: &PotentialSpec, r: f64) -> f64 {
    spec.eval(r)
}

/// `−∇_{x_i} U(x_i − x_j)`.
pub fn pair_force(spec: &PotentialSpec, xi: &[f64], xj: &[f64]) -> Result<Vec<f64>> {
    if xi.len() != xj.len() {
        return Err(Error::DimensionMismatch {
            expected: xi.len(),
            found: xj.len(),
        });
    }
    let diff: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| a - b).collect();
    let r = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(Error::CoincidentPoints { i: 0, j: 1 });
    }
    let f = spec.force_factor(r);
    Ok(diff.into_iter().map(|v| f * v).collect())
}

/// Hessian of `x ↦ U(|x|)` at `rvec`:
/// `U''(r) r̂r̂ᵀ + (U'(r)/r)(I − r̂r̂ᵀ)`.
pub fn pair_hessian(spec: &PotentialSpec, rvec: &[f64]) -> Result<DMatrix<f64>> {
    let d = rvec.len();
    let r = rvec.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(Error::CoincidentPoints { i: 0, j: 1 });
    }
    if r >= spec.b() || r <= spec.a - spec.w {
        return Ok(DMatrix::zeros(d, d));
    }
    let u2 = spec.deriv2(r);
    let u1_over_r = spec.deriv1(r) / r;
    Ok(DMatrix::from_fn(d, d, |p, q| {
        let proj = rvec[p] * rvec[q] / (r * r);
        let id = if p == q { 1.0 } else { 0.0 };
        u2 * proj + u1_over_r * (id - proj)
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`validate_assumption`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// Largest one-sided third-derivative jump found at a seam.
    pub third_derivative_seam_jump: f64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> Vec<&AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Numerically confirms the smoothness / finite range / unique minimum
/// requirements on a grid with step `1e-4` over `[0, 2b]`.
pub fn validate_assumption(spec: &PotentialSpec) -> AssumptionReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(AssumptionCheck {
            name: name.to_string(),
            passed,
            detail,
        })
    };

    let params_ok = spec.a > 0.0 && spec.w > 0.0 && spec.k > 0.0;
    push("a > 0", spec.a > 0.0, format!("a = {}", spec.a));
    push("w > 0", spec.w > 0.0, format!("w = {}", spec.w));
    push("k > 0", spec.k > 0.0, format!("k = {}", spec.k));
    push("w < a", spec.w < spec.a, format!("w = {}, a = {}", spec.w, spec.a));
    push("chk > 0", spec.chk() > 0.0, format!("chk = {}", spec.chk()));

    if !params_ok {
        return AssumptionReport {
            checks,
            third_derivative_seam_jump: f64::NAN,
        };
    }

    let step = 1e-4;
    let b = spec.b();
    let n = (2.0 * b / step).ceil() as usize;
    let u_min = spec.eval(spec.a);
    let mut unique = true;
    let mut below = 0usize;
    let mut nonzero_beyond = 0usize;
    for idx in 0..=n {
        let r = idx as f64 * step;
        let u = spec.eval(r);
        if u < u_min {
            below += 1;
        }
        if (r - spec.a).abs() > 0.5 * step && u <= u_min {
            unique = false;
        }
        if r >= b && u != 0.0 {
            nonzero_beyond += 1;
        }
    }
    push(
        "unique global minimum at r = a",
        unique && below == 0,
        format!("U(a) = {u_min}, grid points at or below: {below}"),
    );
    push(
        "U = 0 for r >= b",
        nonzero_beyond == 0,
        format!("{nonzero_beyond} nonzero grid values beyond b = {b}"),
    );

    // Seams: continuity of U, U', U'' from one-sided limits, and of U''' from
    // one-sided differences of U''.
    let delta = 1e-7;
    let mut third_jump: f64 = 0.0;
    let mut seam_ok = true;
    let mut detail = String::new();
    for seam in [spec.a - spec.w, spec.a + spec.w] {
        if seam - delta <= 0.0 {
            continue;
        }
        let tol0 = 1e-9 * spec.k;
        let jumps = [
            (spec.eval(seam - 1e-12) - spec.eval(seam + 1e-12)).abs(),
            (spec.deriv1(seam - 1e-12) - spec.deriv1(seam + 1e-12)).abs(),
            (spec.deriv2(seam - 1e-12) - spec.deriv2(seam + 1e-12)).abs(),
        ];
        let left = (spec.deriv2(seam) - spec.deriv2(seam - delta)) / delta;
        let right = (spec.deriv2(seam + delta) - spec.deriv2(seam)) / delta;
        let j3 = (left - right).abs();
        third_jump = third_jump.max(j3);
        let tol3 = 1e-3 * spec.k / spec.w.powi(3);
        if jumps.iter().any(|&j| j > tol0) || j3 > tol3 {
            seam_ok = false;
        }
        detail.push_str(&format!(
            "seam {seam}: jumps U/U'/U'' = {:?}, U''' = {j3:e}; ",
            jumps
        ));
    }
    push("C³ across seams", seam_ok, detail);

    AssumptionReport {
        checks,
        third_derivative_seam_jump: third_jump,
    }
}
