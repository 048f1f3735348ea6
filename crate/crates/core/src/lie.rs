//! Small helpers on so(d) and SO(d).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Index pairs `(α, β)` with `α < β`, the coordinates of so(d).
pub fn so_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|a| (a + 1..d).map(move |b| (a, b))).collect()
}

/// `Proj X = (X − Xᵀ)/2`.
pub fn proj(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x - x.transpose()) * 0.5
}

/// `E_αβ − E_βα`.
pub fn generator(d: usize, alpha: usize, beta: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(d, d);
    g[(alpha, beta)] = 1.0;
    g[(beta, alpha)] = -1.0;
    g
}

/// Coordinates `X^{αβ}`, `α < β`.
pub fn so_coords(x: &DMatrix<f64>) -> Vec<f64> {
    so_pairs(x.nrows()).iter().map(|&(a, b)| x[(a, b)]).collect()
}

pub fn so_from_coords(d: usize, coords: &[f64]) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(d, d);
    for (&(a, b), v) in so_pairs(d).iter().zip(coords) {
        x[(a, b)] = *v;
        x[(b, a)] = -*v;
    }
    x
}

fn rotation_2d(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Matrix exponential of an antisymmetric matrix.
pub fn exp_so(x: &DMatrix<f64>) -> DMatrix<f64> {
    let d = x.nrows();
    match d {
        0 | 1 => DMatrix::identity(d, d),
        // X = [[0, −φ], [φ, 0]] generates the rotation by φ.
        2 => rotation_2d(x[(1, 0)]),
        3 => {
            let w = [x[(2, 1)], x[(0, 2)], x[(1, 0)]];
            let angle = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            let id = DMatrix::identity(3, 3);
            if angle < 1e-8 {
                return id + x + x * x * 0.5;
            }
            let k = x / angle;
            id + &k * angle.sin() + &k * &k * (1.0 - angle.cos())
        }
        _ => x.clone().exp(),
    }
}

/// Principal logarithm of a rotation. In d ≥ 4 only rotations with
/// `‖R − I‖_F < 1` are supported (power series).
pub fn log_so(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = r.nrows();
    match d {
        0 | 1 => Ok(DMatrix::zeros(d, d)),
        2 => {
            let angle = r[(1, 0)].atan2(r[(0, 0)]);
            Ok(so_from_coords(2, &[-angle]))
        }
        3 => {
            let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
            let angle = cos.acos();
            let skew = proj(r);
            if angle < 1e-6 {
                // log(R) ≈ Proj(R) (1 + θ²/6).
                return Ok(skew * (1.0 + angle * angle / 6.0));
            }
            if std::f64::consts::PI - angle < 1e-6 {
                // Axis from the symmetric part: R + I = 2nnᵀ.
                let s = (r + DMatrix::identity(3, 3)) * 0.5;
                let k = (0..3).max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)])).unwrap();
                let mut n: Vec<f64> = (0..3).map(|j| s[(k, j)]).collect();
                let nn = n.iter().map(|v| v * v).sum::<f64>().sqrt();
                n.iter_mut().for_each(|v| *v /= nn);
                let w: Vec<f64> = n.iter().map(|v| v * angle).collect();
                return Ok(DMatrix::from_row_slice(
                    3,
                    3,
                    &[0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0],
                ));
            }
            Ok(skew * (angle / angle.sin()))
        }
        _ => {
            let a = r - DMatrix::identity(d, d);
            let norm = a.norm();
            if norm >= 1.0 {
                return Err(Error::UnderSampled { index: 0, norm });
            }
            let mut term = a.clone();
            let mut sum = a.clone();
            for k in 2..200 {
                term = &term * &a;
                let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                sum += &term * (sign / k as f64);
                if term.norm() / (k as f64) < 1e-18 {
                    break;
                }
            }
            Ok(proj(&sum))
        }
    }
}
