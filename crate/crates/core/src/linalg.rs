//! Dense matrix exponential and a conjugate-gradient solver.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(A)` by scaling and squaring with the degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = a.nrows();
    if dim != a.ncols() {
        return Err(Error::InvalidParameter("expm needs a square matrix".into()));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(Error::NonFinite("expm input".into()));
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(squarings);
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(dim, dim);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::NonFinite("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expm".into()));
    }
    Ok(r)
}

/// Solves `A x = b` for a symmetric positive definite operator given by
/// `apply`, starting from `x0`. Converges when `‖r‖ ≤ tol ‖b‖`.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let dim = b.len();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let b_norm = dot(b, b).sqrt();
    let mut x = x0.to_vec();
    if b_norm == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let mut ax = vec![0.0; dim];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; dim];
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * b_norm {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..dim {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..dim {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    if rr.sqrt() <= tol * b_norm {
        return Ok(x);
    }
    Err(Error::NoConvergence {
        solver: "conjugate gradient",
        iterations: max_iter,
        residual: rr.sqrt() / b_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-30.0, 0.5, 2.0]));
        let e = expm(&a).unwrap();
        for (i, v) in [-30.0f64, 0.5, 2.0].iter().enumerate() {
            assert!((e[(i, i)] / v.exp() - 1.0).abs() < 1e-13);
        }
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn expm_rotation() {
        let t = 2.3f64;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&a).unwrap();
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-13);
        assert!((e[(1, 0)] - t.sin()).abs() < 1e-13);
    }

    #[test]
    fn expm_matches_eigendecomposition() {
        let dim = 12;
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..dim {
            a[(i, i)] = -50.0 + i as f64;
            if i + 1 < dim {
                a[(i, i + 1)] = 25.0;
                a[(i + 1, i)] = 25.0;
            }
        }
        let e = expm(&a).unwrap();
        let eig = a.clone().symmetric_eigen();
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
        let reference = &eig.eigenvectors * d * eig.eigenvectors.transpose();
        let scale = reference.amax();
        assert!((e - reference).amax() < 1e-12 * scale.max(1.0));
    }

    #[test]
    fn cg_solves_spd() {
        let diag = [4.0, 5.0, 6.0];
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..3 {
                y[i] = diag[i] * x[i];
                if i > 0 {
                    y[i] -= x[i - 1];
                }
                if i < 2 {
                    y[i] -= x[i + 1];
                }
            }
        };
        let b = [1.0, 2.0, 3.0];
        let x = conjugate_gradient(apply, &b, &[0.0; 3], 1e-14, 50).unwrap();
        let mut ax = [0.0; 3];
        apply(&x, &mut ax);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-12);
        }
    }
}
