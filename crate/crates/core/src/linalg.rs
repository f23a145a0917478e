//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Replace `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(m: &Mat) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::dim("ragged matrix rows"));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Serde adapter storing a matrix as row-major nested arrays.
pub mod mat_rows {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        rows_of(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        mat_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub mod opt_mat_rows {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> std::result::Result<S::Ok, S::Error> {
        m.as_ref().map(rows_of).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Mat>, D::Error> {
        match Option::<Vec<Vec<f64>>>::deserialize(d)? {
            Some(rows) => mat_from_rows(&rows).map(Some).map_err(serde::de::Error::custom),
            None => Ok(None),
        }
    }
}

pub mod vec_serde {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub mod mat_rows_vec {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[Mat], s: S) -> std::result::Result<S::Ok, S::Error> {
        ms.iter().map(rows_of).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<Mat>, D::Error> {
        let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        all.iter()
            .map(|rows| mat_from_rows(rows).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub mod vec_serde_vec {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(vs: &[Vector], s: S) -> std::result::Result<S::Ok, S::Error> {
        vs.iter()
            .map(|v| v.as_slice().to_vec())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<Vector>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?
            .into_iter()
            .map(Vector::from_vec)
            .collect())
    }
}

/// Minimum-norm least-squares solution of `a x = b` (columns of `b` solved jointly).
pub fn lstsq_min_norm(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim("lstsq: row count mismatch"));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    svd.solve(b, tol)
        .map_err(|e| Error::Numerical(format!("svd solve failed: {e}")))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(m: &Mat) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eig(m: &Mat) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Stabilizing solution of the continuous algebraic Riccati equation
/// `Aᵀ P + P A − P B R⁻¹ Bᵀ P + Q = 0`, via the matrix sign function of the
/// Hamiltonian.
pub fn solve_care(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.nrows() != b.ncols() {
        return Err(Error::dim("care: inconsistent shapes"));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("care: R is singular".into()))?;
    let s = b * &r_inv * b.transpose();
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let dim = (2 * n) as f64;
    for _ in 0..100 {
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("care: Hamiltonian has imaginary-axis eigenvalues (unstabilizable or undetectable pair)".into()))?;
        // determinant scaling accelerates the Newton iteration
        let det = z.determinant().abs();
        let c = if det.is_finite() && det > 0.0 {
            det.powf(-1.0 / dim)
        } else {
            1.0
        };
        let next = (&z * c + &z_inv / c) * 0.5;
        let change = (&next - &z).norm() / next.norm().max(1.0);
        z = next;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("care: sign iteration diverged".into()));
        }
        if change < 1e-13 {
            break;
        }
    }
    let w11 = z.view((0, 0), (n, n)).into_owned();
    let w12 = z.view((0, n), (n, n)).into_owned();
    let w21 = z.view((n, 0), (n, n)).into_owned();
    let w22 = z.view((n, n), (n, n)).into_owned();
    let eye = Mat::identity(n, n);
    let mut lhs = Mat::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w22 + &eye));
    let mut rhs = Mat::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w11 + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let mut p = lstsq_min_norm(&lhs, &rhs)?;
    symmetrize(&mut p);
    let residual = a.transpose() * &p + &p * a - &p * &s * &p + q;
    let scale = q.norm().max(p.norm()).max(1.0);
    if !p.iter().all(|v| v.is_finite()) || residual.norm() > 1e-6 * scale {
        return Err(Error::Numerical(
            "care: no stabilizing solution (pair not stabilizable)".into(),
        ));
    }
    Ok(p)
}
