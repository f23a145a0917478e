//! Per-piece recursive least squares and the curated sample database.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::linalg::{lstsq_min_norm, symmetrize, Mat, Vector};
use crate::{Error, Result};

/// Basis functions `Φ(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Basis {
    /// `Φ(x) = [1, xᵀ]ᵀ`.
    Affine { n: usize },
    /// `[1, xᵀ, x_i x_j (i ≤ j)]ᵀ`.
    Quadratic { n: usize },
}

impl Basis {
    pub fn n(&self) -> usize {
        match *self {
            Basis::Affine { n } | Basis::Quadratic { n } => n,
        }
    }

    pub fn p(&self) -> usize {
        match *self {
            Basis::Affine { n } => n + 1,
            Basis::Quadratic { n } => 1 + n + n * (n + 1) / 2,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Basis::Affine { .. })
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        let n = self.n();
        let mut phi = Vector::zeros(self.p());
        phi[0] = 1.0;
        phi.rows_mut(1, n).copy_from(x);
        if let Basis::Quadratic { .. } = self {
            let mut k = n + 1;
            for i in 0..n {
                for j in i..n {
                    phi[k] = x[i] * x[j];
                    k += 1;
                }
            }
        }
        phi
    }

    /// `∂Φ/∂x`, shape `p × n`.
    pub fn jacobian(&self, x: &Vector) -> Mat {
        let n = self.n();
        let mut jac = Mat::zeros(self.p(), n);
        for i in 0..n {
            jac[(1 + i, i)] = 1.0;
        }
        if let Basis::Quadratic { .. } = self {
            let mut k = n + 1;
            for i in 0..n {
                for j in i..n {
                    jac[(k, i)] += x[j];
                    jac[(k, j)] += x[i];
                    k += 1;
                }
            }
        }
        jac
    }

    /// Regressor length `p (1 + m)`.
    pub fn q(&self, m: usize) -> usize {
        self.p() * (1 + m)
    }

    /// `Θ = [Φᵀ, Φᵀu₁, …, Φᵀu_m]ᵀ`.
    pub fn regressor(&self, x: &Vector, u: &Vector) -> Vector {
        let phi = self.eval(x);
        let p = phi.len();
        let mut theta = Vector::zeros(p * (1 + u.len()));
        theta.rows_mut(0, p).copy_from(&phi);
        for (j, uj) in u.iter().enumerate() {
            theta.rows_mut(p * (j + 1), p).copy_from(&(&phi * *uj));
        }
        theta
    }

    /// Which regressor entries carry identifiable weights. For the affine
    /// basis the input weights are `[B_j | 0]`, so only the constant part of
    /// each `Φ u_j` block is active.
    pub fn active(&self, m: usize) -> Vec<bool> {
        let p = self.p();
        (0..self.q(m))
            .map(|k| !self.is_affine() || k < p || k % p == 0)
            .collect()
    }

    pub fn masked_regressor(&self, x: &Vector, u: &Vector) -> Vector {
        let mut theta = self.regressor(x, u);
        for (k, on) in self.active(u.len()).into_iter().enumerate() {
            if !on {
                theta[k] = 0.0;
            }
        }
        theta
    }
}

/// `ẋ = A x + B u + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineDynamics {
    #[serde(with = "crate::linalg::mat_rows")]
    pub a: Mat,
    #[serde(with = "crate::linalg::mat_rows")]
    pub b: Mat,
    #[serde(with = "crate::linalg::vec_serde")]
    pub c: Vector,
}

impl AffineDynamics {
    pub fn eval(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u + &self.c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlsConfig {
    /// Covariance initialization `κ I`.
    pub kappa: f64,
    /// Forgetting factor.
    pub lambda: f64,
}

impl Default for RlsConfig {
    fn default() -> Self {
        Self {
            kappa: 1e3,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceModel {
    /// Weight stack `[W, W₁, …, W_m]`, shape `n × q`.
    #[serde(with = "crate::linalg::mat_rows")]
    pub w: Mat,
    /// Inverse information matrix.
    #[serde(with = "crate::linalg::mat_rows")]
    pub cov: Mat,
    pub sample_count: usize,
    /// Running mean of the a-priori prediction error norm.
    pub avg_error: f64,
}

impl PieceModel {
    pub fn new(n: usize, q: usize, kappa: f64) -> Self {
        Self {
            w: Mat::zeros(n, q),
            cov: Mat::identity(q, q) * kappa,
            sample_count: 0,
            avg_error: 0.0,
        }
    }

    pub fn predict_theta(&self, theta: &Vector) -> Vector {
        &self.w * theta
    }

    pub fn predict(&self, basis: &Basis, x: &Vector, u: &Vector) -> Vector {
        self.predict_theta(&basis.regressor(x, u))
    }

    /// One RLS step. Returns `true` if the covariance had to be reset.
    pub fn rls_update(&mut self, theta: &Vector, f: &Vector, cfg: &RlsConfig) -> Result<bool> {
        if theta.len() != self.cov.nrows() || f.len() != self.w.nrows() {
            return Err(Error::dim("rls_update: regressor or target length"));
        }
        let pt = &self.cov * theta;
        let denom = cfg.lambda + theta.dot(&pt);
        let gain = &pt / denom;
        let innovation = f - &self.w * theta;
        self.w += &innovation * gain.transpose();
        self.cov = (&self.cov - &gain * pt.transpose()) / cfg.lambda;
        symmetrize(&mut self.cov);
        self.sample_count += 1;
        let healthy = self.cov.iter().all(|v| v.is_finite()) && self.cov.clone().cholesky().is_some();
        if !healthy {
            log::warn!("RLS covariance lost positive definiteness; resetting to κI");
            let q = self.cov.nrows();
            self.cov = Mat::identity(q, q) * cfg.kappa;
        }
        Ok(!healthy)
    }

    /// `(A, B, C)` from `W = [C | A]`, `W_j = [B_j | 0]`.
    pub fn affine_parts(&self, basis: &Basis) -> Result<AffineDynamics> {
        let Basis::Affine { n } = *basis else {
            return Err(Error::Unsupported("affine decomposition of a non-affine basis".into()));
        };
        let p = n + 1;
        let m = self.w.ncols() / p - 1;
        let c = self.w.column(0).into_owned();
        let a = self.w.view((0, 1), (n, n)).into_owned();
        let mut b = Mat::zeros(n, m);
        for j in 0..m {
            b.set_column(j, &self.w.column(p * (j + 1)));
        }
        Ok(AffineDynamics { a, b, c })
    }

    pub fn set_affine(&mut self, dynamics: &AffineDynamics) {
        let n = dynamics.a.nrows();
        let p = n + 1;
        self.w.fill(0.0);
        self.w.set_column(0, &dynamics.c);
        self.w.view_mut((0, 1), (n, n)).copy_from(&dynamics.a);
        for j in 0..dynamics.b.ncols() {
            self.w.set_column(p * (j + 1), &dynamics.b.column(j));
        }
    }
}

/// Minimum-norm least squares weight stack for `F ≈ W Θ`.
pub fn batch_ls(thetas: &[Vector], targets: &[Vector]) -> Result<Mat> {
    if thetas.is_empty() || thetas.len() != targets.len() {
        return Err(Error::dim("batch_ls needs matching, non-empty samples"));
    }
    let q = thetas[0].len();
    let n = targets[0].len();
    let big_theta = Mat::from_fn(thetas.len(), q, |r, c| thetas[r][c]);
    let y = Mat::from_fn(targets.len(), n, |r, c| targets[r][c]);
    Ok(lstsq_min_norm(&big_theta, &y)?.transpose())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(with = "crate::linalg::vec_serde")]
    pub x: Vector,
    #[serde(with = "crate::linalg::vec_serde")]
    pub u: Vector,
    #[serde(with = "crate::linalg::vec_serde")]
    pub theta: Vector,
    /// Measured (or finite-difference) derivative.
    #[serde(with = "crate::linalg::vec_serde")]
    pub f: Vector,
    pub err: f64,
}

/// Per-piece ring buffers of curated samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDb {
    pub cap: usize,
    pub eta: f64,
    pub pieces: Vec<VecDeque<SampleRecord>>,
}

impl SampleDb {
    pub fn new(pieces: usize, cap: usize, eta: f64) -> Result<Self> {
        if cap == 0 || !(eta > 0.0) {
            return Err(Error::config("sample database needs cap ≥ 1 and η > 0"));
        }
        Ok(Self {
            cap,
            eta,
            pieces: vec![VecDeque::new(); pieces],
        })
    }

    /// Insert if the error beats `η ē` or the piece is still below `q`
    /// samples; a full piece drops its oldest record.
    pub fn insert(&mut self, sigma: usize, record: SampleRecord, avg_error: f64, q: usize) -> bool {
        let ring = &mut self.pieces[sigma];
        let accept = ring.len() < q || record.err > self.eta * avg_error;
        if accept {
            if ring.len() >= self.cap {
                ring.pop_front();
            }
            ring.push_back(record);
        }
        accept
    }

    pub fn len(&self, sigma: usize) -> usize {
        self.pieces[sigma].len()
    }

    pub fn total(&self) -> usize {
        self.pieces.iter().map(VecDeque::len).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let first = self.pieces.iter().flat_map(|p| p.iter()).next();
        let (n, m) = first.map_or((0, 0), |r| (r.x.len(), r.u.len()));
        let mut header = vec!["sigma".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|j| format!("u{j}")));
        header.extend((1..=n).map(|i| format!("f{i}")));
        header.push("err".into());
        w.write_record(&header)?;
        for (s, ring) in self.pieces.iter().enumerate() {
            for r in ring {
                let mut row = vec![s.to_string()];
                row.extend(r.x.iter().chain(r.u.iter()).chain(r.f.iter()).map(|v| v.to_string()));
                row.push(r.err.to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// All pieces of the identified model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseModel {
    pub basis: Basis,
    pub m: usize,
    pub rls: RlsConfig,
    pub pieces: Vec<PieceModel>,
}

impl PiecewiseModel {
    pub fn new(basis: Basis, m: usize, pieces: usize, rls: RlsConfig) -> Self {
        let piece = PieceModel::new(basis.n(), basis.q(m), rls.kappa);
        Self {
            basis,
            m,
            rls,
            pieces: vec![piece; pieces],
        }
    }

    pub fn q(&self) -> usize {
        self.basis.q(self.m)
    }

    pub fn predict(&self, sigma: usize, x: &Vector, u: &Vector) -> Vector {
        self.pieces[sigma].predict(&self.basis, x, u)
    }

    /// Feed one sample: curate it into the database, then update the piece.
    /// Returns whether the sample was stored.
    pub fn observe(&mut self, db: &mut SampleDb, sigma: usize, x: &Vector, u: &Vector, f: &Vector) -> Result<bool> {
        let theta = self.basis.masked_regressor(x, u);
        let piece = &mut self.pieces[sigma];
        let err = (f - piece.predict_theta(&theta)).norm();
        let stored = db.insert(
            sigma,
            SampleRecord {
                x: x.clone(),
                u: u.clone(),
                theta: theta.clone(),
                f: f.clone(),
                err,
            },
            piece.avg_error,
            self.basis.q(self.m),
        );
        let k = piece.sample_count as f64;
        piece.avg_error = (piece.avg_error * k + err) / (k + 1.0);
        piece.rls_update(&theta, f, &self.rls)?;
        Ok(stored)
    }

    pub fn affine(&self) -> Result<Vec<AffineDynamics>> {
        self.pieces.iter().map(|p| p.affine_parts(&self.basis)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn regressor_layout() {
        let b = Basis::Affine { n: 1 };
        assert_eq!(b.regressor(&v(&[2.0]), &v(&[3.0])), v(&[1.0, 2.0, 3.0, 6.0]));
        let t = b.regressor(&v(&[2.0]), &v(&[0.0]));
        assert_eq!(t.rows(2, 2).sum(), 0.0);
        let b1 = Basis::Affine { n: 1 };
        assert_eq!(b1.regressor(&v(&[1.0]), &v(&[1.0, 2.0])).len(), 6);
        assert_eq!(b.masked_regressor(&v(&[2.0]), &v(&[3.0])), v(&[1.0, 2.0, 3.0, 0.0]));
    }

    #[test]
    fn quadratic_jacobian_matches_differences() {
        let b = Basis::Quadratic { n: 2 };
        let x = v(&[0.3, -0.7]);
        let jac = b.jacobian(&x);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (b.eval(&xp) - b.eval(&xm)) / (2.0 * h);
            for k in 0..b.p() {
                assert_relative_eq!(jac[(k, i)], fd[k], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn zero_innovation_leaves_weights() {
        let mut p = PieceModel::new(2, 6, 1e3);
        p.w = Mat::from_fn(2, 6, |i, j| (i + j) as f64);
        let theta = v(&[1.0, 0.5, -0.2, 0.3, 0.0, 0.0]);
        let f = p.predict_theta(&theta);
        let before = p.w.clone();
        p.rls_update(&theta, &f, &RlsConfig::default()).unwrap();
        assert_eq!(p.w, before);
    }

    #[test]
    fn affine_layout_roundtrip() {
        let dynamics = AffineDynamics {
            a: Mat::from_row_slice(2, 2, &[0.0, 1.0, 19.6, -2.7]),
            b: Mat::from_row_slice(2, 1, &[0.0, 26.7]),
            c: v(&[0.1, -0.3]),
        };
        let basis = Basis::Affine { n: 2 };
        let mut p = PieceModel::new(2, basis.q(1), 1.0);
        p.set_affine(&dynamics);
        assert_eq!(p.affine_parts(&basis).unwrap(), dynamics);
        let x = v(&[0.4, 0.2]);
        let u = v(&[1.5]);
        assert_relative_eq!(p.predict(&basis, &x, &u), dynamics.eval(&x, &u), epsilon = 1e-12);
        assert_eq!(p.predict(&basis, &Vector::zeros(2), &Vector::zeros(1)), dynamics.c);
    }

    #[test]
    fn db_ring_and_threshold() {
        let rec = |err: f64, tag: f64| SampleRecord {
            x: v(&[tag]),
            u: v(&[0.0]),
            theta: v(&[1.0]),
            f: v(&[0.0]),
            err,
        };
        let mut db = SampleDb::new(1, 3, 1.0).unwrap();
        assert!(db.insert(0, rec(0.0, 0.0), 0.0, 1));
        assert!(!db.insert(0, rec(0.0, 1.0), 0.5, 1));
        for k in 0..4 {
            assert!(db.insert(0, rec(1.0, 10.0 + k as f64), 0.5, 1));
        }
        assert_eq!(db.len(0), 3);
        assert_eq!(db.pieces[0][0].x[0], 11.0);
    }

    #[test]
    fn single_sample_batch_interpolates() {
        let theta = v(&[1.0, 0.5, 2.0, 1.0]);
        let f = v(&[3.0]);
        let w = batch_ls(std::slice::from_ref(&theta), std::slice::from_ref(&f)).unwrap();
        assert_relative_eq!((&w * &theta)[0], 3.0, epsilon = 1e-12);
    }
}
