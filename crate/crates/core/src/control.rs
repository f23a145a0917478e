//! Forward-integrated state-dependent Riccati equation, the piecewise feedback
//! law derived from it, and an LQR baseline.

use serde::{Deserialize, Serialize};

use crate::identify::{AffineDynamics, Basis, PieceModel};
use crate::linalg::{solve_care, symmetrize, Mat, Vector};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    #[serde(with = "crate::linalg::mat_rows")]
    pub q: Mat,
    /// Diagonal of `R`.
    pub r: Vec<f64>,
    pub gamma: f64,
    /// Lift of `Q` into basis coordinates; derived from `Q` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::linalg::opt_mat_rows")]
    pub q_bar: Option<Mat>,
}

impl CostSpec {
    pub fn quadratic(q: Mat, r: Vec<f64>, gamma: f64) -> Result<Self> {
        let spec = Self { q, r, gamma, q_bar: None };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if self.q.nrows() != self.q.ncols() {
            return Err(Error::config("Q must be square"));
        }
        if crate::linalg::min_eig(&self.q) < -1e-12 {
            return Err(Error::config("Q must be positive semi-definite"));
        }
        if self.r.is_empty() || self.r.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::config("R must be diagonal with positive entries"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::config("discount must be non-negative"));
        }
        Ok(())
    }

    /// `xᵀQx + uᵀRu`.
    pub fn stage(&self, x: &Vector, u: &Vector) -> f64 {
        let ur: f64 = u.iter().zip(&self.r).map(|(v, r)| r * v * v).sum();
        x.dot(&(&self.q * x)) + ur
    }

    /// `Q̄` with `Q` placed on the linear coordinates of `Φ`.
    pub fn lifted(&self, basis: &Basis) -> Mat {
        if let Some(q_bar) = &self.q_bar {
            return q_bar.clone();
        }
        let n = basis.n();
        let mut q_bar = Mat::zeros(basis.p(), basis.p());
        q_bar.view_mut((1, 1), (n, n)).copy_from(&self.q);
        q_bar
    }
}

/// Right-hand side `Ṗ` of the forward Riccati equation at state `x`.
pub fn riccati_rhs(p: &Mat, piece: &PieceModel, basis: &Basis, cost: &CostSpec, q_bar: &Mat, x: &Vector) -> Mat {
    let pdim = basis.p();
    let n = basis.n();
    let m = cost.r.len();
    let phi = basis.eval(x);
    let jac = basis.jacobian(x);
    let w0 = piece.w.columns(0, pdim);
    let pj = p * &jac;
    let drift = &pj * w0;
    let mut s = Mat::zeros(n, n);
    for j in 0..m {
        let g = piece.w.columns(pdim * (j + 1), pdim) * &phi;
        s += &g * g.transpose() / cost.r[j];
    }
    q_bar + &drift + drift.transpose() - p * cost.gamma - &pj * s * pj.transpose()
}

/// One RK4 step of length `h` with `x` frozen. Returns the symmetrized matrix.
pub fn riccati_step(p: &Mat, piece: &PieceModel, basis: &Basis, cost: &CostSpec, x: &Vector, h: f64) -> Mat {
    let q_bar = cost.lifted(basis);
    let f = |m: &Mat| riccati_rhs(m, piece, basis, cost, &q_bar, x);
    let k1 = f(p);
    let k2 = f(&(p + &k1 * (h / 2.0)));
    let k3 = f(&(p + &k2 * (h / 2.0)));
    let k4 = f(&(p + &k3 * h));
    let mut next = p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    symmetrize(&mut next);
    next
}

/// `V = Φᵀ P Φ`.
pub fn value(p: &Mat, basis: &Basis, x: &Vector) -> f64 {
    let phi = basis.eval(x);
    phi.dot(&(p * &phi))
}

/// `u_j = −Φᵀ r_j⁻¹ P (∂Φ/∂x) W_j Φ`, before saturation.
pub fn feedback_raw(p: &Mat, piece: &PieceModel, basis: &Basis, cost: &CostSpec, x: &Vector) -> Vector {
    let pdim = basis.p();
    let phi = basis.eval(x);
    let jac = basis.jacobian(x);
    let left = (p * &jac).transpose() * &phi;
    Vector::from_iterator(
        cost.r.len(),
        (0..cost.r.len()).map(|j| {
            let g = piece.w.columns(pdim * (j + 1), pdim) * &phi;
            -left.dot(&g) / cost.r[j]
        }),
    )
}

pub fn feedback(p: &Mat, piece: &PieceModel, basis: &Basis, cost: &CostSpec, x: &Vector, u_bar: &[f64]) -> Vector {
    let u = feedback_raw(p, piece, basis, cost, x);
    Vector::from_iterator(u.len(), u.iter().zip(u_bar).map(|(v, b)| v.clamp(-b, *b)))
}

/// Affine gains with `u = −(K x + k)`: `K_j = r_j⁻¹ B_jᵀ P₂₂`, `k_j = r_j⁻¹ B_jᵀ P₁₂ᵀ`.
///
/// The quadratic block `P₂₂` plays the role of the state weight in the
/// linear closed loop; `linear_only` drops the offset `k`.
pub fn extract_affine_gains(p: &Mat, dynamics: &AffineDynamics, basis: &Basis, cost: &CostSpec, linear_only: bool) -> Result<(Mat, Vector)> {
    if !basis.is_affine() {
        return Err(Error::Unsupported("affine gains need the affine basis".into()));
    }
    let n = basis.n();
    let p22 = p.view((1, 1), (n, n));
    let p12t = p.view((1, 0), (n, 1));
    let m = dynamics.b.ncols();
    let mut k_mat = Mat::zeros(m, n);
    let mut k_vec = Vector::zeros(m);
    for j in 0..m {
        let bj = dynamics.b.column(j);
        let row = bj.transpose() * p22 / cost.r[j];
        k_mat.set_row(j, &row);
        if !linear_only {
            k_vec[j] = bj.dot(&p12t.column(0)) / cost.r[j];
        }
    }
    Ok((k_mat, k_vec))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiConfig {
    /// Integration step; defaults to the sampling time.
    pub h: f64,
    /// `P` starts at `init · I`.
    pub init: f64,
    /// Frobenius-norm ceiling beyond which a piece is declared diverged.
    pub cap: f64,
    /// Pieces are not integrated until they have seen this many samples.
    pub min_samples: usize,
}

impl Default for RiccatiConfig {
    fn default() -> Self {
        Self {
            h: 0.005,
            init: 1e-2,
            cap: 1e8,
            min_samples: 20,
        }
    }
}

/// Per-piece value matrices `P_σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueMatrix {
    #[serde(with = "crate::linalg::mat_rows_vec")]
    pub p: Vec<Mat>,
    pub config: RiccatiConfig,
    /// Number of completed integration steps per piece.
    pub steps: Vec<u64>,
    pub diverged: Vec<bool>,
}

impl ValueMatrix {
    pub fn new(pieces: usize, basis: &Basis, config: RiccatiConfig) -> Self {
        let pdim = basis.p();
        Self {
            p: vec![Mat::identity(pdim, pdim) * config.init; pieces],
            config,
            steps: vec![0; pieces],
            diverged: vec![false; pieces],
        }
    }

    /// Advance the active piece. A diverged piece is reset and flagged.
    pub fn update(&mut self, sigma: usize, piece: &PieceModel, basis: &Basis, cost: &CostSpec, x: &Vector) {
        if piece.sample_count < self.config.min_samples {
            return;
        }
        let next = riccati_step(&self.p[sigma], piece, basis, cost, x, self.config.h);
        if !next.iter().all(|v| v.is_finite()) || next.norm() > self.config.cap {
            log::warn!("value matrix of piece {sigma} diverged; resetting");
            let pdim = basis.p();
            self.p[sigma] = Mat::identity(pdim, pdim) * self.config.init;
            self.diverged[sigma] = true;
            return;
        }
        self.p[sigma] = next;
        self.steps[sigma] += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lqr {
    #[serde(with = "crate::linalg::mat_rows")]
    pub k: Mat,
    #[serde(with = "crate::linalg::mat_rows")]
    pub p: Mat,
}

/// Continuous-time LQR for `(A, B, Q, diag R)`.
pub fn lqr(a: &Mat, b: &Mat, q: &Mat, r: &[f64]) -> Result<Lqr> {
    let r_mat = Mat::from_diagonal(&Vector::from_vec(r.to_vec()));
    let p = solve_care(a, b, q, &r_mat)?;
    let r_inv = Mat::from_diagonal(&Vector::from_iterator(r.len(), r.iter().map(|v| 1.0 / v)));
    Ok(Lqr {
        k: r_inv * b.transpose() * &p,
        p,
    })
}
