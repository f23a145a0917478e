//! Analytic-center cutting-plane learner for two-step Lyapunov candidates
//! `V(x) = [x; x⁺]ᵀ P̂ [x; x⁺]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::linalg::{max_eig, min_eig, symmetrize, Mat, Vector};
use crate::{Error, Result};

/// `(x, x⁺, x⁺⁺)` with the disturbances that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTriple {
    #[serde(with = "crate::linalg::vec_serde")]
    pub x: Vector,
    #[serde(with = "crate::linalg::vec_serde")]
    pub x1: Vector,
    #[serde(with = "crate::linalg::vec_serde")]
    pub x2: Vector,
    #[serde(with = "crate::linalg::vec_serde")]
    pub d0: Vector,
    #[serde(with = "crate::linalg::vec_serde")]
    pub d1: Vector,
}

impl SampleTriple {
    pub fn undisturbed(x: Vector, x1: Vector, x2: Vector) -> Self {
        let n = x.len();
        Self {
            x,
            x1,
            x2,
            d0: Vector::zeros(n),
            d1: Vector::zeros(n),
        }
    }

    fn stacked(&self) -> (Vector, Vector) {
        let n = self.x.len();
        let mut a = Vector::zeros(2 * n);
        a.rows_mut(0, n).copy_from(&self.x1);
        a.rows_mut(n, n).copy_from(&self.x2);
        let mut b = Vector::zeros(2 * n);
        b.rows_mut(0, n).copy_from(&self.x);
        b.rows_mut(n, n).copy_from(&self.x1);
        (a, b)
    }
}

/// `[x⁺; x⁺⁺]ᵀ P̂ [x⁺; x⁺⁺] − [x; x⁺]ᵀ P̂ [x; x⁺]`.
pub fn delta_v(p: &Mat, t: &SampleTriple) -> f64 {
    let (a, b) = t.stacked();
    a.dot(&(p * &a)) - b.dot(&(p * &b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapCandidate {
    #[serde(with = "crate::linalg::mat_rows")]
    pub p: Mat,
    pub iteration: usize,
    /// `min_s −ΔV` over the sample set (infinite when it is empty).
    pub margin: f64,
    /// `log det` of the inverse barrier Hessian at the centre.
    pub volume_proxy: f64,
}

impl LyapCandidate {
    /// Parse from row-major JSON, rejecting asymmetric or out-of-range matrices.
    pub fn from_json(text: &str) -> Result<Self> {
        let c: LyapCandidate = serde_json::from_str(text)?;
        if crate::linalg::max_asymmetry(&c.p) > 1e-9 {
            return Err(Error::Validation("candidate matrix is not symmetric".into()));
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Proposal {
    Candidate(LyapCandidate),
    /// The phase-1 problem certifies that no admissible `P̂` exists.
    /// `bound` is the certified upper bound on the best achievable margin.
    Infeasible { bound: f64, within_tolerance: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccpmConfig {
    /// Strictness `ΔV ≤ −τ‖x‖²`.
    pub tau: f64,
    /// Infeasibility tolerance for the phase-1 bound.
    pub eps_acc: f64,
    /// Newton iterations per centering.
    pub newton_cap: usize,
    /// Constant in the outer iteration cap `C (2n)³ / ε²`.
    pub cap_constant: f64,
}

impl Default for AccpmConfig {
    fn default() -> Self {
        Self {
            tau: 1e-6,
            eps_acc: 1e-6,
            newton_cap: 200,
            cap_constant: 1.0,
        }
    }
}

impl AccpmConfig {
    /// Outer iteration cap `C (2n)³ / ε_acc²`, saturated to `usize`.
    pub fn iteration_cap(&self, n: usize) -> usize {
        let d = (2 * n) as f64;
        let cap = self.cap_constant * d.powi(3) / (self.eps_acc * self.eps_acc);
        if cap >= usize::MAX as f64 {
            usize::MAX
        } else {
            cap.max(1.0) as usize
        }
    }
}

/// Coordinates of a symmetric `d × d` matrix: diagonal then upper triangle.
struct SymBasis {
    d: usize,
    pairs: Vec<(usize, usize)>,
}

impl SymBasis {
    fn new(d: usize) -> Self {
        let mut pairs: Vec<(usize, usize)> = (0..d).map(|i| (i, i)).collect();
        for i in 0..d {
            for j in (i + 1)..d {
                pairs.push((i, j));
            }
        }
        Self { d, pairs }
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn matrix(&self, theta: &[f64]) -> Mat {
        let mut m = Mat::zeros(self.d, self.d);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            m[(i, j)] = theta[k];
            m[(j, i)] = theta[k];
        }
        m
    }

    fn coords(&self, m: &Mat) -> Vec<f64> {
        self.pairs.iter().map(|&(i, j)| m[(i, j)]).collect()
    }

    /// `⟨Y, E_k⟩` for every coordinate.
    fn inner(&self, y: &Mat) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|&(i, j)| if i == j { y[(i, i)] } else { y[(i, j)] + y[(j, i)] })
            .collect()
    }
}

/// `A0 + Σ_k z_k F_k ≻ 0`, with `F_k` given as `scale_k E_{pair(k)}` or `−s I`.
struct MatrixBarrier {
    a0: Mat,
    /// Sign of `P̂` in the constraint (+1 for `P̂`, −1 for `I − P̂`).
    sign: f64,
}

/// Self-concordant barrier over `z = (θ, [s])` for the learner.
struct Barrier<'a> {
    basis: &'a SymBasis,
    /// Rows `(m_s, c_s)`: slack `c_s − m_sᵀθ`.
    cuts: &'a [(Vec<f64>, f64)],
    mats: [MatrixBarrier; 2],
    /// With a margin variable `s` (phase 1), every slack is reduced by `s`.
    phase1: bool,
    /// Weight on `−s` in phase 1.
    t: f64,
}

impl Barrier<'_> {
    fn dim(&self) -> usize {
        self.basis.len() + self.phase1 as usize
    }

    fn split<'z>(&self, z: &'z [f64]) -> (&'z [f64], f64) {
        if self.phase1 {
            (&z[..z.len() - 1], z[z.len() - 1])
        } else {
            (z, 0.0)
        }
    }

    fn slacks(&self, z: &[f64]) -> Vec<f64> {
        let (theta, s) = self.split(z);
        self.cuts
            .iter()
            .map(|(m, c)| c - m.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() - s)
            .collect()
    }

    fn mat_values(&self, z: &[f64]) -> [Mat; 2] {
        let (theta, s) = self.split(z);
        let p = self.basis.matrix(theta);
        let d = self.basis.d;
        let eye = Mat::identity(d, d);
        [0, 1].map(|k| {
            let mb = &self.mats[k];
            &mb.a0 + &p * mb.sign - &eye * s
        })
    }

    /// Objective value, or `None` outside the domain.
    fn value(&self, z: &[f64]) -> Option<f64> {
        let mut f = 0.0;
        for g in self.slacks(z) {
            if !(g > 0.0) {
                return None;
            }
            f -= g.ln();
        }
        for m in self.mat_values(z) {
            let chol = m.cholesky()?;
            f -= 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        }
        if self.phase1 {
            f -= self.t * z[z.len() - 1];
        }
        Some(f)
    }

    fn grad_hess(&self, z: &[f64]) -> Option<(Vector, Mat)> {
        let dim = self.dim();
        let nb = self.basis.len();
        let mut g = Vector::zeros(dim);
        let mut h = Mat::zeros(dim, dim);
        for ((m, _), slack) in self.cuts.iter().zip(self.slacks(z)) {
            if !(slack > 0.0) {
                return None;
            }
            // slack = c − mᵀθ − s
            let mut a = Vector::zeros(dim);
            for k in 0..nb {
                a[k] = m[k];
            }
            if self.phase1 {
                a[nb] = 1.0;
            }
            g += &a / slack;
            h += &a * a.transpose() / (slack * slack);
        }
        let d = self.basis.d;
        for (mb, val) in self.mats.iter().zip(self.mat_values(z)) {
            let inv = val.cholesky()?.inverse();
            // F_k = sign E_k for θ, −I for s
            let mut grads = self.basis.inner(&inv);
            for v in grads.iter_mut() {
                *v *= mb.sign;
            }
            // ⟨X⁻¹ F_k X⁻¹, F_l⟩
            let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
            for &(i, j) in &self.basis.pairs {
                let mut e = Mat::zeros(d, d);
                e[(i, j)] = mb.sign;
                e[(j, i)] = mb.sign;
                let y = &inv * e * &inv;
                let mut col: Vec<f64> = self.basis.inner(&y).iter().map(|v| v * mb.sign).collect();
                if self.phase1 {
                    col.push(-y.trace());
                }
                cols.push(col);
            }
            if self.phase1 {
                let y = &inv * &inv;
                let mut col: Vec<f64> = self.basis.inner(&y).iter().map(|v| -v * mb.sign).collect();
                col.push(y.trace());
                cols.push(col);
                grads.push(-inv.trace());
            }
            for k in 0..dim {
                g[k] -= grads[k];
                for l in 0..dim {
                    h[(k, l)] += cols[k][l];
                }
            }
        }
        if self.phase1 {
            g[nb] -= self.t;
        }
        symmetrize(&mut h);
        Some((g, h))
    }

    /// Damped Newton centering. Returns the centre and the final Hessian.
    fn center(&self, mut z: Vec<f64>, cap: usize, mut stop: impl FnMut(&[f64]) -> bool) -> Result<(Vec<f64>, Mat)> {
        let mut f = self
            .value(&z)
            .ok_or_else(|| Error::Internal("barrier centering started outside its domain".into()))?;
        for _ in 0..cap {
            let (g, h) = self
                .grad_hess(&z)
                .ok_or_else(|| Error::Internal("barrier left its domain".into()))?;
            let chol = h
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical("barrier Hessian is singular".into()))?;
            let step = -chol.solve(&g);
            let decrement2 = -g.dot(&step);
            if decrement2 < 1e-10 || stop(&z) {
                return Ok((z, h));
            }
            let lam = decrement2.sqrt();
            // full steps inside the quadratic-convergence region, damped outside
            let mut alpha = if lam < 0.25 { 1.0 } else { 1.0 / (1.0 + lam) };
            loop {
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + alpha * b).collect();
                match self.value(&trial) {
                    Some(ft) if ft <= f - 0.25 * alpha * decrement2 => {
                        // round-off floor: the decrement no longer shrinks
                        let stalled = lam < 0.25 && f - ft <= 1e-12 * (1.0 + f.abs());
                        z = trial;
                        f = ft;
                        if stalled {
                            return Ok((z, h));
                        }
                        break;
                    }
                    _ if alpha < 1e-12 => {
                        // no progress possible at working precision
                        return Ok((z, h));
                    }
                    _ => alpha *= 0.5,
                }
            }
        }
        Err(Error::Numerical(format!("Newton centering did not converge in {cap} iterations")))
    }
}

/// Cutting-plane learner holding the sample set `𝒮`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Learner {
    pub n: usize,
    pub config: AccpmConfig,
    pub samples: Vec<SampleTriple>,
    pub iteration: usize,
    last_center: Option<Vec<f64>>,
}

impl Learner {
    pub fn new(n: usize, config: AccpmConfig) -> Self {
        Self {
            n,
            config,
            samples: vec![],
            iteration: 0,
            last_center: None,
        }
    }

    /// Append a triple; near-duplicates (within 1e−9) are ignored.
    pub fn add_counterexample(&mut self, t: SampleTriple) -> Result<bool> {
        let n = self.n;
        let parts = [&t.x, &t.x1, &t.x2, &t.d0, &t.d1];
        if parts.iter().any(|v| v.len() != n) {
            return Err(Error::Validation("triple has wrong dimension".into()));
        }
        if parts.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Validation("triple is not finite".into()));
        }
        let close = |a: &Vector, b: &Vector| (a - b).amax() <= 1e-9;
        if self
            .samples
            .iter()
            .any(|s| close(&s.x, &t.x) && close(&s.x1, &t.x1) && close(&s.x2, &t.x2))
        {
            return Ok(false);
        }
        self.samples.push(t);
        Ok(true)
    }

    fn cuts(&self, basis: &SymBasis) -> Vec<(Vec<f64>, f64)> {
        self.samples
            .iter()
            .map(|t| {
                let (a, b) = t.stacked();
                let norm = (a.norm_squared() + b.norm_squared()).max(1e-300);
                let m = &a * a.transpose() - &b * b.transpose();
                let row: Vec<f64> = basis.inner(&m).iter().map(|v| v / norm).collect();
                (row, -self.config.tau * t.x.norm_squared() / norm)
            })
            .collect()
    }

    /// Analytic centre of `{0 ≺ P̂ ≺ I, ΔV(s) ≤ −τ‖x_s‖² ∀ s}`, or a
    /// certificate that the set is empty.
    pub fn propose(&mut self) -> Result<Proposal> {
        let d = 2 * self.n;
        let basis = SymBasis::new(d);
        let cuts = self.cuts(&basis);
        let mats = || {
            [
                MatrixBarrier { a0: Mat::zeros(d, d), sign: 1.0 },
                MatrixBarrier { a0: Mat::identity(d, d), sign: -1.0 },
            ]
        };
        let half = basis.coords(&(Mat::identity(d, d) * 0.5));
        let start = self.last_center.clone().unwrap_or(half.clone());

        let phase2 = Barrier {
            basis: &basis,
            cuts: &cuts,
            mats: mats(),
            phase1: false,
            t: 0.0,
        };
        let feasible_start = if phase2.value(&start).is_some() {
            start
        } else {
            match self.phase1(&basis, &cuts, &start)? {
                Ok(z) => z,
                Err(infeasible) => return Ok(infeasible),
            }
        };
        let (theta, hess) = phase2.center(feasible_start, self.config.newton_cap, |_| false)?;
        let p = basis.matrix(&theta);
        let margin = self
            .samples
            .iter()
            .map(|t| -delta_v(&p, t))
            .fold(f64::INFINITY, f64::min);
        let volume_proxy = -hess
            .cholesky()
            .map(|c| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
            .unwrap_or(f64::NAN);
        self.last_center = Some(theta);
        self.iteration += 1;
        Ok(Proposal::Candidate(LyapCandidate {
            p,
            iteration: self.iteration,
            margin,
            volume_proxy,
        }))
    }

    /// Maximize the common margin `s`. Returns a strictly feasible point or an
    /// infeasibility certificate.
    fn phase1(&self, basis: &SymBasis, cuts: &[(Vec<f64>, f64)], start: &[f64]) -> Result<std::result::Result<Vec<f64>, Proposal>> {
        let d = basis.d;
        let p0 = basis.matrix(start);
        let mut s0 = min_eig(&p0).min(1.0 - max_eig(&p0));
        for (m, c) in cuts {
            s0 = s0.min(c - m.iter().zip(start).map(|(a, b)| a * b).sum::<f64>());
        }
        let mut z: Vec<f64> = start.to_vec();
        z.push(s0 - 1.0);
        // barrier degree: one per cut plus the matrix dimension per LMI
        let degree = (cuts.len() + 2 * d) as f64;
        let mut t = 1.0;
        for _ in 0..60 {
            let bar = Barrier {
                basis,
                cuts,
                mats: [
                    MatrixBarrier { a0: Mat::zeros(d, d), sign: 1.0 },
                    MatrixBarrier { a0: Mat::identity(d, d), sign: -1.0 },
                ],
                phase1: true,
                t,
            };
            let (zc, _) = bar.center(z, self.config.newton_cap, |zz| zz[zz.len() - 1] > 0.0)?;
            z = zc;
            let s = z[z.len() - 1];
            if s > 0.0 {
                z.pop();
                return Ok(Ok(z));
            }
            let bound = s + degree / t;
            if bound < 0.0 {
                return Ok(Err(Proposal::Infeasible { bound, within_tolerance: false }));
            }
            if degree / t < self.config.eps_acc {
                return Ok(Err(Proposal::Infeasible { bound, within_tolerance: true }));
            }
            t *= 10.0;
        }
        Err(Error::Numerical("phase-1 solve did not terminate".into()))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.n;
        let mut header = Vec::new();
        for name in ["x", "xp", "xpp", "d0", "d1"] {
            header.extend((1..=n).map(|i| format!("{name}{i}")));
        }
        w.write_record(&header)?;
        for t in &self.samples {
            let row: Vec<String> = [&t.x, &t.x1, &t.x2, &t.d0, &t.d1]
                .iter()
                .flat_map(|v| v.iter().map(|c| c.to_string()))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
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
    fn delta_v_hand_cases() {
        let t = SampleTriple::undisturbed(v(&[1.0]), v(&[0.5]), v(&[0.25]));
        assert_eq!(delta_v(&Mat::zeros(2, 2), &t), 0.0);
        let fixed = SampleTriple::undisturbed(v(&[0.7]), v(&[0.7]), v(&[0.7]));
        assert_eq!(delta_v(&Mat::identity(2, 2), &fixed), 0.0);
        assert_relative_eq!(delta_v(&Mat::identity(2, 2), &t), 1.0 / 16.0 - 1.0);
    }

    #[test]
    fn empty_set_gives_half_identity() {
        let mut l = Learner::new(2, AccpmConfig::default());
        let Proposal::Candidate(c) = l.propose().unwrap() else { panic!("infeasible") };
        assert_relative_eq!(c.p, Mat::identity(4, 4) * 0.5, epsilon = 1e-9);
    }

    #[test]
    fn contraction_samples_are_separated() {
        let mut l = Learner::new(1, AccpmConfig::default());
        for x in [1.0, -2.0, 0.5] {
            l.add_counterexample(SampleTriple::undisturbed(v(&[x]), v(&[0.5 * x]), v(&[0.25 * x]))).unwrap();
        }
        let Proposal::Candidate(c) = l.propose().unwrap() else { panic!("infeasible") };
        let eig = c.p.clone().symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e > 0.0 && e < 1.0));
        assert!(l.samples.iter().all(|t| delta_v(&c.p, t) < 0.0));
    }

    #[test]
    fn expanding_map_is_infeasible() {
        let mut l = Learner::new(2, AccpmConfig::default());
        for x in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]] {
            let x0 = v(&x);
            l.add_counterexample(SampleTriple::undisturbed(x0.clone(), &x0 * 2.0, &x0 * 4.0)).unwrap();
        }
        assert!(matches!(l.propose().unwrap(), Proposal::Infeasible { .. }));
    }

    #[test]
    fn duplicates_are_ignored() {
        let mut l = Learner::new(1, AccpmConfig::default());
        let t = SampleTriple::undisturbed(v(&[1.0]), v(&[0.5]), v(&[0.25]));
        assert!(l.add_counterexample(t.clone()).unwrap());
        assert!(!l.add_counterexample(t).unwrap());
        assert_eq!(l.samples.len(), 1);
        assert!(l.add_counterexample(SampleTriple::undisturbed(v(&[f64::NAN]), v(&[0.0]), v(&[0.0]))).is_err());
    }
}
