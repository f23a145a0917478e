//! Euler discretization of the learned closed loop, global verification of
//! two-step Lyapunov candidates, the counterexample-guided loop and
//! region-of-attraction extraction.

pub mod bnb;
mod ceg;
mod grid;
mod roa;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::identify::AffineDynamics;
use crate::linalg::{max_eig, Mat, Vector};
use crate::lyapunov::SampleTriple;
use crate::partition::{Partition, Polytope};
use crate::{Error, Exec, Result};

pub use bnb::{BnbConfig, BnbResult, QuadProblem};
pub use ceg::{ceg_loop, CegConfig, CegResult, CegStep};
pub use grid::{brute_force_max_dv, GridMax};
pub use roa::{marching_squares, quadratic_roa, roa_level, Roa};

/// `x⁺ = Ǎ_σ x + B̌_σ u + Č_σ + d` with `u = −(K_σ x + k_σ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePWA {
    pub partition: Partition,
    #[serde(with = "crate::linalg::mat_rows_vec")]
    pub a: Vec<Mat>,
    #[serde(with = "crate::linalg::mat_rows_vec")]
    pub b: Vec<Mat>,
    #[serde(with = "crate::linalg::vec_serde_vec")]
    pub c: Vec<Vector>,
    /// Per-piece disturbance box, already scaled by `h`.
    #[serde(with = "crate::linalg::vec_serde_vec")]
    pub d_bar: Vec<Vector>,
    #[serde(with = "crate::linalg::mat_rows_vec")]
    pub gain: Vec<Mat>,
    #[serde(with = "crate::linalg::vec_serde_vec")]
    pub offset: Vec<Vector>,
    pub roi: Polytope,
    /// Radius of the excluded infinity-norm ball.
    pub eps: f64,
    pub h: f64,
    /// Input saturation applied by [`DiscretePWA::closed_loop_step`] only.
    #[serde(default)]
    pub saturation: Option<Vec<f64>>,
}

/// Build the Euler model. `d_bar` is the continuous-time bound; it is
/// rescaled by `h` here.
pub fn discretize(
    partition: &Partition,
    models: &[AffineDynamics],
    gains: &[(Mat, Vector)],
    d_bar: &[Vector],
    h: f64,
    roi: Polytope,
    eps: f64,
) -> Result<DiscretePWA> {
    if !(h > 0.0) {
        return Err(Error::config("step size must be positive"));
    }
    if !(eps > 0.0) {
        return Err(Error::config("excluded radius must be positive"));
    }
    let len = partition.len();
    if models.len() != len || gains.len() != len || d_bar.len() != len {
        return Err(Error::dim("one model, gain and bound per piece"));
    }
    let n = partition.dim();
    if roi.dim() != n {
        return Err(Error::dim("ROI dimension"));
    }
    let mut sys = DiscretePWA {
        partition: partition.clone(),
        a: vec![],
        b: vec![],
        c: vec![],
        d_bar: vec![],
        gain: vec![],
        offset: vec![],
        roi,
        eps,
        h,
        saturation: None,
    };
    for ((m, (k, k0)), db) in models.iter().zip(gains).zip(d_bar) {
        if m.a.nrows() != n || k.ncols() != n || k.nrows() != m.b.ncols() || db.len() != n {
            return Err(Error::dim("piece model shapes"));
        }
        if db.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Validation("disturbance bound must be non-negative and finite".into()));
        }
        sys.a.push(Mat::identity(n, n) + &m.a * h);
        sys.b.push(&m.b * h);
        sys.c.push(&m.c * h);
        sys.d_bar.push(db * h);
        sys.gain.push(k.clone());
        sys.offset.push(k0.clone());
    }
    Ok(sys)
}

impl DiscretePWA {
    pub fn n(&self) -> usize {
        self.partition.dim()
    }

    pub fn modes(&self) -> usize {
        self.partition.len()
    }

    /// `(Ǎ − B̌K, Č − B̌k)` of one mode.
    pub fn closed_loop(&self, sigma: usize) -> (Mat, Vector) {
        let b = &self.b[sigma];
        (&self.a[sigma] - b * &self.gain[sigma], &self.c[sigma] - b * &self.offset[sigma])
    }

    /// Linear closed-loop step in a given mode (no saturation).
    pub fn step_in(&self, sigma: usize, x: &Vector, d: &Vector) -> Vector {
        let (m, c) = self.closed_loop(sigma);
        m * x + c + d
    }

    pub fn control(&self, sigma: usize, x: &Vector) -> Vector {
        let mut u = -(&self.gain[sigma] * x + &self.offset[sigma]);
        if let Some(bar) = &self.saturation {
            for (v, b) in u.iter_mut().zip(bar) {
                *v = v.clamp(-b, *b);
            }
        }
        u
    }

    /// One step of the closed loop; the mode comes from point location.
    pub fn closed_loop_step(&self, x: &Vector, d: &Vector) -> Result<Vector> {
        if x.len() != self.n() || d.len() != self.n() {
            return Err(Error::dim("state or disturbance dimension"));
        }
        if !self.roi.contains(x.as_slice(), self.partition.tol()) {
            return Err(Error::Domain(format!("state {:?} left the region of interest", x.as_slice())));
        }
        let sigma = self.partition.sigma(x.as_slice())?;
        let tol = 1e-12 * (1.0 + self.d_bar[sigma].amax());
        if d.iter().zip(self.d_bar[sigma].iter()).any(|(v, b)| v.abs() > b + tol) {
            return Err(Error::Domain("disturbance outside the piece bound".into()));
        }
        let u = self.control(sigma, x);
        Ok(&self.a[sigma] * x + &self.b[sigma] * u + &self.c[sigma] + d)
    }

    /// `V(x) = [x; x⁺]ᵀ P̂ [x; x⁺]` for the undisturbed closed loop.
    pub fn lyapunov_value(&self, p: &Mat, x: &Vector) -> Result<f64> {
        let sigma = self.partition.sigma(x.as_slice())?;
        Ok(stacked_value(p, x, &self.step_in(sigma, x, &Vector::zeros(self.n()))))
    }

    /// Check that a triple is reachable with the given modes and admissible
    /// disturbances.
    pub fn check_triple(&self, t: &SampleTriple, sigma0: usize, sigma1: usize) -> Result<()> {
        let n = self.n();
        if [&t.x, &t.x1, &t.x2, &t.d0, &t.d1].iter().any(|v| v.len() != n) {
            return Err(Error::Validation("triple dimension".into()));
        }
        if sigma0 >= self.modes() || sigma1 >= self.modes() {
            return Err(Error::Validation("mode index out of range".into()));
        }
        let scale = 1.0 + t.x.amax() + t.x1.amax() + t.x2.amax();
        let tol = 1e-7 * scale;
        let cells = &self.partition.cells;
        if !cells[sigma0].contains(t.x.as_slice(), tol) || !cells[sigma1].contains(t.x1.as_slice(), tol) {
            return Err(Error::Validation("triple states are not in the claimed modes".into()));
        }
        for (d, s) in [(&t.d0, sigma0), (&t.d1, sigma1)] {
            if d.iter().zip(self.d_bar[s].iter()).any(|(v, b)| v.abs() > b + tol) {
                return Err(Error::Validation("triple disturbance outside the piece bound".into()));
            }
        }
        if (self.step_in(sigma0, &t.x, &t.d0) - &t.x1).amax() > tol
            || (self.step_in(sigma1, &t.x1, &t.d1) - &t.x2).amax() > tol
        {
            return Err(Error::Validation("triple is not generated by the closed loop".into()));
        }
        Ok(())
    }
}

pub(crate) fn stacked_value(p: &Mat, x: &Vector, x1: &Vector) -> f64 {
    let n = x.len();
    let mut w = Vector::zeros(2 * n);
    w.rows_mut(0, n).copy_from(x);
    w.rows_mut(n, n).copy_from(x1);
    w.dot(&(p * &w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyStatus {
    Certified,
    Counterexample,
    GapLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub triple: SampleTriple,
    pub sigma0: usize,
    pub sigma1: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub status: VerifyStatus,
    /// Best objective value found (lower bound on the maximum).
    pub value: f64,
    /// Certified upper bound on the maximum.
    pub upper_bound: f64,
    /// Target gap.
    pub gap: f64,
    pub witness: Option<Witness>,
    pub nodes: usize,
    pub subproblems: usize,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Absolute target gap; `None` means `1e−6 · λ_max(P̂)`.
    pub gap: Option<f64>,
    /// Node cap per subproblem.
    pub node_cap: usize,
    /// Return once any positive value is found (the witness is then not
    /// necessarily the global maximizer).
    pub first_counterexample: bool,
    /// Stop a subproblem once its bound is negative. Disable to compute the
    /// maximum itself to within the gap.
    pub stop_when_certified: bool,
    pub exec: Exec,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            gap: None,
            node_cap: 20_000,
            first_counterexample: false,
            stop_when_certified: true,
            exec: Exec::default(),
        }
    }
}

/// One `(σ₀, σ₁, slab)` work item.
#[derive(Clone, Debug)]
pub struct Subproblem {
    pub sigma0: usize,
    pub sigma1: usize,
    /// `Some((i, s))` adds `s·x_i ≥ ε`.
    pub slab: Option<(usize, f64)>,
    pub problem: QuadProblem,
}

fn interval_image(m: &Mat, c: &Vector, lo: &[f64], hi: &[f64], d: &Vector) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows();
    let mut out_lo = vec![0.0; n];
    let mut out_hi = vec![0.0; n];
    for i in 0..n {
        let mut l = c[i] - d[i];
        let mut h = c[i] + d[i];
        for j in 0..m.ncols() {
            let (a, b) = (m[(i, j)] * lo[j], m[(i, j)] * hi[j]);
            l += a.min(b);
            h += a.max(b);
        }
        out_lo[i] = l;
        out_hi[i] = h;
    }
    (out_lo, out_hi)
}

fn boxes_meet(alo: &[f64], ahi: &[f64], blo: &[f64], bhi: &[f64], tol: f64) -> bool {
    (0..alo.len()).all(|i| alo[i] <= bhi[i] + tol && blo[i] <= ahi[i] + tol)
}

impl DiscretePWA {
    /// Enumerate the work items for candidate `P̂`.
    pub fn subproblems(&self, p: &Mat) -> Result<Vec<Subproblem>> {
        let n = self.n();
        if p.nrows() != 2 * n || p.ncols() != 2 * n {
            return Err(Error::dim("candidate must be 2n × 2n"));
        }
        let (roi_lo, roi_hi) = self.roi.bounding_box();
        let tol = self.partition.tol();
        let boxes: Vec<(Vec<f64>, Vec<f64>)> = self
            .partition
            .cells
            .iter()
            .map(|c| {
                let (lo, hi) = c.bounding_box();
                let lo: Vec<f64> = lo.iter().zip(&roi_lo).map(|(a, b)| a.max(*b)).collect();
                let hi: Vec<f64> = hi.iter().zip(&roi_hi).map(|(a, b)| a.min(*b)).collect();
                (lo, hi)
            })
            .collect();
        let mut out = vec![];
        for s0 in 0..self.modes() {
            let (lo, hi) = &boxes[s0];
            if (0..n).any(|i| lo[i] > hi[i]) {
                continue;
            }
            // slabs outside the excluded ball that meet this box
            let whole: Option<(usize, f64)> = (0..n).find_map(|i| {
                if lo[i] >= self.eps {
                    Some((i, 1.0))
                } else if hi[i] <= -self.eps {
                    Some((i, -1.0))
                } else {
                    None
                }
            });
            let slabs: Vec<Option<(usize, f64)>> = match whole {
                Some(_) => vec![None],
                None => (0..n)
                    .flat_map(|i| [(i, 1.0), (i, -1.0)])
                    .filter(|&(i, s)| if s > 0.0 { hi[i] >= self.eps } else { lo[i] <= -self.eps })
                    .map(Some)
                    .collect(),
            };
            let (m0, c0) = self.closed_loop(s0);
            let (ilo, ihi) = interval_image(&m0, &c0, lo, hi, &self.d_bar[s0]);
            for s1 in 0..self.modes() {
                let (blo, bhi) = &boxes[s1];
                if !boxes_meet(&ilo, &ihi, blo, bhi, tol) {
                    continue;
                }
                for slab in &slabs {
                    let mut lo = lo.clone();
                    let mut hi = hi.clone();
                    if let Some((i, s)) = *slab {
                        if s > 0.0 {
                            lo[i] = lo[i].max(self.eps);
                        } else {
                            hi[i] = hi[i].min(-self.eps);
                        }
                    }
                    out.push(Subproblem {
                        sigma0: s0,
                        sigma1: s1,
                        slab: *slab,
                        problem: self.assemble(p, s0, s1, &lo, &hi),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Objective and constraints over `y = (x⁰, d⁰, d¹)`.
    fn assemble(&self, p: &Mat, s0: usize, s1: usize, xlo: &[f64], xhi: &[f64]) -> QuadProblem {
        let n = self.n();
        let (m0, c0) = self.closed_loop(s0);
        let (m1, c1) = self.closed_loop(s1);
        let eye = Mat::identity(n, n);
        // x¹ = [M0, I, 0] y + c0;  x² = [M1 M0, M1, I] y + M1 c0 + c1
        let mut g1 = Mat::zeros(n, 3 * n);
        g1.view_mut((0, 0), (n, n)).copy_from(&m0);
        g1.view_mut((0, n), (n, n)).copy_from(&eye);
        let mut g2 = Mat::zeros(n, 3 * n);
        g2.view_mut((0, 0), (n, n)).copy_from(&(&m1 * &m0));
        g2.view_mut((0, n), (n, n)).copy_from(&m1);
        g2.view_mut((0, 2 * n), (n, n)).copy_from(&eye);
        let mut g0 = Mat::zeros(n, 3 * n);
        g0.view_mut((0, 0), (n, n)).copy_from(&eye);
        let k2 = &m1 * &c0 + &c1;

        let mut ga = Mat::zeros(2 * n, 3 * n);
        ga.view_mut((0, 0), (n, 3 * n)).copy_from(&g1);
        ga.view_mut((n, 0), (n, 3 * n)).copy_from(&g2);
        let mut gb = Mat::zeros(2 * n, 3 * n);
        gb.view_mut((0, 0), (n, 3 * n)).copy_from(&g0);
        gb.view_mut((n, 0), (n, 3 * n)).copy_from(&g1);
        let mut ka = Vector::zeros(2 * n);
        ka.rows_mut(0, n).copy_from(&c0);
        ka.rows_mut(n, n).copy_from(&k2);
        let mut kb = Vector::zeros(2 * n);
        kb.rows_mut(n, n).copy_from(&c0);

        let mut h = ga.transpose() * p * &ga - gb.transpose() * p * &gb;
        crate::linalg::symmetrize(&mut h);
        let g = (ga.transpose() * p * &ka - gb.transpose() * p * &kb) * 2.0;
        let k = ka.dot(&(p * &ka)) - kb.dot(&(p * &kb));

        let cell0 = &self.partition.cells[s0];
        let cell1 = &self.partition.cells[s1];
        let rows = self.roi.zmat.nrows() + cell0.zmat.nrows() + cell1.zmat.nrows();
        let mut a = Mat::zeros(rows, 3 * n);
        let mut b = Vector::zeros(rows);
        let mut r = 0;
        for poly in [&self.roi, cell0] {
            for i in 0..poly.zmat.nrows() {
                a.view_mut((r, 0), (1, n)).copy_from(&poly.zmat.row(i));
                b[r] = poly.z[i];
                r += 1;
            }
        }
        let z1g = &cell1.zmat * &g1;
        let z1c = &cell1.z - &cell1.zmat * &c0;
        for i in 0..cell1.zmat.nrows() {
            a.row_mut(r).copy_from(&z1g.row(i));
            b[r] = z1c[i];
            r += 1;
        }
        let mut lo = Vector::zeros(3 * n);
        let mut hi = Vector::zeros(3 * n);
        for i in 0..n {
            lo[i] = xlo[i];
            hi[i] = xhi[i];
            lo[n + i] = -self.d_bar[s0][i];
            hi[n + i] = self.d_bar[s0][i];
            lo[2 * n + i] = -self.d_bar[s1][i];
            hi[2 * n + i] = self.d_bar[s1][i];
        }
        QuadProblem { h, g, k, a, b, lo, hi }
    }
}

/// Globally maximize `ΔV` over `D̄ \ B_ε`, all mode pairs and admissible
/// disturbances.
pub fn miqp_verify(p: &Mat, sys: &DiscretePWA, cfg: &VerifyConfig) -> Result<VerifyOutcome> {
    let start = Instant::now();
    if crate::linalg::max_asymmetry(p) > 1e-9 {
        return Err(Error::Validation("candidate is not symmetric".into()));
    }
    let gap = cfg.gap.unwrap_or(1e-6 * max_eig(p).max(1e-300));
    if !(gap > 0.0) {
        return Err(Error::config("gap must be positive"));
    }
    let subs = sys.subproblems(p)?;
    let bnb = BnbConfig {
        gap,
        node_cap: cfg.node_cap,
        stop_at_positive: cfg.first_counterexample,
        stop_at_negative: cfg.stop_when_certified,
    };
    let results = cfg.exec.map(&subs, |s| bnb::maximize(&s.problem, &bnb));
    let n = sys.n();
    let mut upper = f64::NEG_INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut nodes = 0;
    let mut capped = false;
    let mut witness = None;
    for (s, r) in subs.iter().zip(&results) {
        nodes += r.nodes;
        upper = upper.max(r.upper);
        // a capped subproblem with an undecided sign leaves the outcome open
        capped |= r.capped && r.upper >= 0.0 && r.lower <= 0.0;
        if r.lower > lower {
            if let Some(y) = &r.argmax {
                lower = r.lower;
                let x0 = y.rows(0, n).into_owned();
                let d0 = y.rows(n, n).into_owned();
                let d1 = y.rows(2 * n, n).into_owned();
                let x1 = sys.step_in(s.sigma0, &x0, &d0);
                let x2 = sys.step_in(s.sigma1, &x1, &d1);
                witness = Some(Witness {
                    triple: SampleTriple { x: x0, x1, x2, d0, d1 },
                    sigma0: s.sigma0,
                    sigma1: s.sigma1,
                });
            }
        }
    }
    let status = if upper < 0.0 {
        VerifyStatus::Certified
    } else if lower > 0.0 {
        VerifyStatus::Counterexample
    } else {
        if !capped {
            log::debug!("verify: maximum within the gap of zero");
        }
        VerifyStatus::GapLimit
    };
    if status == VerifyStatus::Certified {
        witness = None;
    }
    log::debug!(
        "verify: {:?} value {lower:.3e} bound {upper:.3e} over {} subproblems, {nodes} nodes",
        status,
        subs.len()
    );
    Ok(VerifyOutcome {
        status,
        value: lower,
        upper_bound: upper,
        gap,
        witness,
        nodes,
        subproblems: subs.len(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_system(alpha: f64, d: f64) -> DiscretePWA {
        let part = Partition::grid(&[-1.0], &[1.0], &[1]).unwrap();
        let model = AffineDynamics {
            a: Mat::from_element(1, 1, (alpha - 1.0) / 0.1),
            b: Mat::zeros(1, 1),
            c: Vector::zeros(1),
        };
        let gains = vec![(Mat::zeros(1, 1), Vector::zeros(1))];
        discretize(&part, &[model], &gains, &[Vector::from_element(1, d / 0.1)], 0.1, part.domain(), 0.1).unwrap()
    }

    #[test]
    fn discretize_pendulum_linearization() {
        let part = Partition::grid(&[-1.0, -1.0], &[1.0, 1.0], &[1, 1]).unwrap();
        let model = AffineDynamics {
            a: Mat::from_row_slice(2, 2, &[0.0, 1.0, 19.62, -2.667]),
            b: Mat::from_row_slice(2, 1, &[0.0, 26.67]),
            c: Vector::zeros(2),
        };
        let gains = vec![(Mat::zeros(1, 2), Vector::zeros(1))];
        let d = vec![Vector::from_row_slice(&[1.0, 2.0])];
        let sys = discretize(&part, std::slice::from_ref(&model), &gains, &d, 0.005, part.domain(), 0.1).unwrap();
        let expect = Mat::from_row_slice(2, 2, &[1.0, 0.005, 0.0981, 0.986665]);
        assert_relative_eq!(sys.a[0], expect, epsilon = 1e-12);
        let half = discretize(&part, &[model], &gains, &d, 0.0025, part.domain(), 0.1).unwrap();
        assert_relative_eq!(&half.d_bar[0] * 2.0, sys.d_bar[0], epsilon = 1e-15);
    }

    #[test]
    fn step_matches_the_assembled_constraint() {
        let sys = scalar_system(0.5, 0.01);
        let x = Vector::from_element(1, 0.8);
        let d = Vector::from_element(1, 0.004);
        let x1 = sys.closed_loop_step(&x, &d).unwrap();
        assert_relative_eq!(x1[0], 0.404, epsilon = 1e-12);
        assert!(sys.closed_loop_step(&Vector::from_element(1, 1.5), &d).is_err());
        assert!(sys.closed_loop_step(&x, &Vector::from_element(1, 0.5)).is_err());
    }

    #[test]
    fn contraction_is_certified_and_expansion_is_not() {
        let p = Mat::identity(2, 2) * 0.5;
        let out = miqp_verify(&p, &scalar_system(0.5, 0.0), &VerifyConfig::default()).unwrap();
        assert_eq!(out.status, VerifyStatus::Certified);
        assert!(out.upper_bound < 0.0);

        let part = Partition::grid(&[-1.0], &[1.0], &[1]).unwrap();
        let model = AffineDynamics { a: Mat::from_element(1, 1, 1.0), b: Mat::zeros(1, 1), c: Vector::zeros(1) };
        let sys = discretize(&part, &[model], &[(Mat::zeros(1, 1), Vector::zeros(1))], &[Vector::zeros(1)], 1.0, part.domain(), 0.1).unwrap();
        let out = miqp_verify(&p, &sys, &VerifyConfig::default()).unwrap();
        assert_eq!(out.status, VerifyStatus::Counterexample);
        // ½(x₁² + x₂²) − ½(x₀² + x₁²) = 7.5 x₀², with x₁ = 2x₀ on the ROI boundary
        assert_relative_eq!(out.value, 1.875, epsilon = 1e-6);
        let w = out.witness.unwrap();
        assert_relative_eq!(w.triple.x1[0].abs(), 1.0, epsilon = 1e-6);
        sys.check_triple(&w.triple, w.sigma0, w.sigma1).unwrap();
    }
}
