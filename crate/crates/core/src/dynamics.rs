//! Simulated ground-truth plants in control-affine form `ẋ = f(x) + g(x) u`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::CostSpec;
use crate::linalg::{Mat, Vector};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub gravity: f64,
    pub length: f64,
    pub mass: f64,
    pub friction: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            length: 0.5,
            mass: 0.15,
            friction: 0.1,
        }
    }
}

impl PendulumParams {
    pub fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }
}

/// Lateral vehicle dynamics with constant longitudinal speed.
///
/// State is `(v_y, r, p_x, p_y, θ)` where `(p_x, p_y)` is the position relative
/// to the goal point, expressed in the body frame. With world-frame errors the
/// along-track error has no input direction in any local linear model. The physical constants are not published with the
/// benchmark; the defaults are a plausible mid-size car.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub front_arm: f64,
    pub rear_arm: f64,
    pub front_stiffness: f64,
    pub rear_stiffness: f64,
    pub speed: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            yaw_inertia: 2500.0,
            front_arm: 1.2,
            rear_arm: 1.4,
            front_stiffness: 60000.0,
            rear_stiffness: 60000.0,
            speed: 10.0,
        }
    }
}

impl VehicleParams {
    /// Coefficients of the `(v_y, r)` subsystem: `[[a11, a12], [a21, a22]]` and `[b1, b2]`.
    ///
    /// The steering enters through `cos δ_f ≈ 1` so that the plant stays
    /// control-affine.
    pub fn lateral(&self) -> ([[f64; 2]; 2], [f64; 2]) {
        let (m, iz, lf, lr) = (self.mass, self.yaw_inertia, self.front_arm, self.rear_arm);
        let (cf, cr, vx) = (self.front_stiffness, self.rear_stiffness, self.speed);
        let cross = -lf * cf + lr * cr;
        let a = [
            [-(cf + cr) / (m * vx), cross / (iz * vx)],
            [cross / (m * vx) - vx, -(lf * lf * cf + lr * lr * cr) / (iz * vx)],
        ];
        (a, [cf / m, lf * cf / iz])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Pendulum(PendulumParams),
    Vehicle(VehicleParams),
    /// `ẋ = A x + B u + c`, mainly for tests and toy problems.
    Affine {
        #[serde(with = "crate::linalg::mat_rows")]
        a: Mat,
        #[serde(with = "crate::linalg::mat_rows")]
        b: Mat,
        #[serde(with = "crate::linalg::vec_serde")]
        c: Vector,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub kind: PlantKind,
    pub u_bounds: Vec<f64>,
    pub lipschitz_x: Vec<f64>,
    pub lipschitz_u: Vec<f64>,
    pub meas_tol: f64,
    /// Region of interest, also the box the partition tiles.
    pub roi_lo: Vec<f64>,
    pub roi_hi: Vec<f64>,
    /// Evaluation domain; trajectories leaving it are cut short.
    pub safety_lo: Vec<f64>,
    pub safety_hi: Vec<f64>,
    /// State indices holding angles that are wrapped to `[-π, π)` while simulating.
    #[serde(default)]
    pub wrap: Vec<usize>,
}

fn safety_box(lo: &[f64], hi: &[f64], factor: f64) -> (Vec<f64>, Vec<f64>) {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| {
            let mid = 0.5 * (l + h);
            let half = 0.5 * (h - l) * factor;
            (mid - half, mid + half)
        })
        .unzip()
}

impl PlantSpec {
    pub fn pendulum(params: PendulumParams, u_bar: f64, meas_tol: f64) -> Result<Self> {
        let ml2 = params.inertia();
        let gl = params.gravity / params.length;
        let damp = params.friction / ml2;
        let roi_lo = vec![-6.0, -6.0];
        let roi_hi = vec![6.0, 6.0];
        let (safety_lo, safety_hi) = safety_box(&roi_lo, &roi_hi, 3.0);
        let spec = Self {
            name: "pendulum".into(),
            n: 2,
            m: 1,
            lipschitz_x: vec![1.0, gl.hypot(damp)],
            lipschitz_u: vec![0.0, 1.0 / ml2],
            kind: PlantKind::Pendulum(params),
            u_bounds: vec![u_bar],
            meas_tol,
            roi_lo,
            roi_hi,
            safety_lo,
            safety_hi,
            wrap: vec![],
        };
        spec.check()?;
        Ok(spec)
    }

    /// Vehicle plant; `roi_hi` bounds `(|v_y|, |r|, |p_x|, |p_y|, |θ|)`.
    pub fn vehicle(params: VehicleParams, steer_bar: f64, roi_hi: [f64; 5], meas_tol: f64) -> Result<Self> {
        let (a, b) = params.lateral();
        // over the safety box, three times the ROI
        let r_max = roi_hi[1] * 3.0;
        let p_max = roi_hi[2].max(roi_hi[3]) * 3.0;
        let pos_lip = (1.0 + r_max * r_max + p_max * p_max).sqrt();
        let roi_hi = roi_hi.to_vec();
        let roi_lo: Vec<f64> = roi_hi.iter().map(|v| -v).collect();
        let (mut safety_lo, mut safety_hi) = safety_box(&roi_lo, &roi_hi, 3.0);
        // heading is wrapped, so its box never needs to grow
        safety_lo[4] = roi_lo[4].min(-std::f64::consts::PI);
        safety_hi[4] = roi_hi[4].max(std::f64::consts::PI);
        let spec = Self {
            name: "vehicle".into(),
            n: 5,
            m: 1,
            lipschitz_x: vec![
                a[0][0].hypot(a[0][1]),
                a[1][0].hypot(a[1][1]),
                pos_lip,
                pos_lip,
                1.0,
            ],
            lipschitz_u: vec![b[0].abs(), b[1].abs(), 0.0, 0.0, 0.0],
            kind: PlantKind::Vehicle(params),
            u_bounds: vec![steer_bar],
            meas_tol,
            roi_lo,
            roi_hi,
            safety_lo,
            safety_hi,
            wrap: vec![4],
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn affine(a: Mat, b: Mat, c: Vector, u_bar: f64, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n || b.nrows() != n || c.len() != n || lo.len() != n || hi.len() != n {
            return Err(Error::dim("affine plant shapes"));
        }
        let lipschitz_x = (0..n).map(|i| a.row(i).norm()).collect();
        let lipschitz_u = (0..n).map(|i| b.row(i).norm()).collect();
        let (safety_lo, safety_hi) = safety_box(&lo, &hi, 3.0);
        let spec = Self {
            name: "affine".into(),
            n,
            m,
            kind: PlantKind::Affine { a, b, c },
            u_bounds: vec![u_bar; m],
            lipschitz_x,
            lipschitz_u,
            meas_tol: 0.0,
            roi_lo: lo,
            roi_hi: hi,
            safety_lo,
            safety_hi,
            wrap: vec![],
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n;
        if self.u_bounds.len() != self.m || self.u_bounds.iter().any(|&u| !(u > 0.0)) {
            return Err(Error::config("input bounds must be positive, one per channel"));
        }
        if self.lipschitz_x.len() != n || self.lipschitz_u.len() != n {
            return Err(Error::config("Lipschitz constants need one entry per state"));
        }
        if !(0.0..1.0).contains(&self.meas_tol) {
            return Err(Error::config("measurement tolerance must lie in [0, 1)"));
        }
        for (lo, hi) in [(&self.roi_lo, &self.roi_hi), (&self.safety_lo, &self.safety_hi)] {
            if lo.len() != n || hi.len() != n || lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
                return Err(Error::config("malformed box"));
            }
        }
        Ok(())
    }

    /// State drift `f(x)`, without any domain check.
    pub fn drift(&self, x: &Vector) -> Vector {
        match &self.kind {
            PlantKind::Pendulum(p) => {
                let ml2 = p.inertia();
                Vector::from_vec(vec![
                    x[1],
                    p.gravity / p.length * x[0].sin() - p.friction / ml2 * x[1],
                ])
            }
            PlantKind::Vehicle(p) => {
                let (a, _) = p.lateral();
                let (vy, r, px, py) = (x[0], x[1], x[2], x[3]);
                Vector::from_vec(vec![
                    a[0][0] * vy + a[0][1] * r,
                    a[1][0] * vy + a[1][1] * r,
                    p.speed + r * py,
                    vy - r * px,
                    r,
                ])
            }
            PlantKind::Affine { a, c, .. } => a * x + c,
        }
    }

    /// Input map `g(x)`, one column per channel.
    pub fn input_map(&self, _x: &Vector) -> Mat {
        match &self.kind {
            PlantKind::Pendulum(p) => Mat::from_column_slice(2, 1, &[0.0, 1.0 / p.inertia()]),
            PlantKind::Vehicle(p) => {
                let (_, b) = p.lateral();
                Mat::from_column_slice(5, 1, &[b[0], b[1], 0.0, 0.0, 0.0])
            }
            PlantKind::Affine { b, .. } => b.clone(),
        }
    }

    pub fn saturate(&self, u: &Vector) -> Vector {
        Vector::from_iterator(
            self.m,
            u.iter().zip(&self.u_bounds).map(|(v, b)| v.clamp(-b, *b)),
        )
    }

    pub fn in_box(&self, x: &Vector, lo: &[f64], hi: &[f64]) -> bool {
        x.iter().zip(lo).zip(hi).all(|((v, l), h)| *v >= *l && *v <= *h)
    }

    /// True dynamics with domain checks.
    pub fn eval_dynamics(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        if x.len() != self.n || u.len() != self.m {
            return Err(Error::dim("state or input length"));
        }
        if !x.iter().all(|v| v.is_finite()) || !self.in_box(x, &self.safety_lo, &self.safety_hi) {
            return Err(Error::Domain(format!("state {:?} outside the plant domain", x.as_slice())));
        }
        for (v, b) in u.iter().zip(&self.u_bounds) {
            if !(v.abs() <= b * (1.0 + 1e-12)) {
                return Err(Error::Domain(format!("input {v} exceeds bound {b}")));
            }
        }
        Ok(self.drift(x) + self.input_map(x) * u)
    }

    /// Noisy derivative `F̃_i = F_i / (1 + δ_i)` with `δ_i ~ U[-ϱ_e, ϱ_e]`.
    pub fn measure_derivative<R: Rng + ?Sized>(&self, x: &Vector, u: &Vector, rng: &mut R) -> Result<Vector> {
        let f = self.eval_dynamics(x, u)?;
        if self.meas_tol == 0.0 {
            return Ok(f);
        }
        Ok(f.map(|v| {
            let delta = rng.gen_range(-self.meas_tol..=self.meas_tol);
            v / (1.0 + delta)
        }))
    }

    pub fn measure_derivative_seeded(&self, x: &Vector, u: &Vector, seed: u64) -> Result<Vector> {
        self.measure_derivative(x, u, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn wrap_angles(&self, x: &mut Vector) {
        use std::f64::consts::PI;
        for &i in &self.wrap {
            x[i] = (x[i] + PI).rem_euclid(2.0 * PI) - PI;
        }
    }

    /// One RK4 step with the input held constant.
    pub fn rk4_step(&self, x: &Vector, u: &Vector, h: f64) -> Vector {
        let gu = |y: &Vector| self.drift(y) + self.input_map(y) * u;
        let k1 = gu(x);
        let k2 = gu(&(x + &k1 * (h / 2.0)));
        let k3 = gu(&(x + &k2 * (h / 2.0)));
        let k4 = gu(&(x + &k3 * h));
        let mut next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        self.wrap_angles(&mut next);
        next
    }

    /// Closed-loop RK4 simulation with zero-order-hold, saturated input.
    pub fn simulate<C>(&self, mut controller: C, x0: &Vector, h: f64, horizon: f64, cost: &CostSpec) -> Result<Trajectory>
    where
        C: FnMut(&Vector) -> Vector,
    {
        if !(h > 0.0) || !(horizon >= h) {
            return Err(Error::config("simulate needs h > 0 and horizon >= h"));
        }
        if x0.len() != self.n {
            return Err(Error::dim("initial state length"));
        }
        let steps = (horizon / h).round() as usize;
        let mut traj = Trajectory::default();
        let mut x = x0.clone();
        let mut u = self.saturate(&controller(&x));
        let mut stage = cost.stage(&x, &u);
        traj.times.push(0.0);
        traj.states.push(x.clone());
        traj.inputs.push(u.clone());
        traj.costs.push(0.0);
        for k in 0..steps {
            let next = self.rk4_step(&x, &u, h);
            if !next.iter().all(|v| v.is_finite()) || !self.in_box(&next, &self.safety_lo, &self.safety_hi) {
                traj.diverged = true;
                break;
            }
            let t = (k + 1) as f64 * h;
            let u_next = self.saturate(&controller(&next));
            let stage_next = cost.stage(&next, &u_next);
            let disc0 = (-cost.gamma * (t - h)).exp();
            let disc1 = (-cost.gamma * t).exp();
            let acc = traj.costs[k] + 0.5 * h * (disc0 * stage + disc1 * stage_next);
            traj.times.push(t);
            traj.states.push(next.clone());
            traj.inputs.push(u_next.clone());
            traj.costs.push(acc);
            x = next;
            u = u_next;
            stage = stage_next;
        }
        Ok(traj)
    }
}

/// Backward difference `(x_k − x_{k−1}) / h`.
pub fn finite_diff_derivative(x_k: &Vector, x_prev: &Vector, h: f64) -> Result<Vector> {
    if !(h > 0.0) {
        return Err(Error::config("finite difference needs h > 0"));
    }
    Ok((x_k - x_prev) / h)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(with = "crate::linalg::vec_serde_vec")]
    pub states: Vec<Vector>,
    /// `inputs[k]` is held on `[t_k, t_{k+1})`; the final entry is what the
    /// controller asked for at the last state.
    #[serde(with = "crate::linalg::vec_serde_vec")]
    pub inputs: Vec<Vector>,
    /// Accumulated discounted running cost up to each time.
    pub costs: Vec<f64>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|j| format!("u{j}")));
        header.push("cost".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.states[k].iter().map(|v| v.to_string()));
            row.extend(self.inputs[k].iter().map(|v| v.to_string()));
            row.push(self.costs[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::harness::io::write_atomic(path, &buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pendulum() -> PlantSpec {
        PlantSpec::pendulum(PendulumParams::default(), 8.0, 0.01).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn pendulum_hand_values() {
        let p = pendulum();
        let u0 = v(&[0.0]);
        assert_eq!(p.eval_dynamics(&v(&[0.0, 0.0]), &u0).unwrap(), v(&[0.0, 0.0]));
        let f = p.eval_dynamics(&v(&[std::f64::consts::FRAC_PI_2, 0.0]), &u0).unwrap();
        assert_relative_eq!(f[0], 0.0);
        assert_relative_eq!(f[1], 19.62, epsilon = 1e-12);
        let f = p.eval_dynamics(&v(&[0.0, 1.0]), &u0).unwrap();
        assert_relative_eq!(f[0], 1.0);
        assert_relative_eq!(f[1], -0.1 / 0.0375, epsilon = 1e-12);
    }

    #[test]
    fn domain_errors() {
        let p = pendulum();
        assert!(matches!(p.eval_dynamics(&v(&[100.0, 0.0]), &v(&[0.0])), Err(Error::Domain(_))));
        assert!(matches!(p.eval_dynamics(&v(&[0.0, 0.0]), &v(&[9.0])), Err(Error::Domain(_))));
    }

    #[test]
    fn measurement_is_reproducible_and_bounded() {
        let p = pendulum();
        let x = v(&[1.0, 1.0]);
        let u = v(&[0.5]);
        let a = p.measure_derivative_seeded(&x, &u, 7).unwrap();
        let b = p.measure_derivative_seeded(&x, &u, 7).unwrap();
        assert_eq!(a, b);
        let f = p.eval_dynamics(&x, &u).unwrap();
        for i in 0..2 {
            assert!((a[i] - f[i]).abs() <= p.meas_tol * a[i].abs() + 1e-15);
        }
        let mut exact = p.clone();
        exact.meas_tol = 0.0;
        assert_eq!(exact.measure_derivative_seeded(&x, &u, 3).unwrap(), f);
    }

    #[test]
    fn equilibrium_stays_put_and_upright_is_unstable() {
        let p = pendulum();
        let cost = CostSpec::quadratic(Mat::from_diagonal(&v(&[2.0, 1.0])), vec![1.0], 0.0).unwrap();
        let t = p.simulate(|_| v(&[0.0]), &v(&[0.0, 0.0]), 0.005, 1.0, &cost).unwrap();
        assert!(t.states.iter().all(|x| x.norm() == 0.0));
        assert_eq!(t.len(), 201);
        let t = p.simulate(|_| v(&[0.0]), &v(&[0.1, 0.0]), 0.005, 0.2, &cost).unwrap();
        assert!(t.states.last().unwrap()[0] > 0.1);
        assert!(t.costs.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rk4_error_ratio() {
        let p = pendulum();
        let cost = CostSpec::quadratic(Mat::identity(2, 2), vec![1.0], 0.0).unwrap();
        let x0 = v(&[0.5, 0.0]);
        let end = |h: f64| {
            p.simulate(|_| v(&[0.0]), &x0, h, 1.0, &cost).unwrap().states.last().unwrap().clone()
        };
        let h = 0.05;
        let reference = end(h / 8.0);
        let ratio = (end(h) - &reference).norm() / (end(h / 2.0) - &reference).norm();
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn finite_difference() {
        let a = v(&[1.0, 2.0]);
        assert_eq!(finite_diff_derivative(&a, &a, 0.1).unwrap(), v(&[0.0, 0.0]));
        let d = finite_diff_derivative(&v(&[0.3, 0.6]), &v(&[0.0, 0.0]), 0.1).unwrap();
        assert_relative_eq!(d[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(d[1], 6.0, epsilon = 1e-12);
        assert!(finite_diff_derivative(&a, &a, 0.0).is_err());
    }

    #[test]
    fn vehicle_wraps_heading() {
        let p = PlantSpec::vehicle(VehicleParams::default(), 0.35, [5.0, 3.0, 100.0, 100.0, 3.2], 0.0).unwrap();
        let x = v(&[0.0, 1.0, 0.0, 0.0, 3.1]);
        let next = p.rk4_step(&x, &v(&[0.0]), 0.1);
        assert!(next[4] < 0.0);
    }
}
