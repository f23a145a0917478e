//! Closed-loop rollouts from inside a verified sublevel set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::PlantSpec;
use crate::linalg::{Mat, Vector};
use crate::verify::DiscretePWA;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub count: usize,
    /// Trajectories whose infinity norm dropped to the target radius.
    pub reached: usize,
    /// Trajectories that never left the region of interest.
    pub stayed: usize,
    /// Longest time to reach the target among those that did.
    pub max_time: f64,
    /// Largest infinity norm at the end of the horizon.
    pub worst_final: f64,
}

impl RolloutSummary {
    pub fn all_passed(&self) -> bool {
        self.reached == self.count && self.stayed == self.count
    }
}

/// Uniform samples from `{x ∈ ROI : V(x) ≤ c}` by rejection from the ROI box.
pub fn sample_sublevel<R: Rng + ?Sized>(p: &Mat, sys: &DiscretePWA, c: f64, count: usize, rng: &mut R) -> Result<Vec<Vector>> {
    let (lo, hi) = sys.roi.bounding_box();
    let n = sys.n();
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count {
        tries += 1;
        if tries > 1000 * count.max(1) + 100_000 {
            return Err(Error::Numerical("sublevel set too small to sample".into()));
        }
        let x = Vector::from_fn(n, |i, _| rng.gen_range(lo[i]..=hi[i]));
        if !sys.roi.contains(x.as_slice(), 0.0) {
            continue;
        }
        if sys.lyapunov_value(p, &x)? <= c {
            out.push(x);
        }
    }
    Ok(out)
}

/// Vertices of the disturbance box of one mode.
fn vertices(d: &Vector) -> Vec<Vector> {
    let n = d.len();
    (0..1usize << n)
        .map(|mask| Vector::from_fn(n, |i, _| if mask >> i & 1 == 1 { d[i] } else { -d[i] }))
        .collect()
}

/// Euler model with a greedy adversary: every step takes the disturbance
/// vertex that maximizes `V` at the successor.
pub fn euler_rollouts(p: &Mat, sys: &DiscretePWA, starts: &[Vector], horizon: f64, target: f64) -> Result<RolloutSummary> {
    let steps = (horizon / sys.h).round() as usize;
    let tol = sys.partition.tol();
    let mut sum = RolloutSummary { count: starts.len(), reached: 0, stayed: 0, max_time: 0.0, worst_final: 0.0 };
    for x0 in starts {
        let mut x = x0.clone();
        let mut inside = true;
        let mut hit = None;
        for k in 0..=steps {
            if x.amax() <= target {
                hit = Some(k as f64 * sys.h);
                break;
            }
            if k == steps {
                break;
            }
            let Some(sigma) = sys.partition.cell_of(x.as_slice()) else {
                inside = false;
                break;
            };
            let mut best: Option<(f64, Vector)> = None;
            for d in vertices(&sys.d_bar[sigma]) {
                let cand = sys.step_in(sigma, &x, &d);
                // successors outside the ROI are the worst case
                let score = if sys.roi.contains(cand.as_slice(), tol) {
                    sys.lyapunov_value(p, &cand).unwrap_or(f64::INFINITY)
                } else {
                    f64::INFINITY
                };
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((score, cand));
                }
            }
            x = best.map(|b| b.1).unwrap_or(x);
            if !sys.roi.contains(x.as_slice(), tol) {
                inside = false;
                break;
            }
        }
        if inside {
            sum.stayed += 1;
        }
        if let Some(t) = hit {
            sum.reached += 1;
            sum.max_time = sum.max_time.max(t);
        }
        sum.worst_final = sum.worst_final.max(x.amax());
    }
    Ok(sum)
}

/// RK4 on the true plant under the same piecewise law, saturated at the
/// plant's input bound.
pub fn truth_rollouts(plant: &PlantSpec, sys: &DiscretePWA, starts: &[Vector], horizon: f64, target: f64) -> Result<RolloutSummary> {
    let steps = (horizon / sys.h).round() as usize;
    let mut sum = RolloutSummary { count: starts.len(), reached: 0, stayed: 0, max_time: 0.0, worst_final: 0.0 };
    for x0 in starts {
        let mut x = x0.clone();
        let mut inside = true;
        let mut hit = None;
        for k in 0..=steps {
            if x.amax() <= target {
                hit = Some(k as f64 * sys.h);
                break;
            }
            if k == steps {
                break;
            }
            let Some(sigma) = sys.partition.cell_of(x.as_slice()) else {
                inside = false;
                break;
            };
            let u = plant.saturate(&-(&sys.gain[sigma] * &x + &sys.offset[sigma]));
            x = plant.rk4_step(&x, &u, sys.h);
        }
        if inside && sys.partition.cell_of(x.as_slice()).is_some() {
            sum.stayed += 1;
        }
        if let Some(t) = hit {
            sum.reached += 1;
            sum.max_time = sum.max_time.max(t);
        }
        sum.worst_final = sum.worst_final.max(x.amax());
    }
    Ok(sum)
}
