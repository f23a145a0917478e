use crate::linalg::{Mat, Vector};
use crate::lyapunov::{delta_v, SampleTriple};
use crate::{Exec, Result};

use super::DiscretePWA;

#[derive(Clone, Debug, PartialEq)]
pub struct GridMax {
    pub value: f64,
    pub triple: Option<SampleTriple>,
    /// Number of `(x⁰, d⁰, d¹)` combinations evaluated.
    pub points: usize,
}

fn levels(bar: f64, count: usize) -> Vec<f64> {
    if count <= 1 || bar == 0.0 {
        return vec![0.0];
    }
    (0..count)
        .map(|i| -bar + 2.0 * bar * i as f64 / (count - 1) as f64)
        .collect()
}

fn product(axes: &[Vec<f64>]) -> Vec<Vector> {
    let mut out = vec![Vector::zeros(axes.len())];
    for (i, vals) in axes.iter().enumerate() {
        let mut next = Vec::with_capacity(out.len() * vals.len());
        for v in &out {
            for &a in vals {
                let mut w = v.clone();
                w[i] = a;
                next.push(w);
            }
        }
        out = next;
    }
    out
}

/// Exhaustive `ΔV` maximum over a state grid on the ROI bounding box outside
/// `B_ε` and `d_levels` values per disturbance axis (2 means box vertices).
/// Modes follow point location; successors that leave the ROI are skipped.
pub fn brute_force_max_dv(p: &Mat, sys: &DiscretePWA, per_axis: usize, d_levels: usize, exec: Exec) -> Result<GridMax> {
    let n = sys.n();
    let (lo, hi) = sys.roi.bounding_box();
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..per_axis)
                .map(|k| lo[i] + (hi[i] - lo[i]) * k as f64 / (per_axis.max(2) - 1) as f64)
                .collect()
        })
        .collect();
    let dist: Vec<Vec<Vector>> = sys
        .d_bar
        .iter()
        .map(|db| product(&db.iter().map(|&b| levels(b, d_levels)).collect::<Vec<_>>()))
        .collect();
    let total = per_axis.pow(n as u32);
    let tol = sys.partition.tol();
    let results = exec.map_range(total, |idx| {
        let mut x = Vector::zeros(n);
        let mut rest = idx;
        for i in (0..n).rev() {
            x[i] = axes[i][rest % per_axis];
            rest /= per_axis;
        }
        let mut best = (f64::NEG_INFINITY, None, 0usize);
        if x.amax() < sys.eps || !sys.roi.contains(x.as_slice(), tol) {
            return best;
        }
        let Ok(s0) = sys.partition.sigma(x.as_slice()) else { return best };
        for d0 in &dist[s0] {
            let x1 = sys.step_in(s0, &x, d0);
            if !sys.roi.contains(x1.as_slice(), tol) {
                continue;
            }
            let Ok(s1) = sys.partition.sigma(x1.as_slice()) else { continue };
            for d1 in &dist[s1] {
                let x2 = sys.step_in(s1, &x1, d1);
                let t = SampleTriple { x: x.clone(), x1: x1.clone(), x2, d0: d0.clone(), d1: d1.clone() };
                let v = delta_v(p, &t);
                best.2 += 1;
                if v > best.0 {
                    best = (v, Some(t), best.2);
                }
            }
        }
        best
    });
    let mut out = GridMax { value: f64::NEG_INFINITY, triple: None, points: 0 };
    for (v, t, count) in results {
        out.points += count;
        if v > out.value {
            out.value = v;
            out.triple = t;
        }
    }
    Ok(out)
}
