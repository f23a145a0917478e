use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::linalg::{Mat, Vector};
use crate::partition::polygon_area;
use crate::{Error, Result};

use super::{DiscretePWA, VerifyOutcome, VerifyStatus};

/// Verified sublevel set `{V ≤ c*}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roa {
    pub c_star: f64,
    /// Boundary point attaining `c*`.
    pub argmin: [f64; 2],
    /// Closed polyline (first point repeated at the end).
    pub boundary: Vec<[f64; 2]>,
    pub area: f64,
}

impl Roa {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1", "x2"])?;
        for p in &self.boundary {
            w.write_record([p[0].to_string(), p[1].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimum of `V` over the ROI boundary, exact per (facet × cell) segment.
fn boundary_minimum(p: &Mat, sys: &DiscretePWA) -> Result<(f64, [f64; 2])> {
    let verts = sys.roi.vertices_2d();
    if verts.len() < 3 {
        return Err(Error::Validation("ROI has no interior".into()));
    }
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for k in 0..verts.len() {
        let a = Vector::from_row_slice(&verts[k]);
        let b = Vector::from_row_slice(&verts[(k + 1) % verts.len()]);
        let e = &b - &a;
        for (sigma, cell) in sys.partition.cells.iter().enumerate() {
            let (mut t0, mut t1) = (0.0f64, 1.0f64);
            for r in 0..cell.zmat.nrows() {
                let row = cell.zmat.row(r);
                let slope = row.dot(&e.transpose());
                let room = cell.z[r] - row.dot(&a.transpose());
                if slope.abs() < 1e-14 {
                    if room < -1e-12 {
                        t1 = -1.0;
                    }
                } else if slope > 0.0 {
                    t1 = t1.min(room / slope);
                } else {
                    t0 = t0.max(room / slope);
                }
            }
            if t0 > t1 + 1e-12 {
                continue;
            }
            let (m, c) = sys.closed_loop(sigma);
            let mut w0 = Vector::zeros(4);
            w0.rows_mut(0, 2).copy_from(&a);
            w0.rows_mut(2, 2).copy_from(&(&m * &a + &c));
            let mut w1 = Vector::zeros(4);
            w1.rows_mut(0, 2).copy_from(&e);
            w1.rows_mut(2, 2).copy_from(&(&m * &e));
            let qa = w1.dot(&(p * &w1));
            let qb = 2.0 * w1.dot(&(p * &w0));
            let qc = w0.dot(&(p * &w0));
            let mut ts = vec![t0, t1.max(t0)];
            if qa > 0.0 {
                let t = -qb / (2.0 * qa);
                if t > t0 && t < t1 {
                    ts.push(t);
                }
            }
            for t in ts {
                let v = qa * t * t + qb * t + qc;
                if v < best.0 {
                    let x = &a + &e * t;
                    best = (v, [x[0], x[1]]);
                }
            }
        }
    }
    Ok(best)
}

/// Level-set contours of a sampled field. `values[i * ys.len() + j]` is the
/// value at `(xs[i], ys[j])`. Closed contours repeat their first point.
pub fn marching_squares(xs: &[f64], ys: &[f64], values: &[f64], level: f64) -> Vec<Vec<[f64; 2]>> {
    let (nx, ny) = (xs.len(), ys.len());
    let at = |i: usize, j: usize| values[i * ny + j];
    // edge ids: horizontal (i,j)-(i+1,j) → 2(i ny + j), vertical (i,j)-(i,j+1) → 2(i ny + j) + 1
    let point = |id: usize| -> [f64; 2] {
        let base = id / 2;
        let (i, j) = (base / ny, base % ny);
        let (i2, j2) = if id.is_multiple_of(2) { (i + 1, j) } else { (i, j + 1) };
        let (v1, v2) = (at(i, j), at(i2, j2));
        let t = if v2 != v1 { ((level - v1) / (v2 - v1)).clamp(0.0, 1.0) } else { 0.5 };
        [xs[i] + t * (xs[i2] - xs[i]), ys[j] + t * (ys[j2] - ys[j])]
    };
    let mut segments: Vec<(usize, usize)> = vec![];
    for i in 0..nx.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            let bottom = 2 * (i * ny + j);
            let top = 2 * (i * ny + j + 1);
            let left = 2 * (i * ny + j) + 1;
            let right = 2 * ((i + 1) * ny + j) + 1;
            let inside = |v: f64| v < level;
            let case = (inside(at(i, j)) as u8)
                | (inside(at(i + 1, j)) as u8) << 1
                | (inside(at(i + 1, j + 1)) as u8) << 2
                | (inside(at(i, j + 1)) as u8) << 3;
            let centre = 0.25 * (at(i, j) + at(i + 1, j) + at(i + 1, j + 1) + at(i, j + 1));
            match case {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 => {
                    if inside(centre) {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                10 => {
                    if inside(centre) {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    } else {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    let mut touching: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, &(a, b)) in segments.iter().enumerate() {
        touching.entry(a).or_default().push(k);
        touching.entry(b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = vec![];
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (a, b) = segments[start];
        let mut chain = std::collections::VecDeque::from([a, b]);
        // extend forward, then backward
        for forward in [true, false] {
            loop {
                let end = if forward { *chain.back().unwrap() } else { *chain.front().unwrap() };
                let next = touching[&end].iter().copied().find(|&k| !used[k]);
                let Some(k) = next else { break };
                used[k] = true;
                let (s, t) = segments[k];
                let other = if s == end { t } else { s };
                if forward {
                    chain.push_back(other);
                } else {
                    chain.push_front(other);
                }
            }
        }
        lines.push(chain.into_iter().map(point).collect::<Vec<_>>());
    }
    lines
}

fn point_in_polygon(pt: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > pt[1]) != (b[1] > pt[1]) && pt[0] < (b[0] - a[0]) * (pt[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Largest verified sublevel set of `V(x) = [x; F̌_cl(x)]ᵀ P̂ [x; F̌_cl(x)]`
/// inside the ROI, traced on a `grid × grid` lattice.
pub fn roa_level(p: &Mat, sys: &DiscretePWA, outcome: &VerifyOutcome, grid: usize) -> Result<Roa> {
    if outcome.status != VerifyStatus::Certified {
        return Err(Error::Validation("region of attraction needs a certified candidate".into()));
    }
    if sys.n() != 2 {
        return Err(Error::Unsupported("level-set tracing is two-dimensional only".into()));
    }
    if grid < 3 {
        return Err(Error::config("level-set grid needs at least 3 points per axis"));
    }
    let (c_star, argmin) = boundary_minimum(p, sys)?;
    let (lo, hi) = sys.roi.bounding_box();
    // one padding ring outside the ROI so contours close
    let axis = |i: usize| -> Vec<f64> {
        let step = (hi[i] - lo[i]) / (grid - 1) as f64;
        (0..grid + 2).map(|k| lo[i] + step * (k as f64 - 1.0)).collect()
    };
    let (xs, ys) = (axis(0), axis(1));
    let tol = sys.partition.tol();
    let mut values = vec![f64::NAN; xs.len() * ys.len()];
    let mut top = c_star;
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            let pt = Vector::from_row_slice(&[x, y]);
            if sys.roi.contains(pt.as_slice(), tol) {
                let v = sys.lyapunov_value(p, &pt)?;
                values[i * ys.len() + j] = v;
                top = top.max(v);
            }
        }
    }
    let pad = 2.0 * top + 1.0;
    for v in values.iter_mut().filter(|v| v.is_nan()) {
        *v = pad;
    }
    let level = c_star * (1.0 - 1e-9);
    let closed: Vec<Vec<[f64; 2]>> = marching_squares(&xs, &ys, &values, level)
        .into_iter()
        .filter(|l| l.len() > 3 && l.first() == l.last())
        .filter(|l| point_in_polygon([0.0, 0.0], l))
        .collect();
    let boundary = closed
        .into_iter()
        .min_by(|a, b| polygon_area(a).abs().total_cmp(&polygon_area(b).abs()))
        .ok_or_else(|| Error::Numerical("no closed level curve around the origin".into()))?;
    let area = polygon_area(&boundary).abs();
    Ok(Roa { c_star, argmin, boundary, area })
}

/// Quadratic sublevel set `{xᵀPx ≤ c}` inside the box with `2xᵀP ẋ < 0` at
/// every grid point of the set. Returns `(c, area)`.
pub fn quadratic_roa<F>(p: &Mat, lo: &[f64], hi: &[f64], field: F, per_axis: usize) -> Result<(f64, f64)>
where
    F: Fn(&Vector) -> Vector,
{
    if p.nrows() != 2 || lo.len() != 2 || hi.len() != 2 {
        return Err(Error::dim("quadratic region estimate is two-dimensional"));
    }
    let inv = p
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular quadratic form".into()))?;
    // support of the ellipse along e_i is sqrt(c (P⁻¹)_ii)
    let mut c = f64::INFINITY;
    for i in 0..2 {
        let reach = lo[i].abs().min(hi[i].abs());
        c = c.min(reach * reach / inv[(i, i)]);
    }
    for i in 0..per_axis {
        for j in 0..per_axis {
            let x = Vector::from_row_slice(&[
                lo[0] + (hi[0] - lo[0]) * i as f64 / (per_axis - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (per_axis - 1) as f64,
            ]);
            let v = x.dot(&(p * &x));
            if v >= c || x.norm() < 1e-9 {
                continue;
            }
            if 2.0 * x.dot(&(p * field(&x))) >= 0.0 {
                c = v;
            }
        }
    }
    let area = std::f64::consts::PI * c / p.determinant().sqrt();
    Ok((c, area))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identify::AffineDynamics;
    use crate::partition::Partition;
    use crate::verify::discretize;
    use approx::assert_relative_eq;

    fn scaled_identity(alpha: f64, half: f64) -> DiscretePWA {
        let part = Partition::grid(&[-half, -half], &[half, half], &[2, 2]).unwrap();
        let model = AffineDynamics {
            a: Mat::identity(2, 2) * (alpha - 1.0),
            b: Mat::zeros(2, 1),
            c: Vector::zeros(2),
        };
        let models = vec![model; part.len()];
        let gains = vec![(Mat::zeros(1, 2), Vector::zeros(1)); part.len()];
        let d = vec![Vector::zeros(2); part.len()];
        discretize(&part, &models, &gains, &d, 1.0, part.domain(), 0.05).unwrap()
    }

    fn certified() -> VerifyOutcome {
        VerifyOutcome {
            status: VerifyStatus::Certified,
            value: -1.0,
            upper_bound: -1.0,
            gap: 1e-6,
            witness: None,
            nodes: 1,
            subproblems: 1,
            wall_time: 0.0,
        }
    }

    #[test]
    fn scalar_contraction_level() {
        let alpha = 0.6;
        let sys = scaled_identity(alpha, 1.0);
        let roa = roa_level(&Mat::identity(4, 4), &sys, &certified(), 201).unwrap();
        assert_relative_eq!(roa.c_star, 1.0 + alpha * alpha, epsilon = 1e-12);
        // level set is the unit disc
        assert!((roa.area - std::f64::consts::PI).abs() < 1e-3, "{}", roa.area);
        assert_eq!(roa.boundary.first(), roa.boundary.last());
    }

    #[test]
    fn smaller_roi_never_grows_the_area() {
        let big = roa_level(&Mat::identity(4, 4), &scaled_identity(0.5, 1.0), &certified(), 101).unwrap();
        let small = roa_level(&Mat::identity(4, 4), &scaled_identity(0.5, 0.7), &certified(), 101).unwrap();
        assert!(small.area <= big.area);
        assert!(small.c_star > 0.0);
    }

    #[test]
    fn refuses_uncertified_input() {
        let mut out = certified();
        out.status = VerifyStatus::Counterexample;
        assert!(roa_level(&Mat::identity(4, 4), &scaled_identity(0.5, 1.0), &out, 51).is_err());
    }

    #[test]
    fn quadratic_estimate_of_a_linear_sink() {
        let (c, area) = quadratic_roa(&Mat::identity(2, 2), &[-2.0, -1.0], &[2.0, 1.0], |x| -x, 41).unwrap();
        assert_relative_eq!(c, 1.0, epsilon = 1e-12);
        assert_relative_eq!(area, std::f64::consts::PI, epsilon = 1e-12);
    }
}
