//! Largest sample-free balls inside a polytope (state gap) or an input box (control gap).

use delaunator::{triangulate, Point, EMPTY};
use serde::{Deserialize, Serialize};

use crate::partition::Polytope;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
    /// `true` when `radius` is an upper bound rather than the exact optimum.
    pub upper_bound: bool,
}

/// Uniform bucket grid for nearest-site queries in the plane.
struct NearestGrid<'a> {
    sites: &'a [[f64; 2]],
    lo: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl<'a> NearestGrid<'a> {
    fn new(sites: &'a [[f64; 2]]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for s in sites {
            for a in 0..2 {
                lo[a] = lo[a].min(s[a]);
                hi[a] = hi[a].max(s[a]);
            }
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        let per_axis = ((sites.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let cell = extent / per_axis as f64;
        let dims = [
            ((hi[0] - lo[0]) / cell) as usize + 1,
            ((hi[1] - lo[1]) / cell) as usize + 1,
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        for (k, s) in sites.iter().enumerate() {
            let (i, j) = Self::bin(lo, cell, dims, s);
            buckets[i * dims[1] + j].push(k);
        }
        Self {
            sites,
            lo,
            cell,
            dims,
            buckets,
        }
    }

    fn bin(lo: [f64; 2], cell: f64, dims: [usize; 2], p: &[f64; 2]) -> (usize, usize) {
        let i = ((p[0] - lo[0]) / cell).floor().clamp(0.0, (dims[0] - 1) as f64) as usize;
        let j = ((p[1] - lo[1]) / cell).floor().clamp(0.0, (dims[1] - 1) as f64) as usize;
        (i, j)
    }

    /// Distance from `p` to the closest site.
    fn nearest(&self, p: &[f64; 2]) -> f64 {
        let (ci, cj) = Self::bin(self.lo, self.cell, self.dims, p);
        // distance from p to the clamped bin region, to know when rings can stop
        let outside = {
            let hi0 = self.lo[0] + self.dims[0] as f64 * self.cell;
            let hi1 = self.lo[1] + self.dims[1] as f64 * self.cell;
            let dx = (self.lo[0] - p[0]).max(p[0] - hi0).max(0.0);
            let dy = (self.lo[1] - p[1]).max(p[1] - hi1).max(0.0);
            dx.hypot(dy)
        };
        let mut best = f64::INFINITY;
        let max_ring = self.dims[0].max(self.dims[1]);
        for ring in 0..=max_ring {
            let lo_i = ci.saturating_sub(ring);
            let hi_i = (ci + ring).min(self.dims[0] - 1);
            let lo_j = cj.saturating_sub(ring);
            let hi_j = (cj + ring).min(self.dims[1] - 1);
            for i in lo_i..=hi_i {
                for j in lo_j..=hi_j {
                    let on_ring = i.abs_diff(ci) == ring || j.abs_diff(cj) == ring;
                    if !on_ring {
                        continue;
                    }
                    for &k in &self.buckets[i * self.dims[1] + j] {
                        let s = self.sites[k];
                        best = best.min((s[0] - p[0]).hypot(s[1] - p[1]));
                    }
                }
            }
            // every unvisited bin is at least `ring * cell` away from p's bin
            if best <= outside.max(ring as f64 * self.cell) {
                break;
            }
        }
        best
    }
}

fn circumcenter(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 2]> {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    if d.abs() < 1e-300 {
        return None;
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    Some([a[0] + (cy * b2 - by * c2) / d, a[1] + (bx * c2 - cx * b2) / d])
}

/// Intersections of the perpendicular bisector of `a`,`b` with a polygon boundary.
fn bisector_hits(a: [f64; 2], b: [f64; 2], poly: &[[f64; 2]], out: &mut Vec<[f64; 2]>) {
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let dir = [a[1] - b[1], b[0] - a[0]];
    if dir[0] == 0.0 && dir[1] == 0.0 {
        return;
    }
    for e in 0..poly.len() {
        let p = poly[e];
        let q = poly[(e + 1) % poly.len()];
        let seg = [q[0] - p[0], q[1] - p[1]];
        let den = dir[0] * seg[1] - dir[1] * seg[0];
        if den.abs() < 1e-300 {
            continue;
        }
        // mid + t dir = p + s seg
        let w = [p[0] - mid[0], p[1] - mid[1]];
        let s = (w[0] * dir[1] - w[1] * dir[0]) / den;
        if (-1e-12..=1.0 + 1e-12).contains(&s) {
            let s = s.clamp(0.0, 1.0);
            out.push([p[0] + s * seg[0], p[1] + s * seg[1]]);
        }
    }
}

/// Exact largest empty circle centred in a convex polygon.
///
/// The optimum is attained at a Voronoi vertex inside the polygon, where a
/// Voronoi edge crosses the boundary, or at a polygon vertex. Every candidate
/// is scored by its true nearest-site distance, so spurious candidates can
/// only lower the result, never inflate it.
pub fn largest_empty_circle(sites: &[[f64; 2]], poly: &Polytope) -> Result<Ball> {
    if poly.dim() != 2 {
        return Err(Error::dim("largest_empty_circle needs a planar polytope"));
    }
    if sites.is_empty() {
        return chebyshev_ball(poly);
    }
    let verts = poly.vertices_2d();
    if verts.len() < 3 {
        return Err(Error::Validation("polytope has empty interior".into()));
    }
    let scale = verts.iter().map(|v| v[0].abs().max(v[1].abs())).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut candidates: Vec<[f64; 2]> = verts.clone();

    let points: Vec<Point> = sites.iter().map(|s| Point { x: s[0], y: s[1] }).collect();
    let tri = triangulate(&points);
    if tri.triangles.is_empty() {
        // collinear or fewer than three distinct sites: the Voronoi cells are
        // strips bounded by bisectors of consecutive sites along the line
        let mut order: Vec<usize> = (0..sites.len()).collect();
        let (a, b) = extreme_pair(sites);
        let dir = [sites[b][0] - sites[a][0], sites[b][1] - sites[a][1]];
        order.sort_by(|&i, &j| {
            let pi = sites[i][0] * dir[0] + sites[i][1] * dir[1];
            let pj = sites[j][0] * dir[0] + sites[j][1] * dir[1];
            pi.total_cmp(&pj)
        });
        for w in order.windows(2) {
            bisector_hits(sites[w[0]], sites[w[1]], &verts, &mut candidates);
        }
    } else {
        for t in 0..tri.triangles.len() / 3 {
            let (a, b, c) = (sites[tri.triangles[3 * t]], sites[tri.triangles[3 * t + 1]], sites[tri.triangles[3 * t + 2]]);
            if let Some(cc) = circumcenter(a, b, c) {
                if poly.contains(&cc, tol) {
                    candidates.push(cc);
                }
            }
        }
        for e in 0..tri.halfedges.len() {
            let twin = tri.halfedges[e];
            if twin != EMPTY && twin < e {
                continue;
            }
            let a = sites[tri.triangles[e]];
            let b = sites[tri.triangles[delaunator::next_halfedge(e)]];
            bisector_hits(a, b, &verts, &mut candidates);
        }
    }

    let nn = NearestGrid::new(sites);
    let mut best = Ball {
        center: vec![verts[0][0], verts[0][1]],
        radius: -1.0,
        upper_bound: false,
    };
    for c in candidates {
        let r = nn.nearest(&c);
        if r > best.radius {
            best.center = vec![c[0], c[1]];
            best.radius = r;
        }
    }
    Ok(best)
}

fn extreme_pair(sites: &[[f64; 2]]) -> (usize, usize) {
    let mut a = 0;
    let mut b = 0;
    for (k, s) in sites.iter().enumerate() {
        if (s[0], s[1]) < (sites[a][0], sites[a][1]) {
            a = k;
        }
        if (s[0], s[1]) > (sites[b][0], sites[b][1]) {
            b = k;
        }
    }
    (a, b)
}

/// Largest inscribed ball, from the LP `max r s.t. Z_i c + r‖Z_i‖ ≤ z_i`,
/// solved by enumerating basic solutions.
pub fn chebyshev_ball(poly: &Polytope) -> Result<Ball> {
    let n = poly.dim();
    let rows = poly.zmat.nrows();
    let norms: Vec<f64> = (0..rows).map(|r| poly.zmat.row(r).norm()).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut combo: Vec<usize> = (0..=n).collect();
    if rows < n + 1 {
        return Err(Error::Validation("polytope is unbounded".into()));
    }
    loop {
        let mut m = crate::linalg::Mat::zeros(n + 1, n + 1);
        let mut rhs = crate::linalg::Vector::zeros(n + 1);
        for (k, &r) in combo.iter().enumerate() {
            for c in 0..n {
                m[(k, c)] = poly.zmat[(r, c)];
            }
            m[(k, n)] = norms[r];
            rhs[k] = poly.z[r];
        }
        if let Some(sol) = m.lu().solve(&rhs) {
            let radius = sol[n];
            let center: Vec<f64> = (0..n).map(|c| sol[c]).collect();
            let feasible = radius >= -1e-12
                && (0..rows).all(|r| {
                    let s: f64 = (0..n).map(|c| poly.zmat[(r, c)] * center[c]).sum();
                    s + radius * norms[r] <= poly.z[r] + 1e-9 * (1.0 + poly.z[r].abs())
                });
            if feasible && best.as_ref().is_none_or(|b| radius > b.1) {
                best = Some((center, radius));
            }
        }
        // next combination
        let mut i = n + 1;
        loop {
            if i == 0 {
                let (center, radius) = best.ok_or_else(|| Error::Validation("polytope is empty".into()))?;
                return Ok(Ball {
                    center,
                    radius: radius.max(0.0),
                    upper_bound: false,
                });
            }
            i -= 1;
            if combo[i] < rows - (n + 1 - i) {
                combo[i] += 1;
                for k in (i + 1)..=n {
                    combo[k] = combo[k - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Certified upper bound in any dimension: max nearest-site distance over a
/// grid of the bounding box, plus half the grid cell diagonal.
pub fn grid_upper_bound(sites: &[Vec<f64>], poly: &Polytope, per_axis: usize) -> Result<Ball> {
    if sites.is_empty() {
        return chebyshev_ball(poly);
    }
    let (lo, hi) = poly.bounding_box();
    let n = lo.len();
    if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Unsupported("grid bound needs a box-bounded polytope".into()));
    }
    let per_axis = per_axis.max(2);
    let steps: Vec<f64> = (0..n).map(|a| (hi[a] - lo[a]) / (per_axis - 1) as f64).collect();
    let half_diag = 0.5 * steps.iter().map(|s| s * s).sum::<f64>().sqrt();
    let total = per_axis.pow(n as u32);
    let mut best = Ball {
        center: lo.clone(),
        radius: -1.0,
        upper_bound: true,
    };
    let mut point = vec![0.0; n];
    for flat in 0..total {
        let mut rem = flat;
        for a in 0..n {
            point[a] = lo[a] + (rem % per_axis) as f64 * steps[a];
            rem /= per_axis;
        }
        // cells that straddle the boundary still count: their centre may be outside
        if poly.violation(&point) > half_diag {
            continue;
        }
        let d = sites
            .iter()
            .map(|s| s.iter().zip(&point).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        if d > best.radius {
            best.radius = d;
            best.center = point.clone();
        }
    }
    best.radius += half_diag;
    Ok(best)
}

/// Largest gap on `[lo, hi]` by a sorted scan.
pub fn largest_gap_1d(samples: &[f64], lo: f64, hi: f64) -> Ball {
    if samples.is_empty() {
        return Ball {
            center: vec![0.5 * (lo + hi)],
            radius: 0.5 * (hi - lo),
            upper_bound: false,
        };
    }
    let mut s: Vec<f64> = samples.iter().map(|v| v.clamp(lo, hi)).collect();
    s.sort_by(f64::total_cmp);
    let mut best = Ball {
        center: vec![lo],
        radius: s[0] - lo,
        upper_bound: false,
    };
    for w in s.windows(2) {
        let r = 0.5 * (w[1] - w[0]);
        if r > best.radius {
            best = Ball {
                center: vec![0.5 * (w[0] + w[1])],
                radius: r,
                upper_bound: false,
            };
        }
    }
    let last = s[s.len() - 1];
    if hi - last > best.radius {
        best = Ball {
            center: vec![hi],
            radius: hi - last,
            upper_bound: false,
        };
    }
    best
}

/// Largest empty ball of input samples inside `Ω = {|u_j| ≤ ū_j}`.
pub fn largest_empty_ball_control(samples: &[Vec<f64>], u_bar: &[f64]) -> Result<Ball> {
    let lo: Vec<f64> = u_bar.iter().map(|b| -b).collect();
    match u_bar.len() {
        1 => Ok(largest_gap_1d(&samples.iter().map(|u| u[0]).collect::<Vec<_>>(), lo[0], u_bar[0])),
        2 => {
            let sites: Vec<[f64; 2]> = samples.iter().map(|u| [u[0], u[1]]).collect();
            largest_empty_circle(&sites, &Polytope::from_box(&lo, u_bar, 0))
        }
        _ => grid_upper_bound(samples, &Polytope::from_box(&lo, u_bar, 0), 16),
    }
}

/// Largest empty ball of state samples inside a cell: exact in the plane,
/// a certified grid bound otherwise.
pub fn largest_empty_ball_state(samples: &[Vec<f64>], poly: &Polytope) -> Result<Ball> {
    if poly.dim() == 2 {
        let sites: Vec<[f64; 2]> = samples.iter().map(|x| [x[0], x[1]]).collect();
        largest_empty_circle(&sites, poly)
    } else {
        grid_upper_bound(samples, poly, 6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centroid_sample_reaches_the_corner() {
        let sq = Polytope::from_box(&[0.0, 0.0], &[2.0, 2.0], 0);
        let b = largest_empty_circle(&[[1.0, 1.0]], &sq).unwrap();
        assert!((b.radius - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_cell_uses_the_inscribed_ball() {
        let sq = Polytope::from_box(&[0.0, 0.0], &[2.0, 2.0], 0);
        let b = largest_empty_circle(&[], &sq).unwrap();
        assert!((b.radius - 1.0).abs() < 1e-12);
        assert!((b.center[0] - 1.0).abs() < 1e-12 && (b.center[1] - 1.0).abs() < 1e-12);
        let rect = Polytope::from_box(&[0.0, 0.0, 0.0], &[4.0, 2.0, 6.0], 0);
        assert!((chebyshev_ball(&rect).unwrap().radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_sites() {
        let sq = Polytope::from_box(&[0.0, 0.0], &[4.0, 4.0], 0);
        let sites = [[1.0, 2.0], [2.0, 2.0], [3.0, 2.0]];
        let b = largest_empty_circle(&sites, &sq).unwrap();
        // corners are sqrt(1 + 4) away from the end sites
        assert!((b.radius - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_gaps() {
        let b = largest_gap_1d(&[-2.0, 0.0, 2.0], -2.0, 2.0);
        assert_eq!(b.radius, 1.0);
        assert!((b.center[0].abs() - 1.0).abs() < 1e-12);
        let b = largest_gap_1d(&[], -3.0, 3.0);
        assert_eq!((b.center[0], b.radius), (0.0, 3.0));
        let dense: Vec<f64> = (0..=40).map(|k| -2.0 + 0.1 * k as f64).collect();
        assert!((largest_gap_1d(&dense, -2.0, 2.0).radius - 0.05).abs() < 1e-9);
    }

    #[test]
    fn grid_bound_dominates_exact() {
        let sq = Polytope::from_box(&[0.0, 0.0], &[1.0, 1.0], 0);
        let sites = [[0.2, 0.3], [0.7, 0.8], [0.9, 0.1], [0.4, 0.6]];
        let exact = largest_empty_circle(&sites, &sq).unwrap();
        let vsites: Vec<Vec<f64>> = sites.iter().map(|s| s.to_vec()).collect();
        let ub = grid_upper_bound(&vsites, &sq, 50).unwrap();
        assert!(ub.radius >= exact.radius);
        assert!(ub.radius <= exact.radius + 2.0 * (2f64.sqrt() / 49.0));
    }
}
