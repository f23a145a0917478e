//! Polytopic tilings of the domain, point location and 2-D continuity stitching.

use serde::{Deserialize, Serialize};

use crate::identify::AffineDynamics;
use crate::linalg::{Mat, Vector};
use crate::{Error, Result};

/// `{x | Z x ≤ z}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    #[serde(rename = "Z", with = "crate::linalg::mat_rows")]
    pub zmat: Mat,
    #[serde(with = "crate::linalg::vec_serde")]
    pub z: Vector,
    pub index: usize,
}

impl Polytope {
    pub fn from_box(lo: &[f64], hi: &[f64], index: usize) -> Self {
        let n = lo.len();
        let mut zmat = Mat::zeros(2 * n, n);
        let mut z = Vector::zeros(2 * n);
        for i in 0..n {
            zmat[(2 * i, i)] = -1.0;
            z[2 * i] = -lo[i];
            zmat[(2 * i + 1, i)] = 1.0;
            z[2 * i + 1] = hi[i];
        }
        Self { zmat, z, index }
    }

    /// Convex polygon from counter-clockwise vertices.
    pub fn from_ccw_polygon(pts: &[[f64; 2]], index: usize) -> Self {
        let k = pts.len();
        let mut zmat = Mat::zeros(k, 2);
        let mut z = Vector::zeros(k);
        for e in 0..k {
            let p = pts[e];
            let q = pts[(e + 1) % k];
            let (nx, ny) = (q[1] - p[1], p[0] - q[0]);
            let len = nx.hypot(ny);
            zmat[(e, 0)] = nx / len;
            zmat[(e, 1)] = ny / len;
            z[e] = (nx * p[0] + ny * p[1]) / len;
        }
        Self { zmat, z, index }
    }

    pub fn dim(&self) -> usize {
        self.zmat.ncols()
    }

    /// Largest constraint violation `max_i (Z_i x − z_i)`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        (0..self.zmat.nrows())
            .map(|r| {
                let mut s = -self.z[r];
                for (c, xv) in x.iter().enumerate() {
                    s += self.zmat[(r, c)] * xv;
                }
                s
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.violation(x) <= tol
    }

    /// Vertices of a bounded 2-D polytope in counter-clockwise order.
    pub fn vertices_2d(&self) -> Vec<[f64; 2]> {
        assert_eq!(self.dim(), 2, "vertices_2d on a polytope of dimension {}", self.dim());
        let rows = self.zmat.nrows();
        let scale = self.z.amax().max(1.0);
        let mut pts: Vec<[f64; 2]> = Vec::new();
        for a in 0..rows {
            for b in (a + 1)..rows {
                let (a1, a2, b1, b2) = (self.zmat[(a, 0)], self.zmat[(a, 1)], self.zmat[(b, 0)], self.zmat[(b, 1)]);
                let det = a1 * b2 - a2 * b1;
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = (self.z[a] * b2 - a2 * self.z[b]) / det;
                let y = (a1 * self.z[b] - self.z[a] * b1) / det;
                if self.violation(&[x, y]) <= 1e-9 * scale
                    && !pts.iter().any(|p| (p[0] - x).abs() + (p[1] - y).abs() < 1e-10 * scale)
                {
                    pts.push([x, y]);
                }
            }
        }
        sort_ccw(&mut pts);
        pts
    }

    /// Axis-aligned bounding box `(lo, hi)` of a bounded polytope.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim();
        if n == 2 {
            let v = self.vertices_2d();
            let lo = (0..2).map(|i| v.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min)).collect();
            let hi = (0..2).map(|i| v.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max)).collect();
            return (lo, hi);
        }
        // boxes only in higher dimension: every row must be ±e_i
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for r in 0..self.zmat.nrows() {
            let row: Vec<f64> = (0..n).map(|c| self.zmat[(r, c)]).collect();
            let nz: Vec<usize> = (0..n).filter(|&c| row[c] != 0.0).collect();
            if nz.len() == 1 {
                let c = nz[0];
                let bound = self.z[r] / row[c];
                if row[c] > 0.0 {
                    hi[c] = hi[c].min(bound);
                } else {
                    lo[c] = lo[c].max(bound);
                }
            }
        }
        (lo, hi)
    }
}

fn sort_ccw(pts: &mut [[f64; 2]]) {
    if pts.is_empty() {
        return;
    }
    let k = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / k;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / k;
    pts.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.total_cmp(&tb)
    });
}

pub fn polygon_area(pts: &[[f64; 2]]) -> f64 {
    let k = pts.len();
    let mut s = 0.0;
    for i in 0..k {
        let p = pts[i];
        let q = pts[(i + 1) % k];
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s
}

/// Keep the part of a convex polygon with `a·p ≤ b`.
pub fn clip_polygon(poly: &[[f64; 2]], a: [f64; 2], b: f64) -> Vec<[f64; 2]> {
    let side = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - b;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let (sp, sq) = (side(&p), side(&q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    /// Per-axis breakpoints, `counts[i] + 1` entries each.
    pub breaks: Vec<Vec<f64>>,
    /// Grid-cell index of each lexicographic multi-index (last axis fastest).
    pub cell_of: Vec<usize>,
}

impl GridMeta {
    fn counts(&self) -> Vec<usize> {
        self.breaks.iter().map(|b| b.len() - 1).collect()
    }

    fn flat(&self, multi: &[usize]) -> usize {
        let counts = self.counts();
        multi.iter().zip(&counts).fold(0, |acc, (i, c)| acc * c + i)
    }

    /// Per-axis bins whose closed interval contains `v` (one or two).
    fn bins(&self, axis: usize, v: f64, tol: f64) -> Vec<usize> {
        let b = &self.breaks[axis];
        let k = b.len() - 1;
        (0..k).filter(|&i| v >= b[i] - tol && v <= b[i + 1] + tol).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PartitionFile", into = "PartitionFile")]
pub struct Partition {
    pub cells: Vec<Polytope>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub grid: Option<GridMeta>,
    /// Grid cell each piece was carved from (identity for an unstitched grid).
    pub parent: Vec<usize>,
    buckets: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionFile {
    cells: Vec<Polytope>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    grid: Option<GridMeta>,
    parent: Vec<usize>,
}

impl From<PartitionFile> for Partition {
    fn from(f: PartitionFile) -> Self {
        Partition::assemble(f.cells, f.lo, f.hi, f.grid, f.parent)
    }
}

impl From<Partition> for PartitionFile {
    fn from(p: Partition) -> Self {
        PartitionFile {
            cells: p.cells,
            lo: p.lo,
            hi: p.hi,
            grid: p.grid,
            parent: p.parent,
        }
    }
}

/// Result of [`Partition::locate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Location {
    pub sigma: usize,
    pub clamped: bool,
}

impl Partition {
    fn assemble(cells: Vec<Polytope>, lo: Vec<f64>, hi: Vec<f64>, grid: Option<GridMeta>, parent: Vec<usize>) -> Self {
        let mut p = Self {
            cells,
            lo,
            hi,
            grid,
            parent,
            buckets: vec![],
        };
        p.build_buckets();
        p
    }

    fn build_buckets(&mut self) {
        let Some(grid) = &self.grid else {
            self.buckets = vec![(0..self.cells.len()).collect()];
            return;
        };
        let counts = grid.counts();
        let total: usize = counts.iter().product();
        let tol = self.tol();
        let mut buckets = vec![Vec::new(); total];
        for (ci, cell) in self.cells.iter().enumerate() {
            let (lo, hi) = cell.bounding_box();
            let ranges: Vec<Vec<usize>> = (0..counts.len())
                .map(|a| {
                    let b = &grid.breaks[a];
                    (0..counts[a]).filter(|&i| hi[a] >= b[i] - tol && lo[a] <= b[i + 1] + tol).collect()
                })
                .collect();
            for multi in cartesian(&ranges) {
                buckets[grid.flat(&multi)].push(ci);
            }
        }
        self.buckets = buckets;
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn tol(&self) -> f64 {
        let extent = self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).fold(0.0, f64::max);
        1e-9 * extent.max(1.0)
    }

    pub fn domain(&self) -> Polytope {
        Polytope::from_box(&self.lo, &self.hi, 0)
    }

    /// Uniform axis-aligned grid; the cell containing the origin gets index 0.
    pub fn grid(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<Self> {
        let n = lo.len();
        if hi.len() != n || counts.len() != n {
            return Err(Error::dim("grid box and counts"));
        }
        if counts.contains(&0) {
            return Err(Error::config("grid needs at least one cell per axis"));
        }
        if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
            return Err(Error::config("grid box must have positive extent"));
        }
        if lo.iter().zip(hi).any(|(l, h)| *l > 0.0 || *h < 0.0) {
            return Err(Error::config("origin lies outside the domain box"));
        }
        let breaks: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                let k = counts[a];
                (0..=k)
                    .map(|i| if i == k { hi[a] } else { lo[a] + (hi[a] - lo[a]) * i as f64 / k as f64 })
                    .collect()
            })
            .collect();
        let ranges: Vec<Vec<usize>> = counts.iter().map(|&c| (0..c).collect()).collect();
        let multis = cartesian(&ranges);
        let origin_multi: Vec<usize> = (0..n)
            .map(|a| {
                let b = &breaks[a];
                (0..counts[a]).find(|&i| b[i] <= 0.0 && 0.0 <= b[i + 1]).unwrap_or(0)
            })
            .collect();
        let origin_flat = multis.iter().position(|m| *m == origin_multi).unwrap_or(0);
        // origin cell first, the rest in lexicographic order
        let mut order = vec![origin_flat];
        order.extend((0..multis.len()).filter(|&i| i != origin_flat));
        let mut cell_of = vec![0; multis.len()];
        let mut cells = Vec::with_capacity(multis.len());
        for (idx, &flat) in order.iter().enumerate() {
            cell_of[flat] = idx;
            let m = &multis[flat];
            let clo: Vec<f64> = (0..n).map(|a| breaks[a][m[a]]).collect();
            let chi: Vec<f64> = (0..n).map(|a| breaks[a][m[a] + 1]).collect();
            cells.push(Polytope::from_box(&clo, &chi, idx));
        }
        let parent = (0..cells.len()).collect();
        Ok(Self::assemble(
            cells,
            lo.to_vec(),
            hi.to_vec(),
            Some(GridMeta { breaks, cell_of }),
            parent,
        ))
    }

    /// Smallest index whose cell contains `x` (after clamping into the domain box).
    pub fn locate(&self, x: &[f64]) -> Result<Location> {
        if x.len() != self.dim() {
            return Err(Error::dim("locate: point dimension"));
        }
        let tol = self.tol();
        let mut clamped = false;
        let xc: Vec<f64> = x
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| {
                let c = v.clamp(*l, *h);
                if (c - v).abs() > tol {
                    clamped = true;
                }
                c
            })
            .collect();
        let mut best: Option<usize> = None;
        let mut consider = |ci: usize| {
            if best.is_none_or(|b| ci < b) && self.cells[ci].contains(&xc, tol) {
                best = Some(ci);
            }
        };
        match &self.grid {
            Some(grid) => {
                let ranges: Vec<Vec<usize>> = (0..xc.len()).map(|a| grid.bins(a, xc[a], tol)).collect();
                for multi in cartesian(&ranges) {
                    for &ci in &self.buckets[grid.flat(&multi)] {
                        consider(ci);
                    }
                }
            }
            None => (0..self.cells.len()).for_each(&mut consider),
        }
        best.map(|sigma| Location { sigma, clamped })
            .ok_or_else(|| Error::Internal(format!("no cell contains {:?}", xc)))
    }

    pub fn sigma(&self, x: &[f64]) -> Result<usize> {
        Ok(self.locate(x)?.sigma)
    }

    /// Like [`Partition::sigma`], but `None` for points outside the domain box.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        self.locate(x).ok().filter(|l| !l.clamped).map(|l| l.sigma)
    }

    /// All cell indices whose closed cell contains `x` (within tolerance).
    pub fn containing(&self, x: &[f64]) -> Vec<usize> {
        let tol = self.tol();
        (0..self.cells.len()).filter(|&i| self.cells[i].contains(x, tol)).collect()
    }

    /// Width of the smallest grid cell along any axis.
    pub fn min_cell_width(&self) -> Option<f64> {
        self.grid.as_ref().map(|g| {
            g.breaks
                .iter()
                .flat_map(|b| b.windows(2).map(|w| w[1] - w[0]))
                .fold(f64::INFINITY, f64::min)
        })
    }
}

fn cartesian(ranges: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for r in ranges {
        let mut next = Vec::with_capacity(out.len() * r.len());
        for prefix in &out {
            for &v in r {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Stitched partition with its per-piece affine models.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stitched {
    pub partition: Partition,
    pub models: Vec<AffineDynamics>,
}

/// Affine map `v(p) = A p + c` through three nodal values.
fn interpolate_triangle(p: [[f64; 2]; 3], vals: [&Vector; 3]) -> Result<(Mat, Vector)> {
    let basis = Mat::from_row_slice(3, 3, &[p[0][0], p[0][1], 1.0, p[1][0], p[1][1], 1.0, p[2][0], p[2][1], 1.0]);
    let lu = basis.lu();
    let n = vals[0].len();
    let mut a = Mat::zeros(n, 2);
    let mut c = Vector::zeros(n);
    for i in 0..n {
        let rhs = Vector::from_vec(vec![vals[0][i], vals[1][i], vals[2][i]]);
        let coef = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("degenerate stitching triangle".into()))?;
        a[(i, 0)] = coef[0];
        a[(i, 1)] = coef[1];
        c[i] = coef[2];
    }
    Ok((a, c))
}

/// Insert margin bands of half-width `w` around every interior facet of a 2-D
/// grid and interpolate the neighbouring drift models across them.
///
/// Cores keep their original indices. Band triangles are split along the grid
/// lines, so every new piece lies inside one original cell and inherits that
/// cell's input matrix. The drift `A x + c` is continuous across all facets;
/// the input matrix is generally not, see [`input_jump`].
pub fn stitch_margins_2d(partition: &Partition, models: &[AffineDynamics], w: f64) -> Result<Stitched> {
    let grid = partition
        .grid
        .as_ref()
        .filter(|_| partition.dim() == 2)
        .ok_or_else(|| Error::Unsupported("stitching needs a 2-D grid partition".into()))?;
    if models.len() != partition.len() {
        return Err(Error::dim("one model per cell"));
    }
    let min_w = partition.min_cell_width().unwrap_or(0.0);
    if !(w > 0.0) || w > 0.5 * min_w {
        return Err(Error::config(format!(
            "margin width {w} must be positive and at most half the smallest cell ({min_w})"
        )));
    }
    let bx = &grid.breaks[0];
    let by = &grid.breaks[1];
    let (kx, ky) = (bx.len() - 1, by.len() - 1);
    let cell = |i: usize, j: usize| grid.cell_of[i * ky + j];
    let core_x = |i: usize| (bx[i] + if i > 0 { w } else { 0.0 }, bx[i + 1] - if i + 1 < kx { w } else { 0.0 });
    let core_y = |j: usize| (by[j] + if j > 0 { w } else { 0.0 }, by[j + 1] - if j + 1 < ky { w } else { 0.0 });
    let drift = |c: usize, p: [f64; 2]| {
        let m = &models[c];
        &m.a * Vector::from_vec(vec![p[0], p[1]]) + &m.c
    };

    let n_cells = partition.len();
    let mut polys: Vec<Option<(Vec<[f64; 2]>, usize)>> = vec![None; n_cells];
    let mut out_models: Vec<Option<AffineDynamics>> = vec![None; n_cells];
    for i in 0..kx {
        for j in 0..ky {
            let (x0, x1) = core_x(i);
            let (y0, y1) = core_y(j);
            let c = cell(i, j);
            polys[c] = Some((vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]], c));
            out_models[c] = Some(models[c].clone());
        }
    }
    let mut extra: Vec<(Vec<[f64; 2]>, usize, AffineDynamics)> = Vec::new();
    let mut emit = |tri: [[f64; 2]; 3], owners: [usize; 3], centre: Option<Vector>| -> Result<()> {
        let vals: Vec<Vector> = (0..3)
            .map(|k| match (&centre, k) {
                (Some(v), 0) => v.clone(),
                _ => drift(owners[k], tri[k]),
            })
            .collect();
        let (a, c) = interpolate_triangle(tri, [&vals[0], &vals[1], &vals[2]])?;
        let mut poly = tri.to_vec();
        if polygon_area(&poly) < 0.0 {
            poly.reverse();
        }
        // split by every grid line crossing the triangle
        let mut pieces = vec![poly];
        for (axis, breaks) in [(0usize, bx), (1usize, by)] {
            for &b in &breaks[1..breaks.len() - 1] {
                let mut next = Vec::new();
                for p in pieces {
                    let lo = p.iter().map(|q| q[axis]).fold(f64::INFINITY, f64::min);
                    let hi = p.iter().map(|q| q[axis]).fold(f64::NEG_INFINITY, f64::max);
                    if lo < b && hi > b {
                        let mut normal = [0.0, 0.0];
                        normal[axis] = 1.0;
                        next.push(clip_polygon(&p, normal, b));
                        normal[axis] = -1.0;
                        next.push(clip_polygon(&p, normal, -b));
                    } else {
                        next.push(p);
                    }
                }
                pieces = next;
            }
        }
        for p in pieces {
            if p.len() < 3 || polygon_area(&p) <= 1e-14 * w * w {
                continue;
            }
            let k = p.len() as f64;
            let cx = p.iter().map(|q| q[0]).sum::<f64>() / k;
            let cy = p.iter().map(|q| q[1]).sum::<f64>() / k;
            let i = (0..kx).find(|&i| cx >= bx[i] && cx <= bx[i + 1]).unwrap_or(kx - 1);
            let j = (0..ky).find(|&j| cy >= by[j] && cy <= by[j + 1]).unwrap_or(ky - 1);
            let owner = cell(i, j);
            extra.push((
                p,
                owner,
                AffineDynamics {
                    a: a.clone(),
                    b: models[owner].b.clone(),
                    c: c.clone(),
                },
            ));
        }
        Ok(())
    };

    // vertical bands
    for i in 1..kx {
        for j in 0..ky {
            let (y0, y1) = core_y(j);
            let (xa, xb) = (bx[i] - w, bx[i] + w);
            let (l, r) = (cell(i - 1, j), cell(i, j));
            let p00 = [xa, y0];
            let p10 = [xb, y0];
            let p11 = [xb, y1];
            let p01 = [xa, y1];
            emit([p00, p10, p11], [l, r, r], None)?;
            emit([p00, p11, p01], [l, r, l], None)?;
        }
    }
    // horizontal bands
    for j in 1..ky {
        for i in 0..kx {
            let (x0, x1) = core_x(i);
            let (ya, yb) = (by[j] - w, by[j] + w);
            let (d, u) = (cell(i, j - 1), cell(i, j));
            let p00 = [x0, ya];
            let p10 = [x1, ya];
            let p11 = [x1, yb];
            let p01 = [x0, yb];
            emit([p00, p10, p11], [d, d, u], None)?;
            emit([p00, p11, p01], [d, u, u], None)?;
        }
    }
    // vertex squares
    for i in 1..kx {
        for j in 1..ky {
            let (cx, cy) = (bx[i], by[j]);
            let corners = [
                ([cx - w, cy - w], cell(i - 1, j - 1)),
                ([cx + w, cy - w], cell(i, j - 1)),
                ([cx + w, cy + w], cell(i, j)),
                ([cx - w, cy + w], cell(i - 1, j)),
            ];
            let centre = corners.iter().fold(Vector::zeros(models[0].c.len()), |acc, (p, c)| acc + drift(*c, *p)) / 4.0;
            for k in 0..4 {
                let (p, pc) = corners[k];
                let (q, qc) = corners[(k + 1) % 4];
                emit([[cx, cy], p, q], [pc, pc, qc], Some(centre.clone()))?;
            }
        }
    }

    let mut cells = Vec::with_capacity(n_cells + extra.len());
    let mut parent = Vec::with_capacity(n_cells + extra.len());
    let mut out = Vec::with_capacity(n_cells + extra.len());
    for idx in 0..n_cells {
        let (poly, owner) = polys[idx].take().ok_or_else(|| Error::Internal("missing core".into()))?;
        cells.push(Polytope::from_ccw_polygon(&poly, idx));
        parent.push(owner);
        out.push(out_models[idx].take().ok_or_else(|| Error::Internal("missing core model".into()))?);
    }
    for (poly, owner, model) in extra {
        let idx = cells.len();
        let mut poly = poly;
        if polygon_area(&poly) < 0.0 {
            poly.reverse();
        }
        cells.push(Polytope::from_ccw_polygon(&poly, idx));
        parent.push(owner);
        out.push(model);
    }
    Ok(Stitched {
        partition: Partition::assemble(cells, partition.lo.clone(), partition.hi.clone(), partition.grid.clone(), parent),
        models: out,
    })
}

/// Points spaced along every facet of every cell of a 2-D partition.
pub fn facet_probes(partition: &Partition, per_edge: usize) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    for cell in &partition.cells {
        let v = cell.vertices_2d();
        for e in 0..v.len() {
            let p = v[e];
            let q = v[(e + 1) % v.len()];
            for s in 0..=per_edge {
                let t = s as f64 / per_edge as f64;
                pts.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    pts
}

/// Largest difference of the drift `A x + c` between cells sharing a probe point.
pub fn drift_jump(partition: &Partition, models: &[AffineDynamics], probes: &[[f64; 2]]) -> f64 {
    max_pairwise(partition, probes, |c, x| &models[c].a * x + &models[c].c)
}

/// Largest difference of the input matrix between cells sharing a probe point.
pub fn input_jump(partition: &Partition, models: &[AffineDynamics], probes: &[[f64; 2]]) -> f64 {
    max_pairwise(partition, probes, |c, _| Vector::from_column_slice(models[c].b.as_slice()))
}

fn max_pairwise<F: Fn(usize, &Vector) -> Vector>(partition: &Partition, probes: &[[f64; 2]], eval: F) -> f64 {
    let mut worst: f64 = 0.0;
    for p in probes {
        let x = Vector::from_vec(p.to_vec());
        let owners = partition.containing(p);
        let vals: Vec<Vector> = owners.iter().map(|&c| eval(c, &x)).collect();
        for a in 0..vals.len() {
            for b in (a + 1)..vals.len() {
                worst = worst.max((&vals[a] - &vals[b]).amax());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_grid() {
        let p = Partition::grid(&[-6.0, -6.0], &[6.0, 6.0], &[2, 2]).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.cells.iter().all(|c| c.zmat.nrows() == 4));
        assert_eq!(p.sigma(&[0.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn single_cell_is_the_box() {
        let p = Partition::grid(&[-1.0, -2.0], &[1.0, 2.0], &[1, 1]).unwrap();
        assert_eq!(p.cells[0], Polytope::from_box(&[-1.0, -2.0], &[1.0, 2.0], 0));
    }

    #[test]
    fn origin_outside_is_rejected() {
        assert!(Partition::grid(&[1.0, 1.0], &[2.0, 2.0], &[2, 2]).is_err());
        assert!(Partition::grid(&[-1.0, -1.0], &[1.0, 1.0], &[0, 2]).is_err());
    }

    #[test]
    fn facet_ties_go_to_the_lower_index() {
        let p = Partition::grid(&[-6.0, -6.0], &[6.0, 6.0], &[3, 3]).unwrap();
        // x1 = 2 separates the origin cell from its right neighbour
        let s = p.sigma(&[2.0, 0.0]).unwrap();
        assert_eq!(s, 0);
        let owners = p.containing(&[2.0, 0.0]);
        assert_eq!(owners.len(), 2);
        assert_eq!(s, *owners.iter().min().unwrap());
    }

    #[test]
    fn clamping_is_flagged() {
        let p = Partition::grid(&[-1.0, -1.0], &[1.0, 1.0], &[2, 2]).unwrap();
        let loc = p.locate(&[5.0, 0.5]).unwrap();
        assert!(loc.clamped);
        assert!(p.cells[loc.sigma].contains(&[1.0, 0.5], 1e-12));
    }

    #[test]
    fn polygon_roundtrip() {
        let sq = Polytope::from_box(&[0.0, 0.0], &[2.0, 1.0], 0);
        let v = sq.vertices_2d();
        assert_eq!(v.len(), 4);
        assert!((polygon_area(&v) - 2.0).abs() < 1e-12);
        let again = Polytope::from_ccw_polygon(&v, 0);
        for probe in [[1.0, 0.5], [2.0, 1.0], [2.1, 0.5]] {
            assert_eq!(sq.contains(&probe, 1e-12), again.contains(&probe, 1e-12));
        }
    }
}
