//! Spatial branch-and-bound for maximizing an indefinite quadratic over a
//! polytope intersected with a box.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::linalg::{symmetrize, Mat, Vector};

/// `max yᵀHy + gᵀy + k` subject to `A y ≤ b`, `lo ≤ y ≤ hi`.
#[derive(Clone, Debug)]
pub struct QuadProblem {
    pub h: Mat,
    pub g: Vector,
    pub k: f64,
    pub a: Mat,
    pub b: Vector,
    pub lo: Vector,
    pub hi: Vector,
}

#[derive(Clone, Copy, Debug)]
pub struct BnbConfig {
    /// Stop once `upper − lower ≤ gap`.
    pub gap: f64,
    pub node_cap: usize,
    /// Return as soon as an incumbent with positive value is known.
    pub stop_at_positive: bool,
    /// Return as soon as the upper bound is negative.
    pub stop_at_negative: bool,
}

#[derive(Clone, Debug)]
pub struct BnbResult {
    pub upper: f64,
    pub lower: f64,
    pub argmax: Option<Vector>,
    pub nodes: usize,
    pub capped: bool,
}

impl QuadProblem {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, y: &Vector) -> f64 {
        y.dot(&(&self.h * y)) + self.g.dot(y) + self.k
    }

    /// Largest constraint violation of `y` (box included).
    pub fn violation(&self, y: &Vector) -> f64 {
        let mut worst: f64 = 0.0;
        if self.a.nrows() > 0 {
            let r = &self.a * y - &self.b;
            worst = worst.max(r.max());
        }
        for i in 0..y.len() {
            worst = worst.max(self.lo[i] - y[i]).max(y[i] - self.hi[i]);
        }
        worst
    }

    fn feas_tol(&self) -> f64 {
        let s = self.b.amax().max(self.lo.amax()).max(self.hi.amax()).max(1.0);
        1e-9 * s
    }
}

struct Node {
    lo: Vector,
    hi: Vector,
    upper: f64,
    branch: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.upper == other.upper
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.upper.total_cmp(&other.upper)
    }
}

/// Concave overestimate of the objective on a box, maximized exactly.
pub struct Relaxation {
    pub upper: f64,
    /// Maximizer of the relaxation (feasible for the original constraints
    /// up to solver tolerance).
    pub point: Vector,
    /// Coordinate whose splitting most reduces the secant error, or `None`
    /// when the relaxation is exact on this box.
    pub branch: Option<usize>,
}

/// Bound the problem on `[lo, hi]`. `None` when the node is infeasible.
pub fn relax(p: &QuadProblem, lo: &Vector, hi: &Vector) -> Option<Relaxation> {
    let n = p.dim();
    let mid = (lo + hi) * 0.5;
    let half = (hi - lo) * 0.5;
    let s = Mat::from_diagonal(&half);
    // y = mid + S z, z ∈ [−1, 1]ⁿ
    let mut hz = &s * &p.h * &s;
    symmetrize(&mut hz);
    let gz = &s * (&p.h * &mid * 2.0 + &p.g);
    let kz = p.objective(&mid);

    let eig = hz.clone().symmetric_eigen();
    let mut concave = Mat::zeros(n, n);
    let mut secant = 0.0;
    let mut weight = Vector::zeros(n);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        if lam > 0.0 {
            // (vᵀz)² ≤ ‖v‖₁² on the unit box
            let l1: f64 = v.iter().map(|c| c.abs()).sum();
            secant += lam * l1 * l1;
            for j in 0..n {
                weight[j] += lam * v[j].abs() * l1;
            }
        } else {
            concave += v * v.transpose() * lam;
        }
    }
    let scale = hz.amax() + gz.amax() + 1e-300;
    let ridge = 1e-9 * scale;

    // minimize ½ zᵀ Q z + cᵀ z with Q = 2(ridge I − H⁻), c = −g
    let mut q = (Mat::identity(n, n) * ridge - &concave) * 2.0;
    symmetrize(&mut q);
    let c: Vec<f64> = gz.iter().map(|v| -v).collect();
    let tol = p.feas_tol();
    let m = p.a.nrows();
    let mut amat = Vec::with_capacity((m + 2 * n) * n);
    let mut bvec = Vec::with_capacity(m + 2 * n);
    let as_ = &p.a * &s;
    let rhs = &p.b - &p.a * &mid;
    for r in 0..m {
        let row_norm: f64 = as_.row(r).iter().map(|v| v.abs()).sum();
        if row_norm <= 1e-14 {
            // constraint independent of the free coordinates
            if rhs[r] < -tol {
                return None;
            }
            continue;
        }
        amat.extend(as_.row(r).iter());
        bvec.push(rhs[r] + tol);
    }
    for j in 0..n {
        let mut row = vec![0.0; n];
        row[j] = 1.0;
        amat.extend(&row);
        bvec.push(1.0);
        row[j] = -1.0;
        amat.extend(&row);
        bvec.push(1.0);
    }
    let mut qbuf: Vec<f64> = q.transpose().iter().copied().collect();
    let sol = quadprog::solve_qp(&mut qbuf, &c, &amat, &bvec, 0, false).ok()?;
    let z = Vector::from_vec(sol.sol);
    let upper = -sol.obj + kz + secant + ridge * n as f64 + 1e-12 * scale;
    let point = &mid + &s * &z;
    let branch = (0..n)
        .filter(|&j| half[j] > 0.0)
        .max_by(|&a, &b| weight[a].total_cmp(&weight[b]))
        .filter(|&j| weight[j] > 1e-14 * scale);
    Some(Relaxation { upper, point, branch })
}

/// Global maximization by best-first branch-and-bound.
pub fn maximize(p: &QuadProblem, cfg: &BnbConfig) -> BnbResult {
    let mut result = BnbResult {
        upper: f64::NEG_INFINITY,
        lower: f64::NEG_INFINITY,
        argmax: None,
        nodes: 0,
        capped: false,
    };
    if (0..p.dim()).any(|i| p.lo[i] > p.hi[i]) {
        return result;
    }
    let tol = p.feas_tol();
    let mut consider = |y: &Vector, result: &mut BnbResult| {
        let y = y.zip_zip_map(&p.lo, &p.hi, |v, l, h| v.clamp(l, h));
        if p.violation(&y) <= 10.0 * tol {
            let f = p.objective(&y);
            if f > result.lower {
                result.lower = f;
                result.argmax = Some(y);
            }
        }
    };
    let mut heap = BinaryHeap::new();
    let push = |lo: Vector, hi: Vector, heap: &mut BinaryHeap<Node>, result: &mut BnbResult, consider: &mut dyn FnMut(&Vector, &mut BnbResult)| {
        result.nodes += 1;
        if let Some(r) = relax(p, &lo, &hi) {
            consider(&r.point, result);
            match r.branch {
                Some(branch) => heap.push(Node { lo, hi, upper: r.upper, branch }),
                None => {
                    // exact relaxation: the bound is attained up to the ridge
                    heap.push(Node { lo, hi, upper: r.upper, branch: usize::MAX });
                }
            }
        }
    };
    push(p.lo.clone(), p.hi.clone(), &mut heap, &mut result, &mut consider);

    while let Some(node) = heap.pop() {
        result.upper = node.upper;
        if node.upper <= result.lower || node.upper - result.lower <= cfg.gap {
            // every open node is bounded by this one
            result.upper = node.upper.max(result.lower);
            return result;
        }
        if cfg.stop_at_negative && node.upper < 0.0 {
            return result;
        }
        if cfg.stop_at_positive && result.lower > 0.0 {
            return result;
        }
        if node.branch == usize::MAX {
            // exact up to the ridge and the best open node
            return result;
        }
        if result.nodes >= cfg.node_cap {
            result.capped = true;
            heap.push(node);
            return result;
        }
        let j = node.branch;
        let cut = 0.5 * (node.lo[j] + node.hi[j]);
        let mut left_hi = node.hi.clone();
        left_hi[j] = cut;
        let mut right_lo = node.lo.clone();
        right_lo[j] = cut;
        push(node.lo.clone(), left_hi, &mut heap, &mut result, &mut consider);
        push(right_lo, node.hi, &mut heap, &mut result, &mut consider);
    }
    // every node pruned as infeasible or exhausted
    result.upper = result.lower;
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_problem(h: Mat, g: Vector, lo: &[f64], hi: &[f64]) -> QuadProblem {
        let n = g.len();
        QuadProblem {
            h,
            g,
            k: 0.0,
            a: Mat::zeros(0, n),
            b: Vector::zeros(0),
            lo: Vector::from_row_slice(lo),
            hi: Vector::from_row_slice(hi),
        }
    }

    fn cfg() -> BnbConfig {
        BnbConfig {
            gap: 1e-7,
            node_cap: 100_000,
            stop_at_positive: false,
            stop_at_negative: false,
        }
    }

    #[test]
    fn convex_maximum_is_at_a_vertex() {
        // x² + y² over [−1, 2] × [−3, 1]: max 4 + 9
        let p = box_problem(Mat::identity(2, 2), Vector::zeros(2), &[-1.0, -3.0], &[2.0, 1.0]);
        let r = maximize(&p, &cfg());
        assert!((r.lower - 13.0).abs() < 1e-9, "{r:?}");
        assert!(r.upper >= r.lower && r.upper - 13.0 < 1e-6);
    }

    #[test]
    fn concave_maximum_is_interior() {
        // −(x − 0.3)² over [−1, 1]
        let p = QuadProblem {
            k: -0.09,
            ..box_problem(Mat::from_element(1, 1, -1.0), Vector::from_element(1, 0.6), &[-1.0], &[1.0])
        };
        let r = maximize(&p, &cfg());
        assert!(r.lower.abs() < 1e-9 && r.upper.abs() < 1e-6);
        assert!((r.argmax.unwrap()[0] - 0.3).abs() < 1e-4);
    }

    #[test]
    fn indefinite_with_cut() {
        // x² − y² subject to x + y ≤ 1 over [−2, 2]²: max at x = −2, y = ... y free → y = 0
        let mut p = box_problem(Mat::from_diagonal(&Vector::from_row_slice(&[1.0, -1.0])), Vector::zeros(2), &[-2.0, -2.0], &[2.0, 2.0]);
        p.a = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b = Vector::from_element(1, 1.0);
        let r = maximize(&p, &cfg());
        assert!((r.lower - 4.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn infeasible_problem_has_no_argmax() {
        let mut p = box_problem(Mat::identity(1, 1), Vector::zeros(1), &[0.0], &[1.0]);
        p.a = Mat::from_row_slice(1, 1, &[1.0]);
        p.b = Vector::from_element(1, -1.0);
        let r = maximize(&p, &cfg());
        assert!(r.argmax.is_none());
        assert_eq!(r.upper, f64::NEG_INFINITY);
    }

    #[test]
    fn relaxation_dominates_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut h = Mat::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            symmetrize(&mut h);
            let g = Vector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let p = box_problem(h, g, &[-1.0, -0.5, 0.0], &[0.5, 1.0, 0.2]);
            let r = relax(&p, &p.lo, &p.hi).unwrap();
            for _ in 0..200 {
                let y = Vector::from_fn(3, |i, _| rng.gen_range(p.lo[i]..=p.hi[i]));
                assert!(p.objective(&y) <= r.upper + 1e-12);
            }
        }
    }
}
