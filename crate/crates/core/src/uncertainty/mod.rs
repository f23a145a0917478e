//! Per-piece disturbance bounds from sample residuals and sample gaps.

pub mod empty_ball;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::PlantSpec;
use crate::identify::{AffineDynamics, Basis, PieceModel, SampleDb, SampleRecord};
use crate::linalg::Vector;
use crate::partition::{Partition, Stitched};
use crate::{Error, Exec, Result};

pub use empty_ball::Ball;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceBound {
    pub samples: usize,
    /// Sample-residual term.
    pub d_e: Vec<f64>,
    pub state_gap: Ball,
    pub control_gap: Ball,
    pub model_lip_x: Vec<f64>,
    pub model_lip_u: Vec<f64>,
    /// Total bound `d̄`.
    pub d_bar: Vec<f64>,
    /// No samples: the bound is meaningless and the piece cannot be certified.
    pub unbounded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub pieces: Vec<PieceBound>,
}

impl UncertaintyReport {
    pub fn bounds(&self) -> Vec<Vector> {
        self.pieces.iter().map(|p| Vector::from_vec(p.d_bar.clone())).collect()
    }

    pub fn any_unbounded(&self) -> bool {
        self.pieces.iter().any(|p| p.unbounded)
    }

    /// One row per piece with its centre and the bound magnitude, for heatmaps.
    pub fn write_heatmap_csv<W: Write>(&self, partition: &Partition, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = partition.dim();
        let mut header = vec!["sigma".to_string()];
        header.extend((1..=n).map(|i| format!("c{i}")));
        header.extend((1..=n).map(|i| format!("dbar{i}")));
        header.extend(["dbar_norm", "r_x", "r_u", "samples"].map(String::from));
        w.write_record(&header)?;
        for (s, p) in self.pieces.iter().enumerate() {
            let (lo, hi) = partition.cells[s].bounding_box();
            let mut row = vec![s.to_string()];
            row.extend(lo.iter().zip(&hi).map(|(l, h)| (0.5 * (l + h)).to_string()));
            row.extend(p.d_bar.iter().map(|v| v.to_string()));
            let norm = p.d_bar.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.push(norm.to_string());
            row.push(p.state_gap.radius.to_string());
            row.push(p.control_gap.radius.to_string());
            row.push(p.samples.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `max_s |F̂_i − F̃_i| + ϱ_e |F̃_i|` over the records; `None` when empty.
pub fn sample_error_bound<'a, I, F>(records: I, predict: F, meas_tol: f64) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = &'a SampleRecord>,
    F: Fn(&SampleRecord) -> Vector,
{
    let mut out: Option<Vec<f64>> = None;
    for r in records {
        let pred = predict(r);
        let acc = out.get_or_insert_with(|| vec![0.0; r.f.len()]);
        for i in 0..r.f.len() {
            acc[i] = acc[i].max((pred[i] - r.f[i]).abs() + meas_tol * r.f[i].abs());
        }
    }
    out
}

/// Lipschitz constants of the identified piece.
///
/// Exact row norms for the affine basis. For other bases the gradient norm is
/// maximized over a grid of the cell box and inflated by 10%, which is a
/// heuristic rather than a bound.
pub fn model_lipschitz(piece: &PieceModel, basis: &Basis, m: usize, cell_lo: &[f64], cell_hi: &[f64], u_bar: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = basis.n();
    if let Ok(AffineDynamics { a, b, .. }) = piece.affine_parts(basis) {
        let lx = (0..n).map(|i| a.row(i).norm()).collect();
        let lu = (0..n).map(|i| b.row(i).norm()).collect();
        return (lx, lu);
    }
    let p = basis.p();
    let per_axis = 5usize;
    let mut lx = vec![0.0f64; n];
    let mut lu = vec![0.0f64; n];
    let total = per_axis.pow(n as u32);
    let u_corners = 1usize << m;
    for flat in 0..total {
        let mut rem = flat;
        let x = Vector::from_iterator(
            n,
            (0..n).map(|a| {
                let k = rem % per_axis;
                rem /= per_axis;
                cell_lo[a] + (cell_hi[a] - cell_lo[a]) * k as f64 / (per_axis - 1) as f64
            }),
        );
        let phi = basis.eval(&x);
        let jac = basis.jacobian(&x);
        for corner in 0..u_corners {
            let u: Vec<f64> = (0..m).map(|j| if corner >> j & 1 == 1 { u_bar[j] } else { -u_bar[j] }).collect();
            let mut grad = piece.w.columns(0, p) * &jac;
            for (j, uj) in u.iter().enumerate() {
                grad += piece.w.columns(p * (j + 1), p) * &jac * *uj;
            }
            for i in 0..n {
                lx[i] = lx[i].max(grad.row(i).norm());
                let gu: f64 = (0..m)
                    .map(|j| (piece.w.columns(p * (j + 1), p) * &phi)[i].powi(2))
                    .sum::<f64>()
                    .sqrt();
                lu[i] = lu[i].max(gu);
            }
        }
    }
    (lx.iter().map(|v| v * 1.1).collect(), lu.iter().map(|v| v * 1.1).collect())
}

/// `d̄_i = ϱ_ui r_u + ϱ_xi r_x + d̄_ei + ϱ̂_ui r_u + ϱ̂_xi r_x`.
pub fn total_bound(d_e: &[f64], lip_x: &[f64], lip_u: &[f64], model_lip_x: &[f64], model_lip_u: &[f64], r_x: f64, r_u: f64) -> Vec<f64> {
    (0..d_e.len())
        .map(|i| lip_u[i] * r_u + lip_x[i] * r_x + d_e[i] + model_lip_u[i] * r_u + model_lip_x[i] * r_x)
        .collect()
}

/// Bound one piece from its curated samples.
pub fn piece_bound(plant: &PlantSpec, partition: &Partition, sigma: usize, piece: &PieceModel, basis: &Basis, db: &SampleDb) -> Result<PieceBound> {
    let cell = &partition.cells[sigma];
    let records: Vec<&SampleRecord> = db.pieces[sigma].iter().collect();
    let d_e = sample_error_bound(records.iter().copied(), |r| piece.predict_theta(&r.theta), plant.meas_tol);
    let xs: Vec<Vec<f64>> = records.iter().map(|r| r.x.as_slice().to_vec()).collect();
    let us: Vec<Vec<f64>> = records.iter().map(|r| r.u.as_slice().to_vec()).collect();
    let state_gap = empty_ball::largest_empty_ball_state(&xs, cell)?;
    let control_gap = empty_ball::largest_empty_ball_control(&us, &plant.u_bounds)?;
    let (lo, hi) = cell.bounding_box();
    let (model_lip_x, model_lip_u) = model_lipschitz(piece, basis, plant.m, &lo, &hi, &plant.u_bounds);
    let unbounded = d_e.is_none();
    let d_e = d_e.unwrap_or_else(|| vec![f64::INFINITY; plant.n]);
    let d_bar = total_bound(
        &d_e,
        &plant.lipschitz_x,
        &plant.lipschitz_u,
        &model_lip_x,
        &model_lip_u,
        state_gap.radius,
        control_gap.radius,
    );
    Ok(PieceBound {
        samples: records.len(),
        d_e,
        state_gap,
        control_gap,
        model_lip_x,
        model_lip_u,
        d_bar,
        unbounded,
    })
}

/// Bounds for every piece, computed independently.
pub fn bound_all(plant: &PlantSpec, partition: &Partition, pieces: &[PieceModel], basis: &Basis, db: &SampleDb, exec: Exec) -> Result<UncertaintyReport> {
    if pieces.len() != partition.len() || db.pieces.len() != partition.len() {
        return Err(Error::dim("one model and one sample ring per cell"));
    }
    let pieces = exec
        .map_range(partition.len(), |s| piece_bound(plant, partition, s, &pieces[s], basis, db))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let bad: usize = db.pieces.iter().map(|ring| lipschitz_violations(plant, ring.iter())).sum();
    if bad > 0 {
        log::warn!("{bad} sample pairs exceed the assumed Lipschitz constants; the configured constants may be too small");
    }
    Ok(UncertaintyReport { pieces })
}

/// Consecutive sample pairs whose measured derivatives differ by more than
/// the assumed Lipschitz constants and measurement tolerance allow.
pub fn lipschitz_violations<'a, I>(plant: &PlantSpec, records: I) -> usize
where
    I: IntoIterator<Item = &'a SampleRecord>,
{
    let mut prev: Option<&SampleRecord> = None;
    let mut count = 0;
    for r in records {
        if let Some(p) = prev {
            let dx = (&r.x - &p.x).norm();
            let du = (&r.u - &p.u).norm();
            let bad = (0..r.f.len()).any(|i| {
                let allowed = plant.lipschitz_x[i] * dx + plant.lipschitz_u[i] * du + plant.meas_tol * (r.f[i].abs() + p.f[i].abs());
                (r.f[i] - p.f[i]).abs() > allowed * (1.0 + 1e-9) + 1e-12
            });
            count += bad as usize;
        }
        prev = Some(r);
    }
    count
}

/// Bounds for the pieces of a stitched model: the parent cell's bound plus the
/// largest drift between the parent model and the piece model over the piece.
pub fn stitched_bounds(stitched: &Stitched, parent_models: &[AffineDynamics], parent: &UncertaintyReport) -> Result<UncertaintyReport> {
    let mut out = Vec::with_capacity(stitched.partition.len());
    for (s, cell) in stitched.partition.cells.iter().enumerate() {
        let owner = stitched.partition.parent[s];
        let base = parent
            .pieces
            .get(owner)
            .ok_or_else(|| Error::dim("parent report shorter than the grid"))?;
        let pm = &parent_models[owner];
        let sm = &stitched.models[s];
        let n = pm.c.len();
        let mut extra = vec![0.0f64; n];
        // the input matrices agree by construction, so only the drift differs
        for v in cell.vertices_2d() {
            let x = Vector::from_vec(v.to_vec());
            let diff = (&pm.a * &x + &pm.c) - (&sm.a * &x + &sm.c);
            for i in 0..n {
                extra[i] = extra[i].max(diff[i].abs());
            }
        }
        let mut piece = base.clone();
        for i in 0..n {
            piece.d_bar[i] += extra[i];
        }
        out.push(piece);
    }
    Ok(UncertaintyReport { pieces: out })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub state_points: usize,
    pub input_points: usize,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self {
            state_points: 101,
            input_points: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `|F_i − F̂_i| / d̄_i` seen.
    pub worst_ratio: f64,
    pub worst_point: Vec<f64>,
}

/// Count probe points where the true derivative leaves the certified band.
pub fn validate_bound<P>(plant: &PlantSpec, partition: &Partition, predict: P, bounds: &[Vector], grid: &ProbeGrid, exec: Exec) -> Result<ViolationReport>
where
    P: Fn(usize, &Vector, &Vector) -> Vector + Sync,
{
    let n = plant.n;
    let m = plant.m;
    let ns = grid.state_points.max(2);
    let nu = grid.input_points.max(1);
    let state_total = ns.pow(n as u32);
    let input_total = nu.pow(m as u32);
    let lin = |lo: f64, hi: f64, k: usize, count: usize| {
        if count == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * k as f64 / (count - 1) as f64
        }
    };
    let inputs: Vec<Vector> = (0..input_total)
        .map(|flat| {
            let mut rem = flat;
            Vector::from_iterator(
                m,
                (0..m).map(|j| {
                    let k = rem % nu;
                    rem /= nu;
                    lin(-plant.u_bounds[j], plant.u_bounds[j], k, nu)
                }),
            )
        })
        .collect();
    let partial = exec.map_range(state_total, |flat| -> Result<(usize, f64, Vec<f64>)> {
        let mut rem = flat;
        let x = Vector::from_iterator(
            n,
            (0..n).map(|a| {
                let k = rem % ns;
                rem /= ns;
                lin(plant.roi_lo[a], plant.roi_hi[a], k, ns)
            }),
        );
        let sigma = partition.sigma(x.as_slice())?;
        let bound = &bounds[sigma];
        let mut violations = 0;
        let mut worst = 0.0f64;
        let mut worst_point = vec![];
        for u in &inputs {
            let truth = plant.eval_dynamics(&x, u)?;
            let pred = predict(sigma, &x, u);
            let mut bad = false;
            for i in 0..n {
                let err = (truth[i] - pred[i]).abs();
                if err > bound[i] {
                    bad = true;
                }
                let ratio = if bound[i] > 0.0 { err / bound[i] } else if err > 0.0 { f64::INFINITY } else { 0.0 };
                if ratio > worst {
                    worst = ratio;
                    worst_point = x.iter().chain(u.iter()).copied().collect();
                }
            }
            violations += bad as usize;
        }
        Ok((violations, worst, worst_point))
    });
    let mut report = ViolationReport {
        checked: state_total * input_total,
        violations: 0,
        worst_ratio: 0.0,
        worst_point: vec![],
    };
    for item in partial {
        let (v, w, p) = item?;
        report.violations += v;
        if w > report.worst_ratio {
            report.worst_ratio = w;
            report.worst_point = p;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    fn rec(x: f64, f: f64, pred_offset: f64) -> (SampleRecord, f64) {
        (
            SampleRecord {
                x: Vector::from_vec(vec![x]),
                u: Vector::from_vec(vec![0.0]),
                theta: Vector::from_vec(vec![1.0]),
                f: Vector::from_vec(vec![f]),
                err: 0.0,
            },
            pred_offset,
        )
    }

    #[test]
    fn residual_bound_cases() {
        let none: Vec<SampleRecord> = vec![];
        assert!(sample_error_bound(none.iter(), |r| r.f.clone(), 0.0).is_none());
        let (r, _) = rec(0.0, 2.0, 0.0);
        let perfect = sample_error_bound([&r], |r| r.f.clone(), 0.0).unwrap();
        assert_eq!(perfect, vec![0.0]);
        let single = sample_error_bound([&r], |r| r.f.add_scalar(-0.3), 0.0).unwrap();
        assert!((single[0] - 0.3).abs() < 1e-12);
        let noisy = sample_error_bound([&r], |r| r.f.clone(), 0.1).unwrap();
        assert!((noisy[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn flags_jumps_beyond_assumed_constants() {
        let plant = PlantSpec::pendulum(Default::default(), 8.0, 0.0).unwrap();
        let r = |x: f64, f: f64| SampleRecord {
            x: Vector::from_vec(vec![x, 0.0]),
            u: Vector::zeros(1),
            theta: Vector::zeros(1),
            f: Vector::from_vec(vec![0.0, f]),
            err: 0.0,
        };
        let smooth = [r(0.0, 0.0), r(0.1, 0.1 * plant.lipschitz_x[1]), r(0.2, 0.2 * plant.lipschitz_x[1])];
        assert_eq!(lipschitz_violations(&plant, smooth.iter()), 0);
        let jump = [r(0.0, 0.0), r(1e-3, 1e3), r(2e-3, 1e3)];
        assert_eq!(lipschitz_violations(&plant, jump.iter()), 1);
    }

    #[test]
    fn lipschitz_of_affine_pieces() {
        let basis = Basis::Affine { n: 2 };
        let mut piece = PieceModel::new(2, basis.q(1), 1.0);
        piece.set_affine(&AffineDynamics {
            a: Mat::identity(2, 2),
            b: Mat::zeros(2, 1),
            c: Vector::zeros(2),
        });
        let (lx, lu) = model_lipschitz(&piece, &basis, 1, &[0.0, 0.0], &[1.0, 1.0], &[1.0]);
        assert_eq!(lx, vec![1.0, 1.0]);
        assert_eq!(lu, vec![0.0, 0.0]);
        piece.set_affine(&AffineDynamics {
            a: Mat::from_row_slice(2, 2, &[0.0, 1.0, 3.0, 4.0]),
            b: Mat::zeros(2, 1),
            c: Vector::zeros(2),
        });
        let (lx, _) = model_lipschitz(&piece, &basis, 1, &[0.0, 0.0], &[1.0, 1.0], &[1.0]);
        assert_eq!(lx, vec![1.0, 5.0]);
    }

    #[test]
    fn total_bound_reduces_to_residual_term() {
        let d = total_bound(&[0.1, 0.2], &[1.0, 19.8], &[0.0, 26.7], &[1.0, 19.0], &[0.0, 26.0], 0.0, 0.0);
        assert_eq!(d, vec![0.1, 0.2]);
        let d = total_bound(&[0.0], &[2.0], &[3.0], &[4.0], &[5.0], 0.5, 0.25);
        assert!((d[0] - (0.75 + 1.0 + 1.25 + 2.0)).abs() < 1e-12);
    }
}
