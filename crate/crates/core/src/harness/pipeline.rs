//! Stages shared by the experiments and the pendulum pipeline end to end.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::control::{extract_affine_gains, lqr, ValueMatrix};
use crate::dynamics::PlantKind;
use crate::identify::{AffineDynamics, PiecewiseModel, SampleDb};
use crate::linalg::{Mat, Vector};
use crate::lyapunov::LyapCandidate;
use crate::partition::{stitch_margins_2d, Partition, Polytope};
use crate::uncertainty::{bound_all, stitched_bounds, UncertaintyReport};
use crate::verify::{ceg_loop, quadratic_roa, roa_level, CegConfig, CegResult, CegStep, DiscretePWA, Roa, VerifyConfig, VerifyOutcome};
use crate::{Error, Result};

use super::config::ExperimentConfig;
use super::io::{write_atomic, write_json};
use super::learn::{write_episodes_csv, EpisodeStats, OnlineLearner, StepRecord};
use super::svg;

/// Everything the learning stage produces except the sample database.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnCheckpoint {
    pub config: ExperimentConfig,
    pub model: PiecewiseModel,
    pub values: ValueMatrix,
    pub episodes: Vec<EpisodeStats>,
}

pub struct Learned {
    pub learner: OnlineLearner,
    pub episodes: Vec<EpisodeStats>,
    pub traces: Vec<(usize, Vec<StepRecord>)>,
}

impl Learned {
    pub fn checkpoint(&self, cfg: &ExperimentConfig) -> LearnCheckpoint {
        LearnCheckpoint {
            config: cfg.clone(),
            model: self.learner.model.clone(),
            values: self.learner.values.clone(),
            episodes: self.episodes.clone(),
        }
    }
}

/// Episode start center in state coordinates.
pub fn start_state(cfg: &ExperimentConfig) -> Vector {
    match cfg.plant {
        super::config::PlantName::Pendulum => Vector::zeros(2),
        super::config::PlantName::Vehicle => {
            let v = &cfg.vehicle;
            let (s, c) = v.start[2].sin_cos();
            let (dx, dy) = (v.start[0] - v.goal[0], v.start[1] - v.goal[1]);
            Vector::from_vec(vec![0.0, 0.0, c * dx + s * dy, -s * dx + c * dy, v.start[2]])
        }
    }
}

pub fn learn<T: Fn(usize) -> bool>(cfg: &ExperimentConfig, trace: T) -> Result<Learned> {
    let mut learner = OnlineLearner::new(cfg)?;
    let (episodes, traces) = learner.run_schedule(cfg, &start_state(cfg), trace)?;
    Ok(Learned { learner, episodes, traces })
}

/// Rebuild a learner from a checkpoint and its `samples.csv`.
pub fn restore_learner(cfg: &ExperimentConfig, ck: &LearnCheckpoint, samples: &Path) -> Result<OnlineLearner> {
    let mut l = OnlineLearner::new(cfg)?;
    if ck.model.pieces.len() != l.partition.len() || ck.values.p.len() != l.partition.len() {
        return Err(Error::Validation(format!(
            "checkpoint has {} pieces but the partition has {}",
            ck.model.pieces.len(),
            l.partition.len()
        )));
    }
    l.db = read_samples_csv(samples, &ck.model, l.partition.len(), cfg.db.capacity, cfg.db.eta)?;
    l.model = ck.model.clone();
    l.values = ck.values.clone();
    Ok(l)
}

/// Piece models, bounds and gains over the partition that is certified
/// (the learning grid, or its stitched refinement).
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub partition: Partition,
    pub models: Vec<AffineDynamics>,
    pub report: UncertaintyReport,
    pub gains: Vec<(Mat, Vector)>,
}

pub fn closed_loop(cfg: &ExperimentConfig, learner: &OnlineLearner) -> Result<ClosedLoop> {
    let basis = learner.basis();
    let report = bound_all(&learner.plant, &learner.partition, &learner.model.pieces, &basis, &learner.db, cfg.exec)?;
    if report.any_unbounded() {
        let empty: Vec<usize> = (0..report.pieces.len()).filter(|&s| report.pieces[s].unbounded).collect();
        return Err(Error::Validation(format!("pieces without samples: {empty:?}")));
    }
    let models = learner.model.affine()?;
    let gain_of = |sigma: usize, model: &AffineDynamics| {
        extract_affine_gains(&learner.values.p[sigma], model, &basis, &learner.cost, cfg.verify.linear_only)
    };
    if cfg.partition.stitch_width > 0.0 {
        let st = stitch_margins_2d(&learner.partition, &models, cfg.partition.stitch_width)?;
        let report = stitched_bounds(&st, &models, &report)?;
        let gains = st
            .models
            .iter()
            .enumerate()
            .map(|(s, m)| gain_of(st.partition.parent[s], m))
            .collect::<Result<Vec<_>>>()?;
        return Ok(ClosedLoop { partition: st.partition, models: st.models, report, gains });
    }
    let gains = models.iter().enumerate().map(|(s, m)| gain_of(s, m)).collect::<Result<Vec<_>>>()?;
    Ok(ClosedLoop { partition: learner.partition.clone(), models, report, gains })
}

pub fn discretize_loop(cfg: &ExperimentConfig, cl: &ClosedLoop) -> Result<DiscretePWA> {
    let roi = Polytope::from_box(&cl.partition.lo, &cl.partition.hi, 0);
    crate::verify::discretize(&cl.partition, &cl.models, &cl.gains, &cl.report.bounds(), cfg.h, roi, cfg.verify.epsilon)
}

pub fn ceg_config(cfg: &ExperimentConfig) -> CegConfig {
    CegConfig {
        accpm: cfg.verify.accpm.clone(),
        verify: VerifyConfig {
            gap: cfg.verify.gap,
            node_cap: cfg.verify.node_cap,
            exec: cfg.exec,
            ..VerifyConfig::default()
        },
        max_iterations: cfg.verify.max_iterations,
        warm_start: cfg.verify.warm_start,
    }
}

/// LQR on the true linearization at the origin and the largest quadratic
/// sublevel set inside the ROI on which the saturated nonlinear closed loop
/// decreases `xᵀPx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    #[serde(with = "crate::linalg::mat_rows")]
    pub k: Mat,
    #[serde(with = "crate::linalg::mat_rows")]
    pub p: Mat,
    pub level: f64,
    pub area: f64,
}

pub fn lqr_baseline(cfg: &ExperimentConfig, grid: usize) -> Result<Baseline> {
    let plant = cfg.plant_spec()?;
    if plant.n != 2 {
        return Err(Error::Unsupported("quadratic baseline is two-dimensional".into()));
    }
    let (a, b) = match &plant.kind {
        PlantKind::Pendulum(p) => {
            let ml2 = p.inertia();
            (
                Mat::from_row_slice(2, 2, &[0.0, 1.0, p.gravity / p.length, -p.friction / ml2]),
                Mat::from_column_slice(2, 1, &[0.0, 1.0 / ml2]),
            )
        }
        PlantKind::Affine { a, b, .. } => (a.clone(), b.clone()),
        PlantKind::Vehicle(_) => return Err(Error::Unsupported("no baseline for the vehicle".into())),
    };
    let cost = cfg.cost_spec()?;
    let l = lqr(&a, &b, &cost.q, &cost.r)?;
    let field = |x: &Vector| {
        let u = plant.saturate(&-(&l.k * x));
        plant.drift(x) + plant.input_map(x) * u
    };
    let (level, area) = quadratic_roa(&l.p, &plant.roi_lo, &plant.roi_hi, field, grid)?;
    Ok(Baseline { k: l.k, p: l.p, level, area })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    Certified,
    NoCertificate,
    GapLimit,
    IterationCap,
}

impl PipelineStatus {
    pub fn of(res: &CegResult) -> Self {
        match res {
            CegResult::Certified { .. } => PipelineStatus::Certified,
            CegResult::NoCertificate { .. } => PipelineStatus::NoCertificate,
            CegResult::GapLimit { .. } => PipelineStatus::GapLimit,
            CegResult::IterationCap { .. } => PipelineStatus::IterationCap,
        }
    }

    /// Process exit code of the command line tool.
    pub fn exit_code(self) -> i32 {
        match self {
            PipelineStatus::Certified => 0,
            PipelineStatus::NoCertificate | PipelineStatus::IterationCap => 2,
            PipelineStatus::GapLimit => 3,
        }
    }
}

/// Machine-readable record of the certification stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyRecord {
    pub status: PipelineStatus,
    pub candidate: Option<LyapCandidate>,
    pub outcome: Option<VerifyOutcome>,
    /// Learner bound when the candidate set became empty.
    pub infeasible_bound: Option<f64>,
    pub iterations: usize,
    pub wall_time: f64,
}

impl CertifyRecord {
    pub fn new(res: &CegResult, wall_time: f64) -> Self {
        let (candidate, outcome, bound) = match res {
            CegResult::Certified { candidate, outcome, .. } | CegResult::GapLimit { candidate, outcome, .. } => {
                (Some(candidate.clone()), Some(outcome.clone()), None)
            }
            CegResult::NoCertificate { bound, .. } => (None, None, Some(*bound)),
            CegResult::IterationCap { candidate, .. } => (Some(candidate.clone()), None, None),
        };
        Self {
            status: PipelineStatus::of(res),
            candidate,
            outcome,
            infeasible_bound: bound,
            iterations: res.trace().len() + 1,
            wall_time,
        }
    }
}

pub fn write_trace_csv<W: std::io::Write>(trace: &[CegStep], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in trace {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub stage: String,
    pub error: String,
}

/// Run `f` as a named stage; on error, write `failure.json` next to the
/// artifacts already produced and pass the error on.
pub fn stage<T>(out: &Path, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let res = f();
    match &res {
        Ok(_) => log::info!("stage {name} finished in {:.2} s", start.elapsed().as_secs_f64()),
        Err(e) => {
            log::error!("stage {name} failed: {e}");
            let report = FailureReport { stage: name.into(), error: e.to_string() };
            if let Err(w) = write_json(&out.join("failure.json"), &report) {
                log::error!("could not write failure report: {w}");
            }
        }
    }
    res
}

pub fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = vec![];
    f(&mut buf)?;
    Ok(buf)
}

/// Artifacts of a pendulum run kept in memory for the caller.
pub struct PendulumRun {
    pub learned: Learned,
    pub closed_loop: ClosedLoop,
    pub system: DiscretePWA,
    pub ceg: CegResult,
    pub record: CertifyRecord,
    pub roa: Option<Roa>,
    pub baseline: Baseline,
}

/// Sample, identify, bound, control, certify and extract the region of
/// attraction, writing every artifact under `cfg.out_dir`.
pub fn run_pendulum_pipeline(cfg: &ExperimentConfig) -> Result<PendulumRun> {
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out)?;
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let _ = std::fs::remove_file(out.join("failure.json"));

    let trace_last = cfg.episodes.count.saturating_sub(1);
    let learned = stage(&out, "identify", || {
        let l = learn(cfg, |e| e == trace_last)?;
        write_json(&out.join("learn.json"), &l.checkpoint(cfg))?;
        write_atomic(&out.join("episodes.csv"), &csv_bytes(|b| write_episodes_csv(&l.episodes, b))?)?;
        write_atomic(&out.join("samples.csv"), &csv_bytes(|b| l.learner.db.write_csv(b))?)?;
        Ok(l)
    })?;
    let cl = stage(&out, "bound", || {
        let cl = closed_loop(cfg, &learned.learner)?;
        write_json(&out.join("uncertainty.json"), &cl.report)?;
        write_atomic(&out.join("uncertainty.csv"), &csv_bytes(|b| cl.report.write_heatmap_csv(&cl.partition, b))?)?;
        svg::write(&out.join("uncertainty.svg"), &svg::uncertainty_heatmaps(&cl.partition, &cl.report)?)?;
        svg::write(&out.join("sample_gaps.svg"), &svg::sample_gaps(&learned.learner, &cl.report)?)?;
        Ok(cl)
    })?;
    let system = stage(&out, "control", || {
        let sys = discretize_loop(cfg, &cl)?;
        write_json(&out.join("system.json"), &sys)?;
        Ok(sys)
    })?;
    let (ceg, record) = stage(&out, "certify", || {
        let start = Instant::now();
        let res = ceg_loop(&system, &ceg_config(cfg))?;
        let record = CertifyRecord::new(&res, start.elapsed().as_secs_f64());
        write_json(&out.join("certify.json"), &record)?;
        write_atomic(&out.join("ceg_trace.csv"), &csv_bytes(|b| write_trace_csv(res.trace(), b))?)?;
        write_atomic(&out.join("counterexamples.csv"), &csv_bytes(|b| res.learner().write_csv(b))?)?;
        Ok((res, record))
    })?;
    let baseline = stage(&out, "baseline", || {
        let b = lqr_baseline(cfg, cfg.verify.roa_grid)?;
        write_json(&out.join("lqr_baseline.json"), &b)?;
        Ok(b)
    })?;
    let roa = stage(&out, "roa", || {
        let CegResult::Certified { candidate, outcome, .. } = &ceg else {
            return Ok(None);
        };
        let roa = roa_level(&candidate.p, &system, outcome, cfg.verify.roa_grid)?;
        write_json(&out.join("roa.json"), &roa)?;
        write_atomic(&out.join("roa.csv"), &csv_bytes(|b| roa.write_csv(b))?)?;
        Ok(Some(roa))
    })?;
    stage(&out, "figures", || {
        let traj = svg::pendulum_trajectories(&system, &learned.learner, 8, 3.0)?;
        let fig = svg::phase_portrait(&system, roa.as_ref(), Some(&baseline), &traj)?;
        svg::write(&out.join("roa.svg"), &fig)
    })?;
    Ok(PendulumRun { learned, closed_loop: cl, system, ceg, record, roa, baseline })
}

/// Rebuild the sample database from `samples.csv`.
pub fn read_samples_csv(path: &Path, model: &PiecewiseModel, pieces: usize, cap: usize, eta: f64) -> Result<SampleDb> {
    let mut db = SampleDb::new(pieces, cap, eta)?;
    let mut r = csv::Reader::from_path(path)?;
    let n = model.basis.n();
    let m = model.m;
    for row in r.records() {
        let row = row?;
        let vals: Vec<f64> = row
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Validation(format!("bad sample value `{s}`: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 2 + 2 * n + m {
            return Err(Error::dim("sample row length"));
        }
        let sigma = vals[0] as usize;
        if sigma >= pieces {
            return Err(Error::Validation(format!("sample piece {sigma} out of range")));
        }
        let x = Vector::from_row_slice(&vals[1..1 + n]);
        let u = Vector::from_row_slice(&vals[1 + n..1 + n + m]);
        let f = Vector::from_row_slice(&vals[1 + n + m..1 + 2 * n + m]);
        let theta = model.basis.masked_regressor(&x, &u);
        let rec = crate::identify::SampleRecord { x, u, theta, f, err: vals[1 + 2 * n + m] };
        let ring = &mut db.pieces[sigma];
        if ring.len() >= cap {
            ring.pop_front();
        }
        ring.push_back(rec);
    }
    Ok(db)
}
