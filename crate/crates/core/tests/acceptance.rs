//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (outside the test harness capture) before asserting.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;

use pwcert::harness::bench::time_steps;
use pwcert::harness::config::ExperimentConfig;
use pwcert::harness::pipeline::{run_pendulum_pipeline, PendulumRun, PipelineStatus};
use pwcert::harness::rollout::{euler_rollouts, sample_sublevel, truth_rollouts};
use pwcert::harness::vehicle::run_vehicle_pipeline;
use pwcert::identify::{batch_ls, AffineDynamics, Basis, PieceModel, PiecewiseModel, RlsConfig, SampleDb};
use pwcert::linalg::{symmetrize, Mat, Vector};
use pwcert::partition::{Partition, Polytope};
use pwcert::uncertainty::empty_ball::largest_empty_circle;
use pwcert::uncertainty::{validate_bound, ProbeGrid};
use pwcert::verify::{brute_force_max_dv, ceg_loop, discretize, miqp_verify, CegConfig, CegResult, DiscretePWA, VerifyConfig};
use pwcert::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {criterion} {verdict}: {detail}");
}

fn out_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn pendulum() -> &'static PendulumRun {
    static RUN: OnceLock<PendulumRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut cfg = ExperimentConfig::pendulum();
        cfg.out_dir = out_dir("pendulum");
        run_pendulum_pipeline(&cfg).expect("pendulum pipeline")
    })
}

#[test]
fn c1_identification_matches_batch_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let rls = RlsConfig { kappa: 1e8, lambda: 1.0 };
    let mut worst_rel: f64 = 0.0;
    for _ in 0..20 {
        let (n, q) = (3, 6);
        let truth = Mat::from_fn(n, q, |_, _| rng.gen_range(-2.0..2.0));
        let mut piece = PieceModel::new(n, q, rls.kappa);
        let mut thetas = vec![];
        let mut targets = vec![];
        for _ in 0..200 {
            let theta = Vector::from_fn(q, |_, _| rng.gen_range(-1.0..1.0));
            let f = &truth * &theta + Vector::from_fn(n, |_, _| rng.gen_range(-0.1..0.1));
            piece.rls_update(&theta, &f, &rls).unwrap();
            thetas.push(theta);
            targets.push(f);
        }
        let ls = batch_ls(&thetas, &targets).unwrap();
        worst_rel = worst_rel.max((&piece.w - &ls).norm() / ls.norm());
    }

    // noiseless piecewise-affine plant on a 2 × 2 grid
    let part = Partition::grid(&[-1.0, -1.0], &[1.0, 1.0], &[2, 2]).unwrap();
    let pieces: Vec<AffineDynamics> = (0..4)
        .map(|_| AffineDynamics {
            a: Mat::from_fn(2, 2, |_, _| rng.gen_range(-2.0..2.0)),
            b: Mat::from_fn(2, 1, |_, _| rng.gen_range(-2.0..2.0)),
            c: Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
        })
        .collect();
    let mut model = PiecewiseModel::new(Basis::Affine { n: 2 }, 1, 4, rls);
    let mut db = SampleDb::new(4, 100, 1e-6).unwrap();
    for _ in 0..8000 {
        let x = Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let u = Vector::from_fn(1, |_, _| rng.gen_range(-1.0..1.0));
        let s = part.sigma(x.as_slice()).unwrap();
        let d = &pieces[s];
        let f = &d.a * &x + &d.b * &u + &d.c;
        model.observe(&mut db, s, &x, &u, &f).unwrap();
    }
    let learned = model.affine().unwrap();
    let recovery = learned
        .iter()
        .zip(&pieces)
        .map(|(l, t)| (&l.a - &t.a).amax().max((&l.b - &t.b).amax()).max((&l.c - &t.c).amax()))
        .fold(0.0, f64::max);

    let pass = worst_rel <= 1e-6 && recovery <= 1e-8;
    report(1, pass, &format!("RLS vs batch LS worst relative difference {worst_rel:.2e} (tol 1e-6); PWA recovery error {recovery:.2e} (tol 1e-8)"));
    assert!(pass);
}

#[test]
fn c2_uncertainty_bound_is_sound() {
    let run = pendulum();
    let cl = &run.closed_loop;
    let plant = &run.learned.learner.plant;
    let predict = |s: usize, x: &Vector, u: &Vector| {
        let m = &cl.models[s];
        &m.a * x + &m.b * u + &m.c
    };
    let bounds = cl.report.bounds();
    let grid = ProbeGrid { state_points: 101, input_points: 11 };
    let full = validate_bound(plant, &cl.partition, predict, &bounds, &grid, Exec::Parallel).unwrap();
    let halved: Vec<Vector> = bounds.iter().map(|d| d * 0.5).collect();
    let half = validate_bound(plant, &cl.partition, predict, &halved, &grid, Exec::Parallel).unwrap();

    let pass = full.violations == 0 && half.violations > 0;
    report(
        2,
        pass,
        &format!(
            "{} probes: {} violations of d̄ (worst ratio {:.3}); {} violations of d̄/2",
            full.checked, full.violations, full.worst_ratio, half.violations
        ),
    );
    assert!(pass);
}

fn random_polygon(rng: &mut ChaCha8Rng) -> Polytope {
    let k = rng.gen_range(3..=8);
    let (rx, ry) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
    let (cx, cy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let mut angles: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 0.2);
    if angles.len() < 3 {
        angles = vec![0.0, 2.1, 4.2];
    }
    let pts: Vec<[f64; 2]> = angles.iter().map(|t| [cx + rx * t.cos(), cy + ry * t.sin()]).collect();
    Polytope::from_ccw_polygon(&pts, 0)
}

fn nearest(sites: &[[f64; 2]], p: [f64; 2]) -> f64 {
    sites.iter().map(|s| (s[0] - p[0]).hypot(s[1] - p[1])).fold(f64::INFINITY, f64::min)
}

#[test]
fn c3_empty_ball_matches_brute_force_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let per_axis = 400;
    let mut worst_gap: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..50 {
        let poly = random_polygon(&mut rng);
        let (lo, hi) = poly.bounding_box();
        let count = rng.gen_range(1..=30);
        let mut sites = vec![];
        while sites.len() < count {
            let p = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
            if poly.contains(&p, 0.0) {
                sites.push(p);
            }
        }
        let exact = largest_empty_circle(&sites, &poly).unwrap();
        let c = [exact.center[0], exact.center[1]];

        let step = [(hi[0] - lo[0]) / (per_axis - 1) as f64, (hi[1] - lo[1]) / (per_axis - 1) as f64];
        let vertices = poly.vertices_2d();
        let mut corner_reach = vec![f64::INFINITY; vertices.len()];
        let mut grid_max: f64 = 0.0;
        for i in 0..per_axis {
            for j in 0..per_axis {
                let p = [lo[0] + i as f64 * step[0], lo[1] + j as f64 * step[1]];
                if poly.contains(&p, 0.0) {
                    grid_max = grid_max.max(nearest(&sites, p));
                    for (r, v) in corner_reach.iter_mut().zip(&vertices) {
                        *r = r.min((p[0] - v[0]).hypot(p[1] - v[1]));
                    }
                }
            }
        }
        // Interior grid points cover the polygon to within a cell diagonal,
        // except in narrow corners where the nearest interior point can be
        // further away.
        let tol = step[0].hypot(step[1]).max(corner_reach.iter().copied().fold(0.0, f64::max));
        let ok = poly.violation(&c) <= 1e-9
            && (nearest(&sites, c) - exact.radius).abs() <= 1e-9
            && exact.radius >= grid_max - 1e-9
            && exact.radius <= grid_max + tol;
        if !ok {
            failures += 1;
        }
        worst_gap = worst_gap.max((exact.radius - grid_max) / tol);
    }

    let pass = failures == 0;
    report(3, pass, &format!("50 instances, {failures} disagreements; worst (exact − grid) / tolerance {worst_gap:.3}"));
    assert!(pass);
}

fn toy_system(rng: &mut ChaCha8Rng, n: usize, d: f64) -> DiscretePWA {
    let part = Partition::grid(&vec![-1.0; n], &vec![1.0; n], &vec![2; n]).unwrap();
    let models: Vec<AffineDynamics> = (0..part.len())
        .map(|_| AffineDynamics {
            a: Mat::from_fn(n, n, |i, j| if i == j { -0.6 } else { 0.0 } + rng.gen_range(-0.3..0.3)),
            b: Mat::zeros(n, 1),
            c: Vector::from_fn(n, |_, _| rng.gen_range(-0.05..0.05)),
        })
        .collect();
    let gains = vec![(Mat::zeros(1, n), Vector::zeros(1)); part.len()];
    let bounds: Vec<Vector> = (0..part.len()).map(|_| Vector::from_fn(n, |_, _| rng.gen_range(0.0..d))).collect();
    discretize(&part, &models, &gains, &bounds, 1.0, part.domain(), 0.1).unwrap()
}

fn toy_candidate(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let g = Mat::from_fn(2 * n, 2 * n, |_, _| rng.gen_range(-1.0..1.0));
    let mut p = &g * g.transpose();
    p /= p.clone().symmetric_eigen().eigenvalues.max() * 1.1;
    symmetrize(&mut p);
    p
}

/// Crude Lipschitz bound of ΔV over the ROI and disturbance box.
fn dv_lipschitz(p: &Mat, sys: &DiscretePWA) -> f64 {
    let n = sys.n() as f64;
    let mut worst: f64 = 0.0;
    for s0 in 0..sys.modes() {
        for s1 in 0..sys.modes() {
            let (m0, c0) = sys.closed_loop(s0);
            let (m1, _) = sys.closed_loop(s1);
            let r0 = n.sqrt() + 0.2;
            let r1 = m0.norm() * r0 + c0.norm() + 0.2;
            let r2 = m1.norm() * r1 + 0.5;
            let dy1 = m0.norm() + 1.0;
            let dy2 = m1.norm() * dy1 + 1.0;
            worst = worst.max(2.0 * p.norm() * ((r1 * r1 + r2 * r2).sqrt() * (dy1 + dy2) + (r0 * r0 + r1 * r1).sqrt() * (1.0 + dy1)));
        }
    }
    worst
}

#[test]
fn c4_verifier_agrees_with_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let full = VerifyConfig { gap: Some(1e-7), node_cap: 200_000, stop_when_certified: false, ..VerifyConfig::default() };
    let mut checked = 0;
    let mut bad = vec![];
    for (n, per_axis, levels, count) in [(1usize, 2000usize, 5usize, 5usize), (2, 201, 3, 3)] {
        for _ in 0..count {
            let sys = toy_system(&mut rng, n, 0.03);
            let p = toy_candidate(&mut rng, n);
            let out = miqp_verify(&p, &sys, &full).unwrap();
            let grid = brute_force_max_dv(&p, &sys, per_axis, levels, Exec::Parallel).unwrap();
            let dmax = sys.d_bar.iter().map(|d| d.amax()).fold(0.0, f64::max);
            let xs = 2.0 / (per_axis - 1) as f64;
            let pitch = (n as f64 * xs * xs + 2.0 * n as f64 * (2.0 * dmax / (levels - 1) as f64).powi(2)).sqrt();
            let slack = dv_lipschitz(&p, &sys) * pitch;
            if !(out.value >= grid.value - out.gap && out.upper_bound <= grid.value + out.gap + slack) {
                bad.push(format!("{n}-D: miqp [{:.3e}, {:.3e}] grid {:.3e}", out.value, out.upper_bound, grid.value));
            }
            checked += 1;
        }
    }
    // a certified instance must have a negative grid maximum
    let part = Partition::grid(&[-1.0, -1.0], &[1.0, 1.0], &[1, 1]).unwrap();
    let stable = AffineDynamics { a: Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]), b: Mat::zeros(2, 1), c: Vector::zeros(2) };
    let sys = discretize(&part, &[stable], &[(Mat::zeros(1, 2), Vector::zeros(1))], &[Vector::zeros(2)], 0.1, part.domain(), 0.1).unwrap();
    let res = ceg_loop(&sys, &CegConfig::default()).unwrap();
    let certified_grid = match &res {
        CegResult::Certified { candidate, .. } => Some(brute_force_max_dv(&candidate.p, &sys, 400, 2, Exec::Parallel).unwrap().value),
        _ => None,
    };
    let pass = bad.is_empty() && certified_grid.is_some_and(|v| v < 0.0);
    report(4, pass, &format!("{checked} toy instances, {} disagreements {bad:?}; certified instance grid max {certified_grid:?}", bad.len()));
    assert!(pass);
}

#[test]
fn c5_pendulum_is_certified_with_larger_roa_than_lqr() {
    let run = pendulum();
    let status = run.record.status;
    let value = run.record.outcome.as_ref().map(|o| o.upper_bound);
    let eig = run.record.candidate.as_ref().map(|c| c.p.clone().symmetric_eigen().eigenvalues);
    let psd = eig.as_ref().is_some_and(|e| e.min() >= 0.0 && e.max() <= 1.0);
    let area = run.roa.as_ref().map(|r| r.area);
    let pass = status == PipelineStatus::Certified
        && value.is_some_and(|v| v < 0.0)
        && psd
        && area.is_some_and(|a| a > run.baseline.area);
    report(
        5,
        pass,
        &format!(
            "status {status:?}, MIQP upper bound {value:?}, eig(P̂) in [{:.3e}, {:.3e}], ROA area {area:?} vs LQR {:.3}",
            eig.as_ref().map_or(f64::NAN, |e| e.min()),
            eig.as_ref().map_or(f64::NAN, |e| e.max()),
            run.baseline.area
        ),
    );
    assert!(pass);
}

#[test]
fn c6_closed_loop_trajectories_converge() {
    let run = pendulum();
    let (Some(cand), Some(roa)) = (&run.record.candidate, &run.roa) else {
        report(6, false, "no certified candidate to roll out");
        panic!("pendulum not certified");
    };
    let sys = &run.system;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let starts = sample_sublevel(&cand.p, sys, roa.c_star, 100, &mut rng).unwrap();
    let euler = euler_rollouts(&cand.p, sys, &starts, 10.0, sys.eps).unwrap();
    let truth = truth_rollouts(&run.learned.learner.plant, sys, &starts, 10.0, 2.0 * sys.eps).unwrap();
    let pass = euler.all_passed() && truth.all_passed();
    report(
        6,
        pass,
        &format!(
            "Euler: {}/{} reached ε, {}/{} stayed (max time {:.2} s); RK4: {}/{} reached 2ε, {}/{} stayed",
            euler.reached, euler.count, euler.stayed, euler.count, euler.max_time, truth.reached, truth.count, truth.stayed, truth.count
        ),
    );
    assert!(pass);
}

#[test]
fn c7_negative_certification() {
    let part = Partition::grid(&[-1.0, -1.0], &[1.0, 1.0], &[1, 1]).unwrap();
    let doubling = AffineDynamics { a: Mat::identity(2, 2), b: Mat::zeros(2, 1), c: Vector::zeros(2) };
    // Euler with h = 1: x⁺ = x + x = 2x
    let sys = discretize(&part, &[doubling], &[(Mat::zeros(1, 2), Vector::zeros(1))], &[Vector::zeros(2)], 1.0, part.domain(), 0.1).unwrap();
    let expanding = PipelineStatus::of(&ceg_loop(&sys, &CegConfig::default()).unwrap());

    let part = Partition::grid(&[-1.0, -1.0], &[1.0, 1.0], &[2, 2]).unwrap();
    let still = AffineDynamics { a: Mat::zeros(2, 2), b: Mat::zeros(2, 1), c: Vector::zeros(2) };
    let gains = vec![(Mat::zeros(1, 2), Vector::zeros(1)); 4];
    let sys = discretize(&part, &vec![still; 4], &gains, &vec![Vector::zeros(2); 4], 0.1, part.domain(), 0.1).unwrap();
    let marginal = PipelineStatus::of(&ceg_loop(&sys, &CegConfig::default()).unwrap());

    let pass = expanding == PipelineStatus::NoCertificate && marginal == PipelineStatus::GapLimit && marginal.exit_code() == 3;
    report(7, pass, &format!("x⁺ = 2x gives {expanding:?}; x⁺ = x gives {marginal:?} with exit code {}", marginal.exit_code()));
    assert!(pass);
}

#[test]
fn c8_step_times_within_budget() {
    let mut lines = vec![];
    let mut pass = true;
    for cfg in [ExperimentConfig::pendulum(), ExperimentConfig::vehicle()] {
        let s = time_steps(&cfg, 20_000).unwrap().summary();
        pass &= s.identify_p50_ms <= 1.0 && s.control_p50_ms <= 20.0;
        lines.push(format!("{} identify p50 {:.4} ms, control p50 {:.4} ms", s.plant, s.identify_p50_ms, s.control_p50_ms));
    }
    report(8, pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn c9_vehicle_learning_trends() {
    let mut cfg = ExperimentConfig::vehicle();
    cfg.out_dir = out_dir("vehicle");
    let run = run_vehicle_pipeline(&cfg).unwrap();
    let t = &run.trends;
    let pass = t.all_hold() && run.wall_time < 600.0;
    report(
        9,
        pass,
        &format!(
            "distance {:.2} -> {:.2}, value {:.3e} -> {:.3e}, prediction error {:.3} -> {:.3}, {:.1} s",
            t.distance_first, t.distance_last, t.value_head, t.value_tail, t.error_first, t.error_last, run.wall_time
        ),
    );
    assert!(pass);
}
