use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pwcert::harness::bench::run_bench;
use pwcert::harness::config::{ExperimentConfig, PlantName};
use pwcert::harness::io::{read_json, write_atomic, write_json};
use pwcert::harness::learn::write_episodes_csv;
use pwcert::harness::pipeline::{
    ceg_config, closed_loop, csv_bytes, discretize_loop, learn, restore_learner, run_pendulum_pipeline, start_state,
    write_trace_csv, CertifyRecord, LearnCheckpoint, PipelineStatus,
};
use pwcert::harness::svg;
use pwcert::harness::vehicle::run_vehicle_pipeline;
use pwcert::linalg::Vector;
use pwcert::verify::{ceg_loop, roa_level, DiscretePWA};

#[derive(Parser, Debug)]
#[command(name = "pwcert", version, about = "Learn, bound, control and certify piecewise-affine models")]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Overrides {
    /// TOML experiment file; presets fill anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Plant preset used when no config file is given.
    #[arg(long, global = true, default_value = "pendulum")]
    plant: PlantName,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Drop the affine offsets from the gains.
    #[arg(long, global = true)]
    linear_only: bool,
    /// Grid size, e.g. `7x7`.
    #[arg(long, global = true)]
    cells: Option<String>,
    /// Target radius excluded from the decrease condition.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Absolute optimality gap of the verifier.
    #[arg(long, global = true)]
    gap: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the true plant, open loop or under a learned controller.
    Simulate {
        /// Initial state, comma separated; defaults to the episode start.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        /// Directory holding `learn.json` and `samples.csv`.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Run the learning episodes and write the model checkpoint.
    Identify,
    /// Disturbance bounds for a learned model.
    Bound {
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Closed-loop gains and the discretized system.
    Control {
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Counterexample-guided certification of `system.json`.
    Certify {
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Largest verified sublevel set from `system.json` and `certify.json`.
    Roa {
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Per-step timing of the identifier and controller on both plants.
    Bench {
        #[arg(long, default_value_t = 20_000)]
        steps: usize,
    },
    /// All stages end to end.
    Pipeline { plant: PlantName },
}

fn parse_cells(s: &str) -> Result<Vec<usize>> {
    s.split(['x', 'X'])
        .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad cell count `{v}` in `{s}`")))
        .collect()
}

impl Overrides {
    fn base(&self, plant: Option<PlantName>) -> Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::preset(plant.unwrap_or(self.plant)),
        };
        if let Some(p) = plant {
            if cfg.plant != p {
                bail!("config is for the {:?} plant, not {:?}", cfg.plant, p);
            }
        }
        Ok(cfg)
    }

    /// Apply the flags. `fixed_grid` rejects a cell override, for stages that
    /// read a model learned on a given partition.
    fn apply(&self, mut cfg: ExperimentConfig, fixed_grid: bool) -> Result<ExperimentConfig> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if self.linear_only {
            cfg.verify.linear_only = true;
        }
        if let Some(c) = &self.cells {
            let cells = parse_cells(c)?;
            if fixed_grid && cells != cfg.partition.cells {
                bail!("--cells does not match the checkpoint partition {:?}", cfg.partition.cells);
            }
            cfg.partition.cells = cells;
        }
        if let Some(e) = self.epsilon {
            cfg.verify.epsilon = e;
        }
        if let Some(g) = self.gap {
            cfg.verify.gap = Some(g);
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn fresh(&self, plant: Option<PlantName>) -> Result<ExperimentConfig> {
        let cfg = self.base(plant)?;
        self.apply(cfg, false)
    }

    /// Config recorded next to a checkpoint, with the flags applied and the
    /// output directory defaulting to the checkpoint directory.
    fn checkpoint_config(&self, dir: &Path) -> Result<(ExperimentConfig, LearnCheckpoint)> {
        let ck: LearnCheckpoint = read_json(&dir.join("learn.json")).with_context(|| format!("reading {}/learn.json", dir.display()))?;
        let mut cfg = ck.config.clone();
        cfg.out_dir = dir.to_path_buf();
        Ok((self.apply(cfg, true)?, ck))
    }

    /// Config for stages that only need `system.json`.
    fn for_system(&self, dir: &Path) -> Result<ExperimentConfig> {
        let recorded = dir.join("config.toml");
        let mut cfg = if self.config.is_none() && recorded.exists() {
            ExperimentConfig::load(&recorded)?
        } else {
            self.base(None)?
        };
        cfg.out_dir = dir.to_path_buf();
        self.apply(cfg, false)
    }

    fn dir(&self, from: &Option<PathBuf>) -> PathBuf {
        from.clone()
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| ExperimentConfig::preset(self.plant).out_dir)
    }
}

fn simulate(cli: &Cli, x0: &Option<Vec<f64>>, horizon: f64, from: &Option<PathBuf>) -> Result<()> {
    let (cfg, learner) = match from {
        Some(dir) => {
            let (cfg, ck) = cli.opts.checkpoint_config(dir)?;
            let l = restore_learner(&cfg, &ck, &dir.join("samples.csv"))?;
            (cfg, Some(l))
        }
        None => (cli.opts.fresh(None)?, None),
    };
    let plant = cfg.plant_spec()?;
    let mut x = match x0 {
        Some(v) if v.len() == plant.n => Vector::from_row_slice(v),
        Some(v) => bail!("--x0 has {} entries, the plant has {} states", v.len(), plant.n),
        None => start_state(&cfg),
    };
    let steps = (horizon / cfg.h).round() as usize;
    let mut w = csv::Writer::from_writer(vec![]);
    let mut header = vec!["t".to_string()];
    header.extend((1..=plant.n).map(|i| format!("x{i}")));
    header.extend((1..=plant.m).map(|j| format!("u{j}")));
    w.write_record(&header)?;
    for k in 0..=steps {
        let u = match &learner {
            Some(l) => l.control(&x),
            None => Vector::zeros(plant.m),
        };
        let mut row = vec![(k as f64 * cfg.h).to_string()];
        row.extend(x.iter().chain(u.iter()).map(|v| v.to_string()));
        w.write_record(&row)?;
        if k < steps {
            x = plant.rk4_step(&x, &u, cfg.h);
        }
    }
    let path = cfg.out_dir.join("trajectory.csv");
    write_atomic(&path, &w.into_inner().context("flushing trajectory")?)?;
    println!("wrote {} ({} steps)", path.display(), steps);
    Ok(())
}

fn identify(cli: &Cli) -> Result<()> {
    let cfg = cli.opts.fresh(None)?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let l = learn(&cfg, |_| false)?;
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    write_json(&out.join("learn.json"), &l.checkpoint(&cfg))?;
    write_atomic(&out.join("episodes.csv"), &csv_bytes(|b| write_episodes_csv(&l.episodes, b))?)?;
    write_atomic(&out.join("samples.csv"), &csv_bytes(|b| l.learner.db.write_csv(b))?)?;
    println!(
        "{} episodes, {} stored samples in {:.1} s",
        l.episodes.len(),
        l.learner.db.total(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn bound_or_control(cli: &Cli, from: &Option<PathBuf>, control: bool) -> Result<()> {
    let dir = cli.opts.dir(from);
    let (cfg, ck) = cli.opts.checkpoint_config(&dir)?;
    let learner = restore_learner(&cfg, &ck, &dir.join("samples.csv"))?;
    let cl = closed_loop(&cfg, &learner)?;
    let out = &cfg.out_dir;
    write_json(&out.join("uncertainty.json"), &cl.report)?;
    write_atomic(&out.join("uncertainty.csv"), &csv_bytes(|b| cl.report.write_heatmap_csv(&cl.partition, b))?)?;
    if cl.partition.dim() == 2 {
        svg::write(&out.join("uncertainty.svg"), &svg::uncertainty_heatmaps(&cl.partition, &cl.report)?)?;
    }
    let worst = cl.report.pieces.iter().flat_map(|p| p.d_bar.iter().copied()).fold(0.0, f64::max);
    println!("{} pieces bounded, largest bound {worst:.4e}", cl.report.pieces.len());
    if control {
        let sys = discretize_loop(&cfg, &cl)?;
        write_json(&out.join("system.json"), &sys)?;
        println!("wrote {}", out.join("system.json").display());
    }
    Ok(())
}

fn certify(cli: &Cli, from: &Option<PathBuf>) -> Result<PipelineStatus> {
    let dir = cli.opts.dir(from);
    let cfg = cli.opts.for_system(&dir)?;
    let sys: DiscretePWA = read_json(&dir.join("system.json")).with_context(|| format!("reading {}/system.json", dir.display()))?;
    let start = Instant::now();
    let res = ceg_loop(&sys, &ceg_config(&cfg))?;
    let record = CertifyRecord::new(&res, start.elapsed().as_secs_f64());
    write_json(&dir.join("certify.json"), &record)?;
    write_atomic(&dir.join("ceg_trace.csv"), &csv_bytes(|b| write_trace_csv(res.trace(), b))?)?;
    println!("{:?} after {} iterations", record.status, record.iterations);
    Ok(record.status)
}

fn roa(cli: &Cli, from: &Option<PathBuf>) -> Result<()> {
    let dir = cli.opts.dir(from);
    let cfg = cli.opts.for_system(&dir)?;
    let sys: DiscretePWA = read_json(&dir.join("system.json"))?;
    let record: CertifyRecord = read_json(&dir.join("certify.json"))?;
    let (Some(candidate), Some(outcome)) = (&record.candidate, &record.outcome) else {
        bail!("certify.json holds no verified candidate ({:?})", record.status);
    };
    let roa = roa_level(&candidate.p, &sys, outcome, cfg.verify.roa_grid)?;
    write_json(&dir.join("roa.json"), &roa)?;
    write_atomic(&dir.join("roa.csv"), &csv_bytes(|b| roa.write_csv(b))?)?;
    svg::write(&dir.join("roa.svg"), &svg::phase_portrait(&sys, Some(&roa), None, &[])?)?;
    println!("level {:.4}, area {:.3}", roa.c_star, roa.area);
    Ok(())
}

fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Simulate { x0, horizon, from } => simulate(cli, x0, *horizon, from)?,
        Command::Identify => identify(cli)?,
        Command::Bound { from } => bound_or_control(cli, from, false)?,
        Command::Control { from } => bound_or_control(cli, from, true)?,
        Command::Certify { from } => return Ok(certify(cli, from)?.exit_code()),
        Command::Roa { from } => roa(cli, from)?,
        Command::Bench { steps } => {
            let cfgs = [cli.opts.fresh(Some(PlantName::Pendulum))?, cli.opts.fresh(Some(PlantName::Vehicle))?];
            let out = cli.opts.out_dir.clone().unwrap_or_else(|| PathBuf::from("out/bench"));
            std::fs::create_dir_all(&out)?;
            for s in run_bench(&cfgs, *steps, &out)? {
                println!(
                    "{}: identify p50 {:.4} ms (p99 {:.4}), control p50 {:.4} ms (p99 {:.4})",
                    s.plant, s.identify_p50_ms, s.identify_p99_ms, s.control_p50_ms, s.control_p99_ms
                );
            }
        }
        Command::Pipeline { plant } => {
            let cfg = cli.opts.fresh(Some(*plant))?;
            match plant {
                PlantName::Pendulum => {
                    let r = run_pendulum_pipeline(&cfg)?;
                    println!("{:?} after {} iterations", r.record.status, r.record.iterations);
                    if let Some(roa) = &r.roa {
                        println!("ROA level {:.4}, area {:.3}; LQR baseline area {:.3}", roa.c_star, roa.area, r.baseline.area);
                    }
                    return Ok(r.record.status.exit_code());
                }
                PlantName::Vehicle => {
                    let r = run_vehicle_pipeline(&cfg)?;
                    let t = &r.trends;
                    println!(
                        "distance {:.2} -> {:.2}, value {:.3e} -> {:.3e}, prediction error {:.3} -> {:.3} ({:.1} s)",
                        t.distance_first, t.distance_last, t.value_head, t.value_tail, t.error_first, t.error_last, r.wall_time
                    );
                }
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
