//! Per-step wall-time of the identifier and controller updates.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::feedback;
use crate::Result;

use super::config::ExperimentConfig;
use super::io::{write_atomic, write_json};
use super::learn::OnlineLearner;
use super::pipeline::{csv_bytes, start_state};
use super::svg::{self, Figure};

/// Timings in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTimings {
    pub plant: String,
    pub identify_ms: Vec<f64>,
    pub control_ms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub plant: String,
    pub steps: usize,
    pub identify_p50_ms: f64,
    pub identify_p99_ms: f64,
    pub control_p50_ms: f64,
    pub control_p99_ms: f64,
}

/// Nearest-rank quantile; NaN for an empty slice.
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[k - 1]
}

impl StepTimings {
    pub fn summary(&self) -> TimingSummary {
        TimingSummary {
            plant: self.plant.clone(),
            steps: self.identify_ms.len(),
            identify_p50_ms: quantile(&self.identify_ms, 0.5),
            identify_p99_ms: quantile(&self.identify_ms, 0.99),
            control_p50_ms: quantile(&self.control_ms, 0.5),
            control_p99_ms: quantile(&self.control_ms, 0.99),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "identify_ms", "control_ms"])?;
        for (k, (a, b)) in self.identify_ms.iter().zip(&self.control_ms).enumerate() {
            w.write_record([k.to_string(), a.to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run `steps` closed-loop steps with dither and time the model update and
/// the value update plus feedback separately. The state restarts from the
/// configured start whenever it leaves the region of interest.
pub fn time_steps(cfg: &ExperimentConfig, steps: usize) -> Result<StepTimings> {
    let mut l = OnlineLearner::new(cfg)?;
    let x0 = start_state(cfg);
    let mut x = x0.clone();
    let basis = l.basis();
    let dither = cfg.episodes.dither.max(cfg.episodes.dither_floor);
    let plant = l.plant.clone();
    let mut t = StepTimings { plant: l.plant.name.clone(), identify_ms: Vec::with_capacity(steps), control_ms: Vec::with_capacity(steps) };
    for _ in 0..steps {
        let sigma = match l.partition.cell_of(x.as_slice()) {
            Some(s) => s,
            None => {
                x = x0.clone();
                l.partition.cell_of(x.as_slice()).unwrap_or(0)
            }
        };
        let start = Instant::now();
        l.values.update(sigma, &l.model.pieces[sigma], &basis, &l.cost, &x);
        let mut u = feedback(&l.values.p[sigma], &l.model.pieces[sigma], &basis, &l.cost, &x, &l.plant.u_bounds);
        t.control_ms.push(start.elapsed().as_secs_f64() * 1e3);

        for (j, b) in plant.u_bounds.iter().enumerate() {
            let kick = l.rng().gen_range(-1.0..1.0) * dither * b;
            u[j] = (u[j] + kick).clamp(-b, *b);
        }
        let f = plant.measure_derivative(&x, &u, l.rng())?;
        let start = Instant::now();
        l.model.observe(&mut l.db, sigma, &x, &u, &f)?;
        t.identify_ms.push(start.elapsed().as_secs_f64() * 1e3);
        x = plant.rk4_step(&x, &u, l.h);
    }
    Ok(t)
}

/// Time both plants and write `timings_<plant>.csv`, `timings.json` and
/// `timings.svg` under `out`.
pub fn run_bench(configs: &[ExperimentConfig], steps: usize, out: &Path) -> Result<Vec<TimingSummary>> {
    let mut summaries = vec![];
    let mut panels = vec![];
    for cfg in configs {
        let t = time_steps(cfg, steps)?;
        write_atomic(&out.join(format!("timings_{}.csv", t.plant)), &csv_bytes(|b| t.write_csv(b))?)?;
        panels.push(svg::histogram(&format!("{} identify", t.plant), "ms", &t.identify_ms, 30)?);
        panels.push(svg::histogram(&format!("{} control", t.plant), "ms", &t.control_ms, 30)?);
        summaries.push(t.summary());
    }
    write_json(&out.join("timings.json"), &summaries)?;
    svg::write(&out.join("timings.svg"), &Figure::grid(panels, 2))?;
    Ok(summaries)
}
