//! Vehicle experiment: identification and control only, judged by the
//! episode-to-episode trends.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::config::{ExperimentConfig, PlantName};
use super::io::{write_atomic, write_json};
use super::learn::{write_episodes_csv, write_steps_csv, EpisodeStats, StepRecord};
use super::pipeline::{csv_bytes, learn, stage, Learned};
use super::svg::{self, color, Figure, Mark, Panel};

/// Episode-level trends. The value trend compares the mean over
/// the last third of the episodes against the first third.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrends {
    pub distance_first: f64,
    pub distance_last: f64,
    pub value_head: f64,
    pub value_tail: f64,
    pub error_first: f64,
    pub error_last: f64,
}

impl VehicleTrends {
    pub fn of(episodes: &[EpisodeStats]) -> Result<Self> {
        let (Some(first), Some(last)) = (episodes.first(), episodes.last()) else {
            return Err(Error::Validation("no episodes to summarize".into()));
        };
        let k = (episodes.len() / 3).max(1);
        let mean = |s: &[EpisodeStats]| s.iter().map(|e| e.mean_value).sum::<f64>() / s.len() as f64;
        Ok(Self {
            distance_first: first.mean_distance,
            distance_last: last.mean_distance,
            value_head: mean(&episodes[..k]),
            value_tail: mean(&episodes[episodes.len() - k..]),
            error_first: first.mean_error,
            error_last: last.mean_error,
        })
    }

    pub fn distance_decreased(&self) -> bool {
        self.distance_last < self.distance_first
    }

    pub fn value_decreased(&self) -> bool {
        self.value_tail <= self.value_head
    }

    pub fn error_decreased(&self) -> bool {
        self.error_last < self.error_first
    }

    pub fn all_hold(&self) -> bool {
        self.distance_decreased() && self.value_decreased() && self.error_decreased()
    }
}

/// World position of the center of gravity for a body-frame state.
pub fn world_position(goal: [f64; 2], x: &[f64]) -> [f64; 2] {
    let (s, c) = x[4].sin_cos();
    [goal[0] + c * x[2] - s * x[3], goal[1] + s * x[2] + c * x[3]]
}

pub struct VehicleRun {
    pub learned: Learned,
    pub trends: VehicleTrends,
    pub wall_time: f64,
}

const STATE_NAMES: [&str; 5] = ["v_y", "r", "p_x", "p_y", "theta"];

fn column(steps: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> Vec<f64> {
    steps.iter().map(f).collect()
}

/// States in world coordinates and the steering input over one episode.
pub fn states_figure(goal: [f64; 2], steps: &[StepRecord]) -> Result<Figure> {
    let t = column(steps, |s| s.t);
    let pos: Vec<[f64; 2]> = steps.iter().map(|s| world_position(goal, &s.x)).collect();
    svg::traces(
        "states",
        "t [s]",
        &t,
        &[
            ("x", pos.iter().map(|p| p[0]).collect()),
            ("y", pos.iter().map(|p| p[1]).collect()),
            ("theta", column(steps, |s| s.x[4])),
            ("v_y", column(steps, |s| s.x[0])),
            ("r", column(steps, |s| s.x[1])),
            ("delta_f", column(steps, |s| s.u[0])),
        ],
        2,
    )
}

/// Value, prediction error norm and active mode over one episode.
pub fn learning_figure(steps: &[StepRecord]) -> Result<Figure> {
    let t = column(steps, |s| s.t);
    let err = column(steps, |s| s.f.iter().zip(&s.f_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
    svg::traces(
        "learning",
        "t [s]",
        &t,
        &[("value", column(steps, |s| s.value)), ("prediction error", err), ("mode", column(steps, |s| s.sigma as f64))],
        1,
    )
}

/// Measured derivative against the model prediction, one panel per state.
pub fn prediction_figure(steps: &[StepRecord]) -> Result<Figure> {
    let t = column(steps, |s| s.t);
    let mut panels = vec![];
    for (i, name) in STATE_NAMES.iter().enumerate() {
        let mut p = Panel::new(&format!("d{name}/dt"), "t [s]", name);
        p.marks.push(Mark::line(t.iter().zip(steps).map(|(t, s)| [*t, s.f[i]]).collect(), color(1)));
        p.marks.push(Mark::Line { points: t.iter().zip(steps).map(|(t, s)| [*t, s.f_hat[i]]).collect(), color: "#000000".into(), width: 0.8 });
        panels.push(p);
    }
    Ok(Figure::grid(panels, 2))
}

/// Paths in the plane for the traced episodes, with the goal point.
pub fn path_figure(goal: [f64; 2], traces: &[(usize, Vec<StepRecord>)]) -> Result<Figure> {
    let mut p = Panel::new("path", "x", "y");
    p.equal = true;
    for (k, (e, steps)) in traces.iter().enumerate() {
        let pts: Vec<[f64; 2]> = steps.iter().map(|s| world_position(goal, &s.x)).collect();
        if let Some(first) = pts.first() {
            p.marks.push(Mark::Points { points: vec![*first], color: color(k).into(), radius: 3.0 });
        }
        log::debug!("path of episode {e}: {} points", pts.len());
        p.marks.push(Mark::line(pts, color(k)));
    }
    p.marks.push(Mark::Circle { center: goal, radius: 1.5, color: "#d62728".into() });
    Ok(Figure::single(p))
}

pub fn episodes_figure(episodes: &[EpisodeStats]) -> Result<Figure> {
    let e: Vec<f64> = episodes.iter().map(|s| s.episode as f64).collect();
    svg::traces(
        "episodes",
        "episode",
        &e,
        &[
            ("mean distance", episodes.iter().map(|s| s.mean_distance).collect()),
            ("mean value", episodes.iter().map(|s| s.mean_value).collect()),
            ("mean prediction error", episodes.iter().map(|s| s.mean_error).collect()),
        ],
        3,
    )
}

pub fn run_vehicle_pipeline(cfg: &ExperimentConfig) -> Result<VehicleRun> {
    if cfg.plant != PlantName::Vehicle {
        return Err(Error::config("the vehicle pipeline needs the vehicle plant"));
    }
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out)?;
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let _ = std::fs::remove_file(out.join("failure.json"));
    let goal = cfg.vehicle.goal;

    let start = Instant::now();
    let last = cfg.episodes.count.saturating_sub(1);
    let learned = stage(&out, "identify", || {
        let l = learn(cfg, |e| e == 0 || e == last)?;
        write_json(&out.join("learn.json"), &l.checkpoint(cfg))?;
        write_atomic(&out.join("episodes.csv"), &csv_bytes(|b| write_episodes_csv(&l.episodes, b))?)?;
        write_atomic(&out.join("samples.csv"), &csv_bytes(|b| l.learner.db.write_csv(b))?)?;
        for (e, steps) in &l.traces {
            write_atomic(&out.join(format!("steps_{e}.csv")), &csv_bytes(|b| write_steps_csv(steps, b))?)?;
        }
        Ok(l)
    })?;
    let wall_time = start.elapsed().as_secs_f64();
    let trends = stage(&out, "trends", || {
        let t = VehicleTrends::of(&learned.episodes)?;
        write_json(&out.join("trends.json"), &t)?;
        Ok(t)
    })?;
    stage(&out, "figures", || {
        svg::write(&out.join("episodes.svg"), &episodes_figure(&learned.episodes)?)?;
        svg::write(&out.join("path.svg"), &path_figure(goal, &learned.traces)?)?;
        if let Some((_, steps)) = learned.traces.last() {
            svg::write(&out.join("states.svg"), &states_figure(goal, steps)?)?;
            svg::write(&out.join("learning.svg"), &learning_figure(steps)?)?;
            svg::write(&out.join("prediction.svg"), &prediction_figure(steps)?)?;
        }
        Ok(())
    })?;
    Ok(VehicleRun { learned, trends, wall_time })
}
