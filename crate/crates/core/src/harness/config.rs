//! Experiment configuration: one TOML file, unknown keys rejected.
//!
//! ```toml
//! plant = "pendulum"
//! seed = 7
//! h = 0.005
//!
//! [partition]
//! cells = [7, 7]
//!
//! [episodes]
//! count = 100000
//! length = 0.02
//! boxes = [[2.0, 2.0], [4.0, 4.0], [6.0, 6.0]]
//!
//! [verify]
//! epsilon = 0.3
//! ```
//!
//! Every section is optional and falls back to the preset named by `plant`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{CostSpec, RiccatiConfig};
use crate::dynamics::{PendulumParams, PlantSpec, VehicleParams};
use crate::identify::{Basis, RlsConfig};
use crate::linalg::{Mat, Vector};
use crate::lyapunov::AccpmConfig;
use crate::{Error, Exec, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantName {
    Pendulum,
    Vehicle,
}

impl std::str::FromStr for PlantName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(PlantName::Pendulum),
            "vehicle" => Ok(PlantName::Vehicle),
            other => Err(Error::config(format!("unknown plant preset `{other}`"))),
        }
    }
}

/// Where derivative samples come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    /// Noisy derivative measurements `F / (1 + δ)`.
    #[default]
    Measured,
    /// Backward differences of consecutive states.
    FiniteDifference,
}

/// Basis of the identified model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    #[default]
    Affine,
    Quadratic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    /// Grid cells per state axis over the region of interest.
    pub cells: Vec<usize>,
    /// Width of the continuity margins (2-D only); zero disables stitching.
    #[serde(default)]
    pub stitch_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub count: usize,
    /// Episode duration in seconds.
    pub length: f64,
    /// Nested initial-state boxes (half widths around the origin), used in
    /// order over equal shares of the episodes.
    pub boxes: Vec<Vec<f64>>,
    /// Dither amplitude as a multiple of the input bound, at the first episode.
    pub dither: f64,
    /// Per-episode multiplicative decay of the dither amplitude.
    pub dither_decay: f64,
    /// Lower limit of the dither amplitude.
    pub dither_floor: f64,
    #[serde(default)]
    pub source: DerivativeSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    /// Diagonal of `Q`.
    pub q: Vec<f64>,
    /// Diagonal of `R`.
    pub r: Vec<f64>,
    #[serde(default)]
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    /// Relative measurement tolerance `ϱ_e`.
    pub meas_tol: f64,
    /// Input bound `ū` (same for every channel).
    pub u_bar: f64,
    /// Overrides of the plant Lipschitz constants.
    #[serde(default)]
    pub lipschitz_x: Option<Vec<f64>>,
    #[serde(default)]
    pub lipschitz_u: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbSpec {
    /// Ring capacity `N_d` per piece.
    pub capacity: usize,
    /// Acceptance threshold `η` relative to the running mean error.
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Radius of the excluded infinity-norm ball around the origin.
    pub epsilon: f64,
    #[serde(default)]
    pub gap: Option<f64>,
    pub node_cap: usize,
    pub max_iterations: usize,
    #[serde(default)]
    pub warm_start: usize,
    /// Lattice size for level-set tracing.
    pub roa_grid: usize,
    /// Drop the affine offsets `k_σ` from the feedback law.
    #[serde(default)]
    pub linear_only: bool,
    #[serde(default)]
    pub accpm: AccpmConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    #[serde(default)]
    pub params: VehicleParams,
    /// Goal position in world coordinates.
    pub goal: [f64; 2],
    /// Start pose `(x, y, heading)` in world coordinates.
    pub start: [f64; 3],
    /// Half widths of the region of interest in `(v_y, r, e_x, e_y, θ)`.
    pub roi: [f64; 5],
    /// Steering bound in radians.
    pub steer_bar: f64,
}

impl Default for VehicleSection {
    fn default() -> Self {
        Self {
            params: VehicleParams::default(),
            goal: [70.0, 70.0],
            start: [0.0, 0.0, 0.0],
            roi: [4.0, 2.0, 200.0, 200.0, std::f64::consts::PI],
            steer_bar: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantName,
    pub seed: u64,
    /// Sampling time.
    pub h: f64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub exec: Exec,
    #[serde(default)]
    pub basis: BasisKind,
    #[serde(default)]
    pub pendulum: PendulumParams,
    #[serde(default)]
    pub vehicle: VehicleSection,
    pub partition: PartitionSpec,
    pub episodes: EpisodeSpec,
    pub cost: CostSection,
    pub constants: Constants,
    pub db: DbSpec,
    #[serde(default)]
    pub rls: RlsConfig,
    #[serde(default)]
    pub riccati: RiccatiConfig,
    pub verify: VerifySection,
}

/// Partial file: every section may be omitted and is then taken from the preset.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    plant: PlantName,
    seed: Option<u64>,
    h: Option<f64>,
    out_dir: Option<PathBuf>,
    exec: Option<Exec>,
    basis: Option<BasisKind>,
    pendulum: Option<PendulumParams>,
    vehicle: Option<VehicleSection>,
    partition: Option<PartitionSpec>,
    episodes: Option<EpisodeSpec>,
    cost: Option<CostSection>,
    constants: Option<Constants>,
    db: Option<DbSpec>,
    rls: Option<RlsConfig>,
    riccati: Option<RiccatiConfig>,
    verify: Option<VerifySection>,
}

impl ExperimentConfig {
    pub fn preset(plant: PlantName) -> Self {
        match plant {
            PlantName::Pendulum => Self::pendulum(),
            PlantName::Vehicle => Self::vehicle(),
        }
    }

    /// Pendulum defaults. Physical constants, `h`, `Q`, `R` and the ROI follow
    /// the benchmark; the schedule and sample counts are chosen here.
    pub fn pendulum() -> Self {
        Self {
            plant: PlantName::Pendulum,
            seed: 7,
            h: 0.005,
            out_dir: PathBuf::from("out/pendulum"),
            exec: Exec::default(),
            basis: BasisKind::Affine,
            pendulum: PendulumParams::default(),
            vehicle: VehicleSection::default(),
            partition: PartitionSpec { cells: vec![7, 7], stitch_width: 0.0 },
            episodes: EpisodeSpec {
                count: 100_000,
                length: 0.02,
                boxes: vec![vec![2.0, 2.0], vec![4.0, 4.0], vec![6.0, 6.0]],
                dither: 3.0,
                dither_decay: 0.9999,
                dither_floor: 2.0,
                source: DerivativeSource::Measured,
            },
            cost: CostSection { q: vec![2.0, 1.0], r: vec![1.0], gamma: 0.0 },
            constants: Constants {
                meas_tol: 1e-3,
                u_bar: 8.0,
                lipschitz_x: None,
                lipschitz_u: None,
            },
            db: DbSpec { capacity: 8000, eta: 1e-6 },
            rls: RlsConfig::default(),
            riccati: RiccatiConfig::default(),
            verify: VerifySection {
                epsilon: 0.3,
                gap: None,
                node_cap: 20_000,
                max_iterations: 300,
                warm_start: 0,
                roa_grid: 401,
                linear_only: false,
                accpm: AccpmConfig::default(),
            },
        }
    }

    /// Vehicle defaults (identification and control only).
    pub fn vehicle() -> Self {
        Self {
            plant: PlantName::Vehicle,
            seed: 11,
            h: 0.01,
            out_dir: PathBuf::from("out/vehicle"),
            exec: Exec::default(),
            basis: BasisKind::Affine,
            pendulum: PendulumParams::default(),
            vehicle: VehicleSection::default(),
            partition: PartitionSpec { cells: vec![1, 2, 4, 4, 4], stitch_width: 0.0 },
            episodes: EpisodeSpec {
                count: 15,
                length: 30.0,
                boxes: vec![],
                dither: 0.5,
                dither_decay: 0.7,
                dither_floor: 0.0,
                source: DerivativeSource::Measured,
            },
            cost: CostSection { q: vec![0.0, 0.0, 1.0, 1.0, 0.0], r: vec![1.0], gamma: 1.0 },
            constants: Constants {
                meas_tol: 1e-3,
                u_bar: 0.3,
                lipschitz_x: None,
                lipschitz_u: None,
            },
            db: DbSpec { capacity: 500, eta: 0.5 },
            rls: RlsConfig::default(),
            riccati: RiccatiConfig { h: 0.01, ..RiccatiConfig::default() },
            verify: VerifySection {
                epsilon: 0.5,
                gap: None,
                node_cap: 1000,
                max_iterations: 1,
                warm_start: 0,
                roa_grid: 3,
                linear_only: false,
                accpm: AccpmConfig::default(),
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text)?;
        let base = Self::preset(file.plant);
        let cfg = Self {
            plant: file.plant,
            seed: file.seed.unwrap_or(base.seed),
            h: file.h.unwrap_or(base.h),
            out_dir: file.out_dir.unwrap_or(base.out_dir),
            exec: file.exec.unwrap_or(base.exec),
            basis: file.basis.unwrap_or(base.basis),
            pendulum: file.pendulum.unwrap_or(base.pendulum),
            vehicle: file.vehicle.unwrap_or(base.vehicle),
            partition: file.partition.unwrap_or(base.partition),
            episodes: file.episodes.unwrap_or(base.episodes),
            cost: file.cost.unwrap_or(base.cost),
            constants: file.constants.unwrap_or(base.constants),
            db: file.db.unwrap_or(base.db),
            rls: file.rls.unwrap_or(base.rls),
            riccati: file.riccati.unwrap_or(base.riccati),
            verify: file.verify.unwrap_or(base.verify),
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn check(&self) -> Result<()> {
        let n = match self.plant {
            PlantName::Pendulum => 2,
            PlantName::Vehicle => 5,
        };
        if !(self.h > 0.0) {
            return Err(Error::config("h must be positive"));
        }
        if self.partition.cells.len() != n || self.partition.cells.contains(&0) {
            return Err(Error::config(format!("partition needs {n} positive cell counts")));
        }
        if self.partition.stitch_width < 0.0 || (self.partition.stitch_width > 0.0 && n != 2) {
            return Err(Error::config("stitching needs a non-negative width and a 2-D plant"));
        }
        if self.episodes.boxes.iter().any(|b| b.len() != n) {
            return Err(Error::config(format!("episode boxes need {n} half widths")));
        }
        if !(self.episodes.length >= self.h) {
            return Err(Error::config("episode length shorter than one step"));
        }
        if self.cost.q.len() != n || self.cost.r.is_empty() {
            return Err(Error::config("cost weights have the wrong length"));
        }
        if self.db.capacity == 0 || !(self.db.eta > 0.0) {
            return Err(Error::config("database capacity must be positive and η positive"));
        }
        if !(self.verify.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        self.cost_spec()?;
        self.plant_spec()?;
        Ok(())
    }

    pub fn cost_spec(&self) -> Result<CostSpec> {
        CostSpec::quadratic(
            Mat::from_diagonal(&Vector::from_vec(self.cost.q.clone())),
            self.cost.r.clone(),
            self.cost.gamma,
        )
    }

    pub fn plant_spec(&self) -> Result<PlantSpec> {
        let mut spec = match self.plant {
            PlantName::Pendulum => PlantSpec::pendulum(self.pendulum.clone(), self.constants.u_bar, self.constants.meas_tol)?,
            PlantName::Vehicle => PlantSpec::vehicle(
                self.vehicle.params.clone(),
                self.constants.u_bar,
                self.vehicle.roi,
                self.constants.meas_tol,
            )?,
        };
        if let Some(l) = &self.constants.lipschitz_x {
            spec.lipschitz_x = l.clone();
        }
        if let Some(l) = &self.constants.lipschitz_u {
            spec.lipschitz_u = l.clone();
        }
        spec.check()?;
        Ok(spec)
    }

    pub fn basis(&self) -> Basis {
        let n = match self.plant {
            PlantName::Pendulum => 2,
            PlantName::Vehicle => 5,
        };
        match self.basis {
            BasisKind::Affine => Basis::Affine { n },
            BasisKind::Quadratic => Basis::Quadratic { n },
        }
    }

    pub fn riccati_config(&self) -> RiccatiConfig {
        RiccatiConfig { h: self.h, ..self.riccati.clone() }
    }
}
