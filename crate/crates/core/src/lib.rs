//! Piecewise-affine learning and stability certification for control-affine plants.
//!
//! The crate is organised as a pipeline:
//!
//! * [`dynamics`]: simulated ground-truth plants, RK4 simulation and the noisy
//!   derivative measurement model.
//! * [`partition`]: polytopic tilings of the domain, point location and 2-D
//!   continuity stitching.
//! * [`identify`]: per-piece recursive least squares and the curated sample database.
//! * [`uncertainty`]: sample-residual and sample-gap disturbance bounds.
//! * [`control`]: forward-integrated state-dependent Riccati equation and the
//!   resulting piecewise feedback law, plus an LQR baseline.
//! * [`lyapunov`]: analytic-center cutting-plane learner for two-step
//!   non-monotonic Lyapunov candidates.
//! * [`verify`]: Euler discretization, global branch-and-bound verification,
//!   the counterexample-guided loop and region-of-attraction extraction.
//! * [`harness`]: experiment configuration, end-to-end pipelines, SVG export and
//!   runtime measurements.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod identify;
pub mod linalg;
pub mod lyapunov;
pub mod par;
pub mod partition;
pub mod uncertainty;
pub mod verify;

pub use error::{Error, Result};
pub use par::Exec;
