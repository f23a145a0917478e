use serde::{Deserialize, Serialize};

use crate::linalg::Vector;
use crate::lyapunov::{AccpmConfig, Learner, LyapCandidate, Proposal, SampleTriple};
use crate::{Error, Result};

use super::{miqp_verify, DiscretePWA, VerifyConfig, VerifyOutcome, VerifyStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CegConfig {
    pub accpm: AccpmConfig,
    pub verify: VerifyConfig,
    pub max_iterations: usize,
    /// Seed the sample set with undisturbed triples from a grid with this many
    /// points per axis (0 disables).
    pub warm_start: usize,
}

impl Default for CegConfig {
    fn default() -> Self {
        Self {
            accpm: AccpmConfig::default(),
            verify: VerifyConfig::default(),
            max_iterations: 200,
            warm_start: 0,
        }
    }
}

/// One rejected candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CegStep {
    pub iteration: usize,
    pub value: f64,
    pub upper_bound: f64,
    pub nodes: usize,
    pub samples: usize,
    pub volume_proxy: f64,
}

#[derive(Clone, Debug)]
pub enum CegResult {
    Certified {
        candidate: LyapCandidate,
        outcome: VerifyOutcome,
        learner: Learner,
        trace: Vec<CegStep>,
    },
    /// The learner proved that no admissible candidate separates the samples.
    NoCertificate {
        bound: f64,
        learner: Learner,
        trace: Vec<CegStep>,
    },
    /// The verifier could not decide the sign of the maximum.
    GapLimit {
        candidate: LyapCandidate,
        outcome: VerifyOutcome,
        learner: Learner,
        trace: Vec<CegStep>,
    },
    IterationCap {
        candidate: LyapCandidate,
        learner: Learner,
        trace: Vec<CegStep>,
    },
}

impl CegResult {
    pub fn trace(&self) -> &[CegStep] {
        match self {
            CegResult::Certified { trace, .. }
            | CegResult::NoCertificate { trace, .. }
            | CegResult::GapLimit { trace, .. }
            | CegResult::IterationCap { trace, .. } => trace,
        }
    }

    pub fn learner(&self) -> &Learner {
        match self {
            CegResult::Certified { learner, .. }
            | CegResult::NoCertificate { learner, .. }
            | CegResult::GapLimit { learner, .. }
            | CegResult::IterationCap { learner, .. } => learner,
        }
    }

    pub fn is_certified(&self) -> bool {
        matches!(self, CegResult::Certified { .. })
    }
}

fn warm_samples(sys: &DiscretePWA, per_axis: usize) -> Vec<SampleTriple> {
    let n = sys.n();
    let (lo, hi) = sys.roi.bounding_box();
    let tol = sys.partition.tol();
    let zero = Vector::zeros(n);
    let total = per_axis.pow(n as u32);
    let mut out = vec![];
    for idx in 0..total {
        let mut x = Vector::zeros(n);
        let mut rest = idx;
        for i in (0..n).rev() {
            let k = rest % per_axis;
            rest /= per_axis;
            x[i] = lo[i] + (hi[i] - lo[i]) * (k as f64 + 0.5) / per_axis as f64;
        }
        if x.amax() < sys.eps {
            continue;
        }
        let Ok(x1) = sys.closed_loop_step(&x, &zero) else { continue };
        if !sys.roi.contains(x1.as_slice(), tol) {
            continue;
        }
        let Ok(x2) = sys.closed_loop_step(&x1, &zero) else { continue };
        out.push(SampleTriple::undisturbed(x, x1, x2));
    }
    out
}

/// Alternate candidate proposals and global verification until a candidate
/// is certified, the learner's feasible set is empty, or the cap is reached.
pub fn ceg_loop(sys: &DiscretePWA, cfg: &CegConfig) -> Result<CegResult> {
    let n = sys.n();
    let mut learner = Learner::new(n, cfg.accpm.clone());
    if cfg.warm_start > 0 {
        for t in warm_samples(sys, cfg.warm_start) {
            learner.add_counterexample(t)?;
        }
    }
    let cap = cfg.max_iterations.min(cfg.accpm.iteration_cap(n));
    let mut trace: Vec<CegStep> = vec![];
    let mut last = None;
    for iteration in 0..cap {
        let candidate = match learner.propose()? {
            Proposal::Candidate(c) => c,
            Proposal::Infeasible { bound, .. } => {
                log::info!("ceg: learner infeasible after {iteration} iterations (bound {bound:.3e})");
                return Ok(CegResult::NoCertificate { bound, learner, trace });
            }
        };
        let outcome = miqp_verify(&candidate.p, sys, &cfg.verify)?;
        log::info!(
            "ceg {iteration}: {:?} value {:.3e} bound {:.3e} samples {}",
            outcome.status,
            outcome.value,
            outcome.upper_bound,
            learner.samples.len()
        );
        match outcome.status {
            VerifyStatus::Certified => {
                return Ok(CegResult::Certified { candidate, outcome, learner, trace });
            }
            VerifyStatus::GapLimit => {
                return Ok(CegResult::GapLimit { candidate, outcome, learner, trace });
            }
            VerifyStatus::Counterexample => {
                let w = outcome
                    .witness
                    .clone()
                    .ok_or_else(|| Error::Internal("counterexample without witness".into()))?;
                sys.check_triple(&w.triple, w.sigma0, w.sigma1)?;
                if !learner.add_counterexample(w.triple)? {
                    return Err(Error::Numerical("verifier returned a sample that is already a cut".into()));
                }
                trace.push(CegStep {
                    iteration,
                    value: outcome.value,
                    upper_bound: outcome.upper_bound,
                    nodes: outcome.nodes,
                    samples: learner.samples.len(),
                    volume_proxy: candidate.volume_proxy,
                });
                last = Some(candidate);
            }
        }
    }
    let candidate = match last {
        Some(c) => c,
        None => return Err(Error::config("iteration cap is zero")),
    };
    Ok(CegResult::IterationCap { candidate, learner, trace })
}
