//! Problem instances: synthetic benchmarks with known optima, the coupled
//! toy problem, CVaR portfolio selection and metric-learning classification.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::csa::CsaProblem;
use crate::cspa::CspaProblem;
use crate::geometry::ProxGeometry;
use crate::oracle::{CoupledOracle, Oracle};

pub mod cvar;
pub mod estimate;
pub mod factor;
pub mod metric;
pub mod saa;
pub mod synthetic;
pub mod toy;

pub use estimate::{mc_estimate, mc_estimate_coupled, Estimate};

/// Reference solution of a benchmark problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub f: f64,
}

/// Objective and constraint oracles over one feasible set.
#[derive(Clone)]
pub struct StochasticProblem {
    pub name: String,
    pub objective: Arc<dyn Oracle>,
    pub constraint: Arc<dyn Oracle>,
    pub geometry: ProxGeometry,
    pub optimum: Option<Optimum>,
}

impl StochasticProblem {
    pub fn as_csa(&self) -> CsaProblem<'_> {
        CsaProblem {
            objective: self.objective.as_ref(),
            constraint: self.constraint.as_ref(),
            geometry: &self.geometry,
        }
    }
}

/// A parameterized problem: `x` constrained in expectation, `y` minimizing
/// `φ(x, ·)`.
#[derive(Clone)]
pub struct CoupledProblem {
    pub name: String,
    pub phi: Arc<dyn CoupledOracle>,
    pub constraint: Arc<dyn Oracle>,
    pub gx: ProxGeometry,
    pub gy: ProxGeometry,
    /// Draw `ζ` from the same realization as `ξ`.
    pub shared_stream: bool,
}

impl CoupledProblem {
    pub fn as_cspa(&self) -> CspaProblem<'_> {
        CspaProblem {
            phi: self.phi.as_ref(),
            constraint: self.constraint.as_ref(),
            gx: &self.gx,
            gy: &self.gy,
        }
    }
}

impl std::fmt::Debug for StochasticProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StochasticProblem")
            .field("name", &self.name)
            .field("geometry", &self.geometry)
            .field("optimum", &self.optimum)
            .finish_non_exhaustive()
    }
}

impl std::fmt::Debug for CoupledProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoupledProblem")
            .field("name", &self.name)
            .field("gx", &self.gx)
            .field("gy", &self.gy)
            .field("shared_stream", &self.shared_stream)
            .finish_non_exhaustive()
    }
}
