//! Coupled toy problem on `X = Y = [0, 1]` with `Φ(x, y, ζ) = (y - x - ζ)²`,
//! so `y*(x) = x` and the optimality gap is `(y - x)²`.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::CoupledProblem;
use crate::error::{Error, Result};
use crate::geometry::ProxGeometry;
use crate::oracle::{CoupledOracle, Evaluation, Oracle, OracleConstants, SampleToken};

fn gaussian(token: &SampleToken, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(&mut token.rng())
}

#[derive(Clone, Debug)]
pub struct ToyPhi {
    pub sigma: f64,
}

impl CoupledOracle for ToyPhi {
    fn sample(&self, token: &SampleToken) -> Vec<f64> {
        vec![gaussian(token, self.sigma)]
    }

    fn eval_sample(&self, x: &[f64], y: &[f64], zeta: &[f64]) -> Result<Evaluation> {
        let r = y[0] - x[0] - zeta[0];
        Ok((r * r, vec![2.0 * r]))
    }

    fn constants(&self) -> OracleConstants {
        OracleConstants::exact(2.0 * (1.0 + self.sigma * self.sigma).sqrt(), 2.0, self.sigma)
    }

    fn expected_value(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        Some((y[0] - x[0]).powi(2) + self.sigma * self.sigma)
    }

    fn optimal_value(&self, _x: &[f64]) -> Option<f64> {
        Some(self.sigma * self.sigma)
    }
}

impl ToyPhi {
    /// `φ(x, y) - min_y φ(x, y)`.
    pub fn gap(&self, x: &[f64], y: &[f64]) -> f64 {
        (y[0] - x[0]).powi(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyConstraint {
    /// `G = x - 0.3 + ξ`.
    Linear,
    /// `G = ½(x² - 0.09) + ξ`, strongly convex with modulus 1.
    Quadratic,
}

#[derive(Clone, Debug)]
pub struct ToyConstraintOracle {
    pub kind: ToyConstraint,
    pub sigma: f64,
}

impl Oracle for ToyConstraintOracle {
    fn sample(&self, token: &SampleToken) -> Vec<f64> {
        vec![gaussian(token, self.sigma)]
    }

    fn eval_sample(&self, x: &[f64], xi: &[f64]) -> Result<Evaluation> {
        let v = self.expected_value(x).expect("closed form") + xi[0];
        let g = match self.kind {
            ToyConstraint::Linear => 1.0,
            ToyConstraint::Quadratic => x[0],
        };
        Ok((v, vec![g]))
    }

    fn constants(&self) -> OracleConstants {
        let mu = match self.kind {
            ToyConstraint::Linear => 0.0,
            ToyConstraint::Quadratic => 1.0,
        };
        OracleConstants::exact(1.0, mu, self.sigma)
    }

    fn expected_value(&self, x: &[f64]) -> Option<f64> {
        Some(match self.kind {
            ToyConstraint::Linear => x[0] - 0.3,
            ToyConstraint::Quadratic => 0.5 * (x[0] * x[0] - 0.09),
        })
    }

    fn expected_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![match self.kind {
            ToyConstraint::Linear => 1.0,
            ToyConstraint::Quadratic => x[0],
        }])
    }
}

pub fn make_toy(kind: ToyConstraint, sigma: f64) -> Result<CoupledProblem> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("noise scale must be nonnegative, got {sigma}")));
    }
    Ok(CoupledProblem {
        name: "toy".into(),
        phi: Arc::new(ToyPhi { sigma }),
        constraint: Arc::new(ToyConstraintOracle { kind, sigma }),
        gx: ProxGeometry::cube(1, 0.0, 1.0)?,
        gy: ProxGeometry::cube(1, 0.0, 1.0)?,
        shared_stream: false,
    })
}
