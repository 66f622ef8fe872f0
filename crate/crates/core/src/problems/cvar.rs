//! Mean-return maximization under a CVaR constraint,
//! `max μᵀx s.t. τ + (1/β) E[-ξᵀx - τ]_+ <= 0` over the simplex, with `τ`
//! restricted to a bounded interval.

use std::sync::Arc;

use super::StochasticProblem;
use crate::error::{Error, Result};
use crate::geometry::ProxGeometry;
use crate::linalg;
use crate::oracle::{
    estimate_constants, ConstantSource, Evaluation, Oracle, OracleConstants, SampleStream, SampleToken, StreamRole,
};

use super::factor::ReturnModel;

/// Pilot size used to estimate `M_F` and `M_G`.
pub const CVAR_PILOT: usize = 200;

/// `F((x, τ), ξ) = -ξᵀx`.
#[derive(Clone, Debug)]
pub struct CvarObjective {
    pub model: Arc<ReturnModel>,
    pub constants: OracleConstants,
}

impl Oracle for CvarObjective {
    fn sample(&self, token: &SampleToken) -> Vec<f64> {
        self.model.draw(token)
    }

    fn eval_sample(&self, point: &[f64], xi: &[f64]) -> Result<Evaluation> {
        let n = xi.len();
        let mut g: Vec<f64> = xi.iter().map(|v| -v).collect();
        g.push(0.0);
        Ok((-linalg::dot(xi, &point[..n]), g))
    }

    fn constants(&self) -> OracleConstants {
        self.constants
    }

    fn expected_value(&self, point: &[f64]) -> Option<f64> {
        let mu = self.model.mean();
        Some(-linalg::dot(&mu, &point[..mu.len()]))
    }
}

/// `G((x, τ), ξ) = τ + (1/β)[-ξᵀx - τ]_+`. At the kink the inactive-side
/// subgradient is returned.
#[derive(Clone, Debug)]
pub struct CvarConstraint {
    pub model: Arc<ReturnModel>,
    pub beta: f64,
    pub constants: OracleConstants,
}

impl Oracle for CvarConstraint {
    fn sample(&self, token: &SampleToken) -> Vec<f64> {
        self.model.draw(token)
    }

    fn eval_sample(&self, point: &[f64], xi: &[f64]) -> Result<Evaluation> {
        let n = xi.len();
        let tau = point[n];
        let loss = -linalg::dot(xi, &point[..n]) - tau;
        let inv = 1.0 / self.beta;
        if loss > 0.0 {
            let mut g: Vec<f64> = xi.iter().map(|v| -v * inv).collect();
            g.push(1.0 - inv);
            Ok((tau + inv * loss, g))
        } else {
            let mut g = vec![0.0; n];
            g.push(1.0);
            Ok((tau, g))
        }
    }

    fn constants(&self) -> OracleConstants {
        self.constants
    }
}

/// `[μ̲ + sqrt(β/(1-β)) σ, μ̄ + sqrt((1-β)/β) σ]` with `μ̲`, `μ̄` the extreme
/// values of `-ξ̄ᵀy` over the simplex.
pub fn tau_interval(mean: &[f64], beta: f64, sigma: f64) -> (f64, f64) {
    let max = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let lo = -max + (beta / (1.0 - beta)).sqrt() * sigma;
    let hi = -min + ((1.0 - beta) / beta).sqrt() * sigma;
    (lo, hi)
}

/// Build the CVaR problem. The τ-interval uses the largest per-asset return
/// standard deviation as its dispersion constant; `M_F` and `M_G` are pilot
/// estimates drawn from `seed`.
pub fn make_cvar(model: ReturnModel, beta: f64, seed: u64) -> Result<StochasticProblem> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::validation("beta", format!("must lie in (0, 1), got {beta}")));
    }
    let model = Arc::new(model);
    let n = model.n_assets();
    let sigma = model.asset_sd().into_iter().fold(0.0, f64::max);
    let (lo, hi) = tau_interval(&model.mean(), beta, sigma);
    let geometry = ProxGeometry::product(vec![ProxGeometry::simplex(n)?, ProxGeometry::euclidean_box(vec![lo], vec![hi])?])?;

    let placeholder = OracleConstants { m: 1.0, mu: 0.0, sigma: 0.0, source: ConstantSource::Estimated };
    let mut objective = CvarObjective { model: model.clone(), constants: placeholder };
    let mut constraint = CvarConstraint { model, beta, constants: placeholder };
    let mut pilot = SampleStream::for_role(seed, StreamRole::Pilot, 0);
    let (m_f, s_f) = estimate_constants(&objective, &geometry, CVAR_PILOT, &mut pilot)?;
    let (m_g, s_g) = estimate_constants(&constraint, &geometry, CVAR_PILOT, &mut pilot)?;
    objective.constants = OracleConstants { m: m_f, sigma: s_f, ..placeholder };
    constraint.constants = OracleConstants { m: m_g, sigma: s_g, ..placeholder };
    Ok(StochasticProblem {
        name: "cvar".into(),
        objective: Arc::new(objective),
        constraint: Arc::new(constraint),
        geometry,
        optimum: None,
    })
}
