//! Monte-Carlo estimate of the probability that a solver lands within given
//! tolerances of the optimum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{build_instance, exact_quality, solve_once};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub n: usize,
    pub eps_objective: f64,
    pub eps_constraint: f64,
    pub replications: usize,
    pub successes: usize,
    /// Replications whose run ended with an empty `B`; counted as failures.
    pub empty_b: usize,
    pub probability: f64,
    /// Binomial standard error.
    pub se: f64,
}

/// Run `replications` independent trials at the first budget of the grid,
/// with trial seeds `seeds[0] + r`, and count the outputs whose exact gap is
/// at most `eps_objective` and whose exact constraint value is at most
/// `eps_constraint`. Needs an instance with closed-form quality measures.
pub fn estimate_deviation_prob(
    cfg: &ExperimentConfig,
    eps_objective: f64,
    eps_constraint: f64,
    replications: usize,
) -> Result<DeviationReport> {
    cfg.validate()?;
    if replications == 0 {
        return Err(Error::validation("replications", "must be positive"));
    }
    if eps_objective.is_nan() || eps_constraint.is_nan() {
        return Err(Error::validation("eps", "tolerances must not be NaN"));
    }
    let instance = build_instance(cfg)?;
    let n = cfg.n_grid[0];
    let base = cfg.seeds[0];
    let outcomes: Result<Vec<Option<bool>>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| match solve_once(cfg, &instance, n, base.wrapping_add(r)) {
            Ok(solved) => match exact_quality(&instance, &solved) {
                (Some(gap), Some(g)) => Ok(Some(gap <= eps_objective && g <= eps_constraint)),
                _ => Err(Error::Config(format!(
                    "problem `{}` has no closed-form gap and constraint",
                    cfg.problem_kind()
                ))),
            },
            Err(e) if e.is_empty_feasible_set() => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let outcomes = outcomes?;
    let successes = outcomes.iter().filter(|o| **o == Some(true)).count();
    let empty_b = outcomes.iter().filter(|o| o.is_none()).count();
    let p = successes as f64 / replications as f64;
    Ok(DeviationReport {
        n,
        eps_objective,
        eps_constraint,
        replications,
        successes,
        empty_b,
        probability: p,
        se: (p * (1.0 - p) / replications as f64).sqrt(),
    })
}
