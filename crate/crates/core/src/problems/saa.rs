//! Sample average approximation: a frozen sample turns a stochastic oracle
//! into a deterministic one.

use std::sync::Arc;

use super::StochasticProblem;
use crate::error::{Error, Result};
use crate::oracle::{Evaluation, Oracle, OracleConstants, SampleStream, SampleToken};

/// Deterministic oracle averaging an inner oracle over a fixed sample. Every
/// evaluation touches the whole sample.
#[derive(Clone)]
pub struct FrozenOracle {
    inner: Arc<dyn Oracle>,
    samples: Vec<Vec<f64>>,
}

impl FrozenOracle {
    pub fn new(inner: Arc<dyn Oracle>, stream: &mut SampleStream, n_sample: usize) -> Result<Self> {
        if n_sample == 0 {
            return Err(Error::Config("SAA sample size must be at least 1".into()));
        }
        let samples = (0..n_sample).map(|_| inner.sample(&stream.draw())).collect();
        Ok(Self { inner, samples })
    }

    pub fn from_samples(inner: Arc<dyn Oracle>, samples: Vec<Vec<f64>>) -> Self {
        Self { inner, samples }
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    fn average(&self, x: &[f64]) -> Result<Evaluation> {
        let n = self.samples.len() as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; x.len()];
        for s in &self.samples {
            let (v, g) = self.inner.eval_sample(x, s)?;
            value += v;
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        for g in &mut grad {
            *g /= n;
        }
        Ok((value / n, grad))
    }
}

impl Oracle for FrozenOracle {
    fn sample(&self, _token: &SampleToken) -> Vec<f64> {
        Vec::new()
    }

    fn eval_sample(&self, x: &[f64], _xi: &[f64]) -> Result<Evaluation> {
        self.average(x)
    }

    fn constants(&self) -> OracleConstants {
        OracleConstants { sigma: 0.0, ..self.inner.constants() }
    }

    fn expected_value(&self, x: &[f64]) -> Option<f64> {
        self.average(x).ok().map(|e| e.0)
    }

    fn expected_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.average(x).ok().map(|e| e.1)
    }
}

/// Replace both oracles by their averages over one frozen sample of size
/// `n_sample`. Objective and constraint share the realizations, so a linear
/// objective becomes `-μ̂ᵀx` with `μ̂` the frozen-sample mean.
pub fn freeze_saa(problem: &StochasticProblem, n_sample: usize, stream: &mut SampleStream) -> Result<StochasticProblem> {
    if n_sample == 0 {
        return Err(Error::Config("SAA sample size must be at least 1".into()));
    }
    let tokens: Vec<SampleToken> = (0..n_sample).map(|_| stream.draw()).collect();
    let constraint_samples = tokens.iter().map(|t| problem.constraint.sample(t)).collect();
    let objective_samples = tokens.iter().map(|t| problem.objective.sample(t)).collect();
    Ok(StochasticProblem {
        name: format!("{}_saa{}", problem.name, n_sample),
        objective: Arc::new(FrozenOracle::from_samples(problem.objective.clone(), objective_samples)),
        constraint: Arc::new(FrozenOracle::from_samples(problem.constraint.clone(), constraint_samples)),
        geometry: problem.geometry.clone(),
        optimum: None,
    })
}
