use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{CoupledOracle, Oracle, SampleStream};

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        // Welford's update keeps the variance stable for long samples.
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            let delta = v - mean;
            mean += delta / n as f64;
            m2 += delta * (v - mean);
        }
        let se = if n >= 2 { (m2.max(0.0) / (n as f64 - 1.0) / n as f64).sqrt() } else { 0.0 };
        Self { mean, se, n }
    }
}

/// Mean and standard error of `oracle` values at `x` over `n_samples`
/// realizations of `stream`.
pub fn mc_estimate(oracle: &dyn Oracle, x: &[f64], n_samples: usize, stream: &mut SampleStream) -> Result<Estimate> {
    if n_samples < 2 {
        return Err(Error::Config("Monte-Carlo estimate needs at least 2 samples".into()));
    }
    let mut values = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        values.push(oracle.eval(x, &stream.draw())?.0);
    }
    Ok(Estimate::from_values(values))
}

pub fn mc_estimate_coupled(
    oracle: &dyn CoupledOracle,
    x: &[f64],
    y: &[f64],
    n_samples: usize,
    stream: &mut SampleStream,
) -> Result<Estimate> {
    if n_samples < 2 {
        return Err(Error::Config("Monte-Carlo estimate needs at least 2 samples".into()));
    }
    let mut values = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        values.push(oracle.eval(x, y, &stream.draw())?.0);
    }
    Ok(Estimate::from_values(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_values_have_zero_se() {
        let e = Estimate::from_values([3.0; 10]);
        assert_eq!(e.mean, 3.0);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn known_se() {
        // Sample variance of {1,2,3,4} is 5/3.
        let e = Estimate::from_values([1.0, 2.0, 3.0, 4.0]);
        assert!((e.mean - 2.5).abs() < 1e-15);
        assert!((e.se - (5.0 / 3.0 / 4.0f64).sqrt()).abs() < 1e-15);
    }
}
