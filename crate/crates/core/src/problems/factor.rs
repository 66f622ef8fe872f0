//! Asset-return models: a linear factor model and an empirical model over
//! historical returns.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::{SampleStream, SampleToken, StreamRole};

/// `ξ = mean + L f + s ε` with `f ~ N(0, F)` and `ε ~ N(0, I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorModelSpec {
    pub n: usize,
    pub m: usize,
    /// `n x m` loadings, row-major.
    pub loadings: Vec<f64>,
    /// `m x m` factor covariance.
    pub factor_cov: Vec<f64>,
    pub idio_sd: f64,
    pub mean: Vec<f64>,
}

impl FactorModelSpec {
    /// `L F Lᵀ + s² I`, row-major `n x n`.
    pub fn covariance(&self) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let mut lf = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                lf[i * m + j] = (0..m).map(|k| self.loadings[i * m + k] * self.factor_cov[k * m + j]).sum();
            }
        }
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cov[i * n + j] = (0..m).map(|k| lf[i * m + k] * self.loadings[j * m + k]).sum();
            }
            cov[i * n + i] += self.idio_sd * self.idio_sd;
        }
        cov
    }

    pub fn asset_sd(&self) -> Vec<f64> {
        let cov = self.covariance();
        (0..self.n).map(|i| cov[i * self.n + i].sqrt()).collect()
    }
}

/// Random instance: standard-normal loadings scaled by `1/sqrt(m)`, identity
/// factor covariance, idiosyncratic scale 0.2 and means uniform on
/// `[0.9, 1.2]`.
pub fn generate_factor_instance(n: usize, m: usize, seed: u64) -> Result<FactorModelSpec> {
    if m == 0 || n < m {
        return Err(Error::Config(format!("need n >= m >= 1, got n = {n}, m = {m}")));
    }
    let mut rng = SampleStream::for_role(seed, StreamRole::Instance, 2).draw().rng();
    let scale = 1.0 / (m as f64).sqrt();
    let loadings = (0..n * m).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }).collect();
    let mut factor_cov = vec![0.0; m * m];
    for i in 0..m {
        factor_cov[i * m + i] = 1.0;
    }
    let mean = (0..n).map(|_| rng.random_range(0.9..=1.2)).collect();
    Ok(FactorModelSpec { n, m, loadings, factor_cov, idio_sd: 0.2, mean })
}

/// A return distribution the CVaR oracles can sample from.
#[derive(Clone, Debug)]
pub enum ReturnModel {
    Factor {
        spec: FactorModelSpec,
        /// Cholesky factor of the factor covariance.
        chol: Vec<f64>,
    },
    /// Uniform resampling of historical periods.
    Historical { assets: Vec<String>, rows: Vec<Vec<f64>> },
}

impl ReturnModel {
    pub fn factor(spec: FactorModelSpec) -> Result<Self> {
        if spec.loadings.len() != spec.n * spec.m
            || spec.factor_cov.len() != spec.m * spec.m
            || spec.mean.len() != spec.n
        {
            return Err(Error::Input("factor model arrays do not match n and m".into()));
        }
        let chol = linalg::cholesky(&spec.factor_cov, spec.m)
            .ok_or_else(|| Error::Input("factor covariance is not positive definite".into()))?;
        Ok(Self::Factor { spec, chol })
    }

    /// Load returns from CSV: a header of asset names, then one row of decimal
    /// returns per period.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let assets: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row: std::result::Result<Vec<f64>, _> = rec.iter().map(|v| v.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::Input(format!("row {}: {e}", i + 2)))?;
            if row.len() != assets.len() {
                return Err(Error::Input(format!("row {} has {} values for {} assets", i + 2, row.len(), assets.len())));
            }
            rows.push(row);
        }
        if rows.len() < 2 || assets.is_empty() {
            return Err(Error::Input("historical returns need at least one asset and two periods".into()));
        }
        Ok(Self::Historical { assets, rows })
    }

    pub fn n_assets(&self) -> usize {
        match self {
            Self::Factor { spec, .. } => spec.n,
            Self::Historical { assets, .. } => assets.len(),
        }
    }

    pub fn draw(&self, token: &SampleToken) -> Vec<f64> {
        let mut rng = token.rng();
        match self {
            Self::Factor { spec, chol } => {
                let m = spec.m;
                let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                let f: Vec<f64> = (0..m).map(|i| (0..=i).map(|k| chol[i * m + k] * z[k]).sum()).collect();
                (0..spec.n)
                    .map(|i| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        spec.mean[i] + linalg::dot(&spec.loadings[i * m..(i + 1) * m], &f) + spec.idio_sd * e
                    })
                    .collect()
            }
            Self::Historical { rows, .. } => rows[rng.random_range(0..rows.len())].clone(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            Self::Factor { spec, .. } => spec.mean.clone(),
            Self::Historical { rows, .. } => {
                let n = rows[0].len();
                let t = rows.len() as f64;
                (0..n).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / t).collect()
            }
        }
    }

    pub fn asset_sd(&self) -> Vec<f64> {
        match self {
            Self::Factor { spec, .. } => spec.asset_sd(),
            Self::Historical { rows, .. } => {
                let n = rows[0].len();
                (0..n)
                    .map(|j| crate::oracle::sample_sd(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
                    .collect()
            }
        }
    }
}
