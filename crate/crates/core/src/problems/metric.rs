//! Joint metric learning and classification.
//!
//! The parameter is a PSD metric `A` with `Tr A <= C` that should reproduce
//! similarity measurements `b ≈ zᵀAz` for `z = u_i - u_j`; the decision is a
//! linear classifier `w` acting on features mapped by `A^{1/2}`, trained with
//! the λ-regularized hinge loss.

use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::CoupledProblem;
use crate::error::{Error, Result};
use crate::geometry::ProxGeometry;
use crate::linalg;
use crate::oracle::{
    estimate_coupled_m, estimate_constants, ConstantSource, CoupledOracle, Evaluation, Oracle, OracleConstants,
    SampleStream, SampleToken, StreamRole,
};

/// Pilot size used for `M_G` and `M_Φ`.
pub const METRIC_PILOT: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub d: usize,
    /// Trace cap `C`.
    pub cap: f64,
    pub lambda: f64,
    /// Trace of the hidden metric.
    #[serde(default = "default_true_trace")]
    pub true_trace: f64,
    /// Rank of the hidden metric.
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Standard deviation of the similarity measurement noise.
    #[serde(default = "default_pair_noise")]
    pub pair_noise: f64,
    /// Probability of flipping a label.
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
}

fn default_true_trace() -> f64 {
    1.0
}
fn default_rank() -> usize {
    3
}
fn default_pair_noise() -> f64 {
    0.05
}
fn default_label_noise() -> f64 {
    0.05
}

impl MetricSpec {
    pub fn new(d: usize, cap: f64, lambda: f64) -> Self {
        Self {
            d,
            cap,
            lambda,
            true_trace: default_true_trace(),
            rank: default_rank(),
            pair_noise: default_pair_noise(),
            label_noise: default_label_noise(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::validation("d", "feature dimension must be at least 2"));
        }
        if !(self.cap > 0.0 && self.cap.is_finite()) {
            return Err(Error::validation("cap", "trace cap must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation("lambda", "regularization must be positive"));
        }
        if !(self.true_trace > 0.0 && self.true_trace <= self.cap) {
            return Err(Error::validation("true_trace", "must lie in (0, cap]"));
        }
        if self.rank == 0 || self.rank > self.d {
            return Err(Error::validation("rank", "must lie in 1..=d"));
        }
        if self.pair_noise.is_nan() || self.pair_noise < 0.0 {
            return Err(Error::validation("pair_noise", "must be nonnegative"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::validation("label_noise", "must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Hidden ground truth shared by both oracles.
#[derive(Clone, Debug)]
pub struct MetricTruth {
    pub spec: MetricSpec,
    pub a_true: Vec<f64>,
    pub a_true_sqrt: Vec<f64>,
    pub w_true: Vec<f64>,
}

impl MetricTruth {
    pub fn generate(spec: MetricSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let d = spec.d;
        let mut rng = SampleStream::for_role(seed, StreamRole::Instance, 3).draw().rng();
        let b: Vec<f64> = (0..d * spec.rank).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = (0..spec.rank).map(|k| b[i * spec.rank + k] * b[j * spec.rank + k]).sum();
            }
        }
        let tr = linalg::trace(&a, d);
        for v in &mut a {
            *v *= spec.true_trace / tr;
        }
        let a_true_sqrt = linalg::sym_sqrt(&a, d);
        let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let wn = linalg::norm2(&w);
        let w_true = w.iter().map(|v| v / wn).collect();
        Ok(Self { spec, a_true: a, a_true_sqrt, w_true })
    }

    fn features<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.spec.d).map(|_| StandardNormal.sample(rng)).collect()
    }

    /// Similarity sample `(u_i, u_j, b)` flattened. The first feature vector
    /// is drawn first so a shared token couples it with the labeled sample.
    pub fn pair_sample(&self, token: &SampleToken) -> Vec<f64> {
        let mut rng = token.rng();
        let d = self.spec.d;
        let ui = self.features(&mut rng);
        let uj = self.features(&mut rng);
        let z = linalg::sub(&ui, &uj);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let b = (linalg::quad_form(&self.a_true, &z, d) + self.spec.pair_noise * noise).max(0.0);
        let mut out = ui;
        out.extend(uj);
        out.push(b);
        out
    }

    /// Labeled sample `(u, v)` flattened.
    pub fn label_sample(&self, token: &SampleToken) -> Vec<f64> {
        let mut rng = token.rng();
        let d = self.spec.d;
        let mut u = self.features(&mut rng);
        let theta = linalg::mat_vec(&self.a_true_sqrt, &u, d);
        let mut v = if linalg::dot(&self.w_true, &theta) >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < self.spec.label_noise {
            v = -v;
        }
        u.push(v);
        u
    }
}

/// `G(A, (u_i, u_j, b)) = |zᵀAz - b|` with subgradient `sign(·) zzᵀ`.
#[derive(Clone, Debug)]
pub struct MetricConstraint {
    pub truth: Arc<MetricTruth>,
    pub constants: OracleConstants,
}

impl Oracle for MetricConstraint {
    fn sample(&self, token: &SampleToken) -> Vec<f64> {
        self.truth.pair_sample(token)
    }

    fn eval_sample(&self, a: &[f64], s: &[f64]) -> Result<Evaluation> {
        let d = self.truth.spec.d;
        let z = linalg::sub(&s[..d], &s[d..2 * d]);
        let r = linalg::quad_form(a, &z, d) - s[2 * d];
        let sign = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        let mut g = vec![0.0; d * d];
        if sign != 0.0 {
            for i in 0..d {
                for j in 0..d {
                    g[i * d + j] = sign * z[i] * z[j];
                }
            }
        }
        Ok((r.abs(), g))
    }

    fn constants(&self) -> OracleConstants {
        self.constants
    }
}

/// `Φ(A, w, (u, v)) = max{0, 1 - v<w, A^{1/2}u>} + λ/2 ||w||²`, subgradient
/// in `w`. The square root of the most recent `A` is cached.
#[derive(Debug)]
pub struct MetricObjective {
    pub truth: Arc<MetricTruth>,
    pub constants: OracleConstants,
    cache: Mutex<Option<(Vec<f64>, Vec<f64>)>>,
}

impl MetricObjective {
    pub fn new(truth: Arc<MetricTruth>, constants: OracleConstants) -> Self {
        Self { truth, constants, cache: Mutex::new(None) }
    }

    pub fn sqrt_of(&self, a: &[f64]) -> Vec<f64> {
        let d = self.truth.spec.d;
        let mut guard = self.cache.lock().expect("cache lock");
        if let Some((key, root)) = guard.as_ref() {
            if key.as_slice() == a {
                return root.clone();
            }
        }
        let root = linalg::sym_sqrt(a, d);
        *guard = Some((a.to_vec(), root.clone()));
        root
    }
}

impl CoupledOracle for MetricObjective {
    fn sample(&self, token: &SampleToken) -> Vec<f64> {
        self.truth.label_sample(token)
    }

    fn eval_sample(&self, a: &[f64], w: &[f64], s: &[f64]) -> Result<Evaluation> {
        let d = self.truth.spec.d;
        let lambda = self.truth.spec.lambda;
        let root = self.sqrt_of(a);
        let theta = linalg::mat_vec(&root, &s[..d], d);
        let v = s[d];
        let margin = v * linalg::dot(w, &theta);
        let reg = 0.5 * lambda * linalg::dot(w, w);
        let mut g: Vec<f64> = w.iter().map(|wi| lambda * wi).collect();
        let hinge = if margin < 1.0 {
            for (gi, ti) in g.iter_mut().zip(&theta) {
                *gi -= v * ti;
            }
            1.0 - margin
        } else {
            0.0
        };
        Ok((hinge + reg, g))
    }

    fn constants(&self) -> OracleConstants {
        self.constants
    }
}

/// Build the coupled problem with pilot estimates of `M_G` and `M_Φ`. The
/// classifier lives in the ball of radius `2/sqrt(λ)`.
pub fn make_metric_problem(spec: MetricSpec, seed: u64) -> Result<(CoupledProblem, Arc<MetricTruth>)> {
    let truth = Arc::new(MetricTruth::generate(spec, seed)?);
    let s = &truth.spec;
    let gx = ProxGeometry::psd_trace_ball(s.d, s.cap)?;
    let gy = ProxGeometry::euclidean_ball(vec![0.0; s.d], 2.0 / s.lambda.sqrt())?;
    let placeholder = OracleConstants { m: 1.0, mu: 0.0, sigma: 0.0, source: ConstantSource::Estimated };
    let mut constraint = MetricConstraint { truth: truth.clone(), constants: placeholder };
    let mut pilot = SampleStream::for_role(seed, StreamRole::Pilot, 0);
    let (m_g, sigma) = estimate_constants(&constraint, &gx, METRIC_PILOT, &mut pilot)?;
    constraint.constants = OracleConstants { m: m_g, sigma, ..placeholder };
    let probe = MetricObjective::new(truth.clone(), placeholder);
    let m_phi = estimate_coupled_m(&probe, &gx, &gy, METRIC_PILOT, &mut pilot)?;
    let objective = MetricObjective::new(truth.clone(), OracleConstants { m: m_phi, mu: s.lambda, ..placeholder });
    let problem = CoupledProblem {
        name: "metric".into(),
        phi: Arc::new(objective),
        constraint: Arc::new(constraint),
        gx,
        gy,
        shared_stream: true,
    };
    Ok((problem, truth))
}
