//! Stochastic first-order oracles and counter-based sample streams.
//!
//! A realization is identified by a [`SampleToken`] `(seed, stream_id,
//! counter)`. The token deterministically seeds a ChaCha generator, so the
//! same token always yields the same realization regardless of thread or
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::ProxGeometry;

/// Safety margin applied to pilot estimates of `M`.
pub const M_INFLATION: f64 = 1.5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleToken {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

impl SampleToken {
    /// Generator for this realization.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = splitmix64(self.seed) ^ splitmix64(self.stream_id.wrapping_add(0x5851_F42D_4C95_7F2D));
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.counter);
        rng
    }
}

/// Roles of the streams owned by one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    Constraint = 0,
    Objective = 1,
    Output = 2,
    Evaluation = 3,
    Validation = 4,
    Instance = 5,
    Pilot = 6,
}

/// Stream id for `role` within sub-run `run` of a trial.
pub fn stream_id(role: StreamRole, run: u64) -> u64 {
    run.wrapping_mul(16).wrapping_add(role as u64)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
}

impl SampleStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id, counter: 0 }
    }

    pub fn for_role(seed: u64, role: StreamRole, run: u64) -> Self {
        Self::new(seed, stream_id(role, run))
    }

    pub fn draw(&mut self) -> SampleToken {
        let t = SampleToken {
            seed: self.seed,
            stream_id: self.stream_id,
            counter: self.counter,
        };
        self.counter += 1;
        t
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn reset(&mut self) {
        self.counter = 0;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> u64 {
        self.stream_id
    }
}

/// Where a declared constant came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSource {
    /// Closed-form bound for the instance.
    Exact,
    /// Pilot estimate with the inflation margin.
    Estimated,
    /// Supplied by the user.
    Declared,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConstants {
    /// `E||F'||_*^2 <= M^2`.
    pub m: f64,
    /// Strong convexity modulus (0 if merely convex).
    pub mu: f64,
    /// Noise scale of the sampled values.
    pub sigma: f64,
    pub source: ConstantSource,
}

impl OracleConstants {
    pub fn exact(m: f64, mu: f64, sigma: f64) -> Self {
        Self { m, mu, sigma, source: ConstantSource::Exact }
    }
}

/// `(value, subgradient)` pair returned by every oracle.
pub type Evaluation = (f64, Vec<f64>);

/// Stochastic oracle for a function `E[F(x, ξ)]` over a single variable.
///
/// Realizations are plain vectors: the oracle first materializes `ξ` from a
/// token with [`Oracle::sample`] and then evaluates at it. Keeping the two
/// steps separate lets a frozen sample be averaged later.
pub trait Oracle: Send + Sync {
    fn sample(&self, token: &SampleToken) -> Vec<f64>;

    fn eval_sample(&self, x: &[f64], xi: &[f64]) -> Result<Evaluation>;

    fn constants(&self) -> OracleConstants;

    fn eval(&self, x: &[f64], token: &SampleToken) -> Result<Evaluation> {
        self.eval_sample(x, &self.sample(token))
    }

    /// Exact expectation, when the oracle knows it in closed form.
    fn expected_value(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Exact gradient of the expectation, when known.
    fn expected_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Oracle for `Φ(x, y, ζ)` whose subgradient is taken in `y` only.
pub trait CoupledOracle: Send + Sync {
    fn sample(&self, token: &SampleToken) -> Vec<f64>;

    fn eval_sample(&self, x: &[f64], y: &[f64], zeta: &[f64]) -> Result<Evaluation>;

    fn constants(&self) -> OracleConstants;

    fn eval(&self, x: &[f64], y: &[f64], token: &SampleToken) -> Result<Evaluation> {
        self.eval_sample(x, y, &self.sample(token))
    }

    /// `φ(x, y) = E Φ(x, y, ζ)` in closed form, when known.
    fn expected_value(&self, _x: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }

    /// `min_y φ(x, y)`, when known.
    fn optimal_value(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// Pilot estimates `(M̂, σ̂)`.
///
/// `M̂²` is the mean squared dual norm of subgradients over `pilot_size`
/// random points of the set, one realization each, and `M̂` is then inflated
/// by [`M_INFLATION`]. `σ̂` is the sample standard deviation of values at the
/// prox-center.
pub fn estimate_constants(
    oracle: &dyn Oracle,
    geometry: &ProxGeometry,
    pilot_size: usize,
    stream: &mut SampleStream,
) -> Result<(f64, f64)> {
    assert!(pilot_size >= 2, "pilot size must be at least 2");
    let mut point_rng = stream.draw().rng();
    let mut sq = 0.0;
    for _ in 0..pilot_size {
        let x = geometry.sample_point(&mut point_rng);
        let (_, g) = oracle.eval(&x, &stream.draw())?;
        let n = geometry.dual_norm(&g);
        sq += n * n;
    }
    let m_hat = M_INFLATION * (sq / pilot_size as f64).sqrt();

    let center = geometry.prox_center();
    let mut values = Vec::with_capacity(pilot_size);
    for _ in 0..pilot_size {
        values.push(oracle.eval(center, &stream.draw())?.0);
    }
    Ok((m_hat, sample_sd(&values)))
}

/// Pilot estimate of `M_Φ` for a coupled oracle over random `(x, y)` pairs.
pub fn estimate_coupled_m(
    oracle: &dyn CoupledOracle,
    gx: &ProxGeometry,
    gy: &ProxGeometry,
    pilot_size: usize,
    stream: &mut SampleStream,
) -> Result<f64> {
    assert!(pilot_size >= 2, "pilot size must be at least 2");
    let mut point_rng = stream.draw().rng();
    let mut sq = 0.0;
    for _ in 0..pilot_size {
        let x = gx.sample_point(&mut point_rng);
        let y = gy.sample_point(&mut point_rng);
        let (_, g) = oracle.eval(&x, &y, &stream.draw())?;
        let n = gy.dual_norm(&g);
        sq += n * n;
    }
    Ok(M_INFLATION * (sq / pilot_size as f64).sqrt())
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    var.max(0.0).sqrt()
}
