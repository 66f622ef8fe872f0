//! Benchmark problems whose optimum is known from a deterministic reference
//! solver, plus the small closed-form oracles used throughout the tests.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Optimum, StochasticProblem};
use crate::error::{Error, Result};
use crate::geometry::{GeometryKind, ProxGeometry};
use crate::linalg;
use crate::oracle::{Evaluation, Oracle, OracleConstants, SampleStream, SampleToken, StreamRole};

fn gaussian_vec(token: &SampleToken, dim: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; dim];
    }
    let mut rng = token.rng();
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// `F(x, ζ) = ½||x - c - ζ||²` with `ζ ~ N(0, σ² I)`.
#[derive(Clone, Debug)]
pub struct QuadraticOracle {
    pub c: Vec<f64>,
    pub sigma: f64,
    pub m: f64,
}

impl Oracle for QuadraticOracle {
    fn sample(&self, token: &SampleToken) -> Vec<f64> {
        gaussian_vec(token, self.c.len(), self.sigma)
    }

    fn eval_sample(&self, x: &[f64], zeta: &[f64]) -> Result<Evaluation> {
        let r: Vec<f64> = x.iter().zip(&self.c).zip(zeta).map(|((a, b), z)| a - b - z).collect();
        Ok((0.5 * linalg::dot(&r, &r), r))
    }

    fn constants(&self) -> OracleConstants {
        OracleConstants::exact(self.m, 1.0, self.sigma)
    }

    fn expected_value(&self, x: &[f64]) -> Option<f64> {
        let d = linalg::sub(x, &self.c);
        Some(0.5 * linalg::dot(&d, &d) + 0.5 * self.c.len() as f64 * self.sigma * self.sigma)
    }

    fn expected_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(linalg::sub(x, &self.c))
    }
}

/// `F(x, ζ) = ||x - c|| + <ζ, x>` with `ζ ~ N(0, σ² I)`.
#[derive(Clone, Debug)]
pub struct NormOracle {
    pub c: Vec<f64>,
    pub sigma: f64,
}

impl NormOracle {
    fn unit(&self, x: &[f64]) -> Vec<f64> {
        let d = linalg::sub(x, &self.c);
        let n = linalg::norm2(&d);
        if n > 0.0 {
            d.iter().map(|v| v / n).collect()
        } else {
            vec![0.0; d.len()]
        }
    }
}

impl Oracle for NormOracle {
    fn sample(&self, token: &SampleToken) -> Vec<f64> {
        gaussian_vec(token, self.c.len(), self.sigma)
    }

    fn eval_sample(&self, x: &[f64], zeta: &[f64]) -> Result<Evaluation> {
        let value = linalg::norm2(&linalg::sub(x, &self.c)) + linalg::dot(zeta, x);
        let g = self.unit(x).iter().zip(zeta).map(|(u, z)| u + z).collect();
        Ok((value, g))
    }

    fn constants(&self) -> OracleConstants {
        let d = self.c.len() as f64;
        OracleConstants::exact((1.0 + d * self.sigma * self.sigma).sqrt(), 0.0, self.sigma)
    }

    fn expected_value(&self, x: &[f64]) -> Option<f64> {
        Some(linalg::norm2(&linalg::sub(x, &self.c)))
    }

    fn expected_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.unit(x))
    }
}

/// `G(x, ξ) = <a, x> - b + ξ` with scalar `ξ ~ N(0, σ²)`.
#[derive(Clone, Debug)]
pub struct LinearOracle {
    pub a: Vec<f64>,
    pub b: f64,
    pub sigma: f64,
}

impl Oracle for LinearOracle {
    fn sample(&self, token: &SampleToken) -> Vec<f64> {
        gaussian_vec(token, 1, self.sigma)
    }

    fn eval_sample(&self, x: &[f64], xi: &[f64]) -> Result<Evaluation> {
        Ok((linalg::dot(&self.a, x) - self.b + xi[0], self.a.clone()))
    }

    fn constants(&self) -> OracleConstants {
        OracleConstants::exact(linalg::norm2(&self.a), 0.0, self.sigma)
    }

    fn expected_value(&self, x: &[f64]) -> Option<f64> {
        Some(linalg::dot(&self.a, x) - self.b)
    }

    fn expected_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        Some(self.a.clone())
    }
}

/// `G(x, ξ) = ½||x - e||² - r²/2 + ξ` with scalar `ξ ~ N(0, σ²)`.
#[derive(Clone, Debug)]
pub struct BallConstraintOracle {
    pub e: Vec<f64>,
    pub r: f64,
    pub sigma: f64,
    pub m: f64,
}

impl Oracle for BallConstraintOracle {
    fn sample(&self, token: &SampleToken) -> Vec<f64> {
        gaussian_vec(token, 1, self.sigma)
    }

    fn eval_sample(&self, x: &[f64], xi: &[f64]) -> Result<Evaluation> {
        let d = linalg::sub(x, &self.e);
        Ok((0.5 * linalg::dot(&d, &d) - 0.5 * self.r * self.r + xi[0], d))
    }

    fn constants(&self) -> OracleConstants {
        OracleConstants::exact(self.m, 1.0, self.sigma)
    }

    fn expected_value(&self, x: &[f64]) -> Option<f64> {
        let d = linalg::sub(x, &self.e);
        Some(0.5 * linalg::dot(&d, &d) - 0.5 * self.r * self.r)
    }

    fn expected_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(linalg::sub(x, &self.e))
    }
}

type EvalFn = dyn Fn(&[f64]) -> Evaluation + Send + Sync;

/// Deterministic oracle from a closure returning `(value, gradient)`.
#[derive(Clone)]
pub struct FnOracle {
    f: Arc<EvalFn>,
    constants: OracleConstants,
}

impl FnOracle {
    pub fn new(m: f64, mu: f64, f: impl Fn(&[f64]) -> Evaluation + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), constants: OracleConstants::exact(m, mu, 0.0) }
    }
}

impl Oracle for FnOracle {
    fn sample(&self, _token: &SampleToken) -> Vec<f64> {
        Vec::new()
    }

    fn eval_sample(&self, x: &[f64], _xi: &[f64]) -> Result<Evaluation> {
        Ok((self.f)(x))
    }

    fn constants(&self) -> OracleConstants {
        self.constants
    }

    fn expected_value(&self, x: &[f64]) -> Option<f64> {
        Some((self.f)(x).0)
    }

    fn expected_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some((self.f)(x).1)
    }
}

fn clip(y: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    y.iter().zip(lo.iter().zip(hi)).map(|(v, (l, u))| v.clamp(*l, *u)).collect()
}

fn box_bounds(geom: &ProxGeometry) -> Result<(&[f64], &[f64])> {
    match geom.kind() {
        GeometryKind::EuclideanBox { lower, upper } => Ok((lower, upper)),
        _ => Err(Error::Config("reference solver needs a box geometry".into())),
    }
}

/// Euclidean projection of `c` onto `{l <= x <= u, <a, x> <= b}`.
///
/// The KKT point is `clip(c - θ a)` for the multiplier `θ >= 0` that makes
/// the half-space constraint active, found by bisection.
pub fn project_box_halfspace(c: &[f64], lo: &[f64], hi: &[f64], a: &[f64], b: f64) -> Result<Vec<f64>> {
    let at = |theta: f64| {
        let y: Vec<f64> = c.iter().zip(a).map(|(ci, ai)| ci - theta * ai).collect();
        clip(&y, lo, hi)
    };
    let x0 = at(0.0);
    if linalg::dot(a, &x0) <= b {
        return Ok(x0);
    }
    let mut hi_t = 1.0;
    while linalg::dot(a, &at(hi_t)) > b {
        hi_t *= 2.0;
        if hi_t > 1e12 {
            return Err(Error::Domain("half-space does not meet the box".into()));
        }
    }
    let mut lo_t = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo_t + hi_t);
        if linalg::dot(a, &at(mid)) > b {
            lo_t = mid;
        } else {
            hi_t = mid;
        }
    }
    Ok(at(hi_t))
}

/// Euclidean projection of `c` onto `{l <= x <= u, ||x - e|| <= r}` via the
/// multiplier form `clip((c + λe) / (1 + λ))`.
pub fn project_box_ball(c: &[f64], lo: &[f64], hi: &[f64], e: &[f64], r: f64) -> Result<Vec<f64>> {
    let at = |lam: f64| {
        let y: Vec<f64> = c.iter().zip(e).map(|(ci, ei)| (ci + lam * ei) / (1.0 + lam)).collect();
        clip(&y, lo, hi)
    };
    let dist = |x: &[f64]| linalg::norm2(&linalg::sub(x, e));
    let x0 = at(0.0);
    if dist(&x0) <= r {
        return Ok(x0);
    }
    let mut hi_l = 1.0;
    while dist(&at(hi_l)) > r {
        hi_l *= 2.0;
        if hi_l > 1e15 {
            return Err(Error::Domain("ball does not meet the box".into()));
        }
    }
    let mut lo_l = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo_l + hi_l);
        if dist(&at(mid)) > r {
            lo_l = mid;
        } else {
            hi_l = mid;
        }
    }
    Ok(at(hi_l))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    Convex,
    StronglyConvex,
}

/// Convex benchmark `min ||x - c|| s.t. <a, x> - b <= 0` over a box.
pub fn convex_benchmark(geometry: ProxGeometry, c: Vec<f64>, a: Vec<f64>, b: f64, sigma: f64) -> Result<StochasticProblem> {
    let (lo, hi) = box_bounds(&geometry)?;
    let x = project_box_halfspace(&c, lo, hi, &a, b)?;
    let f = linalg::norm2(&linalg::sub(&x, &c));
    Ok(StochasticProblem {
        name: "convex_benchmark".into(),
        objective: Arc::new(NormOracle { c, sigma }),
        constraint: Arc::new(LinearOracle { a, b, sigma }),
        geometry,
        optimum: Some(Optimum { x, f }),
    })
}

/// Strongly convex benchmark `min ½E||x - c - ζ||² s.t. ½||x - e||² - r²/2 <= 0`
/// over a box.
pub fn strong_benchmark(geometry: ProxGeometry, c: Vec<f64>, e: Vec<f64>, r: f64, sigma: f64) -> Result<StochasticProblem> {
    let (lo, hi) = box_bounds(&geometry)?;
    let far = |p: &[f64]| -> f64 {
        p.iter()
            .zip(lo.iter().zip(hi))
            .map(|(pi, (l, u))| (pi - l).abs().max((u - pi).abs()).powi(2))
            .sum()
    };
    let dim = c.len() as f64;
    let m_f = (far(&c) + dim * sigma * sigma).sqrt();
    let m_g = far(&e).sqrt();
    let x = project_box_ball(&c, lo, hi, &e, r)?;
    let d = linalg::sub(&x, &c);
    let f = 0.5 * linalg::dot(&d, &d) + 0.5 * dim * sigma * sigma;
    Ok(StochasticProblem {
        name: "strong_benchmark".into(),
        objective: Arc::new(QuadraticOracle { c, sigma, m: m_f }),
        constraint: Arc::new(BallConstraintOracle { e, r, sigma, m: m_g }),
        geometry,
        optimum: Some(Optimum { x, f }),
    })
}

/// Random benchmark instance on `[-1, 1]^dim`.
///
/// Convex kind: `c ~ U[-0.3, 0.3]^dim`, `a` a random unit vector and
/// `b = <a, c> - 0.3`, so the constraint binds at `x* = c - 0.3a` with unit
/// multiplier. Strongly convex kind: `e = ±0.65` per coordinate, `r = 1.9`
/// and `c = e + 0.3w` for a random unit `w`; the constraint is inactive at
/// `x* = c` while the prox-center is infeasible.
pub fn make_synthetic_benchmark(kind: BenchmarkKind, dim: usize, sigma: f64, seed: u64) -> Result<StochasticProblem> {
    if dim == 0 {
        return Err(Error::Config("benchmark dimension must be positive".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("noise scale must be nonnegative, got {sigma}")));
    }
    let mut rng = SampleStream::for_role(seed, StreamRole::Instance, 0).draw().rng();
    let geometry = ProxGeometry::cube(dim, -1.0, 1.0)?;
    let mut unit = || {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = linalg::norm2(&g).max(f64::MIN_POSITIVE);
        g.into_iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    match kind {
        BenchmarkKind::Convex => {
            let a = unit();
            let mut rng = SampleStream::for_role(seed, StreamRole::Instance, 1).draw().rng();
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.3..=0.3)).collect();
            let b = linalg::dot(&a, &c) - 0.3;
            convex_benchmark(geometry, c, a, b, sigma)
        }
        BenchmarkKind::StronglyConvex => {
            let w = unit();
            let mut rng = SampleStream::for_role(seed, StreamRole::Instance, 1).draw().rng();
            let e: Vec<f64> = (0..dim).map(|_| if rng.random::<bool>() { 0.65 } else { -0.65 }).collect();
            let c = e.iter().zip(&w).map(|(ei, wi)| ei + 0.3 * wi).collect();
            strong_benchmark(geometry, c, e, 1.9, sigma)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::SampleStream;

    #[test]
    fn quadratic_test_oracle() {
        let q = QuadraticOracle { c: vec![1.0, 0.0], sigma: 0.0, m: 1.0 };
        let tok = SampleStream::new(1, 0).draw();
        assert_eq!(q.eval(&[1.0, 0.0], &tok).unwrap(), (0.0, vec![0.0, 0.0]));
        assert_eq!(q.eval(&[0.0, 0.0], &tok).unwrap(), (0.5, vec![-1.0, 0.0]));
    }

    #[test]
    fn linear_test_oracle() {
        let g = LinearOracle { a: vec![1.0, 1.0], b: 1.0, sigma: 0.0 };
        assert_eq!(g.eval_sample(&[0.5, 0.5], &[0.0]).unwrap(), (0.0, vec![1.0, 1.0]));
        let (v, grad) = g.eval_sample(&[1.0, 1.0], &[0.2]).unwrap();
        assert!((v - 1.2).abs() < 1e-15);
        assert_eq!(grad, vec![1.0, 1.0]);
    }

    #[test]
    fn inactive_constraint_gives_center() {
        let geom = ProxGeometry::cube(3, -1.0, 1.0).unwrap();
        let p = convex_benchmark(geom, vec![0.1, -0.2, 0.3], vec![1.0, 0.0, 0.0], 1e6, 0.0).unwrap();
        assert_eq!(p.optimum.unwrap().x, vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn strong_noiseless_interior_optimum() {
        let geom = ProxGeometry::cube(2, -1.0, 1.0).unwrap();
        let p = strong_benchmark(geom, vec![0.2, 0.1], vec![0.0, 0.0], 1.0, 0.0).unwrap();
        let o = p.optimum.unwrap();
        assert_eq!(o.x, vec![0.2, 0.1]);
        assert_eq!(o.f, 0.0);
    }

    #[test]
    fn designed_instances() {
        let p = make_synthetic_benchmark(BenchmarkKind::Convex, 10, 0.5, 3).unwrap();
        let o = p.optimum.clone().unwrap();
        assert!((o.f - 0.3).abs() < 1e-9);
        assert!(p.constraint.expected_value(&o.x).unwrap().abs() < 1e-9);
        let s = make_synthetic_benchmark(BenchmarkKind::StronglyConvex, 10, 0.5, 3).unwrap();
        let o = s.optimum.clone().unwrap();
        assert!(s.constraint.expected_value(&o.x).unwrap() < -1.0);
        assert!(s.constraint.expected_value(s.geometry.prox_center()).unwrap() > 0.0);
    }
}
