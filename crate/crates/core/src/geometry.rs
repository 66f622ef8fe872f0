//! Feasible sets with their distance-generating functions.
//!
//! Every set carries a prox-center (the minimizer of its ω used for
//! diameter accounting) and, where it exists, the quadratic-growth constant
//! `Q` with `V(z, x) <= Q/2 ||z - x||^2`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Absolute slack used by every membership test.
pub const FEAS_TOL: f64 = 1e-10;

/// Smallest coordinate the entropy prox will return, so that iterates stay
/// in the interior after extreme steps.
const SIMPLEX_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub enum GeometryKind {
    /// `{l <= x <= u}` with `ω = ½||x||²`.
    EuclideanBox { lower: Vec<f64>, upper: Vec<f64> },
    /// `{||x - c|| <= r}` with `ω = ½||x||²`.
    EuclideanBall { center: Vec<f64>, radius: f64 },
    /// Unit simplex with the entropy `ω = Σ x ln x`, norm `ℓ1`.
    SimplexEntropy { dim: usize },
    /// `{A ⪰ 0, Tr A <= cap}` on `d x d` symmetric matrices, Frobenius ω.
    PsdTraceBall { d: usize, cap: f64 },
    /// Cartesian product; ω is additive across blocks.
    Product(Vec<ProxGeometry>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxGeometry {
    kind: GeometryKind,
    prox_center: Vec<f64>,
}

impl ProxGeometry {
    pub fn euclidean_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Input("box bounds must be nonempty and of equal length".into()));
        }
        if !linalg::all_finite(&lower) || !linalg::all_finite(&upper) {
            return Err(Error::Input("box bounds must be finite".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::Input("box lower bound exceeds upper bound".into()));
        }
        let center = lower.iter().zip(&upper).map(|(l, u)| 0.5 * (l + u)).collect();
        Ok(Self {
            kind: GeometryKind::EuclideanBox { lower, upper },
            prox_center: center,
        })
    }

    /// Box `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::euclidean_box(vec![lo; dim], vec![hi; dim])
    }

    pub fn euclidean_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || !linalg::all_finite(&center) {
            return Err(Error::Input("ball center must be nonempty and finite".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Input(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self {
            prox_center: center.clone(),
            kind: GeometryKind::EuclideanBall { center, radius },
        })
    }

    pub fn simplex(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("simplex dimension must be positive".into()));
        }
        Ok(Self {
            kind: GeometryKind::SimplexEntropy { dim },
            prox_center: vec![1.0 / dim as f64; dim],
        })
    }

    pub fn psd_trace_ball(d: usize, cap: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Input("matrix side length must be positive".into()));
        }
        if !(cap.is_finite() && cap > 0.0) {
            return Err(Error::Input(format!("trace cap must be positive, got {cap}")));
        }
        Ok(Self {
            kind: GeometryKind::PsdTraceBall { d, cap },
            prox_center: vec![0.0; d * d],
        })
    }

    pub fn product(parts: Vec<ProxGeometry>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Input("product geometry needs at least one part".into()));
        }
        let center = parts.iter().flat_map(|p| p.prox_center.iter().copied()).collect();
        Ok(Self {
            kind: GeometryKind::Product(parts),
            prox_center: center,
        })
    }

    /// Replace the prox-center. It must lie in the set (strictly inside for
    /// the entropy setup).
    pub fn with_center(mut self, center: Vec<f64>) -> Result<Self> {
        self.check_point(&center, "prox center")?;
        if let GeometryKind::Product(parts) = &mut self.kind {
            let mut off = 0;
            for p in parts.iter_mut() {
                let n = p.dimension();
                p.prox_center = center[off..off + n].to_vec();
                off += n;
            }
        }
        self.prox_center = center;
        Ok(self)
    }

    pub fn kind(&self) -> &GeometryKind {
        &self.kind
    }

    pub fn prox_center(&self) -> &[f64] {
        &self.prox_center
    }

    /// Ambient length of a point (`d*d` for matrices).
    pub fn dimension(&self) -> usize {
        match &self.kind {
            GeometryKind::EuclideanBox { lower, .. } => lower.len(),
            GeometryKind::EuclideanBall { center, .. } => center.len(),
            GeometryKind::SimplexEntropy { dim } => *dim,
            GeometryKind::PsdTraceBall { d, .. } => d * d,
            GeometryKind::Product(parts) => parts.iter().map(|p| p.dimension()).sum(),
        }
    }

    /// Block boundaries of a product geometry; a single block otherwise.
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        match &self.kind {
            GeometryKind::Product(parts) => {
                let mut off = 0;
                parts
                    .iter()
                    .map(|p| {
                        let r = off..off + p.dimension();
                        off = r.end;
                        r
                    })
                    .collect()
            }
            #[allow(clippy::single_range_in_vec_init)]
            _ => vec![0..self.dimension()],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dimension() || !linalg::all_finite(x) {
            return false;
        }
        match &self.kind {
            GeometryKind::EuclideanBox { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - FEAS_TOL && *v <= u + FEAS_TOL),
            GeometryKind::EuclideanBall { center, radius } => {
                linalg::norm2(&linalg::sub(x, center)) <= radius + FEAS_TOL
            }
            GeometryKind::SimplexEntropy { .. } => {
                x.iter().all(|v| *v >= -FEAS_TOL) && (x.iter().sum::<f64>() - 1.0).abs() <= FEAS_TOL
            }
            GeometryKind::PsdTraceBall { d, cap } => {
                let d = *d;
                for i in 0..d {
                    for j in (i + 1)..d {
                        if (x[i * d + j] - x[j * d + i]).abs() > FEAS_TOL {
                            return false;
                        }
                    }
                }
                if linalg::trace(x, d) > cap + FEAS_TOL {
                    return false;
                }
                let (vals, _) = linalg::sym_eigen(x, d);
                vals.iter().all(|l| *l >= -FEAS_TOL)
            }
            GeometryKind::Product(parts) => {
                let mut off = 0;
                parts.iter().all(|p| {
                    let n = p.dimension();
                    let ok = p.contains(&x[off..off + n]);
                    off += n;
                    ok
                })
            }
        }
    }

    fn check_point(&self, x: &[f64], what: &str) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::Input(format!(
                "{what} has length {}, geometry expects {}",
                x.len(),
                self.dimension()
            )));
        }
        if !self.contains(x) {
            return Err(Error::Domain(format!("{what} is not in the feasible set")));
        }
        self.check_interior(x, what)
    }

    fn check_interior(&self, x: &[f64], what: &str) -> Result<()> {
        match &self.kind {
            GeometryKind::SimplexEntropy { .. } if x.iter().any(|v| *v <= 0.0) => Err(Error::Domain(
                format!("{what} has a zero coordinate; the entropy setup needs the interior"),
            )),
            GeometryKind::Product(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = p.dimension();
                    p.check_interior(&x[off..off + n], what)?;
                    off += n;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `argmin_z <v, z> + V(x, z)` over the set.
    ///
    /// For every `u` in the set the result `p` satisfies
    /// `V(p, u) <= V(x, u) + <v, u - x> + ||v||_*^2 / 2`,
    /// which is what the convergence analysis of both solvers rests on.
    pub fn prox_map(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dimension() {
            return Err(Error::Input(format!(
                "step has length {}, geometry expects {}",
                v.len(),
                self.dimension()
            )));
        }
        if !linalg::all_finite(v) {
            return Err(Error::Input("step vector has non-finite entries".into()));
        }
        self.check_point(x, "prox argument")?;
        Ok(self.prox_unchecked(x, v))
    }

    fn prox_unchecked(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        match &self.kind {
            GeometryKind::EuclideanBox { lower, upper } => x
                .iter()
                .zip(v)
                .zip(lower.iter().zip(upper))
                .map(|((xi, vi), (l, u))| (xi - vi).clamp(*l, *u))
                .collect(),
            GeometryKind::EuclideanBall { center, radius } => {
                let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - b).collect();
                let diff = linalg::sub(&y, center);
                let n = linalg::norm2(&diff);
                if n <= *radius {
                    y
                } else {
                    center.iter().zip(&diff).map(|(c, d)| c + d * radius / n).collect()
                }
            }
            GeometryKind::SimplexEntropy { .. } => {
                let logs: Vec<f64> = x.iter().zip(v).map(|(a, b)| a.ln() - b).collect();
                let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|wi| (wi / s).max(SIMPLEX_FLOOR)).collect()
            }
            GeometryKind::PsdTraceBall { d, cap } => {
                let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - b).collect();
                project_psd_trace(&y, *d, *cap)
            }
            GeometryKind::Product(parts) => {
                let mut out = Vec::with_capacity(x.len());
                let mut off = 0;
                for p in parts {
                    let n = p.dimension();
                    out.extend(p.prox_unchecked(&x[off..off + n], &v[off..off + n]));
                    off += n;
                }
                out
            }
        }
    }

    /// Bregman distance `V(z, x) = ω(x) - ω(z) - <∇ω(z), x - z>`.
    pub fn bregman(&self, z: &[f64], x: &[f64]) -> Result<f64> {
        if z.len() != self.dimension() || x.len() != self.dimension() {
            return Err(Error::Input("point length does not match geometry".into()));
        }
        match &self.kind {
            GeometryKind::SimplexEntropy { .. } => {
                if z.iter().any(|v| *v <= 0.0) {
                    return Err(Error::Domain("entropy Bregman distance needs an interior z".into()));
                }
                if x.iter().any(|v| *v < 0.0) {
                    return Err(Error::Domain("entropy Bregman distance needs x >= 0".into()));
                }
                // Written for possibly unnormalized arguments; the last two
                // sums cancel on the simplex.
                let kl: f64 = x
                    .iter()
                    .zip(z)
                    .map(|(xi, zi)| if *xi > 0.0 { xi * (xi / zi).ln() } else { 0.0 })
                    .sum();
                let mass: f64 = z.iter().sum::<f64>() - x.iter().sum::<f64>();
                Ok((kl + mass).max(0.0))
            }
            GeometryKind::Product(parts) => {
                let mut total = 0.0;
                let mut off = 0;
                for p in parts {
                    let n = p.dimension();
                    total += p.bregman(&z[off..off + n], &x[off..off + n])?;
                    off += n;
                }
                Ok(total)
            }
            _ => {
                let d = linalg::sub(x, z);
                Ok(0.5 * linalg::dot(&d, &d))
            }
        }
    }

    /// `D = sqrt(max V)`. Euclidean kinds use the two-argument max over the
    /// set; the entropy setup uses `max_x V(center, x)`.
    pub fn diameter(&self) -> Result<f64> {
        match &self.kind {
            GeometryKind::EuclideanBox { lower, upper } => {
                let s: f64 = lower.iter().zip(upper).map(|(l, u)| (u - l) * (u - l)).sum();
                Ok((0.5 * s).sqrt())
            }
            GeometryKind::EuclideanBall { radius, .. } => Ok(radius * std::f64::consts::SQRT_2),
            GeometryKind::SimplexEntropy { .. } => {
                let m = self.prox_center.iter().copied().fold(f64::INFINITY, f64::min);
                if m <= 0.0 {
                    return Err(Error::Domain("entropy diameter is unbounded for a boundary center".into()));
                }
                Ok((1.0 / m).ln().max(0.0).sqrt())
            }
            // Two orthogonal rank-one matrices of trace C give ½||X-Z||² = C².
            GeometryKind::PsdTraceBall { cap, .. } => Ok(*cap),
            GeometryKind::Product(parts) => {
                let mut s = 0.0;
                for p in parts {
                    let d = p.diameter()?;
                    s += d * d;
                }
                Ok(s.sqrt())
            }
        }
    }

    pub fn growth_constant(&self) -> Option<f64> {
        match &self.kind {
            GeometryKind::SimplexEntropy { .. } => None,
            GeometryKind::Product(parts) => parts
                .iter()
                .map(|p| p.growth_constant())
                .try_fold(1.0_f64, |acc, q| q.map(|q| acc.max(q))),
            _ => Some(1.0),
        }
    }

    /// Primal norm of the setup.
    pub fn norm(&self, x: &[f64]) -> f64 {
        match &self.kind {
            GeometryKind::SimplexEntropy { .. } => x.iter().map(|v| v.abs()).sum(),
            GeometryKind::Product(parts) => self.blockwise(parts, x, |p, b| p.norm(b)),
            _ => linalg::norm2(x),
        }
    }

    pub fn dual_norm(&self, v: &[f64]) -> f64 {
        match &self.kind {
            GeometryKind::SimplexEntropy { .. } => linalg::norm_inf(v),
            GeometryKind::Product(parts) => self.blockwise(parts, v, |p, b| p.dual_norm(b)),
            _ => linalg::norm2(v),
        }
    }

    fn blockwise(&self, parts: &[ProxGeometry], v: &[f64], f: impl Fn(&ProxGeometry, &[f64]) -> f64) -> f64 {
        let mut off = 0;
        let mut s = 0.0;
        for p in parts {
            let n = p.dimension();
            let b = f(p, &v[off..off + n]);
            s += b * b;
            off += n;
        }
        s.sqrt()
    }

    /// A random point of the set. Uniform for boxes, balls and simplices; for
    /// the PSD trace ball a random-spectrum matrix with uniform trace.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.kind {
            GeometryKind::EuclideanBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
            GeometryKind::EuclideanBall { center, radius } => {
                let n = center.len();
                let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                let gn = linalg::norm2(&g).max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
                center.iter().zip(&g).map(|(c, gi)| c + r * gi / gn).collect()
            }
            GeometryKind::SimplexEntropy { dim } => {
                let e: Vec<f64> = (0..*dim).map(|_| Exp1.sample(rng)).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| (v / s).max(SIMPLEX_FLOOR)).collect()
            }
            GeometryKind::PsdTraceBall { d, cap } => {
                let d = *d;
                let g: Vec<f64> = (0..d * d).map(|_| StandardNormal.sample(rng)).collect();
                let mut a = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        a[i * d + j] = (0..d).map(|k| g[i * d + k] * g[j * d + k]).sum();
                    }
                }
                let tr = linalg::trace(&a, d).max(f64::MIN_POSITIVE);
                let t = cap * rng.random::<f64>();
                a.iter().map(|v| v * t / tr).collect()
            }
            GeometryKind::Product(parts) => parts.iter().flat_map(|p| p.sample_point(rng)).collect(),
        }
    }
}

/// Frobenius projection onto `{A ⪰ 0, Tr A <= cap}`.
pub fn project_psd_trace(y: &[f64], d: usize, cap: f64) -> Vec<f64> {
    let (vals, vecs) = linalg::sym_eigen(y, d);
    let mut clipped: Vec<f64> = vals.iter().map(|l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > cap {
        // Find θ with Σ max(λ - θ, 0) = cap.
        let mut lo = 0.0;
        let mut hi = vals.iter().copied().fold(0.0_f64, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = vals.iter().map(|l| (l - mid).max(0.0)).sum();
            if s > cap {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
                break;
            }
        }
        clipped = vals.iter().map(|l| (l - hi).max(0.0)).collect();
    }
    linalg::from_eigen(&clipped, &vecs, d)
}
