//! Cooperative stochastic approximation.
//!
//! Each iteration samples the constraint at the current point. When the
//! sampled value is within the tolerance `η_k` the step follows a sampled
//! objective subgradient, otherwise it follows the constraint subgradient.
//! Only iterations in the window `s..=N` that passed the test (the set `B`)
//! enter the output average.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ProxGeometry;
use crate::oracle::{Oracle, SampleStream, StreamRole};

/// Above this budget iterates are not stored; the output is accumulated on
/// the fly instead.
pub const STORE_LIMIT: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsaMode {
    /// Constant stepsize over the whole horizon, `s = 1`.
    GeneralConstant,
    /// `1/sqrt(k)` stepsizes, window starting at `⌈N/2⌉`.
    GeneralVariable,
    /// `1/k` stepsizes for strongly convex `f` and `g`.
    StronglyConvex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongConstants {
    pub mu_f: f64,
    pub mu_g: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsaSchedule {
    pub mode: CsaMode,
    pub n: usize,
    pub s: usize,
    pub d: f64,
    pub m_f: f64,
    pub m_g: f64,
    pub strong: Option<StrongConstants>,
    pub c_g: f64,
    pub c_e: f64,
}

pub(crate) fn half_up(n: usize) -> usize {
    n.div_ceil(2)
}

impl CsaSchedule {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: CsaMode,
        n: usize,
        d: f64,
        m_f: f64,
        m_g: f64,
        strong: Option<StrongConstants>,
        c_g: f64,
        c_e: f64,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("iteration budget must be at least 2, got {n}")));
        }
        for (name, v) in [("D", d), ("M_F", m_f), ("M_G", m_g), ("c_g", c_g)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(c_e.is_finite() && c_e >= 0.0) {
            return Err(Error::Config(format!("c_e must be nonnegative and finite, got {c_e}")));
        }
        let strong = match (mode, strong) {
            (CsaMode::StronglyConvex, None) => {
                return Err(Error::Config("strongly convex schedule needs μ_F, μ_G and Q".into()))
            }
            (CsaMode::StronglyConvex, Some(sc)) => {
                if !(sc.mu_f > 0.0 && sc.mu_g > 0.0 && sc.q >= 1.0 && sc.q.is_finite()) {
                    return Err(Error::Config("strong mode needs μ_F, μ_G > 0 and finite Q >= 1".into()));
                }
                Some(sc)
            }
            (_, other) => other,
        };
        let s = match mode {
            CsaMode::GeneralConstant => 1,
            _ => half_up(n),
        };
        Ok(Self { mode, n, s, d, m_f, m_g, strong, c_g, c_e })
    }

    pub fn is_strong(&self) -> bool {
        self.mode == CsaMode::StronglyConvex
    }

    /// Scaled stepsize at iteration `k`; `feasible` is the membership of `k`
    /// in `B` and only matters in strong mode.
    pub fn gamma(&self, k: usize, feasible: bool) -> f64 {
        let kf = k as f64;
        let m = self.m_f + self.m_g;
        let raw = match self.mode {
            CsaMode::GeneralConstant => self.d / ((self.n as f64).sqrt() * m),
            CsaMode::GeneralVariable => self.d / (kf.sqrt() * m),
            CsaMode::StronglyConvex => {
                let sc = self.strong.expect("validated at construction");
                let mu = if feasible { sc.mu_f } else { sc.mu_g };
                2.0 * sc.q / (mu * (kf + 1.0))
            }
        };
        self.c_g * raw
    }

    /// Scaled tolerance at iteration `k`.
    pub fn eta(&self, k: usize) -> f64 {
        let kf = k as f64;
        let m = self.m_f + self.m_g;
        let raw = match self.mode {
            CsaMode::GeneralConstant => 4.0 * m * self.d / (self.n as f64).sqrt(),
            CsaMode::GeneralVariable => 4.0 * m * self.d / kf.sqrt(),
            CsaMode::StronglyConvex => {
                let sc = self.strong.expect("validated at construction");
                let ratio = (self.m_f / sc.mu_f).powi(2).max((self.m_g / sc.mu_g).powi(2));
                (2.0 * sc.mu_g * sc.q / kf) * (2.0 * self.d * self.d / kf + ratio)
            }
        };
        self.c_e * raw
    }

    /// `a_k = μ γ_k / Q` with the modulus of the branch taken.
    pub fn a(&self, k: usize, feasible: bool) -> f64 {
        match self.strong {
            Some(sc) => {
                let mu = if feasible { sc.mu_f } else { sc.mu_g };
                mu * self.gamma(k, feasible) / sc.q
            }
            None => 0.0,
        }
    }

    pub fn window_len(&self) -> usize {
        self.n - self.s + 1
    }

    pub fn max_eta(&self) -> f64 {
        (self.s..=self.n).map(|k| self.eta(k)).fold(0.0, f64::max)
    }
}

/// Build a schedule from the cited formulas.
#[allow(clippy::too_many_arguments)]
pub fn make_schedule(
    mode: CsaMode,
    n: usize,
    d: f64,
    m_f: f64,
    m_g: f64,
    strong: Option<StrongConstants>,
    c_g: f64,
    c_e: f64,
) -> Result<CsaSchedule> {
    CsaSchedule::new(mode, n, d, m_f, m_g, strong, c_g, c_e)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    /// Condition guaranteeing a nonempty `B` for the general schedules.
    General,
    /// Weighted analogue for the strong schedule.
    Strong,
    /// Sufficient condition for the strongly convex parameterized method.
    Parameterized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionDiagnostic {
    pub kind: ConditionKind,
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

impl ConditionDiagnostic {
    pub(crate) fn new(kind: ConditionKind, lhs: f64, rhs: f64) -> Self {
        Self { kind, holds: lhs > rhs, lhs, rhs }
    }
}

impl fmt::Display for ConditionDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} nonemptiness condition {} (lhs {:.6e}, rhs {:.6e})",
            self.kind,
            if self.holds { "holds" } else { "fails" },
            self.lhs,
            self.rhs
        )
    }
}

/// Everything recorded about one run over the window `s..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub n: usize,
    pub s: usize,
    /// `x_k` for `k` in the window; empty when thinned.
    pub iterates: Vec<Vec<f64>>,
    /// `y_k` for the parameterized method; empty otherwise.
    pub y_iterates: Vec<Vec<f64>>,
    /// Point after the last update.
    pub final_iterate: Vec<f64>,
    /// Sampled constraint value `G(x_k, ξ_k)` per window index.
    pub g_samples: Vec<f64>,
    pub feasible: Vec<bool>,
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    /// Output weights: `γ_k`, or `ρ_k = γ_k / A_k` in strong mode.
    pub weights: Vec<f64>,
    /// `a_s` at the window start (0 outside strong mode).
    pub a_start: f64,
    pub thinned: bool,
    /// Running `Σ_B w_k x_k` kept for thinned traces.
    pub weighted_sum: Vec<f64>,
    pub wall_time: f64,
}

impl RunTrace {
    pub fn window(&self) -> std::ops::RangeInclusive<usize> {
        self.s..=self.n
    }

    /// Window position of iteration `k`.
    pub fn pos(&self, k: usize) -> usize {
        k - self.s
    }

    pub fn b_indices(&self) -> Vec<usize> {
        self.window().filter(|&k| self.feasible[self.pos(k)]).collect()
    }

    pub fn n_indices(&self) -> Vec<usize> {
        self.window().filter(|&k| !self.feasible[self.pos(k)]).collect()
    }

    pub fn b_count(&self) -> usize {
        self.feasible.iter().filter(|f| **f).count()
    }

    pub fn window_len(&self) -> usize {
        self.n - self.s + 1
    }

    /// Iterate `x_k` for a window index `k`.
    pub fn iterate(&self, k: usize) -> &[f64] {
        &self.iterates[self.pos(k)]
    }
}

/// A weighted mean of the `B` iterates.
pub fn average_output(trace: &RunTrace) -> Result<Vec<f64>> {
    let total: f64 = trace
        .feasible
        .iter()
        .zip(&trace.weights)
        .filter(|(f, _)| **f)
        .map(|(_, w)| w)
        .sum();
    if trace.b_count() == 0 || total <= 0.0 {
        return Err(Error::Domain("output average needs a nonempty B".into()));
    }
    if trace.thinned {
        return Ok(trace.weighted_sum.iter().map(|v| v / total).collect());
    }
    let dim = trace.iterates[0].len();
    let mut out = vec![0.0; dim];
    for ((x, f), w) in trace.iterates.iter().zip(&trace.feasible).zip(&trace.weights) {
        if *f {
            for (o, xi) in out.iter_mut().zip(x) {
                *o += w * xi;
            }
        }
    }
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// The objective and constraint of an expectation-constrained problem over
/// one feasible set.
#[derive(Clone, Copy)]
pub struct CsaProblem<'a> {
    pub objective: &'a dyn Oracle,
    pub constraint: &'a dyn Oracle,
    pub geometry: &'a ProxGeometry,
}

/// Per-run sample streams.
#[derive(Clone, Debug)]
pub struct RunStreams {
    pub constraint: SampleStream,
    pub objective: SampleStream,
    /// Reuse the constraint realization for the objective (`ζ = ξ`).
    pub shared: bool,
}

impl RunStreams {
    pub fn new(seed: u64, run: u64) -> Self {
        Self {
            constraint: SampleStream::for_role(seed, StreamRole::Constraint, run),
            objective: SampleStream::for_role(seed, StreamRole::Objective, run),
            shared: false,
        }
    }

    pub fn shared(mut self, shared: bool) -> Self {
        self.shared = shared;
        self
    }
}

#[derive(Clone, Debug)]
pub struct CsaRun {
    pub x_bar: Vec<f64>,
    pub trace: RunTrace,
}

/// Run the method from the prox-center of the problem's geometry.
pub fn run_csa(problem: CsaProblem<'_>, schedule: &CsaSchedule, streams: &mut RunStreams) -> Result<CsaRun> {
    let geom = problem.geometry;
    if let Some(sc) = schedule.strong {
        match geom.growth_constant() {
            None => {
                return Err(Error::Config(
                    "strongly convex schedule requires a geometry with a quadratic-growth constant".into(),
                ))
            }
            Some(q) if q > sc.q => {
                return Err(Error::Config(format!(
                    "schedule uses Q = {} but the geometry needs Q >= {q}",
                    sc.q
                )))
            }
            _ => {}
        }
    }
    let start = Instant::now();
    let n = schedule.n;
    let s = schedule.s;
    let w = schedule.window_len();
    let thinned = n > STORE_LIMIT;
    let mut trace = RunTrace {
        n,
        s,
        iterates: Vec::with_capacity(if thinned { 0 } else { w }),
        y_iterates: Vec::new(),
        final_iterate: Vec::new(),
        g_samples: Vec::with_capacity(w),
        feasible: Vec::with_capacity(w),
        gamma: Vec::with_capacity(w),
        eta: Vec::with_capacity(w),
        weights: Vec::with_capacity(w),
        a_start: 0.0,
        thinned,
        weighted_sum: if thinned { vec![0.0; geom.dimension()] } else { Vec::new() },
        wall_time: 0.0,
    };

    let mut x = geom.prox_center().to_vec();
    let mut big_a = 1.0;
    for k in 1..=n {
        let tok = streams.constraint.draw();
        let (g_val, g_grad) = problem.constraint.eval(&x, &tok)?;
        let eta = schedule.eta(k);
        let feasible = g_val <= eta;
        let h = if feasible {
            let ztok = if streams.shared { tok } else { streams.objective.draw() };
            problem.objective.eval(&x, &ztok)?.1
        } else {
            g_grad
        };
        let gamma = schedule.gamma(k, feasible);
        let weight = if schedule.is_strong() {
            let a = schedule.a(k, feasible);
            if k >= 2 {
                if 1.0 - a <= 0.0 {
                    return Err(Error::Config(format!(
                        "strong-mode weight a_{k} = {a} is not below 1; reduce c_g"
                    )));
                }
                big_a *= 1.0 - a;
            }
            if k == s {
                trace.a_start = a;
            }
            gamma / big_a
        } else {
            gamma
        };
        if k >= s {
            if thinned {
                if feasible {
                    for (acc, xi) in trace.weighted_sum.iter_mut().zip(&x) {
                        *acc += weight * xi;
                    }
                }
            } else {
                trace.iterates.push(x.clone());
            }
            trace.g_samples.push(g_val);
            trace.feasible.push(feasible);
            trace.gamma.push(gamma);
            trace.eta.push(eta);
            trace.weights.push(weight);
        }
        let step: Vec<f64> = h.iter().map(|v| gamma * v).collect();
        x = geom.prox_map(&x, &step)?;
    }
    trace.final_iterate = x;
    trace.wall_time = start.elapsed().as_secs_f64();

    if trace.b_count() == 0 {
        let diagnostic = realized_condition(&trace, schedule);
        return Err(Error::EmptyFeasibleSet {
            iterations: n,
            start: s,
            diagnostic,
            trace: Box::new(trace),
        });
    }
    let x_bar = average_output(&trace)?;
    Ok(CsaRun { x_bar, trace })
}

/// A-priori check of the nonemptiness condition.
///
/// The split of the window into `B` and `N` is unknown before the run, so
/// the left side takes the minimum of `γ_k η_k` over the whole window and the
/// right side assigns the `⌈f W⌉`-sized part with the larger `M` the largest
/// step terms, which is the split maximizing it. In strong mode every index
/// takes the worse of its two possible memberships.
pub fn check_condition(schedule: &CsaSchedule, assumed_b_fraction: f64) -> ConditionDiagnostic {
    let w = schedule.window_len();
    let half_w = w as f64 / 2.0;
    let d2 = schedule.d * schedule.d;
    let window = schedule.s..=schedule.n;
    if !schedule.is_strong() {
        let lhs = half_w
            * window
                .clone()
                .map(|k| schedule.gamma(k, true) * schedule.eta(k))
                .fold(f64::INFINITY, f64::min);
        let frac = assumed_b_fraction.clamp(0.0, 1.0);
        let n_b = (frac * w as f64).round() as usize;
        let mut g2: Vec<f64> = window.map(|k| schedule.gamma(k, true).powi(2)).collect();
        g2.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let (big_m, small_m, n_big) = if schedule.m_f >= schedule.m_g {
            (schedule.m_f, schedule.m_g, n_b)
        } else {
            (schedule.m_g, schedule.m_f, w - n_b)
        };
        let big: f64 = g2[..n_big].iter().sum();
        let small: f64 = g2[n_big..].iter().sum();
        let rhs = d2 + 0.5 * big * big_m * big_m + 0.5 * small * small_m * small_m;
        return ConditionDiagnostic::new(ConditionKind::General, lhs, rhs);
    }
    // Strong mode: follow both pure membership sequences and take per-index
    // worst cases.
    let mut seq = [(1.0_f64, Vec::new()), (1.0_f64, Vec::new())];
    for (idx, feasible) in [true, false].into_iter().enumerate() {
        let (big_a, out) = &mut seq[idx];
        for k in 1..=schedule.n {
            if k >= 2 {
                *big_a *= (1.0 - schedule.a(k, feasible)).max(f64::MIN_POSITIVE);
            }
            if k >= schedule.s {
                let g = schedule.gamma(k, feasible);
                out.push((g / *big_a, g));
            }
        }
    }
    let (mut lhs_min, mut rhs_sum) = (f64::INFINITY, 0.0);
    for (i, k) in window.enumerate() {
        let (rb, gb) = seq[0].1[i];
        let (rn, gn) = seq[1].1[i];
        lhs_min = lhs_min.min(rb.min(rn) * schedule.eta(k));
        rhs_sum += (rb * gb * schedule.m_f.powi(2)).max(rn * gn * schedule.m_g.powi(2));
    }
    let a_s = schedule.a(schedule.s, true).min(schedule.a(schedule.s, false));
    let rhs = (1.0 - a_s).max(0.0) * d2 + 0.5 * rhs_sum;
    ConditionDiagnostic::new(ConditionKind::Strong, half_w * lhs_min, rhs)
}

/// The nonemptiness condition evaluated on the split a run actually produced.
pub fn realized_condition(trace: &RunTrace, schedule: &CsaSchedule) -> ConditionDiagnostic {
    let half_w = trace.window_len() as f64 / 2.0;
    let d2 = schedule.d * schedule.d;
    let strong = schedule.is_strong();
    let mut lhs_min = f64::INFINITY;
    let mut rhs = 0.0;
    for i in 0..trace.window_len() {
        let (g, e, w) = (trace.gamma[i], trace.eta[i], trace.weights[i]);
        let lead = if strong { w } else { g };
        if trace.feasible[i] {
            rhs += 0.5 * lead * g * schedule.m_f.powi(2);
        } else {
            rhs += 0.5 * lead * g * schedule.m_g.powi(2);
            lhs_min = lhs_min.min(lead * e);
        }
    }
    if strong {
        rhs += (1.0 - trace.a_start).max(0.0) * d2;
        ConditionDiagnostic::new(ConditionKind::Strong, half_w * lhs_min, rhs)
    } else {
        rhs += d2;
        ConditionDiagnostic::new(ConditionKind::General, half_w * lhs_min, rhs)
    }
}

/// The alternative quantity of the index-set dichotomy, computed from the
/// stored iterates with the exact objective: `Σ_B γ_k <f'(x_k), x_k - x*>` in
/// the general modes and `Σ_B ρ_k (f(x_k) - f*)` in strong mode.
///
/// Returns `None` when the trace is thinned or the oracle has no closed form.
pub fn lemma_alternative(
    trace: &RunTrace,
    schedule: &CsaSchedule,
    objective: &dyn Oracle,
    x_star: &[f64],
    f_star: f64,
) -> Option<f64> {
    if trace.thinned {
        return None;
    }
    let mut total = 0.0;
    for k in trace.b_indices() {
        let i = trace.pos(k);
        let x = &trace.iterates[i];
        if schedule.is_strong() {
            total += trace.weights[i] * (objective.expected_value(x)? - f_star);
        } else {
            let g = objective.expected_gradient(x)?;
            let inner: f64 = g.iter().zip(x.iter().zip(x_star)).map(|(gi, (a, b))| gi * (a - b)).sum();
            total += trace.gamma[i] * inner;
        }
    }
    Some(total)
}
