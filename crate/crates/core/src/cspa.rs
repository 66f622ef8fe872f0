//! Cooperative stochastic approximation for parameterized problems.
//!
//! The parameter `x` must satisfy an expectation constraint and the decision
//! `y` minimizes `φ(x, y)` given `x`. Each iteration moves exactly one of the
//! two: `y` along `Φ'` when the sampled constraint is within tolerance, `x`
//! along `G'` otherwise. The output is a random iterate from `B`.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csa::{half_up, ConditionDiagnostic, ConditionKind, RunStreams, RunTrace, STORE_LIMIT};
use crate::error::{Error, Result};
use crate::geometry::ProxGeometry;
use crate::oracle::{CoupledOracle, Oracle, SampleStream, StreamRole};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CspaMode {
    General,
    StronglyConvex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CspaStrong {
    pub mu_phi: f64,
    pub mu_g: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CspaSchedule {
    pub mode: CspaMode,
    pub n: usize,
    pub s: usize,
    pub d_x: f64,
    pub d_y: f64,
    pub m_g: f64,
    pub m_phi: f64,
    pub strong: Option<CspaStrong>,
    pub c_g: f64,
    pub c_e: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn make_cspa_schedule(
    mode: CspaMode,
    n: usize,
    d_x: f64,
    d_y: f64,
    m_g: f64,
    m_phi: f64,
    strong: Option<CspaStrong>,
    c_g: f64,
    c_e: f64,
) -> Result<CspaSchedule> {
    if n < 2 {
        return Err(Error::Config(format!("iteration budget must be at least 2, got {n}")));
    }
    for (name, v) in [("D_X", d_x), ("D_Y", d_y), ("M_G", m_g), ("M_Φ", m_phi), ("c_g", c_g)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if !(c_e.is_finite() && c_e >= 0.0) {
        return Err(Error::Config(format!("c_e must be nonnegative and finite, got {c_e}")));
    }
    let s = match mode {
        CspaMode::General => half_up(n) + 1,
        CspaMode::StronglyConvex => {
            let sc = strong.ok_or_else(|| Error::Config("strongly convex schedule needs μ_Φ, μ_G and Q".into()))?;
            if !(sc.mu_phi > 0.0 && sc.mu_g > 0.0 && sc.q >= 1.0 && sc.q.is_finite()) {
                return Err(Error::Config("strong mode needs μ_Φ, μ_G > 0 and finite Q >= 1".into()));
            }
            1
        }
    };
    Ok(CspaSchedule { mode, n, s, d_x, d_y, m_g, m_phi, strong, c_g, c_e })
}

impl CspaSchedule {
    pub fn is_strong(&self) -> bool {
        self.mode == CspaMode::StronglyConvex
    }

    /// Override the window start. Strong mode keeps `s = 1`.
    pub fn with_start(mut self, s: usize) -> Result<Self> {
        if s < 1 || s > self.n {
            return Err(Error::Config(format!("window start {s} outside 1..={}", self.n)));
        }
        if self.is_strong() && s != 1 {
            return Err(Error::Config("the strongly convex schedule uses s = 1".into()));
        }
        self.s = s;
        Ok(self)
    }

    pub fn window_len(&self) -> usize {
        self.n - self.s + 1
    }

    pub fn nu(&self) -> f64 {
        (self.m_g * self.d_y) / (self.m_phi * self.d_x)
    }

    /// Stepsize at iteration `k`. In strong mode it depends on the branch and
    /// on `tau`, the 1-based position of `k` within its set.
    pub fn gamma(&self, k: usize, feasible: bool, tau: usize) -> f64 {
        let raw = match self.strong.filter(|_| self.is_strong()) {
            Some(sc) => {
                let mu = if feasible { sc.mu_phi } else { sc.mu_g };
                2.0 * sc.q / (mu * (tau as f64 + 1.0))
            }
            None => self.d_x / (self.m_g * (k as f64).sqrt()),
        };
        self.c_g * raw
    }

    pub fn eta(&self, k: usize) -> f64 {
        let kf = k as f64;
        let raw = match self.strong.filter(|_| self.is_strong()) {
            Some(sc) => 8.0 * sc.q * self.m_g * self.m_g / (kf * sc.mu_g),
            None => 8.0 * self.m_g * self.d_x / kf.sqrt(),
        };
        self.c_e * raw
    }

    pub fn a(&self, feasible: bool, gamma: f64) -> f64 {
        match self.strong.filter(|_| self.is_strong()) {
            Some(sc) => (if feasible { sc.mu_phi } else { sc.mu_g }) * gamma / sc.q,
            None => 0.0,
        }
    }

    fn scaled_doubled_eta(&self) -> Self {
        let mut s = self.clone();
        s.c_e *= 2.0;
        s
    }
}

/// Running position counters and per-set products.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PositionCounters {
    pub tau_b: usize,
    pub tau_n: usize,
    a_b: f64,
    a_n: f64,
}

impl PositionCounters {
    pub fn new() -> Self {
        Self { tau_b: 0, tau_n: 0, a_b: 1.0, a_n: 1.0 }
    }

    /// Advance the counter of the branch taken and return
    /// `(position, γ_k, ρ_k)`. The first member of each set has `A = 1`.
    pub fn advance(&mut self, schedule: &CspaSchedule, k: usize, feasible: bool) -> Result<(usize, f64, f64)> {
        let (tau, prod) = if feasible {
            self.tau_b += 1;
            (self.tau_b, &mut self.a_b)
        } else {
            self.tau_n += 1;
            (self.tau_n, &mut self.a_n)
        };
        let gamma = schedule.gamma(k, feasible, tau);
        if !schedule.is_strong() {
            return Ok((tau, gamma, gamma));
        }
        let a = schedule.a(feasible, gamma);
        if tau >= 2 {
            if 1.0 - a <= 0.0 {
                return Err(Error::Config(format!("strong-mode weight a = {a} is not below 1; reduce c_g")));
            }
            *prod *= 1.0 - a;
        }
        Ok((tau, gamma, gamma / *prod))
    }
}

#[derive(Clone, Copy)]
pub struct CspaProblem<'a> {
    pub phi: &'a dyn CoupledOracle,
    pub constraint: &'a dyn Oracle,
    pub gx: &'a ProxGeometry,
    pub gy: &'a ProxGeometry,
}

#[derive(Clone, Debug)]
pub struct CspaRun {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Selected iteration index.
    pub r: usize,
    pub trace: RunTrace,
    pub diagnostic: ConditionDiagnostic,
}

/// One run of the method. Starts from the prox-centers unless `start` is
/// given; `output` drives the random choice of `R`.
pub fn run_cspa(
    problem: CspaProblem<'_>,
    schedule: &CspaSchedule,
    streams: &mut RunStreams,
    output: &mut SampleStream,
    start: Option<(&[f64], &[f64])>,
) -> Result<CspaRun> {
    if let Some(sc) = schedule.strong.filter(|_| schedule.is_strong()) {
        for g in [problem.gx, problem.gy] {
            match g.growth_constant() {
                None => {
                    return Err(Error::Config(
                        "strongly convex schedule requires geometries with a quadratic-growth constant".into(),
                    ))
                }
                Some(q) if q > sc.q => {
                    return Err(Error::Config(format!("schedule Q = {} is below the geometry's {q}", sc.q)))
                }
                _ => {}
            }
        }
    }
    let t0 = Instant::now();
    let (mut x, mut y) = match start {
        Some((x0, y0)) => (x0.to_vec(), y0.to_vec()),
        None => (problem.gx.prox_center().to_vec(), problem.gy.prox_center().to_vec()),
    };
    let (n, s) = (schedule.n, schedule.s);
    let w = n - s + 1;
    let thinned = n > STORE_LIMIT;
    let mut trace = RunTrace {
        n,
        s,
        iterates: Vec::new(),
        y_iterates: Vec::new(),
        final_iterate: Vec::new(),
        g_samples: Vec::with_capacity(w),
        feasible: Vec::with_capacity(w),
        gamma: Vec::with_capacity(w),
        eta: Vec::with_capacity(w),
        weights: Vec::with_capacity(w),
        a_start: 0.0,
        thinned,
        weighted_sum: Vec::new(),
        wall_time: 0.0,
    };
    // Thinned runs pick R online by weighted reservoir sampling.
    let mut reservoir: Option<(usize, Vec<f64>, Vec<f64>)> = None;
    let mut reservoir_total = 0.0;
    let mut reservoir_rng = output.draw().rng();

    let mut counters = PositionCounters::new();
    for k in 1..=n {
        let tok = streams.constraint.draw();
        let (g_val, g_grad) = problem.constraint.eval(&x, &tok)?;
        let eta = schedule.eta(k);
        let feasible = g_val <= eta;
        let (_, gamma, rho) = counters.advance(schedule, k, feasible)?;
        if k >= s {
            if thinned {
                if feasible {
                    reservoir_total += rho;
                    if reservoir_rng.random::<f64>() * reservoir_total < rho {
                        reservoir = Some((k, x.clone(), y.clone()));
                    }
                }
            } else {
                trace.iterates.push(x.clone());
                trace.y_iterates.push(y.clone());
            }
            trace.g_samples.push(g_val);
            trace.feasible.push(feasible);
            trace.gamma.push(gamma);
            trace.eta.push(eta);
            trace.weights.push(rho);
        }
        if feasible {
            let ztok = if streams.shared { tok } else { streams.objective.draw() };
            let (_, h) = problem.phi.eval(&x, &y, &ztok)?;
            let step: Vec<f64> = h.iter().map(|v| gamma * v).collect();
            y = problem.gy.prox_map(&y, &step)?;
        } else {
            let step: Vec<f64> = g_grad.iter().map(|v| gamma * v).collect();
            x = problem.gx.prox_map(&x, &step)?;
        }
    }
    let mut fin = x;
    fin.extend_from_slice(&y);
    trace.final_iterate = fin;
    trace.wall_time = t0.elapsed().as_secs_f64();
    let diagnostic = cspa_condition(&trace, schedule);

    if trace.b_count() == 0 {
        return Err(Error::EmptyFeasibleSet {
            iterations: n,
            start: s,
            diagnostic,
            trace: Box::new(trace),
        });
    }
    let (r, xr, yr) = if thinned {
        reservoir.expect("nonempty B fills the reservoir")
    } else {
        let r = sample_output_index(&trace, output)?;
        let i = trace.pos(r);
        (r, trace.iterates[i].clone(), trace.y_iterates[i].clone())
    };
    Ok(CspaRun { x: xr, y: yr, r, trace, diagnostic })
}

/// Draw `R` from `B` with probability proportional to the recorded weights
/// (`γ_k`, or `ρ_k` in strong mode).
pub fn sample_output_index(trace: &RunTrace, stream: &mut SampleStream) -> Result<usize> {
    let b = trace.b_indices();
    if b.is_empty() {
        return Err(Error::Domain("output index needs a nonempty B".into()));
    }
    let total: f64 = b.iter().map(|&k| trace.weights[trace.pos(k)]).sum();
    let u = stream.draw().rng().random::<f64>() * total;
    let mut acc = 0.0;
    for &k in &b {
        acc += trace.weights[trace.pos(k)];
        if u < acc {
            return Ok(k);
        }
    }
    Ok(*b.last().expect("nonempty"))
}

/// Realized nonemptiness condition. The general schedules use the window
/// form `W/2 min_N γη > D_X² + M_G²/2 Σ_N γ²`; strong mode uses
/// `Σ ρη > (1 - μ_G γ_s / Q) D_X² + M_G²/2 Σ_N ργ` with `D_X²` standing in for
/// the unknown `V(x_s, x*)`.
pub fn cspa_condition(trace: &RunTrace, schedule: &CspaSchedule) -> ConditionDiagnostic {
    let d2 = schedule.d_x * schedule.d_x;
    let m2 = schedule.m_g * schedule.m_g;
    let w = trace.window_len();
    if let Some(sc) = schedule.strong.filter(|_| schedule.is_strong()) {
        let mut lhs = 0.0;
        let mut rhs_sum = 0.0;
        for i in 0..w {
            lhs += trace.weights[i] * trace.eta[i];
            if !trace.feasible[i] {
                rhs_sum += trace.weights[i] * trace.gamma[i];
            }
        }
        let lead = (1.0 - sc.mu_g * trace.gamma[0] / sc.q).max(0.0);
        return ConditionDiagnostic::new(ConditionKind::Parameterized, lhs, lead * d2 + 0.5 * m2 * rhs_sum);
    }
    let mut lhs_min = f64::INFINITY;
    let mut g2 = 0.0;
    for i in 0..w {
        if !trace.feasible[i] {
            lhs_min = lhs_min.min(trace.gamma[i] * trace.eta[i]);
            g2 += trace.gamma[i] * trace.gamma[i];
        }
    }
    ConditionDiagnostic::new(ConditionKind::General, w as f64 / 2.0 * lhs_min, d2 + 0.5 * m2 * g2)
}

/// Candidate solutions of the two-phase method and their validation scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub t: usize,
    pub candidates: Vec<(Vec<f64>, Vec<f64>)>,
    /// `ḡ` per candidate.
    pub g_bar: Vec<f64>,
    /// Index of the `ḡ`-minimizer of each set `P_j`.
    pub set_winners: Vec<usize>,
    /// `φ̄` per set winner.
    pub phi_bar: Vec<f64>,
    /// Index of the selected candidate.
    pub selected: Option<usize>,
}

impl CandidatePool {
    pub fn new(t: usize, candidates: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if t == 0 || candidates.len() != t * t {
            return Err(Error::Config(format!(
                "pool needs T² = {} candidates, got {}",
                t * t,
                candidates.len()
            )));
        }
        Ok(Self { t, candidates, g_bar: vec![], set_winners: vec![], phi_bar: vec![], selected: None })
    }

    /// Candidate indices of set `P_j` (arrival order).
    pub fn set(&self, j: usize) -> std::ops::Range<usize> {
        j * self.t..(j + 1) * self.t
    }
}

fn argmin_first(values: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, v) in values {
        if best.0 == usize::MAX || v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Fill `ḡ` for every candidate, pick each set's `ḡ`-minimizer, score those
/// by `φ̄` and select the best. Each estimate uses `sample_size` draws from
/// its own validation stream, or with `shared` one common sample for all `ḡ`
/// and another for all `φ̄`.
pub fn validate_candidates(
    pool: &mut CandidatePool,
    problem: CspaProblem<'_>,
    sample_size: usize,
    seed: u64,
    shared: bool,
) -> Result<()> {
    if sample_size == 0 {
        return Err(Error::Config("validation sample size must be at least 1".into()));
    }
    let tt = pool.candidates.len() as u64;
    // Shared mode: one sample for every `ḡ`, another for every `φ̄`.
    let stream_for = |i: u64| {
        let run = if !shared {
            i
        } else if i < tt {
            0
        } else {
            1
        };
        SampleStream::for_role(seed, StreamRole::Validation, run)
    };

    let g_bar: Result<Vec<f64>> = pool
        .candidates
        .par_iter()
        .enumerate()
        .map(|(i, (x, _))| {
            let mut st = stream_for(i as u64);
            let mut acc = 0.0;
            for _ in 0..sample_size {
                acc += problem.constraint.eval(x, &st.draw())?.0;
            }
            Ok(acc / sample_size as f64)
        })
        .collect();
    pool.g_bar = g_bar?;
    pool.set_winners = (0..pool.t)
        .map(|j| argmin_first(pool.set(j).map(|i| (i, pool.g_bar[i]))))
        .collect();
    let phi_bar: Result<Vec<f64>> = pool
        .set_winners
        .par_iter()
        .enumerate()
        .map(|(j, &i)| {
            let (x, y) = &pool.candidates[i];
            let mut st = stream_for(tt + j as u64);
            let mut acc = 0.0;
            for _ in 0..sample_size {
                acc += problem.phi.eval(x, y, &st.draw())?.0;
            }
            Ok(acc / sample_size as f64)
        })
        .collect();
    pool.phi_bar = phi_bar?;
    let j = argmin_first(pool.phi_bar.iter().copied().enumerate());
    pool.selected = Some(pool.set_winners[j]);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseConfig {
    pub t: usize,
    pub n: usize,
    /// Validation sample size `S`.
    pub s: usize,
    pub shared_validation: bool,
}

impl TwoPhaseConfig {
    /// Default `(T, N, S)` for a target accuracy `eps` and failure
    /// probability `lambda`, with `T` rounded up from a base-2 logarithm.
    pub fn from_targets(eps: f64, lambda: f64, d_x: f64, d_y: f64, m_g: f64, m_phi: f64, sigma: f64) -> Result<Self> {
        if !(eps > 0.0 && lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Config("need eps > 0 and 0 < Λ < 1".into()));
        }
        let nu = (m_g * d_y) / (m_phi * d_x);
        let t = ceil_tol((2.0 / lambda).log2()).max(1.0) as usize;
        let n = ceil_tol(32.0f64.powi(2) * d_y * d_y * m_phi * m_phi * (nu * nu).max(1.0 / (nu * nu)) / (eps * eps));
        let tp1 = t as f64 + 1.0;
        let s = ceil_tol(64.0 * tp1 * tp1 * sigma * sigma / (eps * eps * lambda * lambda));
        Ok(Self { t, n: (n as usize).max(2), s: (s as usize).max(1), shared_validation: true })
    }
}

/// Ceiling that ignores relative rounding noise below 1e-12.
fn ceil_tol(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= 1e-12 * v.abs().max(1.0) {
        r
    } else {
        v.ceil()
    }
}

#[derive(Clone, Debug)]
pub struct TwoPhaseRun {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pool: CandidatePool,
    /// `|B|` of every inner run.
    pub b_counts: Vec<usize>,
    /// Inner runs that needed the doubled-tolerance retry.
    pub retries: usize,
    pub wall_time: f64,
}

/// `T²` warm-started runs followed by validation. The schedule's `n` is
/// replaced by `config.n`.
pub fn run_two_phase(
    problem: CspaProblem<'_>,
    schedule: &CspaSchedule,
    config: &TwoPhaseConfig,
    seed: u64,
    shared_stream: bool,
) -> Result<TwoPhaseRun> {
    if config.t == 0 || config.s == 0 {
        return Err(Error::Config("two-phase method needs T >= 1 and S >= 1".into()));
    }
    let t0 = Instant::now();
    let sched = make_cspa_schedule(
        schedule.mode,
        config.n,
        schedule.d_x,
        schedule.d_y,
        schedule.m_g,
        schedule.m_phi,
        schedule.strong,
        schedule.c_g,
        schedule.c_e,
    )?;
    let runs = config.t * config.t;
    let mut candidates = Vec::with_capacity(runs);
    let mut b_counts = Vec::with_capacity(runs);
    let mut retries = 0;
    let mut current: Option<(Vec<f64>, Vec<f64>)> = None;
    for t in 0..runs as u64 {
        let mut streams = RunStreams::new(seed, t).shared(shared_stream);
        let mut out = SampleStream::for_role(seed, StreamRole::Output, t);
        let start = current.as_ref().map(|(x, y)| (x.as_slice(), y.as_slice()));
        let run = match run_cspa(problem, &sched, &mut streams, &mut out, start) {
            Err(e) if e.is_empty_feasible_set() => {
                retries += 1;
                run_cspa(problem, &sched.scaled_doubled_eta(), &mut streams, &mut out, start)?
            }
            other => other?,
        };
        b_counts.push(run.trace.b_count());
        candidates.push((run.x.clone(), run.y.clone()));
        current = Some((run.x, run.y));
    }
    let mut pool = CandidatePool::new(config.t, candidates)?;
    validate_candidates(&mut pool, problem, config.s, seed, config.shared_validation)?;
    let sel = pool.selected.expect("validation selects a candidate");
    let (x, y) = pool.candidates[sel].clone();
    Ok(TwoPhaseRun { x, y, pool, b_counts, retries, wall_time: t0.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    #[test]
    fn general_schedule_values() {
        let s = make_cspa_schedule(CspaMode::General, 100, 1.0, 1.0, 1.0, 1.0, None, 1.0, 1.0).unwrap();
        assert!(close(s.gamma(25, true, 3), 0.2) && close(s.eta(25), 1.6));
        assert_eq!(s.s, 51);
    }

    #[test]
    fn strong_schedule_values() {
        let sc = CspaStrong { mu_phi: 2.0, mu_g: 1.0, q: 1.0 };
        let s = make_cspa_schedule(CspaMode::StronglyConvex, 100, 1.0, 1.0, 1.0, 1.0, Some(sc), 1.0, 1.0).unwrap();
        assert!(close(s.gamma(40, true, 4), 0.2));
        assert!(close(s.eta(16), 0.5));
        assert_eq!(s.s, 1);
        assert!(s.clone().with_start(3).is_err());
    }

    #[test]
    fn rho_on_b_is_linear_in_position() {
        let sc = CspaStrong { mu_phi: 2.0, mu_g: 1.0, q: 1.0 };
        let s = make_cspa_schedule(CspaMode::StronglyConvex, 100, 1.0, 1.0, 1.0, 1.0, Some(sc), 1.0, 1.0).unwrap();
        let mut c = PositionCounters::new();
        let pattern = [true, false, true, true, false, false, true];
        let mut j = 0;
        for (k, f) in pattern.iter().enumerate() {
            let (tau, _, rho) = c.advance(&s, k + 1, *f).unwrap();
            if *f {
                j += 1;
                assert_eq!(tau, j);
                assert!((rho - j as f64 / 2.0).abs() < 1e-12, "rho {rho} at position {j}");
            }
        }
    }

    #[test]
    fn two_phase_defaults() {
        let c = TwoPhaseConfig::from_targets(0.2, 0.1, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(c.t, 5);
        assert_eq!(c.n, 25_600);
        assert_eq!(c.s, 5_760_000);
    }
}
