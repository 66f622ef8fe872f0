//! Running configured experiments over a grid of budgets and seeds.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig, ProblemConfig, ScheduleMode};
use crate::baseline::run_saa;
use crate::csa::{
    lemma_alternative, make_schedule, realized_condition, run_csa, CsaMode, CsaSchedule, RunStreams, StrongConstants,
};
use crate::cspa::{cspa_condition, make_cspa_schedule, run_cspa, run_two_phase, CspaMode, CspaSchedule, CspaStrong, TwoPhaseConfig};
use crate::error::{Error, Result};
use crate::oracle::{SampleStream, StreamRole};
use crate::problems::cvar::make_cvar;
use crate::problems::factor::{generate_factor_instance, ReturnModel};
use crate::problems::metric::make_metric_problem;
use crate::problems::synthetic::make_synthetic_benchmark;
use crate::problems::toy::make_toy;
use crate::problems::{mc_estimate, mc_estimate_coupled, CoupledProblem, Estimate, StochasticProblem};

/// A built problem instance.
#[derive(Clone)]
pub enum Instance {
    Stochastic(StochasticProblem),
    Coupled(CoupledProblem),
}

pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    Ok(match &cfg.problem {
        ProblemConfig::Synthetic { benchmark, dim, sigma, instance_seed } => {
            Instance::Stochastic(make_synthetic_benchmark(*benchmark, *dim, *sigma, *instance_seed)?)
        }
        ProblemConfig::Toy { constraint, sigma } => Instance::Coupled(make_toy(*constraint, *sigma)?),
        ProblemConfig::Cvar { assets, factors, beta, instance_seed, returns_csv } => {
            let model = match returns_csv {
                Some(path) => ReturnModel::from_csv(path)?,
                None => ReturnModel::factor(generate_factor_instance(*assets, *factors, *instance_seed)?)?,
            };
            Instance::Stochastic(make_cvar(model, *beta, *instance_seed)?)
        }
        ProblemConfig::Metric { instance_seed, .. } => {
            let spec = cfg.metric_spec().expect("metric problem");
            Instance::Coupled(make_metric_problem(spec, *instance_seed)?.0)
        }
    })
}

/// CSA schedule for budget `n` from the problem's constants and the
/// config's overrides.
pub fn csa_schedule(cfg: &ExperimentConfig, problem: &StochasticProblem, n: usize) -> Result<CsaSchedule> {
    let o = &cfg.schedule.constants;
    let d = match o.d {
        Some(d) => d,
        None => problem.geometry.diameter()?,
    };
    let fc = problem.objective.constants();
    let gc = problem.constraint.constants();
    let mode = match cfg.schedule.mode {
        ScheduleMode::GeneralConstant => CsaMode::GeneralConstant,
        ScheduleMode::GeneralVariable => CsaMode::GeneralVariable,
        ScheduleMode::StronglyConvex => CsaMode::StronglyConvex,
    };
    let strong = if mode == CsaMode::StronglyConvex {
        let q = match o.q.or(problem.geometry.growth_constant()) {
            Some(q) => q,
            None => return Err(Error::validation("schedule.mode", "geometry has no quadratic-growth constant")),
        };
        Some(StrongConstants { mu_f: o.mu_f.unwrap_or(fc.mu), mu_g: o.mu_g.unwrap_or(gc.mu), q })
    } else {
        None
    };
    make_schedule(
        mode,
        n,
        d,
        o.m_f.unwrap_or(fc.m),
        o.m_g.unwrap_or(gc.m),
        strong,
        cfg.schedule.c_g,
        cfg.schedule.c_e,
    )
}

/// CSPA schedule for budget `n`. `d` and `d_y` override `D_X` and `D_Y`,
/// `m_f` and `mu_f` override `M_Φ` and `μ_Φ`.
pub fn cspa_schedule(cfg: &ExperimentConfig, problem: &CoupledProblem, n: usize) -> Result<CspaSchedule> {
    let o = &cfg.schedule.constants;
    let d_x = match o.d {
        Some(d) => d,
        None => problem.gx.diameter()?,
    };
    let d_y = match o.d_y {
        Some(d) => d,
        None => problem.gy.diameter()?,
    };
    let pc = problem.phi.constants();
    let gc = problem.constraint.constants();
    let (mode, strong) = match cfg.schedule.mode {
        ScheduleMode::StronglyConvex => {
            let q = match o.q {
                Some(q) => q,
                None => match (problem.gx.growth_constant(), problem.gy.growth_constant()) {
                    (Some(a), Some(b)) => a.max(b),
                    _ => return Err(Error::validation("schedule.mode", "geometry has no quadratic-growth constant")),
                },
            };
            let sc = CspaStrong { mu_phi: o.mu_f.unwrap_or(pc.mu), mu_g: o.mu_g.unwrap_or(gc.mu), q };
            (CspaMode::StronglyConvex, Some(sc))
        }
        _ => (CspaMode::General, None),
    };
    make_cspa_schedule(
        mode,
        n,
        d_x,
        d_y,
        o.m_g.unwrap_or(gc.m),
        o.m_f.unwrap_or(pc.m),
        strong,
        cfg.schedule.c_g,
        cfg.schedule.c_e,
    )
}

/// The output of one solver run.
#[derive(Clone, Debug)]
pub struct Solved {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub b_count: usize,
    pub window: usize,
    pub condition_holds: Option<bool>,
    pub lemma_alternative: Option<f64>,
    pub retries: usize,
    pub wall_time: f64,
}

/// Run the configured algorithm once at budget `n` with trial seed `seed`.
pub fn solve_once(cfg: &ExperimentConfig, instance: &Instance, n: usize, seed: u64) -> Result<Solved> {
    let t0 = Instant::now();
    match (cfg.algorithm, instance) {
        (Algorithm::Csa, Instance::Stochastic(p)) => {
            let sched = csa_schedule(cfg, p, n)?;
            let run = run_csa(p.as_csa(), &sched, &mut RunStreams::new(seed, 0))?;
            let lemma = p
                .optimum
                .as_ref()
                .and_then(|o| lemma_alternative(&run.trace, &sched, p.objective.as_ref(), &o.x, o.f));
            Ok(Solved {
                b_count: run.trace.b_count(),
                window: run.trace.window_len(),
                condition_holds: Some(realized_condition(&run.trace, &sched).holds),
                lemma_alternative: lemma,
                retries: 0,
                x: run.x_bar,
                y: None,
                wall_time: t0.elapsed().as_secs_f64(),
            })
        }
        (Algorithm::SaaPolyak, Instance::Stochastic(p)) => {
            let sched = csa_schedule(cfg, p, cfg.saa_iterations.unwrap_or(n))?;
            let (x, report, trace) = run_saa(p, n, &sched, seed)?;
            Ok(Solved {
                x,
                y: None,
                b_count: report.b_count,
                window: trace.window_len(),
                condition_holds: Some(realized_condition(&trace, &sched).holds),
                lemma_alternative: None,
                retries: 0,
                wall_time: t0.elapsed().as_secs_f64(),
            })
        }
        (Algorithm::Cspa, Instance::Coupled(p)) => {
            let sched = cspa_schedule(cfg, p, n)?;
            let mut streams = RunStreams::new(seed, 0).shared(p.shared_stream);
            let mut out = SampleStream::for_role(seed, StreamRole::Output, 0);
            let run = run_cspa(p.as_cspa(), &sched, &mut streams, &mut out, None)?;
            Ok(Solved {
                b_count: run.trace.b_count(),
                window: run.trace.window_len(),
                condition_holds: Some(cspa_condition(&run.trace, &sched).holds),
                lemma_alternative: None,
                retries: 0,
                x: run.x,
                y: Some(run.y),
                wall_time: t0.elapsed().as_secs_f64(),
            })
        }
        (Algorithm::TwoPhase, Instance::Coupled(p)) => {
            let tp = cfg.two_phase.as_ref().ok_or_else(|| Error::validation("two_phase", "missing"))?;
            let sched = cspa_schedule(cfg, p, n)?;
            let config = TwoPhaseConfig { t: tp.t, n, s: tp.validation_samples, shared_validation: tp.shared_validation };
            let run = run_two_phase(p.as_cspa(), &sched, &config, seed, p.shared_stream)?;
            Ok(Solved {
                b_count: run.b_counts.iter().sum(),
                window: run.b_counts.len() * sched.window_len(),
                condition_holds: None,
                lemma_alternative: None,
                retries: run.retries,
                x: run.x,
                y: Some(run.y),
                wall_time: run.wall_time,
            })
        }
        (alg, _) => Err(Error::validation("algorithm", format!("{alg:?} does not match the problem kind"))),
    }
}

/// Statistics of one `(N, seed)` cell. Empty fields mean "not applicable"
/// or "run failed"; `error` says which.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub seed: u64,
    pub objective: Option<f64>,
    pub objective_se: Option<f64>,
    pub constraint: Option<f64>,
    pub constraint_se: Option<f64>,
    pub train_objective: Option<f64>,
    pub train_objective_se: Option<f64>,
    pub train_constraint: Option<f64>,
    pub train_constraint_se: Option<f64>,
    /// Optimality gap from closed forms, when the instance has them.
    pub gap: Option<f64>,
    /// Exact constraint value, when available.
    pub exact_constraint: Option<f64>,
    pub b_count: Option<usize>,
    pub window: Option<usize>,
    pub condition_holds: Option<bool>,
    pub lemma_alternative: Option<f64>,
    pub retries: Option<usize>,
    pub wall_time: f64,
    pub error: Option<String>,
}

impl CellResult {
    fn failed(n: usize, seed: u64, wall_time: f64, err: &Error) -> Self {
        Self {
            n,
            seed,
            objective: None,
            objective_se: None,
            constraint: None,
            constraint_se: None,
            train_objective: None,
            train_objective_se: None,
            train_constraint: None,
            train_constraint_se: None,
            gap: None,
            exact_constraint: None,
            b_count: if err.is_empty_feasible_set() { Some(0) } else { None },
            window: match err {
                Error::EmptyFeasibleSet { trace, .. } => Some(trace.window_len()),
                _ => None,
            },
            condition_holds: match err {
                Error::EmptyFeasibleSet { diagnostic, .. } => Some(diagnostic.holds),
                _ => None,
            },
            lemma_alternative: None,
            retries: None,
            wall_time,
            error: Some(err.to_string()),
        }
    }

    /// Equality ignoring timings.
    pub fn same_statistics(&self, other: &Self) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.wall_time = 0.0;
        b.wall_time = 0.0;
        a == b
    }
}

/// Closed-form gap and constraint value of a solution, when known.
pub fn exact_quality(instance: &Instance, solved: &Solved) -> (Option<f64>, Option<f64>) {
    match instance {
        Instance::Stochastic(p) => {
            let gap = p
                .optimum
                .as_ref()
                .and_then(|o| p.objective.expected_value(&solved.x).map(|f| (f - o.f).abs()));
            (gap, p.constraint.expected_value(&solved.x))
        }
        Instance::Coupled(p) => {
            let y = solved.y.as_deref().unwrap_or(&[]);
            let gap = match (p.phi.expected_value(&solved.x, y), p.phi.optimal_value(&solved.x)) {
                (Some(v), Some(star)) => Some(v - star),
                _ => None,
            };
            (gap, p.constraint.expected_value(&solved.x))
        }
    }
}

fn split(e: Estimate) -> (Option<f64>, Option<f64>) {
    (Some(e.mean), Some(e.se))
}

fn run_cell(cfg: &ExperimentConfig, instance: &Instance, n: usize, seed: u64) -> CellResult {
    let t0 = Instant::now();
    let solved = match solve_once(cfg, instance, n, seed) {
        Ok(s) => s,
        Err(e) => return CellResult::failed(n, seed, t0.elapsed().as_secs_f64(), &e),
    };
    match evaluate(cfg, instance, &solved, seed) {
        Ok(mut cell) => {
            cell.n = n;
            cell.wall_time = solved.wall_time;
            cell
        }
        Err(e) => CellResult::failed(n, seed, solved.wall_time, &e),
    }
}

fn evaluate(cfg: &ExperimentConfig, instance: &Instance, solved: &Solved, seed: u64) -> Result<CellResult> {
    let m = cfg.eval_samples;
    let mut obj_stream = SampleStream::for_role(seed, StreamRole::Evaluation, 0);
    let mut con_stream = SampleStream::for_role(seed, StreamRole::Evaluation, 1);
    let (obj, con, train) = match instance {
        Instance::Stochastic(p) => (
            mc_estimate(p.objective.as_ref(), &solved.x, m, &mut obj_stream)?,
            mc_estimate(p.constraint.as_ref(), &solved.x, m, &mut con_stream)?,
            None,
        ),
        Instance::Coupled(p) => {
            let y = solved.y.as_deref().expect("coupled solver returns y");
            let obj = mc_estimate_coupled(p.phi.as_ref(), &solved.x, y, m, &mut obj_stream)?;
            let con = mc_estimate(p.constraint.as_ref(), &solved.x, m, &mut con_stream)?;
            let train = match &cfg.problem {
                ProblemConfig::Metric { instance_seed, train_samples, .. } => {
                    // The fixed training sample is shared by every cell.
                    let mut a = SampleStream::for_role(*instance_seed, StreamRole::Pilot, 1);
                    let mut b = a.clone();
                    Some((
                        mc_estimate_coupled(p.phi.as_ref(), &solved.x, y, *train_samples, &mut a)?,
                        mc_estimate(p.constraint.as_ref(), &solved.x, *train_samples, &mut b)?,
                    ))
                }
                _ => None,
            };
            (obj, con, train)
        }
    };
    let (gap, exact_constraint) = exact_quality(instance, solved);
    let (objective, objective_se) = split(obj);
    let (constraint, constraint_se) = split(con);
    let (train_objective, train_objective_se, train_constraint, train_constraint_se) = match train {
        Some((o, c)) => (Some(o.mean), Some(o.se), Some(c.mean), Some(c.se)),
        None => (None, None, None, None),
    };
    Ok(CellResult {
        n: 0,
        seed,
        objective,
        objective_se,
        constraint,
        constraint_se,
        train_objective,
        train_objective_se,
        train_constraint,
        train_constraint_se,
        gap,
        exact_constraint,
        b_count: Some(solved.b_count),
        window: Some(solved.window),
        condition_holds: solved.condition_holds,
        lemma_alternative: solved.lemma_alternative,
        retries: Some(solved.retries),
        wall_time: solved.wall_time,
        error: None,
    })
}

/// Mean and across-seed standard error of one statistic at one budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Standard error across seeds; with a single seed, the Monte-Carlo SE.
    pub se: f64,
    pub count: usize,
}

impl Summary {
    fn of(values: &[f64], fallback_se: Option<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let est = Estimate::from_values(values.iter().copied());
        let se = if values.len() >= 2 { est.se } else { fallback_se.unwrap_or(0.0) };
        Some(Self { mean: est.mean, se, count: values.len() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub failures: usize,
    pub objective: Option<Summary>,
    pub constraint: Option<Summary>,
    pub train_objective: Option<Summary>,
    pub train_constraint: Option<Summary>,
    pub gap: Option<Summary>,
    pub wall_time: f64,
}

fn aggregate(n: usize, cells: &[&CellResult]) -> Aggregate {
    let ok: Vec<&&CellResult> = cells.iter().filter(|c| c.error.is_none()).collect();
    let pick = |f: &dyn Fn(&CellResult) -> Option<f64>, se: &dyn Fn(&CellResult) -> Option<f64>| {
        let v: Vec<f64> = ok.iter().filter_map(|c| f(c)).collect();
        let fallback = ok.first().and_then(|c| se(c));
        Summary::of(&v, fallback)
    };
    Aggregate {
        n,
        failures: cells.len() - ok.len(),
        objective: pick(&|c| c.objective, &|c| c.objective_se),
        constraint: pick(&|c| c.constraint, &|c| c.constraint_se),
        train_objective: pick(&|c| c.train_objective, &|c| c.train_objective_se),
        train_constraint: pick(&|c| c.train_constraint, &|c| c.train_constraint_se),
        gap: pick(&|c| c.gap, &|_| None),
        wall_time: cells.iter().map(|c| c.wall_time).sum::<f64>() / cells.len().max(1) as f64,
    }
}

/// Everything an experiment produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub name: String,
    pub algorithm: Algorithm,
    pub problem: String,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eval_samples: usize,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

impl SolutionReport {
    pub fn aggregate(&self, n: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.n == n)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// Equality of every statistic, ignoring timings.
    pub fn same_statistics(&self, other: &Self) -> bool {
        let strip = |r: &Self| {
            let mut r = r.clone();
            for c in &mut r.cells {
                c.wall_time = 0.0;
            }
            for a in &mut r.aggregates {
                a.wall_time = 0.0;
            }
            r
        };
        strip(self) == strip(other)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Run every `(N, seed)` cell in parallel. Failed cells are recorded, not
/// propagated; only instance construction errors abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SolutionReport> {
    cfg.validate()?;
    let instance = build_instance(cfg)?;
    let grid: Vec<(usize, u64)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let cells: Vec<CellResult> = grid.par_iter().map(|&(n, s)| run_cell(cfg, &instance, n, s)).collect();
    let aggregates = cfg
        .n_grid
        .iter()
        .map(|&n| aggregate(n, &cells.iter().filter(|c| c.n == n).collect::<Vec<_>>()))
        .collect();
    Ok(SolutionReport {
        name: cfg.name.clone(),
        algorithm: cfg.algorithm,
        problem: cfg.problem_kind().into(),
        n_grid: cfg.n_grid.clone(),
        seeds: cfg.seeds.clone(),
        eval_samples: cfg.eval_samples,
        cells,
        aggregates,
    })
}
