//! Sample average approximation solved by Polyak's switching subgradient
//! method. With deterministic oracles the switching test `G(x_k) <= η_k` is
//! exact, so the method is the CSA engine run on a frozen problem.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::csa::{run_csa, CsaSchedule, RunStreams, RunTrace};
use crate::error::Result;
use crate::oracle::{SampleStream, StreamRole};
use crate::problems::saa::freeze_saa;
use crate::problems::StochasticProblem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaaReport {
    /// Frozen objective at the output.
    pub objective: f64,
    /// Frozen constraint at the output.
    pub constraint: f64,
    /// Seconds spent in the subgradient method.
    pub solve_time: f64,
    /// Seconds spent drawing the frozen sample (zero when frozen elsewhere).
    pub freeze_time: f64,
    pub b_count: usize,
    pub iterations: usize,
}

impl SaaReport {
    pub fn wall_time(&self) -> f64 {
        self.solve_time + self.freeze_time
    }
}

/// Run the switching subgradient method on an already frozen problem.
pub fn solve_saa_polyak(frozen: &StochasticProblem, schedule: &CsaSchedule) -> Result<(Vec<f64>, SaaReport, RunTrace)> {
    let start = Instant::now();
    // Frozen oracles ignore their tokens; the streams only keep the engine's
    // bookkeeping uniform.
    let mut streams = RunStreams::new(0, 0);
    let run = run_csa(frozen.as_csa(), schedule, &mut streams)?;
    let solve_time = start.elapsed().as_secs_f64();
    let probe = SampleStream::new(0, 0).draw();
    let objective = frozen.objective.eval(&run.x_bar, &probe)?.0;
    let constraint = frozen.constraint.eval(&run.x_bar, &probe)?.0;
    let report = SaaReport {
        objective,
        constraint,
        solve_time,
        freeze_time: 0.0,
        b_count: run.trace.b_count(),
        iterations: schedule.n,
    };
    Ok((run.x_bar, report, run.trace))
}

/// Freeze a sample of size `n_sample` from the trial's constraint stream and
/// solve; the reported time includes the freezing.
pub fn run_saa(
    problem: &StochasticProblem,
    n_sample: usize,
    schedule: &CsaSchedule,
    seed: u64,
) -> Result<(Vec<f64>, SaaReport, RunTrace)> {
    let start = Instant::now();
    let mut stream = SampleStream::for_role(seed, StreamRole::Constraint, 0);
    let frozen = freeze_saa(problem, n_sample, &mut stream)?;
    let freeze_time = start.elapsed().as_secs_f64();
    let (x, mut report, trace) = solve_saa_polyak(&frozen, schedule)?;
    report.freeze_time = freeze_time;
    Ok((x, report, trace))
}
