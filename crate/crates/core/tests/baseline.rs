use coopsa::baseline::{run_saa, solve_saa_polyak};
use coopsa::csa::{make_schedule, run_csa, CsaMode, CsaSchedule, RunStreams};
use coopsa::oracle::SampleStream;
use coopsa::problems::cvar::make_cvar;
use coopsa::problems::factor::{generate_factor_instance, ReturnModel};
use coopsa::problems::saa::freeze_saa;
use coopsa::problems::synthetic::{make_synthetic_benchmark, BenchmarkKind};
use coopsa::problems::StochasticProblem;

fn schedule_for(p: &StochasticProblem, mode: CsaMode, n: usize, c_e: f64) -> CsaSchedule {
    let d = p.geometry.diameter().unwrap();
    make_schedule(mode, n, d, p.objective.constants().m, p.constraint.constants().m, None, 1.0, c_e).unwrap()
}

fn cvar(assets: usize) -> StochasticProblem {
    make_cvar(ReturnModel::factor(generate_factor_instance(assets, 3, 5).unwrap()).unwrap(), 0.1, 5).unwrap()
}

#[test]
fn single_frozen_scenario_of_a_deterministic_problem_is_the_same_run() {
    let p = make_synthetic_benchmark(BenchmarkKind::Convex, 3, 0.0, 4).unwrap();
    let sched = schedule_for(&p, CsaMode::GeneralVariable, 600, 1.0);
    let frozen = freeze_saa(&p, 1, &mut SampleStream::new(1, 1)).unwrap();
    let (x, _, mut saa) = solve_saa_polyak(&frozen, &sched).unwrap();
    let mut direct = run_csa(p.as_csa(), &sched, &mut RunStreams::new(9, 0)).unwrap();
    saa.wall_time = 0.0;
    direct.trace.wall_time = 0.0;
    assert_eq!(saa, direct.trace);
    assert_eq!(x, direct.x_bar);
}

#[test]
fn output_meets_the_largest_tolerance() {
    for (mode, seed) in [(CsaMode::GeneralConstant, 1), (CsaMode::GeneralVariable, 2), (CsaMode::GeneralVariable, 3)] {
        let p = cvar(20);
        let sched = schedule_for(&p, mode, 2000, 0.05);
        let (_, report, _) = run_saa(&p, 200, &sched, seed).unwrap();
        assert!(report.constraint <= sched.max_eta(), "{} > {}", report.constraint, sched.max_eta());
        assert_eq!(report.iterations, 2000);
        assert!(report.b_count > 0);
    }
}

#[test]
fn iteration_cost_grows_linearly_in_the_sample() {
    let p = cvar(50);
    let sched = schedule_for(&p, CsaMode::GeneralVariable, 300, 0.05);
    let time = |n_sample: usize| {
        let frozen = freeze_saa(&p, n_sample, &mut SampleStream::new(2, 2)).unwrap();
        (0..7)
            .map(|_| solve_saa_polyak(&frozen, &sched).unwrap().1.solve_time)
            .fold(f64::INFINITY, f64::min)
    };
    // Warm caches and the allocator before timing.
    time(100);
    let ratio = time(1000) / time(100);
    assert!((6.0..=14.0).contains(&ratio), "ratio {ratio}");
}
