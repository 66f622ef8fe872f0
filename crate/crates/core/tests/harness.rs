use std::io::Write as _;

use coopsa::csa::{run_csa, RunStreams};
use coopsa::harness::config::{load_config, ExperimentConfig};
use coopsa::harness::deviation::estimate_deviation_prob;
use coopsa::harness::experiment::{build_instance, csa_schedule, run_experiment, CellResult, Instance};
use coopsa::harness::table::{emit_table, read_csv, TableFormat};
use proptest::prelude::*;

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).unwrap()
}

const CVAR: &str = r#"
name = "cvar-grid"
algorithm = "csa"
n_grid = [500, 1000, 2000, 5000]
seeds = [1, 2]
eval_samples = 2000

[schedule]
mode = "general_variable"
c_e = 0.05

[problem]
kind = "cvar"
assets = 10
factors = 2
beta = 0.1
"#;

const SYNTH: &str = r#"
algorithm = "csa"
n_grid = [800]
seeds = [4]
eval_samples = 100

[schedule]
mode = "general_variable"

[problem]
kind = "synthetic"
benchmark = "convex"
dim = 3
sigma = 0.0
"#;

#[test]
fn cvar_grid_has_one_row_per_budget() {
    let report = run_experiment(&config(CVAR)).unwrap();
    assert_eq!(report.aggregates.len(), 4);
    assert_eq!(report.cells.len(), 8);
    assert_eq!(report.failures(), 0);
    let text = emit_table(&report, TableFormat::Text).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["N=500", "N=1000", "N=2000", "N=5000"], "{text}");
    for label in ["Obj.", "Cons.", "CPU"] {
        assert!(text.lines().any(|l| l.starts_with(label)), "{text}");
    }
}

#[test]
fn deterministic_cell_equals_a_direct_run() {
    let cfg = config(SYNTH);
    let report = run_experiment(&cfg).unwrap();
    let Instance::Stochastic(p) = build_instance(&cfg).unwrap() else { panic!("stochastic instance expected") };
    let sched = csa_schedule(&cfg, &p, 800).unwrap();
    let run = run_csa(p.as_csa(), &sched, &mut RunStreams::new(4, 0)).unwrap();
    let f = p.objective.expected_value(&run.x_bar).unwrap();
    let g = p.constraint.expected_value(&run.x_bar).unwrap();
    let cell = &report.cells[0];
    assert!((cell.objective.unwrap() - f).abs() < 1e-12);
    assert!((cell.constraint.unwrap() - g).abs() < 1e-12);
    assert_eq!((cell.objective_se, cell.constraint_se), (Some(0.0), Some(0.0)));
    assert_eq!(cell.gap.unwrap(), (f - p.optimum.as_ref().unwrap().f).abs());
    assert_eq!(cell.b_count, Some(run.trace.b_count()));
}

#[test]
fn reports_are_reproducible() {
    let cfg = config(&CVAR.replace("[500, 1000, 2000, 5000]", "[300, 600]"));
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert!(a.same_statistics(&b));
    let back = coopsa::harness::experiment::SolutionReport::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn tables_need_seeds() {
    let mut report = run_experiment(&config(SYNTH)).unwrap();
    report.seeds.clear();
    assert!(emit_table(&report, TableFormat::Text).is_err());
    assert!(emit_table(&report, TableFormat::Csv).is_err());
}

#[test]
fn csv_round_trip_of_a_real_report() {
    let report = run_experiment(&config(&CVAR.replace("[500, 1000, 2000, 5000]", "[300, 600]"))).unwrap();
    let csv = emit_table(&report, TableFormat::Csv).unwrap();
    assert_eq!(read_csv(&csv).unwrap(), report.cells);
}

#[test]
fn deviation_probability_extremes() {
    let noisy = config(&SYNTH.replace("sigma = 0.0", "sigma = 0.5").replace("n_grid = [800]", "n_grid = [200]"));
    let all = estimate_deviation_prob(&noisy, f64::INFINITY, f64::INFINITY, 40).unwrap();
    assert_eq!(all.probability, 1.0);
    let none = estimate_deviation_prob(&noisy, 0.0, 0.0, 40).unwrap();
    assert_eq!(none.probability, 0.0);
    assert!(estimate_deviation_prob(&config(CVAR), 1.0, 1.0, 4).is_err());
}

#[test]
fn config_files() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    file.write_all(SYNTH.as_bytes()).unwrap();
    let cfg = load_config(file.path()).unwrap();
    assert_eq!(cfg, config(SYNTH));

    let mut bad = tempfile::NamedTempFile::new().unwrap();
    bad.write_all(SYNTH.replace("seeds = [4]", "seeds = [4]\nsigma_typo = 1").as_bytes()).unwrap();
    let err = load_config(bad.path()).unwrap_err().to_string();
    assert!(err.contains("sigma_typo"), "{err}");
    assert!(load_config(std::path::Path::new("/nonexistent/config.toml")).is_err());

    let empty = SYNTH.replace("seeds = [4]", "seeds = []");
    assert!(ExperimentConfig::from_toml_str(&empty).unwrap_err().to_string().contains("seeds"));
}

fn opt_f64() -> impl Strategy<Value = Option<f64>> {
    prop::option::of(prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), Just(0.0), Just(-1e-300)])
}

// Error messages are never empty, and CSV cannot tell an empty string from
// a missing one.
prop_compose! {
    fn cell()(n in 2usize..1_000_000, seed in any::<u64>(),
              a in opt_f64(), b in opt_f64(), c in opt_f64(), d in opt_f64(),
              e in opt_f64(), f in opt_f64(), g in opt_f64(), h in opt_f64(),
              gap in opt_f64(), exact in opt_f64(), lemma in opt_f64(),
              b_count in prop::option::of(0usize..1000), window in prop::option::of(1usize..1000),
              holds in prop::option::of(any::<bool>()), retries in prop::option::of(0usize..3),
              wall in 0.0f64..1e4, error in prop::option::of("[a-z ,\"]{1,20}")) -> CellResult {
        CellResult {
            n, seed,
            objective: a, objective_se: b, constraint: c, constraint_se: d,
            train_objective: e, train_objective_se: f, train_constraint: g, train_constraint_se: h,
            gap, exact_constraint: exact, b_count, window, condition_holds: holds,
            lemma_alternative: lemma, retries, wall_time: wall, error,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn csv_round_trips_any_cells(cells in prop::collection::vec(cell(), 1..6)) {
        let mut report = run_experiment(&config(SYNTH)).unwrap();
        report.cells = cells.clone();
        let csv = emit_table(&report, TableFormat::Csv).unwrap();
        prop_assert_eq!(read_csv(&csv).unwrap(), cells);
    }
}
