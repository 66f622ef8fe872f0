use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SYNTH: &str = r#"
name = "smoke"
algorithm = "csa"
n_grid = [200, 400]
seeds = [1, 2]
eval_samples = 500

[schedule]
mode = "general_variable"
c_e = 0.1

[problem]
kind = "synthetic"
benchmark = "convex"
dim = 3
sigma = 0.2
"#;

// The prox-center violates the constraint and steps are too small to leave
// it within two iterations, so with zero tolerance no iterate is accepted.
const EMPTY_B: &str = r#"
algorithm = "csa"
n_grid = [2]
seeds = [1]
eval_samples = 10

[schedule]
mode = "general_variable"
c_g = 1e-9
c_e = 0.0

[problem]
kind = "synthetic"
benchmark = "strongly_convex"
dim = 20
sigma = 0.0
"#;

fn coopsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopsa")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_artifacts_and_table_rereads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.toml", SYNTH);
    let out = dir.path().join("out");
    let o = coopsa(&["run", &cfg, "--out", out.to_str().unwrap(), "--strict"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "cells.csv", "table.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let printed = stdout(&o);
    assert!(printed.contains("N=200") && printed.contains("N=400"), "{printed}");
    assert_eq!(printed, fs::read_to_string(out.join("table.txt")).unwrap());

    let report = out.join("report.json");
    let text = coopsa(&["table", report.to_str().unwrap()]);
    assert!(text.status.success());
    assert_eq!(stdout(&text), printed);
    let csv = coopsa(&["table", report.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(stdout(&csv), fs::read_to_string(out.join("cells.csv")).unwrap());
}

#[test]
fn strict_flag_turns_failed_cells_into_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "empty.toml", EMPTY_B);
    let out = dir.path().join("out");
    let lenient = coopsa(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(lenient.status.success(), "{}", String::from_utf8_lossy(&lenient.stderr));
    assert!(String::from_utf8_lossy(&lenient.stderr).contains("cell N=2 seed=1"));
    let strict = coopsa(&["run", &cfg, "--out", out.to_str().unwrap(), "--strict"]);
    assert!(!strict.status.success());
    assert!(String::from_utf8_lossy(&strict.stderr).contains("1 of 1 cells failed"));
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &SYNTH.replace("sigma = 0.2", "sigma = 0.2\nwidth = 3"));
    let o = coopsa(&["run", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("width"));
    assert!(!coopsa(&["run", "/nonexistent.toml"]).status.success());
    assert!(!coopsa(&["table", "/nonexistent.json"]).status.success());
    assert!(!coopsa(&["frobnicate"]).status.success());
}

#[test]
fn deviation_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.toml", SYNTH);
    let o = coopsa(&["deviation", &cfg, "--replications", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("probability=1.0000"), "{}", stdout(&o));
    let tight = coopsa(&["deviation", &cfg, "--replications", "20", "--eps-obj", "0", "--eps-cons", "0"]);
    assert!(stdout(&tight).contains("probability=0.0000"), "{}", stdout(&tight));

    let cvar = write_config(
        dir.path(),
        "cvar.toml",
        "algorithm = \"csa\"\nn_grid = [100]\nseeds = [1]\n[schedule]\nmode = \"general_variable\"\n[problem]\nkind = \"cvar\"\nbeta = 0.1\n",
    );
    assert!(!coopsa(&["deviation", &cvar, "--replications", "2"]).status.success());
}
