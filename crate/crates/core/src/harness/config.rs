//! Experiment configuration files.
//!
//! Configs are TOML documents. Unknown keys are rejected everywhere; see the
//! README for the full grammar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::metric::MetricSpec;
use crate::problems::synthetic::BenchmarkKind;
use crate::problems::toy::ToyConstraint;

/// Default Monte-Carlo evaluation size.
pub const DEFAULT_EVAL_SAMPLES: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Csa,
    Cspa,
    TwoPhase,
    SaaPolyak,
}

impl Algorithm {
    pub fn is_coupled(self) -> bool {
        matches!(self, Algorithm::Cspa | Algorithm::TwoPhase)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Constant steps, `s = 1`.
    GeneralConstant,
    /// `1/sqrt(k)` steps, second-half window.
    GeneralVariable,
    /// `1/k` steps.
    StronglyConvex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub mode: ScheduleMode,
    #[serde(default = "one")]
    pub c_g: f64,
    #[serde(default = "one")]
    pub c_e: f64,
    /// Overrides for constants; absent values come from the problem (exact
    /// where known, pilot estimates otherwise).
    #[serde(default)]
    pub constants: ConstantOverrides,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantOverrides {
    pub d: Option<f64>,
    pub d_y: Option<f64>,
    pub m_f: Option<f64>,
    pub m_g: Option<f64>,
    pub mu_f: Option<f64>,
    pub mu_g: Option<f64>,
    pub q: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Synthetic {
        benchmark: BenchmarkKind,
        dim: usize,
        sigma: f64,
        #[serde(default)]
        instance_seed: u64,
    },
    Toy {
        constraint: ToyConstraint,
        sigma: f64,
    },
    Cvar {
        #[serde(default = "default_assets")]
        assets: usize,
        #[serde(default = "default_factors")]
        factors: usize,
        beta: f64,
        #[serde(default)]
        instance_seed: u64,
        /// Historical returns CSV; replaces the generated factor model.
        returns_csv: Option<PathBuf>,
    },
    Metric {
        d: usize,
        cap: f64,
        lambda: f64,
        true_trace: Option<f64>,
        rank: Option<usize>,
        pair_noise: Option<f64>,
        label_noise: Option<f64>,
        #[serde(default)]
        instance_seed: u64,
        #[serde(default = "default_train_samples")]
        train_samples: usize,
    },
}

fn default_assets() -> usize {
    50
}
fn default_factors() -> usize {
    5
}
fn default_train_samples() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPhaseSettings {
    pub t: usize,
    /// Validation sample size `S`.
    pub validation_samples: usize,
    /// One validation sample for all candidates; otherwise one per candidate.
    #[serde(default = "yes")]
    pub shared_validation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub algorithm: Algorithm,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval")]
    pub eval_samples: usize,
    /// Iteration budget of the SAA solver; defaults to the sample size.
    pub saa_iterations: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub schedule: ScheduleConfig,
    pub problem: ProblemConfig,
    pub two_phase: Option<TwoPhaseSettings>,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_eval() -> usize {
    DEFAULT_EVAL_SAMPLES
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::validation("n_grid", "must not be empty"));
        }
        if self.n_grid.iter().any(|n| *n < 2) {
            return Err(Error::validation("n_grid", "every budget must be at least 2"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "must not be empty"));
        }
        if self.eval_samples < 2 {
            return Err(Error::validation("eval_samples", "must be at least 2"));
        }
        if let Some(it) = self.saa_iterations {
            if it < 2 {
                return Err(Error::validation("saa_iterations", "must be at least 2"));
            }
        }
        let s = &self.schedule;
        if !(s.c_g.is_finite() && s.c_g > 0.0) {
            return Err(Error::validation("schedule.c_g", "must be positive"));
        }
        if !(s.c_e.is_finite() && s.c_e >= 0.0) {
            return Err(Error::validation("schedule.c_e", "must be nonnegative"));
        }
        match &self.problem {
            ProblemConfig::Synthetic { dim, sigma, .. } => {
                if *dim == 0 {
                    return Err(Error::validation("problem.dim", "must be positive"));
                }
                if sigma.is_nan() || *sigma < 0.0 {
                    return Err(Error::validation("problem.sigma", "must be nonnegative"));
                }
            }
            ProblemConfig::Toy { sigma, .. } => {
                if sigma.is_nan() || *sigma < 0.0 {
                    return Err(Error::validation("problem.sigma", "must be nonnegative"));
                }
            }
            ProblemConfig::Cvar { assets, factors, beta, .. } => {
                if !(*beta > 0.0 && *beta < 1.0) {
                    return Err(Error::validation("problem.beta", format!("must lie in (0, 1), got {beta}")));
                }
                if *factors == 0 || assets < factors {
                    return Err(Error::validation("problem.factors", "need assets >= factors >= 1"));
                }
            }
            ProblemConfig::Metric { train_samples, .. } => {
                self.metric_spec().expect("metric problem").validate().map_err(|e| match e {
                    Error::Validation { field, message } => Error::validation(format!("problem.{field}"), message),
                    other => other,
                })?;
                if *train_samples < 2 {
                    return Err(Error::validation("problem.train_samples", "must be at least 2"));
                }
            }
        }
        let coupled_problem = matches!(self.problem, ProblemConfig::Toy { .. } | ProblemConfig::Metric { .. });
        if coupled_problem != self.algorithm.is_coupled() {
            return Err(Error::validation(
                "algorithm",
                format!("{:?} does not apply to a {} problem", self.algorithm, self.problem_kind()),
            ));
        }
        let strong = s.mode == ScheduleMode::StronglyConvex;
        if strong && matches!(self.problem, ProblemConfig::Cvar { .. }) {
            return Err(Error::validation(
                "schedule.mode",
                "strongly convex schedules need a quadratic-growth geometry; the CVaR simplex has none",
            ));
        }
        if self.algorithm.is_coupled() && s.mode == ScheduleMode::GeneralConstant {
            return Err(Error::validation("schedule.mode", "coupled problems use general_variable or strongly_convex"));
        }
        if self.algorithm == Algorithm::TwoPhase {
            match &self.two_phase {
                None => return Err(Error::validation("two_phase", "required for the two_phase algorithm")),
                Some(tp) if tp.t == 0 || tp.validation_samples == 0 => {
                    return Err(Error::validation("two_phase", "t and validation_samples must be positive"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Metric-learning instance settings with defaults filled in.
    pub fn metric_spec(&self) -> Option<MetricSpec> {
        match &self.problem {
            ProblemConfig::Metric { d, cap, lambda, true_trace, rank, pair_noise, label_noise, .. } => {
                let mut s = MetricSpec::new(*d, *cap, *lambda);
                s.true_trace = true_trace.unwrap_or(s.true_trace);
                s.rank = rank.unwrap_or(s.rank);
                s.pair_noise = pair_noise.unwrap_or(s.pair_noise);
                s.label_noise = label_noise.unwrap_or(s.label_noise);
                Some(s)
            }
            _ => None,
        }
    }

    pub fn problem_kind(&self) -> &'static str {
        match self.problem {
            ProblemConfig::Synthetic { .. } => "synthetic",
            ProblemConfig::Toy { .. } => "toy",
            ProblemConfig::Cvar { .. } => "cvar",
            ProblemConfig::Metric { .. } => "metric",
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
algorithm = "csa"
n_grid = [100]
seeds = [1]

[schedule]
mode = "general_constant"

[problem]
kind = "synthetic"
benchmark = "convex"
dim = 3
sigma = 0.1
"#;

    #[test]
    fn minimal_fills_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.eval_samples, 50_000);
        assert_eq!(c.schedule.c_g, 1.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("seeds = [1]", "seeds = [1]\nbogus = 3");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn bad_beta_is_a_validation_error() {
        let text = r#"
algorithm = "csa"
n_grid = [100]
seeds = [1]
[schedule]
mode = "general_variable"
[problem]
kind = "cvar"
beta = 1.5
"#;
        match ExperimentConfig::from_toml_str(text).unwrap_err() {
            Error::Validation { field, .. } => assert_eq!(field, "problem.beta"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_error_has_position() {
        let err = ExperimentConfig::from_toml_str("algorithm = \n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
