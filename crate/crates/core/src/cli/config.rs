use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::SampleScaling;
use crate::solvers::Averaging;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    JointGradient,
    JointSubgradient,
    Extragradient,
    Tikhonov,
    Sequential,
}

impl Scheme {
    pub fn needs_map(self) -> bool {
        matches!(self, Scheme::Extragradient | Scheme::Tikhonov)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::JointGradient => "joint-gradient",
            Scheme::JointSubgradient => "joint-subgradient",
            Scheme::Extragradient => "extragradient",
            Scheme::Tikhonov => "tikhonov",
            Scheme::Sequential => "sequential",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    pub horizon: usize,
    pub scheme: Scheme,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default)]
    pub emit_bounds: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub override_steplength_checks: bool,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    QuadraticTest(QuadraticTestSpec),
    EdispCost(EdispCostSpec),
    EdispCostNonsmooth(EdispCostSpec),
    EdispDemandVi(EdispDemandSpec),
    SkewVi(AffineViSpec),
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::QuadraticTest(_) => "quadratic-test",
            ProblemSpec::EdispCost(_) => "edisp-cost",
            ProblemSpec::EdispCostNonsmooth(_) => "edisp-cost-nonsmooth",
            ProblemSpec::EdispDemandVi(_) => "edisp-demand-vi",
            ProblemSpec::SkewVi(_) => "skew-vi",
        }
    }

    pub fn is_map(&self) -> bool {
        matches!(self, ProblemSpec::EdispDemandVi(_) | ProblemSpec::SkewVi(_))
    }
}

fn one() -> f64 {
    1.0
}

fn ten() -> f64 {
    10.0
}

fn default_samples() -> usize {
    1000
}

fn default_noise() -> f64 {
    crate::edisp::DEFAULT_NOISE_SD
}

fn five() -> usize {
    5
}

/// `f(x, theta) = x'Qx/2 + (B theta)'x` on a box, learning
/// `(h/2)||theta - theta*||^2` on a cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticTestSpec {
    pub q: Vec<Vec<f64>>,
    pub coupling: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    #[serde(default = "one")]
    pub learning_curvature: f64,
    #[serde(default = "ten")]
    pub theta_radius: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdispCostSpec {
    #[serde(default = "five")]
    pub generators: usize,
    #[serde(default = "five")]
    pub periods: usize,
    /// MW per unit; capacities and ramps are divided by it.
    #[serde(default = "ten")]
    pub base_mw: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    /// Per-unit demand; drawn at random when absent.
    #[serde(default)]
    pub demand: Option<Vec<f64>>,
    /// Quadratic coefficient of every generator, or the base slope of the
    /// piecewise-linear costs.
    #[serde(default)]
    pub cost_scale: Option<f64>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdispDemandSpec {
    #[serde(default = "five")]
    pub generators: usize,
    #[serde(default = "five")]
    pub periods: usize,
    #[serde(default = "ten")]
    pub base_mw: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default)]
    pub demand: Option<Vec<f64>>,
    #[serde(default)]
    pub cost_scale: Option<f64>,
    #[serde(default)]
    pub scaling: SampleScaling,
}

/// `F(x, theta) = A x + B theta + c` on a box, monotone in `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineViSpec {
    pub a: Vec<Vec<f64>>,
    pub coupling: Vec<Vec<f64>>,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
    pub theta_star: Vec<f64>,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    #[serde(default = "one")]
    pub learning_curvature: f64,
    #[serde(default = "ten")]
    pub theta_radius: f64,
    /// Known solution, used for the `x_err` column.
    #[serde(default)]
    pub solution: Option<Vec<f64>>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepSpec {
    Constant {
        gamma: f64,
    },
    Harmonic {
        scale: f64,
    },
    /// `r` defaults to `||x0 - x*||` and `m` to the declared subgradient
    /// bound; the horizon is the run's.
    OptimalSubgradient {
        #[serde(default)]
        r: Option<f64>,
        #[serde(default)]
        m: Option<f64>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default)]
    pub f: Option<StepSpec>,
    #[serde(default)]
    pub g: Option<StepSpec>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub gamma_g: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    /// Learning iterations of the sequential baseline; half the horizon
    /// when absent.
    #[serde(default)]
    pub learn_steps: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| toml_error(&e, Some(text)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_value(value: toml::Table) -> Result<Self> {
        let config: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| toml_error(&e, None))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { field, message } => Error::Config {
                field: format!("{}: {field}", path.display()),
                message,
            },
            other => other,
        })
    }

    /// Checks scheme/problem compatibility and that the parameters the
    /// scheme reads are present.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return Err(Error::config("id", "must be a non-empty name without path separators"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if self.scheme.needs_map() != self.problem.is_map() {
            let want = if self.scheme.needs_map() { "a variational" } else { "an optimization" };
            return Err(Error::config(
                "scheme",
                format!("{} needs {want} problem, got {}", self.scheme.name(), self.problem.name()),
            ));
        }
        let s = &self.schedule;
        let require = |present: bool, field: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::config(
                    format!("schedule.{field}"),
                    format!("required by scheme {}", self.scheme.name()),
                ))
            }
        };
        match self.scheme {
            Scheme::JointGradient | Scheme::JointSubgradient | Scheme::Sequential => {
                require(s.f.is_some(), "f")?;
                require(s.g.is_some(), "g")?;
            }
            Scheme::Extragradient => require(s.gamma_g.is_some(), "gamma_g")?,
            Scheme::Tikhonov => {
                require(s.gamma_g.is_some(), "gamma_g")?;
                require(s.alpha.is_some(), "alpha")?;
                require(s.beta.is_some(), "beta")?;
            }
        }
        if self.scheme == Scheme::Sequential && s.learn_steps.is_some_and(|l| l > self.horizon) {
            return Err(Error::config("schedule.learn_steps", "exceeds the horizon"));
        }
        Ok(())
    }
}

fn toml_error(e: &toml::de::Error, text: Option<&str>) -> Error {
    let field = match (e.span(), text) {
        (Some(span), Some(text)) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("line {line}, column {column}")
        }
        (Some(span), None) => format!("bytes {}..{}", span.start, span.end),
        (None, _) => "document".into(),
    };
    Error::config(field, e.message().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
id = "q"
horizon = 10
scheme = "joint-gradient"

[problem]
kind = "quadratic-test"
q = [[1.0, 0.0], [0.0, 1.0]]
coupling = [[-1.0, 0.0], [0.0, -1.0]]
theta_star = [1.0, 2.0]
x_lower = [-10.0, -10.0]
x_upper = [10.0, 10.0]

[schedule]
f = { kind = "constant", gamma = 0.5 }
g = { kind = "harmonic", scale = 1.0 }
"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(c.scheme, Scheme::JointGradient);
        assert_eq!(c.schedule.g, Some(StepSpec::Harmonic { scale: 1.0 }));
        match c.problem {
            ProblemSpec::QuadraticTest(q) => assert_eq!(q.learning_curvature, 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_reported() {
        let text = BASE.replace("horizon = 10", "horizon = 10\nhorizn = 3");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { field, message }) => {
                assert!(message.contains("horizn"), "{message}");
                assert_eq!(field, "line 4, column 1");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_problem_field_is_reported() {
        let text = BASE.replace("theta_star =", "thetastar = [0.0]\ntheta_star =");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn scheme_problem_mismatch() {
        let text = BASE.replace("joint-gradient", "extragradient");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "scheme"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_schedule_entry() {
        let text = BASE.replace("g = { kind = \"harmonic\", scale = 1.0 }", "");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "schedule.g"),
            other => panic!("{other:?}"),
        }
    }
}
