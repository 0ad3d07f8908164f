use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AffineViSpec, EdispCostSpec, EdispDemandSpec, ExperimentConfig, ProblemSpec, QuadraticTestSpec, StepSpec};
use super::trace_csv::{trace_csv, write_trace_csv, CsvRow};
use super::Scheme;
use crate::bounds::{averaging_bound, strongly_convex_bound, subgradient_bound, AveragingParams, StronglyConvexParams, SubgradientParams};
use crate::edisp::{
    build_demand_misspecified, fleet, random_demand, sample_demand, CostCurve, CostForm, CostScenario, DispatchInstance, GeneratorSpec,
    SamplingPlan,
};
use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, Vector};
use crate::problems::{make_isotropic_learning, make_quadratic_objective, AffineMap, LearningProblem, Map, Objective};
use crate::schedules::{contraction_factor, StepSchedule, TikhonovSchedule};
use crate::solvers::{
    extragradient, joint_gradient, joint_subgradient, reference_solution, sequential_baseline, tikhonov, Averaging, JointProblem,
    Reference, RunOptions, SolveTrace, Steps, VariationalProblem,
};

const DEFAULT_QUADRATIC_COST: f64 = 10.0;
const DEFAULT_PIECEWISE_SLOPE: f64 = 1.0;
const DEFAULT_DEMAND_VI_COST: f64 = 0.5;

/// Command-line settings that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct RunFlags {
    pub seed: Option<u64>,
    /// Directory receiving `<id>.csv`; replaces the config's `output`.
    pub out_dir: Option<PathBuf>,
    pub override_steplength_checks: bool,
}

/// Final-iterate figures of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub id: String,
    pub problem: String,
    pub scheme: String,
    pub seed: u64,
    pub iterations: usize,
    pub theta_err: f64,
    pub x_err: Option<f64>,
    pub f_gap: Option<f64>,
    pub avg_f_gap: Option<f64>,
    pub vi_gap: Option<f64>,
    pub bound: Option<f64>,
    pub wall_time: Duration,
    pub trace_path: PathBuf,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
        write!(
            f,
            "id={} problem={} scheme={} seed={} iterations={} theta_err={:.6e} x_err={} f_gap={} avg_f_gap={} vi_gap={} bound={} wall_time={:.3}s trace={}",
            self.id,
            self.problem,
            self.scheme,
            self.seed,
            self.iterations,
            self.theta_err,
            opt(self.x_err),
            opt(self.f_gap),
            opt(self.avg_f_gap),
            opt(self.vi_gap),
            opt(self.bound),
            self.wall_time.as_secs_f64(),
            self.trace_path.display()
        )
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub trace: SolveTrace,
    pub rows: Vec<CsvRow>,
}

/// A built experiment: oracles, sets, starting points and reference solution.
pub enum Instance {
    Optimization {
        objective: Box<dyn Objective>,
        learning: LearningProblem,
        set: FeasibleSet,
        reference: Reference,
        x0: Vector,
        theta0: Vector,
    },
    Variational {
        map: Box<dyn Map>,
        learning: LearningProblem,
        set: FeasibleSet,
        reference: Option<Reference>,
        x0: Vector,
        theta0: Vector,
    },
}

impl Instance {
    pub fn learning(&self) -> &LearningProblem {
        match self {
            Instance::Optimization { learning, .. } | Instance::Variational { learning, .. } => learning,
        }
    }

    pub fn set(&self) -> &FeasibleSet {
        match self {
            Instance::Optimization { set, .. } | Instance::Variational { set, .. } => set,
        }
    }

    pub fn starts(&self) -> (&Vector, &Vector) {
        match self {
            Instance::Optimization { x0, theta0, .. } | Instance::Variational { x0, theta0, .. } => (x0, theta0),
        }
    }

    pub fn reference(&self) -> Option<&Reference> {
        match self {
            Instance::Optimization { reference, .. } => Some(reference),
            Instance::Variational { reference, .. } => reference.as_ref(),
        }
    }
}

fn vector(values: &[f64]) -> Vector {
    Vector::from_column_slice(values)
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::config(field, "rows have different lengths"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

fn sized(values: &Option<Vec<f64>>, dim: usize, field: &str) -> Result<Option<Vector>> {
    match values {
        Some(v) if v.len() != dim => Err(Error::config(field, format!("expected {dim} entries, found {}", v.len()))),
        Some(v) => Ok(Some(vector(v))),
        None => Ok(None),
    }
}

fn bounds_box(lower: &[f64], upper: &[f64]) -> Result<FeasibleSet> {
    if lower.len() != upper.len() {
        return Err(Error::config("problem.x_upper", "length differs from x_lower"));
    }
    FeasibleSet::boxed(vector(lower), vector(upper))
}

fn quadratic_test(spec: &QuadraticTestSpec) -> Result<Instance> {
    let set = bounds_box(&spec.x_lower, &spec.x_upper)?;
    let n = set.dim();
    let truth = vector(&spec.theta_star);
    let theta_set = FeasibleSet::cube(truth.len(), -spec.theta_radius, spec.theta_radius)?;
    let objective = make_quadratic_objective(matrix(&spec.q, "problem.q")?, matrix(&spec.coupling, "problem.coupling")?)?
        .bounded_on(&set, &theta_set);
    if objective.dim_x() != n || objective.dim_theta() != truth.len() {
        return Err(Error::config("problem.coupling", "dimensions disagree with the box and theta_star"));
    }
    let learning = make_isotropic_learning(truth, spec.learning_curvature, theta_set)?;
    let reference = reference_solution(&objective, &set, learning.truth())?;
    let x0 = sized(&spec.x0, n, "problem.x0")?.unwrap_or_else(|| Vector::zeros(n));
    let theta0 = sized(&spec.theta0, learning.dim(), "problem.theta0")?.unwrap_or_else(|| Vector::zeros(learning.dim()));
    Ok(Instance::Optimization {
        objective: Box::new(objective),
        learning,
        set,
        reference,
        x0,
        theta0,
    })
}

fn demand_for(gens: &[GeneratorSpec], periods: usize, given: &Option<Vec<f64>>, rng: &mut ChaCha8Rng) -> Result<Vector> {
    match sized(given, periods, "problem.demand")? {
        Some(d) => Ok(d),
        None => Ok(random_demand(gens, periods, rng)),
    }
}

fn edisp_cost(spec: &EdispCostSpec, form: CostForm, seed: u64) -> Result<Instance> {
    if spec.generators == 0 || spec.periods == 0 {
        return Err(Error::config("problem.generators", "generators and periods must be positive"));
    }
    let gens = match form {
        CostForm::Quadratic => {
            let a = spec.cost_scale.unwrap_or(DEFAULT_QUADRATIC_COST);
            fleet(spec.generators, spec.base_mw, |i, _| CostCurve::Quadratic {
                a,
                b: 1.0 + 0.5 * i as f64,
            })
        }
        CostForm::MaxLinear => {
            let s = spec.cost_scale.unwrap_or(DEFAULT_PIECEWISE_SLOPE);
            fleet(spec.generators, spec.base_mw, |i, cap| CostCurve::convex_pieces(s * (1.0 + 0.1 * i as f64), cap))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let demand = demand_for(&gens, spec.periods, &spec.demand, &mut rng)?;
    let instance = DispatchInstance::new(gens, spec.periods, demand)?;
    let plan = SamplingPlan {
        samples: spec.samples,
        noise_sd: spec.noise_sd,
        seed: rng.random(),
    };
    let scenario = CostScenario::new(instance, form, plan)?;
    let reference = scenario.reference()?;
    let n = scenario.instance.dim();
    let x0 = sized(&spec.x0, n, "problem.x0")?.unwrap_or_else(|| Vector::zeros(n));
    let theta0 = sized(&spec.theta0, scenario.learning.dim(), "problem.theta0")?.unwrap_or_else(|| scenario.default_theta0());
    let set = scenario.instance.set().clone();
    Ok(Instance::Optimization {
        objective: Box::new(scenario.objective),
        learning: scenario.learning,
        set,
        reference,
        x0,
        theta0,
    })
}

fn edisp_demand(spec: &EdispDemandSpec, seed: u64) -> Result<Instance> {
    if spec.generators == 0 || spec.periods == 0 {
        return Err(Error::config("problem.generators", "generators and periods must be positive"));
    }
    let a = spec.cost_scale.unwrap_or(DEFAULT_DEMAND_VI_COST);
    let gens = fleet(spec.generators, spec.base_mw, |i, _| CostCurve::Quadratic {
        a,
        b: 1.0 + 0.1 * i as f64,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let demand = demand_for(&gens, spec.periods, &spec.demand, &mut rng)?;
    let samples = sample_demand(&demand, spec.samples, spec.noise_sd, rng.random())?;
    let scenario = build_demand_misspecified(gens, spec.periods, &demand, &samples, spec.scaling)?;
    let reference = scenario.reference()?;
    let x0 = Vector::zeros(scenario.set.dim());
    let theta0 = Vector::zeros(scenario.periods);
    Ok(Instance::Variational {
        map: Box::new(scenario.map),
        learning: scenario.learning,
        set: scenario.set,
        reference: Some(reference),
        x0,
        theta0,
    })
}

fn affine_vi(spec: &AffineViSpec) -> Result<Instance> {
    let set = bounds_box(&spec.x_lower, &spec.x_upper)?;
    let n = set.dim();
    let truth = vector(&spec.theta_star);
    let offset = sized(&spec.offset, n, "problem.offset")?.unwrap_or_else(|| Vector::zeros(n));
    let map = AffineMap::new(matrix(&spec.a, "problem.a")?, matrix(&spec.coupling, "problem.coupling")?, offset)?;
    if map.dim_x() != n || map.dim_theta() != truth.len() {
        return Err(Error::config("problem.coupling", "dimensions disagree with the box and theta_star"));
    }
    let theta_set = FeasibleSet::cube(truth.len(), -spec.theta_radius, spec.theta_radius)?;
    let learning = make_isotropic_learning(truth, spec.learning_curvature, theta_set)?;
    let reference = sized(&spec.solution, n, "problem.solution")?.map(|x| Reference { x, value: None });
    let x0 = sized(&spec.x0, n, "problem.x0")?.unwrap_or_else(|| Vector::zeros(n));
    let theta0 = sized(&spec.theta0, learning.dim(), "problem.theta0")?.unwrap_or_else(|| Vector::zeros(learning.dim()));
    Ok(Instance::Variational {
        map: Box::new(map),
        learning,
        set,
        reference,
        x0,
        theta0,
    })
}

/// Builds the problem described by `config.problem`, drawing random data
/// from `seed`.
pub fn build_instance(problem: &ProblemSpec, seed: u64) -> Result<Instance> {
    match problem {
        ProblemSpec::QuadraticTest(spec) => quadratic_test(spec),
        ProblemSpec::EdispCost(spec) => edisp_cost(spec, CostForm::Quadratic, seed),
        ProblemSpec::EdispCostNonsmooth(spec) => edisp_cost(spec, CostForm::MaxLinear, seed),
        ProblemSpec::EdispDemandVi(spec) => edisp_demand(spec, seed),
        ProblemSpec::SkewVi(spec) => affine_vi(spec),
    }
}

fn step_schedule(spec: StepSpec, field: &str, horizon: usize, r: f64, m: f64) -> Result<StepSchedule> {
    let sched = match spec {
        StepSpec::Constant { gamma } => StepSchedule::constant(gamma),
        StepSpec::Harmonic { scale } => StepSchedule::harmonic(scale),
        StepSpec::OptimalSubgradient { r: given_r, m: given_m } => {
            StepSchedule::optimal_subgradient(given_r.unwrap_or(r), given_m.unwrap_or(m), horizon)
        }
    };
    sched.map_err(|e| Error::config(field, e.to_string()))
}

/// Theoretical envelope for the trace, where one applies.
fn bound_column(config: &ExperimentConfig, instance: &Instance, steps: Option<&Steps>) -> Box<dyn Fn(usize) -> Option<f64>> {
    let none: Box<dyn Fn(usize) -> Option<f64>> = Box::new(|_| None);
    let (Some(steps), Instance::Optimization { objective, learning, set, reference, x0, theta0 }) = (steps, instance) else {
        return none;
    };
    if !config.emit_bounds {
        return none;
    }
    let Ok(x_start) = set.project(x0) else { return none };
    let Ok(theta_start) = learning.set().project(theta0) else {
        return none;
    };
    let x0_err = (&x_start - &reference.x).norm();
    let theta0_err = (&theta_start - learning.truth()).norm();
    let c = objective.constants().clone();
    let lc = learning.constants().clone();
    let Some(gamma_g) = steps.g.constant_value() else {
        return none;
    };
    let Ok(q_g) = contraction_factor(gamma_g, lc.eta_g, lc.g_g) else {
        return none;
    };
    let horizon = config.horizon;
    match (config.scheme, config.averaging) {
        (Scheme::JointGradient, Averaging::None) => {
            let Some(gamma_f) = steps.f.constant_value() else { return none };
            if c.eta_f <= 0.0 || lc.eta_g <= 0.0 {
                return none;
            }
            let p = StronglyConvexParams {
                gamma_f,
                eta_f: c.eta_f,
                g_fx: c.g_fx,
                gamma_g,
                eta_g: lc.eta_g,
                g_g: lc.g_g,
                x0_err,
                theta0_err,
                l_theta: c.l_theta,
            };
            if strongly_convex_bound(0, &p).is_err() {
                return none;
            }
            Box::new(move |k| {
                if k == 0 {
                    Some(x0_err)
                } else {
                    strongly_convex_bound(k - 1, &p).ok()
                }
            })
        }
        (Scheme::JointGradient, Averaging::Uniform) => {
            let Some(gamma_f) = steps.f.constant_value() else { return none };
            let p = AveragingParams {
                gamma_f,
                x0_err,
                theta0_err,
                c: set.max_distance_from(&reference.x),
                g_ftheta: c.g_ftheta,
                l_ftheta: c.l_ftheta,
                q_g,
            };
            Box::new(move |k| averaging_bound(k, &p).ok().filter(|b| b.is_finite()))
        }
        (Scheme::JointSubgradient, _) if matches!(steps.f, StepSchedule::OptimalSubgradient { .. }) => {
            let StepSchedule::OptimalSubgradient { m, .. } = steps.f else { return none };
            let p = SubgradientParams {
                m,
                x0_err,
                theta0_err,
                l_ftheta: c.l_ftheta,
                q_g,
            };
            Box::new(move |k| {
                if k == horizon {
                    subgradient_bound(k, &p).ok().filter(|b| b.is_finite())
                } else {
                    None
                }
            })
        }
        _ => none,
    }
}

fn execute(config: &ExperimentConfig, instance: &Instance, opts: &RunOptions) -> (Result<SolveTrace>, Option<Steps>) {
    let s = &config.schedule;
    let (x0, theta0) = instance.starts();
    match instance {
        Instance::Optimization {
            objective,
            learning,
            set,
            reference,
            ..
        } => {
            let problem = JointProblem {
                objective: objective.as_ref(),
                learning,
                set,
            };
            let r = set.project(x0).map(|x| (x - &reference.x).norm()).unwrap_or(f64::NAN);
            let m = objective.constants().m_subgrad;
            let steps = (|| {
                let f = step_schedule(s.f.ok_or_else(|| Error::config("schedule.f", "missing"))?, "schedule.f", config.horizon, r, m)?;
                let g = step_schedule(s.g.ok_or_else(|| Error::config("schedule.g", "missing"))?, "schedule.g", config.horizon, r, m)?;
                Ok(Steps { f, g })
            })();
            let steps = match steps {
                Ok(steps) => steps,
                Err(e) => return (Err(e), None),
            };
            let trace = match config.scheme {
                Scheme::JointGradient => joint_gradient(&problem, x0, theta0, &steps, config.averaging, opts),
                Scheme::JointSubgradient => joint_subgradient(&problem, x0, theta0, &steps, opts),
                Scheme::Sequential => {
                    let learn = s.learn_steps.unwrap_or(config.horizon / 2);
                    sequential_baseline(&problem, x0, theta0, &steps, learn, opts)
                }
                other => Err(Error::config("scheme", format!("{} needs a variational problem", other.name()))),
            };
            (trace, Some(steps))
        }
        Instance::Variational { map, learning, set, .. } => {
            let problem = VariationalProblem {
                map: map.as_ref(),
                learning,
                set,
            };
            let gamma_g = s.gamma_g.unwrap_or(f64::NAN);
            let trace = match config.scheme {
                Scheme::Extragradient => extragradient(&problem, x0, theta0, s.tau, gamma_g, opts),
                Scheme::Tikhonov => TikhonovSchedule::new(map.constants().l_fx, s.alpha.unwrap_or(f64::NAN), s.beta.unwrap_or(f64::NAN))
                    .map_err(|e| Error::config("schedule.alpha", e.to_string()))
                    .and_then(|sched| tikhonov(&problem, x0, theta0, &sched, gamma_g, opts)),
                other => Err(Error::config("scheme", format!("{} needs an optimization problem", other.name()))),
            };
            (trace, None)
        }
    }
}

fn trace_path(config: &ExperimentConfig, flags: &RunFlags) -> PathBuf {
    match (&flags.out_dir, &config.output) {
        (Some(dir), _) => dir.join(format!("{}.csv", config.id)),
        (None, Some(path)) => path.clone(),
        (None, None) => PathBuf::from(format!("{}.csv", config.id)),
    }
}

/// Runs one experiment and writes its trace. A diverging run still writes
/// the records collected before divergence, then returns the error.
pub fn run(config: &ExperimentConfig, flags: &RunFlags) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let seed = flags.seed.unwrap_or(config.seed);
    let instance = build_instance(&config.problem, seed)?;
    let mut opts = RunOptions::new(config.horizon).overriding_checks(config.override_steplength_checks || flags.override_steplength_checks);
    if let Some(reference) = instance.reference() {
        opts = opts.with_reference(reference.clone());
    }
    let (result, steps) = execute(config, &instance, &opts);
    let bound = bound_column(config, &instance, steps.as_ref());
    let path = trace_path(config, flags);
    let trace = match result {
        Ok(trace) => trace,
        Err(Error::Diverged { k, trace }) => {
            write_trace_csv(&path, &trace_csv(&trace, bound.as_ref()))?;
            return Err(Error::Diverged { k, trace });
        }
        Err(e) => return Err(e),
    };
    let rows = trace_csv(&trace, bound.as_ref());
    write_trace_csv(&path, &rows)?;
    let last = trace.last().ok_or_else(|| Error::InvalidProblem("empty trace".into()))?;
    let summary = Summary {
        id: config.id.clone(),
        problem: config.problem.name().into(),
        scheme: config.scheme.name().into(),
        seed,
        iterations: last.k,
        theta_err: last.theta_err,
        x_err: last.x_err,
        f_gap: last.f_gap,
        avg_f_gap: last.avg_f_gap,
        vi_gap: last.vi_gap,
        bound: rows.last().and_then(|r| r.bound),
        wall_time: start.elapsed(),
        trace_path: path,
    };
    Ok(RunOutcome { summary, trace, rows })
}

pub fn run_file(path: &Path, flags: &RunFlags) -> Result<RunOutcome> {
    run(&ExperimentConfig::load(path)?, flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(scheme: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            r#"
id = "q"
horizon = 100
scheme = "{scheme}"
emit_bounds = true
{extra}

[problem]
kind = "quadratic-test"
q = [[2.0, 0.0], [0.0, 1.0]]
coupling = [[-1.0, 0.0], [0.0, -1.0]]
theta_star = [1.0, 0.5]
x_lower = [-5.0, -5.0]
x_upper = [5.0, 5.0]
theta0 = [1.0, 0.5]

[schedule]
f = {{ kind = "constant", gamma = 0.4 }}
g = {{ kind = "constant", gamma = 0.5 }}
"#
        ))
        .unwrap()
    }

    #[test]
    fn specified_quadratic_converges() {
        let dir = tempfile::tempdir().unwrap();
        let flags = RunFlags {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunFlags::default()
        };
        let out = run(&quadratic("joint-gradient", ""), &flags).unwrap();
        assert!(out.summary.x_err.unwrap() <= 1e-10);
        assert_eq!(out.summary.iterations, 100);
        assert!(dir.path().join("q.csv").exists());
        for row in &out.rows {
            assert!(row.x_err.unwrap() <= row.bound.unwrap() * (1.0 + 1e-6) + 1e-12, "k={}", row.k);
        }
    }

    #[test]
    fn summary_line_names_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let flags = RunFlags {
            out_dir: Some(dir.path().to_path_buf()),
            seed: Some(3),
            ..RunFlags::default()
        };
        let out = run(&quadratic("sequential", ""), &flags).unwrap();
        let line = out.summary.to_string();
        assert!(line.starts_with("id=q problem=quadratic-test scheme=sequential seed=3 iterations=100"));
        assert!(line.contains("wall_time="));
    }

    #[test]
    fn divergence_keeps_partial_trace() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quadratic("joint-gradient", "override_steplength_checks = true");
        config.horizon = 2000;
        config.schedule.f = Some(StepSpec::Constant { gamma: 3.0 });
        if let ProblemSpec::QuadraticTest(spec) = &mut config.problem {
            spec.x_lower = vec![f64::NEG_INFINITY; 2];
            spec.x_upper = vec![f64::INFINITY; 2];
            spec.x0 = Some(vec![1.0, 1.0]);
        }
        let flags = RunFlags {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunFlags::default()
        };
        match run(&config, &flags) {
            Err(Error::Diverged { k, trace }) => {
                let rows = crate::cli::read_trace_csv(&dir.path().join("q.csv")).unwrap();
                assert_eq!(rows.len(), trace.len());
                assert!(k > 0 && rows.len() == k);
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("run should diverge"),
        }
    }

    #[test]
    fn inadmissible_step_is_rejected_unless_overridden() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quadratic("joint-gradient", "");
        config.schedule.f = Some(StepSpec::Constant { gamma: 1.5 });
        let mut flags = RunFlags {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunFlags::default()
        };
        assert!(matches!(run(&config, &flags), Err(Error::Inadmissible(_))));
        flags.override_steplength_checks = true;
        assert!(run(&config, &flags).is_ok());
    }
}
