//! Joint learning/optimization schemes, their specified-problem
//! counterparts, and the sequential baseline.
//!
//! Every run records `(x_0, theta_0)` as record 0. Record `k` carries the
//! iterate pair `(x_k, theta_k)` together with the steplengths applied to it
//! in the update producing record `k + 1`; schedules are queried with `k + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, SetKind, Vector};
use crate::problems::{LearningProblem, Map, Objective};
use crate::schedules::{extragradient_step_bound, StepSchedule, TikhonovSchedule};

/// Iterations recorded individually before thinning starts.
pub const DENSE_RECORDS: usize = 10_000;
/// Iterates with norm above this multiple of `1 + C` count as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e12;
/// Stopping threshold on the step change of the reference solve.
pub const REFERENCE_TOL: f64 = 1e-12;
pub const REFERENCE_MAX_ITERS: usize = 1_000_000;
/// Fraction of the extragradient step bound used when no step is given.
pub const DEFAULT_TAU_FRACTION: f64 = 0.9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    #[default]
    Joint,
    Learning,
    Optimization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub phase: Phase,
    pub x: Vector,
    pub theta: Vector,
    pub x_avg: Option<Vector>,
    pub gamma_f: f64,
    pub gamma_g: f64,
    pub epsilon: Option<f64>,
    /// `||grad f(x_k, theta_k) - grad f(x_k, theta*)||`, or the same
    /// difference of map values.
    pub residual_r_norm: f64,
    pub theta_err: f64,
    pub x_err: Option<f64>,
    /// `f(x_k, theta*) - f*`.
    pub f_gap: Option<f64>,
    /// `f(avg x_k, theta_k) - f*`.
    pub avg_f_gap: Option<f64>,
    pub vi_gap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
}

impl SolveTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn at(&self, k: usize) -> Option<&TraceRecord> {
        self.records
            .binary_search_by_key(&k, |r| r.k)
            .ok()
            .map(|i| &self.records[i])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    #[default]
    None,
    /// Mean of `x_1, ..., x_k`.
    Uniform,
    /// Steplength-weighted mean of `x_0, ..., x_k`.
    Weighted,
}

/// Known solution of the true problem, used only for metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub x: Vector,
    pub value: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub horizon: usize,
    pub reference: Option<Reference>,
    pub override_checks: bool,
    pub thin: bool,
}

impl RunOptions {
    pub fn new(horizon: usize) -> Self {
        RunOptions {
            horizon,
            reference: None,
            override_checks: false,
            thin: true,
        }
    }

    pub fn with_reference(mut self, reference: Reference) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn overriding_checks(mut self, yes: bool) -> Self {
        self.override_checks = yes;
        self
    }

    pub fn keep_every_record(mut self) -> Self {
        self.thin = false;
        self
    }
}

#[derive(Clone, Copy)]
pub struct JointProblem<'a> {
    pub objective: &'a dyn Objective,
    pub learning: &'a LearningProblem,
    pub set: &'a FeasibleSet,
}

#[derive(Clone, Copy)]
pub struct VariationalProblem<'a> {
    pub map: &'a dyn Map,
    pub learning: &'a LearningProblem,
    pub set: &'a FeasibleSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Steps {
    pub f: StepSchedule,
    pub g: StepSchedule,
}

/// Gap of a VI over `set` at `x` given `value = F(x)`: `F'x - min_y F'y`
/// for boxes, `F'x` for the nonnegative orthant, unavailable otherwise.
pub fn vi_gap(set: &FeasibleSet, value: &Vector, x: &Vector) -> Option<f64> {
    match set.kind() {
        SetKind::Box { lower, upper } => {
            let lowest: f64 = value
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(f, (l, u))| if *f >= 0.0 { f * l } else { f * u })
                .sum();
            Some(value.dot(x) - lowest)
        }
        SetKind::NonnegOrthant { .. } => Some(value.dot(x)),
        SetKind::Polyhedron(_) => None,
    }
}

enum Oracle<'a> {
    Objective(&'a dyn Objective),
    Map(&'a dyn Map),
}

struct Recorder<'a> {
    oracle: Oracle<'a>,
    set: &'a FeasibleSet,
    truth: &'a Vector,
    reference: Option<&'a Reference>,
    averaging: Averaging,
    horizon: usize,
    stride: usize,
    limit: f64,
    avg_sum: Vector,
    avg_weight: f64,
    trace: SolveTrace,
}

struct StepInfo {
    phase: Phase,
    gamma_f: f64,
    gamma_g: f64,
    epsilon: Option<f64>,
}

impl<'a> Recorder<'a> {
    fn new(oracle: Oracle<'a>, set: &'a FeasibleSet, truth: &'a Vector, averaging: Averaging, opts: &'a RunOptions) -> Self {
        let stride = if opts.thin && opts.horizon > DENSE_RECORDS {
            opts.horizon.div_ceil(DENSE_RECORDS)
        } else {
            1
        };
        Recorder {
            oracle,
            set,
            truth,
            reference: opts.reference.as_ref(),
            averaging,
            horizon: opts.horizon,
            stride,
            limit: DIVERGENCE_FACTOR * (1.0 + set.diameter_bound()),
            avg_sum: Vector::zeros(set.dim()),
            avg_weight: 0.0,
            trace: SolveTrace::default(),
        }
    }

    fn wanted(&self, k: usize) -> bool {
        k <= DENSE_RECORDS || k.is_multiple_of(self.stride) || k == self.horizon
    }

    fn observe(&mut self, k: usize, x: &Vector, theta: &Vector, step: StepInfo) -> Result<()> {
        let finite = x.iter().chain(theta.iter()).all(|v| v.is_finite());
        if !finite || x.norm() > self.limit {
            return Err(Error::Diverged {
                k,
                trace: Box::new(std::mem::take(&mut self.trace)),
            });
        }
        let weight = match self.averaging {
            Averaging::None => 0.0,
            Averaging::Uniform if k == 0 => 0.0,
            Averaging::Uniform => 1.0,
            Averaging::Weighted => step.gamma_f,
        };
        if weight > 0.0 {
            self.avg_sum.axpy(weight, x, 1.0);
            self.avg_weight += weight;
        }
        if !self.wanted(k) {
            return Ok(());
        }
        let x_avg = (self.avg_weight > 0.0).then(|| &self.avg_sum / self.avg_weight);
        let x_err = self.reference.map(|r| (x - &r.x).norm());
        let f_star = self.reference.and_then(|r| r.value);
        let (residual_r_norm, f_gap, avg_f_gap, vi_gap) = match self.oracle {
            Oracle::Objective(obj) => {
                let r = (obj.grad_x(x, theta) - obj.grad_x(x, self.truth)).norm();
                let gap = f_star.map(|fs| obj.value(x, self.truth) - fs);
                let avg_gap = f_star.zip(x_avg.as_ref()).map(|(fs, xa)| obj.value(xa, theta) - fs);
                (r, gap, avg_gap, None)
            }
            Oracle::Map(map) => {
                let at_truth = map.eval(x, self.truth);
                let r = (map.eval(x, theta) - &at_truth).norm();
                (r, None, None, vi_gap(self.set, &at_truth, x))
            }
        };
        self.trace.records.push(TraceRecord {
            k,
            phase: step.phase,
            x: x.clone(),
            theta: theta.clone(),
            x_avg,
            gamma_f: step.gamma_f,
            gamma_g: step.gamma_g,
            epsilon: step.epsilon,
            residual_r_norm,
            theta_err: (theta - self.truth).norm(),
            x_err,
            f_gap,
            avg_f_gap,
            vi_gap,
        });
        Ok(())
    }

    fn finish(self) -> SolveTrace {
        self.trace
    }
}

fn admissible(ok: bool, opts: &RunOptions, message: impl FnOnce() -> String) -> Result<()> {
    if ok || opts.override_checks {
        Ok(())
    } else {
        Err(Error::Inadmissible(message()))
    }
}

fn check_constant_step(sched: &StepSchedule, lipschitz: f64, what: &str, opts: &RunOptions) -> Result<()> {
    match sched.constant_value() {
        Some(gamma) => admissible(gamma < 2.0 / lipschitz, opts, || {
            format!("{what} step {gamma} must be below 2/{lipschitz} = {}", 2.0 / lipschitz)
        }),
        None => Ok(()),
    }
}

fn check_sharp_schedules(learning: &LearningProblem, steps: &Steps, opts: &RunOptions) -> Result<()> {
    let diminishing = steps.f.constant_value().is_none() || steps.g.constant_value().is_none();
    admissible(
        !(learning.constants().sharpness_alpha > 0.0 && diminishing && steps.f != steps.g),
        opts,
        || "diminishing steps on a weak-sharp learning problem must coincide for x and theta".into(),
    )
}

fn check_dims(set: &FeasibleSet, x: &Vector) -> Result<()> {
    if set.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn learning_step(learning: &LearningProblem, theta: &Vector, gamma: f64) -> Result<Vector> {
    learning.set().project(&(theta - learning.grad(theta) * gamma))
}

/// Projected gradient on the learning problem alone; returns `theta_0..theta_K`.
pub fn learning_path(learning: &LearningProblem, theta0: &Vector, sched: &StepSchedule, horizon: usize) -> Result<Vec<Vector>> {
    check_dims(learning.set(), theta0)?;
    let mut theta = learning.set().project(theta0)?;
    let mut path = Vec::with_capacity(horizon + 1);
    path.push(theta.clone());
    for k in 0..horizon {
        theta = learning_step(learning, &theta, sched.step_at(k + 1))?;
        path.push(theta.clone());
    }
    Ok(path)
}

fn gradient_run(
    problem: &JointProblem,
    x0: &Vector,
    theta0: &Vector,
    steps: &Steps,
    averaging: Averaging,
    learn: bool,
    opts: &RunOptions,
) -> Result<SolveTrace> {
    let obj = problem.objective;
    check_dims(problem.set, x0)?;
    check_dims(problem.learning.set(), theta0)?;
    let mut rec = Recorder::new(Oracle::Objective(obj), problem.set, problem.learning.truth(), averaging, opts);
    let mut x = problem.set.project(x0)?;
    let mut theta = problem.learning.set().project(theta0)?;
    for k in 0..=opts.horizon {
        let gamma_f = steps.f.step_at(k + 1);
        let gamma_g = if learn { steps.g.step_at(k + 1) } else { 0.0 };
        rec.observe(
            k,
            &x,
            &theta,
            StepInfo {
                phase: Phase::Joint,
                gamma_f,
                gamma_g,
                epsilon: None,
            },
        )?;
        if k == opts.horizon {
            break;
        }
        let next_x = problem.set.project(&(&x - obj.grad_x(&x, &theta) * gamma_f))?;
        if learn {
            theta = learning_step(problem.learning, &theta, gamma_g)?;
        }
        x = next_x;
    }
    Ok(rec.finish())
}

/// Joint projected gradient: `x` steps on `f(., theta_k)` while `theta`
/// steps on the learning problem, both from the same iteration's state.
pub fn joint_gradient(problem: &JointProblem, x0: &Vector, theta0: &Vector, steps: &Steps, averaging: Averaging, opts: &RunOptions) -> Result<SolveTrace> {
    let c = problem.objective.constants();
    check_constant_step(&steps.f, c.g_fx, "gamma_f", opts)?;
    check_constant_step(&steps.g, problem.learning.constants().g_g, "gamma_g", opts)?;
    check_sharp_schedules(problem.learning, steps, opts)?;
    gradient_run(problem, x0, theta0, steps, averaging, true, opts)
}

/// Joint subgradient scheme with the steplength-weighted average in `x_avg`.
pub fn joint_subgradient(problem: &JointProblem, x0: &Vector, theta0: &Vector, steps: &Steps, opts: &RunOptions) -> Result<SolveTrace> {
    check_constant_step(&steps.g, problem.learning.constants().g_g, "gamma_g", opts)?;
    gradient_run(problem, x0, theta0, steps, Averaging::Weighted, true, opts)
}


/// Projected gradient on the specified problem `f(., theta)`; the learning
/// problem only supplies `theta*` for metrics.
pub fn projected_gradient(
    problem: &JointProblem,
    x0: &Vector,
    theta: &Vector,
    sched: &StepSchedule,
    averaging: Averaging,
    opts: &RunOptions,
) -> Result<SolveTrace> {
    let steps = Steps { f: *sched, g: *sched };
    gradient_run(problem, x0, theta, &steps, averaging, false, opts)
}

/// Projected subgradient on `f(., theta)` with the weighted average.
pub fn subgradient(problem: &JointProblem, x0: &Vector, theta: &Vector, sched: &StepSchedule, opts: &RunOptions) -> Result<SolveTrace> {
    projected_gradient(problem, x0, theta, sched, Averaging::Weighted, opts)
}

fn extragradient_run(
    problem: &VariationalProblem,
    x0: &Vector,
    theta0: &Vector,
    tau: f64,
    gamma_g: f64,
    learn: bool,
    opts: &RunOptions,
) -> Result<SolveTrace> {
    let map = problem.map;
    check_dims(problem.set, x0)?;
    check_dims(problem.learning.set(), theta0)?;
    let mut rec = Recorder::new(Oracle::Map(map), problem.set, problem.learning.truth(), Averaging::None, opts);
    let mut x = problem.set.project(x0)?;
    let mut theta = problem.learning.set().project(theta0)?;
    let gamma_g = if learn { gamma_g } else { 0.0 };
    for k in 0..=opts.horizon {
        rec.observe(
            k,
            &x,
            &theta,
            StepInfo {
                phase: Phase::Joint,
                gamma_f: tau,
                gamma_g,
                epsilon: None,
            },
        )?;
        if k == opts.horizon {
            break;
        }
        let z = problem.set.project(&(&x - map.eval(&x, &theta) * tau))?;
        let next_x = problem.set.project(&(&x - map.eval(&z, &theta) * tau))?;
        if learn {
            theta = learning_step(problem.learning, &theta, gamma_g)?;
        }
        x = next_x;
    }
    Ok(rec.finish())
}

/// The step used when none is supplied: a fixed fraction of the supremum of
/// admissible extragradient steps at `theta0`.
pub fn default_extragradient_step(problem: &VariationalProblem, theta0: &Vector) -> Result<f64> {
    let c = problem.map.constants();
    let gap = (theta0 - problem.learning.truth()).norm();
    Ok(DEFAULT_TAU_FRACTION * extragradient_step_bound(c.l_fx, c.l_ftheta, gap)?)
}

/// Joint extragradient: both projections of an iteration use `theta_k`.
pub fn extragradient(
    problem: &VariationalProblem,
    x0: &Vector,
    theta0: &Vector,
    tau: Option<f64>,
    gamma_g: f64,
    opts: &RunOptions,
) -> Result<SolveTrace> {
    let c = problem.map.constants();
    let theta_start = problem.learning.set().project(theta0)?;
    let gap = (&theta_start - problem.learning.truth()).norm();
    let bound = extragradient_step_bound(c.l_fx, c.l_ftheta, gap)?;
    let tau = tau.unwrap_or(DEFAULT_TAU_FRACTION * bound);
    admissible(tau > 0.0 && tau < bound, opts, || {
        format!("tau {tau} must lie in (0, {bound})")
    })?;
    let g_g = problem.learning.constants().g_g;
    admissible(gamma_g > 0.0 && gamma_g < 2.0 / g_g, opts, || {
        format!("gamma_g {gamma_g} must lie in (0, 2/{g_g})")
    })?;
    extragradient_run(problem, x0, &theta_start, tau, gamma_g, true, opts)
}

/// Korpelevich extragradient on the specified VI with `theta` held fixed.
pub fn korpelevich(problem: &VariationalProblem, x0: &Vector, theta: &Vector, tau: f64, opts: &RunOptions) -> Result<SolveTrace> {
    let l = problem.map.constants().l_fx;
    admissible(tau > 0.0 && tau * l < 1.0, opts, || format!("tau {tau} must lie in (0, 1/{l})"))?;
    extragradient_run(problem, x0, theta, tau, 0.0, false, opts)
}

/// Regularized projection scheme: one projection of `x - gamma_k (F(x, theta_k) + eps_k x)`
/// per iteration.
pub fn tikhonov(
    problem: &VariationalProblem,
    x0: &Vector,
    theta0: &Vector,
    sched: &TikhonovSchedule,
    gamma_g: f64,
    opts: &RunOptions,
) -> Result<SolveTrace> {
    let map = problem.map;
    let l_fx = map.constants().l_fx;
    admissible(sched.lipschitz() >= l_fx * (1.0 - 1e-12), opts, || {
        format!("schedule Lipschitz constant {} is below L_Fx = {l_fx}", sched.lipschitz())
    })?;
    admissible(problem.set.is_compact(), opts, || {
        "the regularized scheme needs a compact feasible set".into()
    })?;
    let g_g = problem.learning.constants().g_g;
    admissible(gamma_g > 0.0 && gamma_g < 2.0 / g_g, opts, || {
        format!("gamma_g {gamma_g} must lie in (0, 2/{g_g})")
    })?;
    check_dims(problem.set, x0)?;
    check_dims(problem.learning.set(), theta0)?;
    let mut rec = Recorder::new(Oracle::Map(map), problem.set, problem.learning.truth(), Averaging::None, opts);
    let mut x = problem.set.project(x0)?;
    let mut theta = problem.learning.set().project(theta0)?;
    for k in 0..=opts.horizon {
        let (gamma_f, eps) = sched.at(k + 1);
        rec.observe(
            k,
            &x,
            &theta,
            StepInfo {
                phase: Phase::Joint,
                gamma_f,
                gamma_g,
                epsilon: Some(eps),
            },
        )?;
        if k == opts.horizon {
            break;
        }
        let mut dir = map.eval(&x, &theta);
        dir.axpy(eps, &x, 1.0);
        let next_x = problem.set.project(&(&x - dir * gamma_f))?;
        theta = learning_step(problem.learning, &theta, gamma_g)?;
        x = next_x;
    }
    Ok(rec.finish())
}

/// Learn for `learn_steps` iterations with `x` held at `x_0`, then run
/// projected gradient on `f(., theta_hat)` for the rest of the horizon.
pub fn sequential_baseline(
    problem: &JointProblem,
    x0: &Vector,
    theta0: &Vector,
    steps: &Steps,
    learn_steps: usize,
    opts: &RunOptions,
) -> Result<SolveTrace> {
    if learn_steps > opts.horizon {
        return Err(Error::Inadmissible(format!(
            "learning phase of {learn_steps} steps exceeds the horizon {}",
            opts.horizon
        )));
    }
    let obj = problem.objective;
    check_constant_step(&steps.f, obj.constants().g_fx, "gamma_f", opts)?;
    check_constant_step(&steps.g, problem.learning.constants().g_g, "gamma_g", opts)?;
    check_dims(problem.set, x0)?;
    check_dims(problem.learning.set(), theta0)?;
    let mut rec = Recorder::new(Oracle::Objective(obj), problem.set, problem.learning.truth(), Averaging::None, opts);
    let mut x = problem.set.project(x0)?;
    let mut theta = problem.learning.set().project(theta0)?;
    for k in 0..=opts.horizon {
        let learning = k < learn_steps;
        let step = if learning {
            StepInfo {
                phase: Phase::Learning,
                gamma_f: 0.0,
                gamma_g: steps.g.step_at(k + 1),
                epsilon: None,
            }
        } else {
            StepInfo {
                phase: Phase::Optimization,
                gamma_f: steps.f.step_at(k - learn_steps + 1),
                gamma_g: 0.0,
                epsilon: None,
            }
        };
        let (gamma_f, gamma_g) = (step.gamma_f, step.gamma_g);
        rec.observe(k, &x, &theta, step)?;
        if k == opts.horizon {
            break;
        }
        if learning {
            theta = learning_step(problem.learning, &theta, gamma_g)?;
        } else {
            x = problem.set.project(&(&x - obj.grad_x(&x, &theta) * gamma_f))?;
        }
    }
    Ok(rec.finish())
}

/// High-accuracy solution of `min f(., theta)` by projected gradient with
/// step `1/G_fx`, stopped when successive iterates differ by less than
/// [`REFERENCE_TOL`].
pub fn reference_solution(objective: &dyn Objective, set: &FeasibleSet, theta: &Vector) -> Result<Reference> {
    if !objective.is_smooth() {
        return Err(Error::InvalidProblem(
            "gradient reference solve needs a smooth objective".into(),
        ));
    }
    let gamma = 1.0 / objective.constants().g_fx;
    let mut x = set.project(&Vector::zeros(set.dim()))?;
    for _ in 0..REFERENCE_MAX_ITERS {
        let next = set.project(&(&x - objective.grad_x(&x, theta) * gamma))?;
        let change = (&next - &x).norm();
        x = next;
        if change < REFERENCE_TOL {
            break;
        }
    }
    let value = objective.value(&x, theta);
    Ok(Reference { x, value: Some(value) })
}
