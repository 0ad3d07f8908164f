//! Economic dispatch instances: misspecified generation costs (smooth and
//! piecewise linear), misspecified demand as a complementarity problem, and
//! the sampled learning problems that go with them.
//!
//! Dispatch variables are flattened generator-major: `g[i * T + t]`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, Vector};
use crate::problems::{
    make_block_lsq_learning, make_mean_learning, AffineMap, LearningProblem, Map, Objective, ObjectiveConstants,
    SampleScaling, Sample,
};
use crate::solvers::{reference_solution, Reference};

/// Demand is drawn from this fraction range of total capacity.
pub const DEMAND_RANGE: (f64, f64) = (0.4, 0.8);
pub const DEFAULT_NOISE_SD: f64 = 1.0;
/// Dual-cone membership tolerance of the complementarity gap.
pub const DUAL_CONE_TOL: f64 = 1e-9;
/// Constraint rows with residual below this count as active.
const ACTIVE_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum CostCurve {
    /// `a g^2 + b g`
    Quadratic { a: f64, b: f64 },
    /// `max_p (slope_p g + intercept_p)`
    MaxLinear { pieces: [(f64, f64); 3] },
}

impl CostCurve {
    pub fn params(&self) -> Vec<f64> {
        match self {
            CostCurve::Quadratic { a, b } => vec![*a, *b],
            CostCurve::MaxLinear { pieces } => pieces.iter().flat_map(|&(s, c)| [s, c]).collect(),
        }
    }

    /// Three pieces with slopes `s, 2s, 4s`, continuous, breaking at a third
    /// and two thirds of `capacity`.
    pub fn convex_pieces(slope: f64, capacity: f64) -> Self {
        let s = [slope, 2.0 * slope, 4.0 * slope];
        let c1 = 0.0;
        let c2 = c1 + (s[0] - s[1]) * capacity / 3.0;
        let c3 = c2 + (s[1] - s[2]) * 2.0 * capacity / 3.0;
        CostCurve::MaxLinear {
            pieces: [(s[0], c1), (s[1], c2), (s[2], c3)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub capacity: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub cost: CostCurve,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.capacity.is_nan() || self.capacity <= 0.0 {
            return Err(Error::InvalidProblem(format!("capacity {} must be positive", self.capacity)));
        }
        if !(self.ramp_up >= 0.0 && self.ramp_down >= 0.0) {
            return Err(Error::InvalidProblem("ramp limits must be nonnegative".into()));
        }
        if let CostCurve::Quadratic { a, .. } = self.cost {
            if a.is_nan() || a <= 0.0 {
                return Err(Error::InvalidProblem(format!("quadratic cost coefficient {a} must be positive")));
            }
        }
        Ok(())
    }

    /// Capacity and ramps divided by `base`.
    pub fn per_unit(&self, base: f64) -> Self {
        GeneratorSpec {
            capacity: self.capacity / base,
            ramp_up: self.ramp_up / base,
            ramp_down: self.ramp_down / base,
            cost: self.cost.clone(),
        }
    }
}

/// Capacity, ramp-up and ramp-down (MW) of the five reference generators.
pub const REFERENCE_UNITS: [(f64, f64, f64); 5] = [
    (40.0, 20.0, 20.0),
    (40.0, 20.0, 20.0),
    (35.0, 18.0, 18.0),
    (50.0, 25.0, 25.0),
    (40.0, 20.0, 20.0),
];

/// `n` generators cycling through [`REFERENCE_UNITS`], scaled by `base` MW,
/// with costs from `cost(i, capacity)`.
pub fn fleet(n: usize, base: f64, cost: impl Fn(usize, f64) -> CostCurve) -> Vec<GeneratorSpec> {
    (0..n)
        .map(|i| {
            let (cap, up, down) = REFERENCE_UNITS[i % REFERENCE_UNITS.len()];
            let spec = GeneratorSpec {
                capacity: cap,
                ramp_up: up,
                ramp_down: down,
                cost: CostCurve::Quadratic { a: 1.0, b: 0.0 },
            }
            .per_unit(base);
            GeneratorSpec {
                cost: cost(i, spec.capacity),
                ..spec
            }
        })
        .collect()
}

pub fn total_capacity(gens: &[GeneratorSpec]) -> f64 {
    gens.iter().map(|g| g.capacity).sum()
}

/// `periods` demands drawn uniformly from [`DEMAND_RANGE`] of total capacity.
pub fn random_demand(gens: &[GeneratorSpec], periods: usize, rng: &mut impl Rng) -> Vector {
    let total = total_capacity(gens);
    Vector::from_iterator(
        periods,
        (0..periods).map(|_| total * rng.random_range(DEMAND_RANGE.0..DEMAND_RANGE.1)),
    )
}

#[derive(Clone, Debug)]
pub struct DispatchInstance {
    gens: Vec<GeneratorSpec>,
    periods: usize,
    demand: Vector,
    set: FeasibleSet,
}

impl DispatchInstance {
    pub fn new(gens: Vec<GeneratorSpec>, periods: usize, demand: Vector) -> Result<Self> {
        if gens.is_empty() || periods == 0 {
            return Err(Error::InvalidProblem("need at least one generator and one period".into()));
        }
        if demand.len() != periods {
            return Err(Error::DimensionMismatch {
                expected: periods,
                got: demand.len(),
            });
        }
        for g in &gens {
            g.validate()?;
        }
        let peak = demand.max();
        if total_capacity(&gens) < peak {
            return Err(Error::InvalidProblem(format!(
                "total capacity {} cannot meet peak demand {peak}",
                total_capacity(&gens)
            )));
        }
        let (a, b) = constraint_rows(&gens, periods, &demand);
        let lower = Vector::zeros(gens.len() * periods);
        let upper = Vector::from_iterator(
            gens.len() * periods,
            gens.iter().flat_map(|g| std::iter::repeat_n(g.capacity, periods)),
        );
        let set = FeasibleSet::polyhedron(a, b, lower, upper)?;
        Ok(DispatchInstance {
            gens,
            periods,
            demand,
            set,
        })
    }

    pub fn gens(&self) -> &[GeneratorSpec] {
        &self.gens
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn demand(&self) -> &Vector {
        &self.demand
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    pub fn dim(&self) -> usize {
        self.gens.len() * self.periods
    }

    /// True cost parameters, concatenated per generator.
    pub fn true_params(&self) -> Vector {
        Vector::from_iterator(
            self.gens.iter().map(|g| g.cost.params().len()).sum(),
            self.gens.iter().flat_map(|g| g.cost.params()),
        )
    }
}

/// Balance rows `sum_i g_it >= d_t`, then for each generator and `t >= 1`
/// the ramp-up row `g_i,t-1 - g_it >= -r_up` and ramp-down row
/// `g_it - g_i,t-1 >= -r_down`.
fn constraint_rows(gens: &[GeneratorSpec], periods: usize, demand: &Vector) -> (DMatrix<f64>, Vector) {
    let n = gens.len();
    let rows = periods + 2 * n * periods.saturating_sub(1);
    let mut a = DMatrix::zeros(rows, n * periods);
    let mut b = Vector::zeros(rows);
    for t in 0..periods {
        for i in 0..n {
            a[(t, i * periods + t)] = 1.0;
        }
        b[t] = demand[t];
    }
    let mut r = periods;
    for (i, g) in gens.iter().enumerate() {
        for t in 1..periods {
            let (now, prev) = (i * periods + t, i * periods + t - 1);
            a[(r, prev)] = 1.0;
            a[(r, now)] = -1.0;
            b[r] = -g.ramp_up;
            a[(r + 1, now)] = 1.0;
            a[(r + 1, prev)] = -1.0;
            b[r + 1] = -g.ramp_down;
            r += 2;
        }
    }
    (a, b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostForm {
    Quadratic,
    MaxLinear,
}

impl CostForm {
    pub fn params_per_generator(self) -> usize {
        match self {
            CostForm::Quadratic => 2,
            CostForm::MaxLinear => 6,
        }
    }

    /// Parameter box used by the cost learning problems.
    pub fn theta_box(self, n: usize) -> Result<FeasibleSet> {
        let (lo, hi): (Vec<f64>, Vec<f64>) = match self {
            CostForm::Quadratic => (vec![0.1, -100.0], vec![100.0, 100.0]),
            CostForm::MaxLinear => (
                vec![0.0, -100.0, 0.0, -100.0, 0.0, -100.0],
                vec![20.0, 100.0, 20.0, 100.0, 20.0, 100.0],
            ),
        };
        FeasibleSet::boxed(
            Vector::from_iterator(n * lo.len(), lo.iter().cycle().take(n * lo.len()).copied()),
            Vector::from_iterator(n * hi.len(), hi.iter().cycle().take(n * hi.len()).copied()),
        )
    }
}

/// Total generation cost `sum_i sum_t c_i(g_it; theta_i)`.
#[derive(Clone, Debug)]
pub struct DispatchCost {
    form: CostForm,
    capacities: Vec<f64>,
    periods: usize,
    constants: ObjectiveConstants,
}

impl DispatchCost {
    fn block(&self, theta: &Vector, i: usize) -> Vec<f64> {
        let p = self.form.params_per_generator();
        theta.as_slice()[i * p..(i + 1) * p].to_vec()
    }

    /// Recompute the declared constants with curvature taken at `theta`.
    pub fn declared_at(mut self, theta: &Vector, theta_box: &FeasibleSet) -> Result<Self> {
        self.constants = cost_constants(self.form, &self.capacities, self.periods, theta, theta_box)?;
        Ok(self)
    }

    pub fn form(&self) -> CostForm {
        self.form
    }
}

fn max_linear_active(params: &[f64], g: f64) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for p in 0..3 {
        let v = params[2 * p] * g + params[2 * p + 1];
        if v > best_val {
            best_val = v;
            best = p;
        }
    }
    best
}

impl Objective for DispatchCost {
    fn dim_x(&self) -> usize {
        self.capacities.len() * self.periods
    }

    fn dim_theta(&self) -> usize {
        self.capacities.len() * self.form.params_per_generator()
    }

    fn value(&self, x: &Vector, theta: &Vector) -> f64 {
        let mut total = 0.0;
        for i in 0..self.capacities.len() {
            let p = self.block(theta, i);
            for t in 0..self.periods {
                let g = x[i * self.periods + t];
                total += match self.form {
                    CostForm::Quadratic => p[0] * g * g + p[1] * g,
                    CostForm::MaxLinear => {
                        let a = max_linear_active(&p, g);
                        p[2 * a] * g + p[2 * a + 1]
                    }
                };
            }
        }
        total
    }

    fn grad_x(&self, x: &Vector, theta: &Vector) -> Vector {
        let mut grad = Vector::zeros(x.len());
        for i in 0..self.capacities.len() {
            let p = self.block(theta, i);
            for t in 0..self.periods {
                let j = i * self.periods + t;
                grad[j] = match self.form {
                    CostForm::Quadratic => 2.0 * p[0] * x[j] + p[1],
                    CostForm::MaxLinear => p[2 * max_linear_active(&p, x[j])],
                };
            }
        }
        grad
    }

    fn is_smooth(&self) -> bool {
        self.form == CostForm::Quadratic
    }

    fn constants(&self) -> &ObjectiveConstants {
        &self.constants
    }
}

fn cost_constants(form: CostForm, caps: &[f64], periods: usize, theta: &Vector, theta_box: &FeasibleSet) -> Result<ObjectiveConstants> {
    let per = form.params_per_generator();
    if theta.len() != caps.len() * per {
        return Err(Error::DimensionMismatch {
            expected: caps.len() * per,
            got: theta.len(),
        });
    }
    let t = periods as f64;
    let theta_hi = |j: usize| -> f64 {
        match theta_box.kind() {
            crate::geometry::SetKind::Box { lower, upper } => lower[j].abs().max(upper[j].abs()),
            _ => f64::INFINITY,
        }
    };
    match form {
        CostForm::Quadratic => {
            let leading: Vec<f64> = (0..caps.len()).map(|i| theta[2 * i]).collect();
            if leading.iter().any(|&a| a.is_nan() || a <= 0.0) {
                return Err(Error::InvalidProblem("quadratic cost coefficients must be positive".into()));
            }
            let g_ftheta = caps
                .iter()
                .map(|c| (t * (4.0 * c * c + 1.0)).sqrt())
                .fold(0.0, f64::max);
            let l_ftheta = caps
                .iter()
                .map(|c| t * t * (c.powi(4) + c * c))
                .sum::<f64>()
                .sqrt();
            let m_subgrad = caps
                .iter()
                .enumerate()
                .map(|(i, c)| t * (2.0 * theta_hi(2 * i) * c + theta_hi(2 * i + 1)).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok(ObjectiveConstants {
                eta_f: 2.0 * leading.iter().copied().fold(f64::INFINITY, f64::min),
                g_fx: 2.0 * leading.iter().copied().fold(0.0, f64::max),
                g_ftheta,
                l_ftheta,
                l_theta: g_ftheta,
                m_subgrad,
            })
        }
        CostForm::MaxLinear => {
            let slope = (0..caps.len())
                .flat_map(|i| (0..3).map(move |p| 6 * i + 2 * p))
                .map(theta_hi)
                .fold(0.0, f64::max);
            let l_ftheta = caps.iter().map(|c| t * t * (c * c + 1.0)).sum::<f64>().sqrt();
            Ok(ObjectiveConstants {
                eta_f: 0.0,
                g_fx: f64::INFINITY,
                g_ftheta: f64::INFINITY,
                l_ftheta,
                l_theta: f64::INFINITY,
                m_subgrad: ((caps.len() * periods) as f64).sqrt() * slope,
            })
        }
    }
}

/// Cost objective over the dispatch polyhedron, with constants declared at
/// the generators' true cost parameters.
pub fn build_cost_misspecified(gens: Vec<GeneratorSpec>, periods: usize, demand: Vector, form: CostForm) -> Result<(DispatchCost, FeasibleSet)> {
    let instance = DispatchInstance::new(gens, periods, demand)?;
    let cost = cost_objective(&instance, form, &instance.true_params())?;
    Ok((cost, instance.set.clone()))
}

fn cost_objective(instance: &DispatchInstance, form: CostForm, theta: &Vector) -> Result<DispatchCost> {
    for g in &instance.gens {
        let matches = matches!(
            (&g.cost, form),
            (CostCurve::Quadratic { .. }, CostForm::Quadratic) | (CostCurve::MaxLinear { .. }, CostForm::MaxLinear)
        );
        if !matches {
            return Err(Error::InvalidProblem(format!("generator cost does not have the {form:?} form")));
        }
    }
    let capacities: Vec<f64> = instance.gens.iter().map(|g| g.capacity).collect();
    let theta_box = form.theta_box(capacities.len())?;
    let constants = cost_constants(form, &capacities, instance.periods, theta, &theta_box)?;
    Ok(DispatchCost {
        form,
        capacities,
        periods: instance.periods,
        constants,
    })
}

/// `P` noisy cost observations per generator, output levels uniform on
/// `[0, capacity]`, noise Gaussian with standard deviation `noise_sd`.
pub fn sample_cost_data(gens: &[GeneratorSpec], samples: usize, noise_sd: f64, seed: u64) -> Result<Vec<Vec<Sample>>> {
    if samples < 2 {
        return Err(Error::InvalidProblem(format!("need at least 2 samples per generator, got {samples}")));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidProblem(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gens.iter()
        .map(|g| {
            let (a, b) = match g.cost {
                CostCurve::Quadratic { a, b } => (a, b),
                CostCurve::MaxLinear { .. } => {
                    return Err(Error::InvalidProblem("cost samples need quadratic costs".into()));
                }
            };
            Ok((0..samples)
                .map(|_| {
                    let out = rng.random_range(0.0..=g.capacity);
                    let xi = noise.sample(&mut rng);
                    Sample::new(Vector::from_vec(vec![out * out, out]), a * out * out + b * out + xi)
                })
                .collect())
        })
        .collect()
}

/// Noisy observations of the true parameters, for learning piecewise-linear
/// costs by averaging.
pub fn sample_param_observations(truth: &Vector, samples: usize, noise_sd: f64, seed: u64) -> Result<Vec<Vector>> {
    if samples == 0 {
        return Err(Error::InvalidProblem("need at least one observation".into()));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidProblem(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..samples)
        .map(|_| truth.map(|v| v + noise.sample(&mut rng)))
        .collect())
}

/// A dispatch instance with misspecified costs and the learning problem
/// that estimates them.
#[derive(Clone, Debug)]
pub struct CostScenario {
    pub instance: DispatchInstance,
    pub objective: DispatchCost,
    pub learning: LearningProblem,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingPlan {
    pub samples: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl CostScenario {
    /// Quadratic costs are learned by least squares on sampled
    /// `(output, cost)` pairs; piecewise-linear costs by averaging noisy
    /// parameter observations. Objective constants are declared at the
    /// learning problem's solution.
    pub fn new(instance: DispatchInstance, form: CostForm, plan: SamplingPlan) -> Result<Self> {
        let n = instance.gens.len();
        let theta_box = form.theta_box(n)?;
        let learning = match form {
            CostForm::Quadratic => {
                let data = sample_cost_data(&instance.gens, plan.samples, plan.noise_sd, plan.seed)?;
                let learning = make_block_lsq_learning(&data)?.with_set(theta_box.clone());
                if !theta_box.contains(learning.truth(), 0.0) {
                    return Err(Error::InvalidProblem("fitted cost parameters leave the parameter box".into()));
                }
                learning
            }
            CostForm::MaxLinear => {
                let obs = sample_param_observations(&instance.true_params(), plan.samples, plan.noise_sd, plan.seed)?;
                make_mean_learning(&obs, SampleScaling::Mean, theta_box.clone())?
            }
        };
        let objective = cost_objective(&instance, form, &instance.true_params())?.declared_at(learning.truth(), &theta_box)?;
        Ok(CostScenario {
            instance,
            objective,
            learning,
        })
    }

    /// Starting parameters: unit quadratic coefficients, or unit slopes with
    /// zero intercepts.
    pub fn default_theta0(&self) -> Vector {
        let per: Vec<f64> = match self.objective.form {
            CostForm::Quadratic => vec![1.0, 0.0],
            CostForm::MaxLinear => vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        };
        let n = self.instance.gens.len();
        Vector::from_iterator(n * per.len(), per.iter().cycle().take(n * per.len()).copied())
    }

    /// `(x*, f*)` of the true problem: projected gradient for quadratic
    /// costs, an exact linear program for piecewise-linear ones.
    pub fn reference(&self) -> Result<Reference> {
        match self.objective.form {
            CostForm::Quadratic => reference_solution(&self.objective, self.instance.set(), self.learning.truth()),
            CostForm::MaxLinear => max_linear_reference(&self.instance, self.learning.truth()),
        }
    }
}

/// Epigraph linear program for piecewise-linear costs at `theta`.
pub fn max_linear_reference(instance: &DispatchInstance, theta: &Vector) -> Result<Reference> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let n = instance.gens.len();
    let periods = instance.periods;
    if theta.len() != 6 * n {
        return Err(Error::DimensionMismatch {
            expected: 6 * n,
            got: theta.len(),
        });
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let g: Vec<_> = (0..n * periods)
        .map(|j| lp.add_var(0.0, (0.0, instance.gens[j / periods].capacity)))
        .collect();
    let s: Vec<_> = (0..n * periods)
        .map(|_| lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for j in 0..n * periods {
        let i = j / periods;
        for p in 0..3 {
            let (slope, icpt) = (theta[6 * i + 2 * p], theta[6 * i + 2 * p + 1]);
            lp.add_constraint([(s[j], 1.0), (g[j], -slope)], ComparisonOp::Ge, icpt);
        }
    }
    let (a, b) = constraint_rows(&instance.gens, periods, &instance.demand);
    for r in 0..a.nrows() {
        let terms: Vec<_> = (0..a.ncols())
            .filter(|&c| a[(r, c)] != 0.0)
            .map(|c| (g[c], a[(r, c)]))
            .collect();
        lp.add_constraint(&terms, ComparisonOp::Ge, b[r]);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::InvalidProblem(format!("reference linear program failed: {e}")))?;
    let x = Vector::from_iterator(n * periods, g.iter().map(|&v| sol[v]));
    let x = instance.set.project(&x)?;
    let cost = cost_objective(instance, CostForm::MaxLinear, theta)?;
    let value = cost.value(&x, theta);
    Ok(Reference { x, value: Some(value) })
}

/// Complementarity gap `F(z)'z` and whether `F(z)` lies in the dual cone of
/// the nonnegative orthant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapReport {
    pub value: f64,
    pub dual_feasible: bool,
}

pub fn gap(map: &dyn Map, theta: &Vector, z: &Vector) -> Result<GapReport> {
    if z.len() != map.dim_x() {
        return Err(Error::DimensionMismatch {
            expected: map.dim_x(),
            got: z.len(),
        });
    }
    if theta.len() != map.dim_theta() {
        return Err(Error::DimensionMismatch {
            expected: map.dim_theta(),
            got: theta.len(),
        });
    }
    let f = map.eval(z, theta);
    Ok(GapReport {
        value: f.dot(z),
        dual_feasible: f.iter().all(|&v| v >= -DUAL_CONE_TOL),
    })
}

/// Dispatch with known quadratic costs and misspecified demand, posed as the
/// complementarity problem `0 <= z _|_ F(z; d) >= 0`, `z = (g, lambda)`.
#[derive(Clone, Debug)]
pub struct DemandScenario {
    pub gens: Vec<GeneratorSpec>,
    pub periods: usize,
    pub map: AffineMap,
    pub set: FeasibleSet,
    pub learning: LearningProblem,
    /// Constraint matrix of `h(g) = H g + s(d)`.
    h: DMatrix<f64>,
}

/// Demand observations `d* + noise`, one vector per sample.
pub fn sample_demand(true_demand: &Vector, samples: usize, noise_sd: f64, seed: u64) -> Result<Vec<Vector>> {
    sample_param_observations(true_demand, samples, noise_sd, seed)
}

/// KKT map of the dispatch problem with constraint vector ordered as
/// balance, capacity, ramp-up, ramp-down rows.
pub fn build_demand_misspecified(
    gens: Vec<GeneratorSpec>,
    periods: usize,
    true_demand: &Vector,
    demand_samples: &[Vector],
    scaling: SampleScaling,
) -> Result<DemandScenario> {
    // Validates the instance at the true demand.
    DispatchInstance::new(gens.clone(), periods, true_demand.clone())?;
    let n = gens.len();
    let nv = n * periods;
    let ramps = periods.saturating_sub(1);
    let m = periods + nv + 2 * n * ramps;
    let mut h = DMatrix::zeros(m, nv);
    let mut offset_h = Vector::zeros(m);
    for t in 0..periods {
        for i in 0..n {
            h[(t, i * periods + t)] = 1.0;
        }
    }
    for j in 0..nv {
        h[(periods + j, j)] = -1.0;
        offset_h[periods + j] = gens[j / periods].capacity;
    }
    let mut r = periods + nv;
    for (i, g) in gens.iter().enumerate() {
        for t in 1..periods {
            let (now, prev) = (i * periods + t, i * periods + t - 1);
            h[(r, now)] = -1.0;
            h[(r, prev)] = 1.0;
            offset_h[r] = g.ramp_up;
            r += 1;
        }
    }
    for (i, g) in gens.iter().enumerate() {
        for t in 1..periods {
            let (now, prev) = (i * periods + t, i * periods + t - 1);
            h[(r, now)] = 1.0;
            h[(r, prev)] = -1.0;
            offset_h[r] = g.ramp_down;
            r += 1;
        }
    }
    let dim = nv + m;
    let mut a = DMatrix::zeros(dim, dim);
    let mut c = Vector::zeros(dim);
    for (j, g) in (0..nv).map(|j| (j, &gens[j / periods])) {
        let CostCurve::Quadratic { a: qa, b: qb } = g.cost else {
            return Err(Error::InvalidProblem("demand scenario needs quadratic costs".into()));
        };
        a[(j, j)] = 2.0 * qa;
        c[j] = qb;
    }
    a.view_mut((0, nv), (nv, m)).copy_from(&(-h.transpose()));
    a.view_mut((nv, 0), (m, nv)).copy_from(&h);
    c.rows_mut(nv, m).copy_from(&offset_h);
    let mut coupling = DMatrix::zeros(dim, periods);
    for t in 0..periods {
        coupling[(nv + t, t)] = -1.0;
    }
    let map = AffineMap::new(a, coupling, c)?;
    let theta_set = FeasibleSet::cube(periods, 0.0, total_capacity(&gens))?;
    let learning = make_mean_learning(demand_samples, scaling, theta_set)?;
    Ok(DemandScenario {
        gens,
        periods,
        map,
        set: FeasibleSet::nonneg_orthant(dim),
        learning,
        h,
    })
}

impl DemandScenario {
    pub fn dispatch_dim(&self) -> usize {
        self.gens.len() * self.periods
    }

    pub fn constraint_count(&self) -> usize {
        self.h.nrows()
    }

    /// Known quadratic costs as a dispatch objective.
    pub fn cost(&self) -> Result<DispatchCost> {
        let instance = DispatchInstance::new(self.gens.clone(), self.periods, self.learning.truth().clone())?;
        cost_objective(&instance, CostForm::Quadratic, &instance.true_params())
    }

    /// Constraint values `h(g; d)`; feasible dispatches have `h >= 0`.
    pub fn constraints(&self, g: &Vector, demand: &Vector) -> Vector {
        let z = Vector::from_iterator(
            self.map.dim_x(),
            g.iter().copied().chain(std::iter::repeat_n(0.0, self.constraint_count())),
        );
        self.map.eval(&z, demand).rows(self.dispatch_dim(), self.constraint_count()).into_owned()
    }

    /// Multipliers for a dispatch `g` optimal at `demand`: least squares on
    /// the stationarity rows of positive outputs over the active
    /// constraints, clipped at zero.
    pub fn multipliers(&self, g: &Vector, demand: &Vector) -> Result<Vector> {
        let nv = self.dispatch_dim();
        let m = self.constraint_count();
        let hval = self.constraints(g, demand);
        let active: Vec<usize> = (0..m).filter(|&r| hval[r].abs() <= ACTIVE_TOL * (1.0 + demand.amax())).collect();
        let positive: Vec<usize> = (0..nv).filter(|&j| g[j] > ACTIVE_TOL).collect();
        let mut lambda = Vector::zeros(m);
        if active.is_empty() || positive.is_empty() {
            return Ok(lambda);
        }
        let grad = self.map.eval(
            &Vector::from_iterator(nv + m, g.iter().copied().chain(std::iter::repeat_n(0.0, m))),
            demand,
        );
        let sys = DMatrix::from_fn(positive.len(), active.len(), |p, a| self.h[(active[a], positive[p])]);
        let rhs = Vector::from_iterator(positive.len(), positive.iter().map(|&j| grad[j]));
        let sol = sys
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::InvalidProblem(e.to_string()))?;
        for (k, &r) in active.iter().enumerate() {
            lambda[r] = sol[k].max(0.0);
        }
        Ok(lambda)
    }

    pub fn embed(&self, g: &Vector, lambda: &Vector) -> Vector {
        Vector::from_iterator(self.map.dim_x(), g.iter().chain(lambda.iter()).copied())
    }

    /// Primal-dual solution at the learned demand, from the optimization
    /// reference and its multipliers.
    pub fn reference(&self) -> Result<Reference> {
        let demand = self.learning.truth();
        let cost = self.cost()?;
        let instance = DispatchInstance::new(self.gens.clone(), self.periods, demand.clone())?;
        let opt = reference_solution(&cost, instance.set(), &instance.true_params())?;
        let lambda = self.multipliers(&opt.x, demand)?;
        Ok(Reference {
            x: self.embed(&opt.x, &lambda),
            value: None,
        })
    }
}
