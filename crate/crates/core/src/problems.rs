//! Oracles for misspecified objectives, misspecified maps and learning
//! problems, with closed-form instances used as test oracles.
//!
//! Constants are declared when an instance is built and trusted by the
//! solvers; nothing is estimated at solve time.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, Vector};
use crate::linalg::{is_symmetric, spectral_norm, symmetric_extremes};

/// Declared constants of `f(x, theta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConstants {
    /// Strong convexity modulus in `x`, 0 if merely convex.
    pub eta_f: f64,
    /// Lipschitz constant of `grad_x f` in `x`.
    pub g_fx: f64,
    /// Lipschitz constant of `grad_x f` in `theta`, uniformly in `x`.
    pub g_ftheta: f64,
    /// Lipschitz constant of `f` in `theta`, uniformly in `x`.
    pub l_ftheta: f64,
    /// Lipschitz constant of `grad_x f(x*, .)`.
    pub l_theta: f64,
    /// Bound on subgradient norms.
    pub m_subgrad: f64,
}

pub trait Objective: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_theta(&self) -> usize;
    fn value(&self, x: &Vector, theta: &Vector) -> f64;
    /// Gradient in `x`, or an element of the subdifferential when nonsmooth.
    fn grad_x(&self, x: &Vector, theta: &Vector) -> Vector;
    fn is_smooth(&self) -> bool {
        true
    }
    fn constants(&self) -> &ObjectiveConstants;
}

/// `f(x, theta) = x'Qx / 2 + (B theta)'x`.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    q: DMatrix<f64>,
    b: DMatrix<f64>,
    constants: ObjectiveConstants,
}

pub fn make_quadratic_objective(q: DMatrix<f64>, coupling: DMatrix<f64>) -> Result<QuadraticObjective> {
    if !is_symmetric(&q, 1e-12) {
        return Err(Error::InvalidProblem("Q must be symmetric".into()));
    }
    if coupling.nrows() != q.nrows() {
        return Err(Error::DimensionMismatch {
            expected: q.nrows(),
            got: coupling.nrows(),
        });
    }
    let (lo, hi) = symmetric_extremes(&q);
    if lo < -1e-10 * (1.0 + hi.abs()) {
        return Err(Error::InvalidProblem(format!("Q is not PSD (lambda_min = {lo:.3e})")));
    }
    let b_norm = spectral_norm(&coupling);
    let constants = ObjectiveConstants {
        eta_f: lo.max(0.0),
        g_fx: hi.max(f64::MIN_POSITIVE),
        g_ftheta: b_norm,
        l_ftheta: f64::INFINITY,
        l_theta: b_norm,
        m_subgrad: f64::INFINITY,
    };
    Ok(QuadraticObjective { q, b: coupling, constants })
}

impl QuadraticObjective {
    /// Fill in the constants that depend on the sets: `L_{f,theta} = ||B|| C_x`
    /// and the gradient bound `||Q|| C_x + ||B|| C_theta`.
    pub fn bounded_on(mut self, x_set: &FeasibleSet, theta_set: &FeasibleSet) -> Self {
        let c = &mut self.constants;
        c.l_ftheta = c.g_ftheta * x_set.diameter_bound();
        c.m_subgrad = c.g_fx * x_set.diameter_bound() + c.g_ftheta * theta_set.diameter_bound();
        self
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.b
    }
}

impl Objective for QuadraticObjective {
    fn dim_x(&self) -> usize {
        self.q.nrows()
    }

    fn dim_theta(&self) -> usize {
        self.b.ncols()
    }

    fn value(&self, x: &Vector, theta: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + (&self.b * theta).dot(x)
    }

    fn grad_x(&self, x: &Vector, theta: &Vector) -> Vector {
        &self.q * x + &self.b * theta
    }

    fn constants(&self) -> &ObjectiveConstants {
        &self.constants
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningConstants {
    /// Strong convexity modulus, 0 for weak-sharp instances.
    pub eta_g: f64,
    /// Gradient Lipschitz constant; for piecewise-linear instances the
    /// largest piece slope norm.
    pub g_g: f64,
    /// Weak-sharpness modulus, 0 if not applicable.
    pub sharpness_alpha: f64,
}

pub trait LearningOracle: Send + Sync {
    fn value(&self, theta: &Vector) -> f64;
    fn grad(&self, theta: &Vector) -> Vector;
}

/// `min_{theta in Theta} g(theta)` with its known solution kept for metrics.
#[derive(Clone)]
pub struct LearningProblem {
    oracle: Arc<dyn LearningOracle>,
    set: FeasibleSet,
    constants: LearningConstants,
    truth: Vector,
}

impl std::fmt::Debug for LearningProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LearningProblem")
            .field("constants", &self.constants)
            .field("truth", &self.truth.as_slice())
            .finish()
    }
}

impl LearningProblem {
    pub fn new(oracle: Arc<dyn LearningOracle>, set: FeasibleSet, constants: LearningConstants, truth: Vector) -> Self {
        LearningProblem {
            oracle,
            set,
            constants,
            truth,
        }
    }

    pub fn with_set(mut self, set: FeasibleSet) -> Self {
        self.set = set;
        self
    }

    pub fn value(&self, theta: &Vector) -> f64 {
        self.oracle.value(theta)
    }

    pub fn grad(&self, theta: &Vector) -> Vector {
        self.oracle.grad(theta)
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    pub fn constants(&self) -> &LearningConstants {
        &self.constants
    }

    pub fn truth(&self) -> &Vector {
        &self.truth
    }

    pub fn dim(&self) -> usize {
        self.truth.len()
    }
}

/// `g(theta) = theta'H theta / 2 - h'theta + c`.
#[derive(Clone, Debug)]
pub struct QuadraticLearning {
    h: DMatrix<f64>,
    lin: Vector,
    offset: f64,
}

impl QuadraticLearning {
    pub fn new(h: DMatrix<f64>, lin: Vector, offset: f64) -> Self {
        QuadraticLearning { h, lin, offset }
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }
}

impl LearningOracle for QuadraticLearning {
    fn value(&self, theta: &Vector) -> f64 {
        0.5 * theta.dot(&(&self.h * theta)) - self.lin.dot(theta) + self.offset
    }

    fn grad(&self, theta: &Vector) -> Vector {
        &self.h * theta - &self.lin
    }
}

/// `g(theta) = (h/2) ||theta - truth||^2` over `set`.
pub fn make_isotropic_learning(truth: Vector, curvature: f64, set: FeasibleSet) -> Result<LearningProblem> {
    if !(curvature > 0.0 && curvature.is_finite()) {
        return Err(Error::InvalidProblem(format!("curvature {curvature} must be positive")));
    }
    if set.dim() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: set.dim(),
        });
    }
    let n = truth.len();
    let oracle = QuadraticLearning::new(
        DMatrix::identity(n, n) * curvature,
        &truth * curvature,
        0.5 * curvature * truth.norm_squared(),
    );
    let truth = set.project(&truth)?;
    Ok(LearningProblem::new(
        Arc::new(oracle),
        set,
        LearningConstants {
            eta_g: curvature,
            g_g: curvature,
            sharpness_alpha: 0.0,
        },
        truth,
    ))
}

/// Side length of the default parameter box used for regression problems.
pub const DEFAULT_THETA_RADIUS: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vector,
    pub output: f64,
}

impl Sample {
    pub fn new(features: Vector, output: f64) -> Self {
        Sample { features, output }
    }
}

/// Least-squares regression `(1/n) sum (y - phi'theta)^2`.
pub fn make_lsq_learning(samples: &[Sample]) -> Result<LearningProblem> {
    make_block_lsq_learning(&[samples.to_vec()])
}

/// Block-separable least squares over concatenated parameters, normalized by
/// the total sample count: `(1/n) sum_blocks sum_j (y_j - phi_j'theta_b)^2`.
pub fn make_block_lsq_learning(blocks: &[Vec<Sample>]) -> Result<LearningProblem> {
    let total: usize = blocks.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::InvalidProblem("no samples".into()));
    }
    let dims: Vec<usize> = blocks
        .iter()
        .map(|b| b.first().map_or(0, |s| s.features.len()))
        .collect();
    let dim: usize = dims.iter().sum();
    let weight = 2.0 / total as f64;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut lin = Vector::zeros(dim);
    let mut offset = 0.0;
    let mut truth = Vector::zeros(dim);
    let mut start = 0;
    for (block, &d) in blocks.iter().zip(&dims) {
        if block.is_empty() {
            return Err(Error::InvalidProblem("empty sample block".into()));
        }
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut rhs = Vector::zeros(d);
        for s in block {
            if s.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.features.len(),
                });
            }
            gram += &s.features * s.features.transpose();
            rhs += &s.features * s.output;
            offset += s.output * s.output / total as f64;
        }
        let (lo, hi) = symmetric_extremes(&gram);
        if lo.is_nan() || lo <= 1e-12 * hi.max(1e-300) {
            return Err(Error::RankDeficient);
        }
        let solved = gram.clone().cholesky().ok_or(Error::RankDeficient)?.solve(&rhs);
        h.view_mut((start, start), (d, d)).copy_from(&(gram * weight));
        lin.rows_mut(start, d).copy_from(&(rhs * weight));
        truth.rows_mut(start, d).copy_from(&solved);
        start += d;
    }
    let (eta, g) = symmetric_extremes(&h);
    let oracle = QuadraticLearning::new(h, lin, offset);
    let set = FeasibleSet::cube(dim, -DEFAULT_THETA_RADIUS, DEFAULT_THETA_RADIUS)?;
    Ok(LearningProblem::new(
        Arc::new(oracle),
        set,
        LearningConstants {
            eta_g: eta,
            g_g: g,
            sharpness_alpha: 0.0,
        },
        truth,
    ))
}

/// How a sum of squared distances to observations is scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleScaling {
    /// `sum_i ||theta - y_i||^2`
    #[default]
    Sum,
    /// `(1/P) sum_i ||theta - y_i||^2`
    Mean,
}

/// Estimating a location from noisy observations: `w sum_i ||theta - y_i||^2`,
/// minimized at the sample mean. `eta_g = G_g = 2 w P`.
pub fn make_mean_learning(observations: &[Vector], scaling: SampleScaling, set: FeasibleSet) -> Result<LearningProblem> {
    let count = observations.len();
    if count == 0 {
        return Err(Error::InvalidProblem("no observations".into()));
    }
    let dim = observations[0].len();
    if set.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: set.dim(),
        });
    }
    let mut sum = Vector::zeros(dim);
    let mut sq = 0.0;
    for y in observations {
        if y.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: y.len(),
            });
        }
        sum += y;
        sq += y.norm_squared();
    }
    let w = match scaling {
        SampleScaling::Sum => 1.0,
        SampleScaling::Mean => 1.0 / count as f64,
    };
    let curvature = 2.0 * w * count as f64;
    let truth = set.project(&(&sum / count as f64))?;
    let oracle = QuadraticLearning::new(DMatrix::identity(dim, dim) * curvature, sum * (2.0 * w), w * sq);
    Ok(LearningProblem::new(
        Arc::new(oracle),
        set,
        LearningConstants {
            eta_g: curvature,
            g_g: curvature,
            sharpness_alpha: 0.0,
        },
        truth,
    ))
}

/// `g(theta) = max_p (s_p'theta + c_p)`.
#[derive(Clone, Debug)]
pub struct MaxAffineLearning {
    pieces: Vec<(Vector, f64)>,
}

impl MaxAffineLearning {
    /// Index of the lowest-index piece attaining the maximum.
    fn active(&self, theta: &Vector) -> usize {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (p, (s, c)) in self.pieces.iter().enumerate() {
            let v = s.dot(theta) + c;
            if v > best_val {
                best_val = v;
                best = p;
            }
        }
        best
    }
}

impl LearningOracle for MaxAffineLearning {
    fn value(&self, theta: &Vector) -> f64 {
        self.pieces
            .iter()
            .map(|(s, c)| s.dot(theta) + c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn grad(&self, theta: &Vector) -> Vector {
        self.pieces[self.active(theta)].0.clone()
    }
}

const SHARPNESS_SAMPLES: usize = 4000;

/// Piecewise-linear learning problem minimized at `truth` over `set`, with the
/// sharpness modulus estimated as the smallest sampled ratio
/// `(g(theta) - g*) / ||theta - truth||` over feasible `theta`.
pub fn make_sharp_learning(pieces: Vec<(Vector, f64)>, truth: Vector, set: FeasibleSet) -> Result<LearningProblem> {
    if pieces.is_empty() {
        return Err(Error::InvalidProblem("no pieces".into()));
    }
    let dim = truth.len();
    if let Some((s, _)) = pieces.iter().find(|(s, _)| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: s.len(),
        });
    }
    if !set.contains(&truth, 1e-12) {
        return Err(Error::InvalidProblem("truth is not feasible".into()));
    }
    let oracle = MaxAffineLearning { pieces };
    let g_star = oracle.value(&truth);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut alpha = f64::INFINITY;
    for i in 0..SHARPNESS_SAMPLES {
        let radius = 10f64.powf(-3.0 + 4.0 * (i % 40) as f64 / 39.0);
        let dir = Vector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-1.0..1.0)));
        if dir.norm() == 0.0 {
            continue;
        }
        let theta = set.project(&(&truth + dir.normalize() * radius))?;
        let dist = (&theta - &truth).norm();
        if dist < 1e-9 {
            continue;
        }
        alpha = alpha.min((oracle.value(&theta) - g_star) / dist);
    }
    if alpha.is_nan() || alpha <= 1e-6 {
        return Err(Error::NotSharp(if alpha.is_finite() { alpha } else { 0.0 }));
    }
    let slope_bound = oracle.pieces.iter().map(|(s, _)| s.norm()).fold(0.0, f64::max);
    Ok(LearningProblem::new(
        Arc::new(oracle),
        set,
        LearningConstants {
            eta_g: 0.0,
            g_g: slope_bound.max(f64::MIN_POSITIVE),
            sharpness_alpha: alpha,
        },
        truth,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapConstants {
    pub l_fx: f64,
    pub l_ftheta: f64,
}

pub trait Map: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_theta(&self) -> usize;
    fn eval(&self, x: &Vector, theta: &Vector) -> Vector;
    fn constants(&self) -> &MapConstants;
}

/// `F(x, theta) = A x + B theta + c` with `A + A'` positive semidefinite.
#[derive(Clone, Debug)]
pub struct AffineMap {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: Vector,
    constants: MapConstants,
}

impl AffineMap {
    pub fn new(a: DMatrix<f64>, coupling: DMatrix<f64>, offset: Vector) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidProblem("A must be square".into()));
        }
        if coupling.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: coupling.nrows(),
            });
        }
        if offset.len() != a.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: offset.len(),
            });
        }
        let sym = (&a + a.transpose()) * 0.5;
        let (lo, _) = symmetric_extremes(&sym);
        if lo < -1e-10 * (1.0 + a.amax()) {
            return Err(Error::InvalidProblem(format!(
                "map is not monotone (symmetric part has eigenvalue {lo:.3e})"
            )));
        }
        let constants = MapConstants {
            l_fx: spectral_norm(&a),
            l_ftheta: spectral_norm(&coupling),
        };
        Ok(AffineMap {
            a,
            b: coupling,
            c: offset,
            constants,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn offset(&self) -> &Vector {
        &self.c
    }
}

impl Map for AffineMap {
    fn dim_x(&self) -> usize {
        self.a.nrows()
    }

    fn dim_theta(&self) -> usize {
        self.b.ncols()
    }

    fn eval(&self, x: &Vector, theta: &Vector) -> Vector {
        &self.a * x + &self.b * theta + &self.c
    }

    fn constants(&self) -> &MapConstants {
        &self.constants
    }
}

/// `F(x, theta) = A x + B theta` with `A` skew-symmetric: monotone but not
/// strongly monotone.
pub fn make_skew_map(a: DMatrix<f64>, coupling: DMatrix<f64>) -> Result<AffineMap> {
    if !a.is_square() || (&a + a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
        return Err(Error::InvalidProblem("A must be skew-symmetric".into()));
    }
    let n = a.nrows();
    AffineMap::new(a, coupling, DVector::zeros(n))
}
