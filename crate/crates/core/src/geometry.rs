//! Feasible sets and Euclidean projections.
//!
//! Boxes and the nonnegative orthant project by componentwise clamping. A
//! polyhedron `{x : A x >= b, lower <= x <= upper}` is projected with Dykstra's
//! alternating projections over its halfspace rows and its box, followed by an
//! active-set polish: once the iterates have settled, the equality-constrained
//! projection onto the apparent active set is solved directly and accepted if
//! it satisfies the KKT conditions. When the polish is rejected the Dykstra
//! iterate is returned once its cycle change drops below the tolerance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Default accuracy of polyhedral projections.
pub const PROJECTION_TOLERANCE: f64 = 1e-9;
/// Default cap on Dykstra sweeps per projection.
pub const MAX_DYKSTRA_ITERS: usize = 10_000;

#[derive(Clone, Debug)]
struct SparseRow {
    idx: Vec<usize>,
    val: Vec<f64>,
    rhs: f64,
    norm_sq: f64,
}

impl SparseRow {
    fn dot(&self, x: &Vector) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&j, &v)| v * x[j]).sum()
    }

    fn axpy(&self, alpha: f64, x: &mut Vector) {
        for (&j, &v) in self.idx.iter().zip(&self.val) {
            x[j] += alpha * v;
        }
    }
}

/// `{x : A x >= b, lower <= x <= upper}`.
#[derive(Clone, Debug)]
pub struct Polyhedron {
    a: DMatrix<f64>,
    b: Vector,
    lower: Vector,
    upper: Vector,
    rows: Vec<SparseRow>,
}

impl Polyhedron {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn rhs(&self) -> &Vector {
        &self.b
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    fn max_violation(&self, x: &Vector) -> f64 {
        let rows = self
            .rows
            .iter()
            .map(|r| (r.rhs - r.dot(x)).max(0.0))
            .fold(0.0, f64::max);
        rows.max(box_violation(&self.lower, &self.upper, x))
    }
}

#[derive(Clone, Debug)]
pub enum SetKind {
    Box { lower: Vector, upper: Vector },
    NonnegOrthant { dim: usize },
    Polyhedron(Polyhedron),
}

/// A closed convex set with a Euclidean projection and a bound `C >= sup ||x||`.
///
/// Unbounded sets carry `diameter_bound = +inf`; schemes that need a finite
/// bound check [`FeasibleSet::is_compact`].
#[derive(Clone, Debug)]
pub struct FeasibleSet {
    kind: SetKind,
    diameter_bound: f64,
    tolerance: f64,
    max_iters: usize,
}

fn sup_norm_of_box(lower: &Vector, upper: &Vector) -> f64 {
    lower
        .iter()
        .zip(upper.iter())
        .map(|(l, u)| {
            let m = l.abs().max(u.abs());
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

fn box_violation(lower: &Vector, upper: &Vector, x: &Vector) -> f64 {
    x.iter()
        .zip(lower.iter().zip(upper.iter()))
        .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
        .fold(0.0, f64::max)
}

fn clamp_into(lower: &Vector, upper: &Vector, x: &Vector) -> Vector {
    Vector::from_iterator(
        x.len(),
        x.iter()
            .zip(lower.iter().zip(upper.iter()))
            .map(|(&v, (&l, &u))| v.max(l).min(u)),
    )
}

fn check_bounds(lower: &Vector, upper: &Vector) -> Result<()> {
    if lower.len() != upper.len() {
        return Err(Error::DimensionMismatch {
            expected: lower.len(),
            got: upper.len(),
        });
    }
    if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
        return Err(Error::InvalidSet("NaN bound".into()));
    }
    if let Some(j) = (0..lower.len()).find(|&j| lower[j] > upper[j]) {
        return Err(Error::InvalidSet(format!(
            "lower[{j}] = {} exceeds upper[{j}] = {}",
            lower[j], upper[j]
        )));
    }
    Ok(())
}

impl FeasibleSet {
    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self> {
        check_bounds(&lower, &upper)?;
        let diameter_bound = sup_norm_of_box(&lower, &upper);
        Ok(FeasibleSet {
            kind: SetKind::Box { lower, upper },
            diameter_bound,
            tolerance: PROJECTION_TOLERANCE,
            max_iters: MAX_DYKSTRA_ITERS,
        })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(Vector::from_element(dim, lo), Vector::from_element(dim, hi))
    }

    pub fn nonneg_orthant(dim: usize) -> Self {
        FeasibleSet {
            kind: SetKind::NonnegOrthant { dim },
            diameter_bound: f64::INFINITY,
            tolerance: PROJECTION_TOLERANCE,
            max_iters: MAX_DYKSTRA_ITERS,
        }
    }

    /// `{x : a x >= b, lower <= x <= upper}`. Bounds may be infinite. Fails
    /// when the set is empty.
    pub fn polyhedron(a: DMatrix<f64>, b: Vector, lower: Vector, upper: Vector) -> Result<Self> {
        check_bounds(&lower, &upper)?;
        if a.ncols() != lower.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: a.ncols(),
            });
        }
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        let mut rows = Vec::with_capacity(a.nrows());
        for i in 0..a.nrows() {
            let mut idx = Vec::new();
            let mut val = Vec::new();
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    idx.push(j);
                    val.push(a[(i, j)]);
                }
            }
            let norm_sq: f64 = val.iter().map(|v| v * v).sum();
            if norm_sq == 0.0 {
                if b[i] > 0.0 {
                    return Err(Error::InvalidSet(format!("row {i} reads 0 >= {}", b[i])));
                }
                continue;
            }
            rows.push(SparseRow {
                idx,
                val,
                rhs: b[i],
                norm_sq,
            });
        }
        let diameter_bound = sup_norm_of_box(&lower, &upper);
        let set = FeasibleSet {
            kind: SetKind::Polyhedron(Polyhedron {
                a,
                b,
                lower,
                upper,
                rows,
            }),
            diameter_bound,
            tolerance: PROJECTION_TOLERANCE,
            max_iters: MAX_DYKSTRA_ITERS,
        };

        // Nonemptiness: project the box midpoint and check it lands in the set.
        if let SetKind::Polyhedron(p) = &set.kind {
            let mid = Vector::from_iterator(
                p.lower.len(),
                p.lower.iter().zip(p.upper.iter()).map(|(&l, &u)| {
                    if l.is_finite() && u.is_finite() {
                        0.5 * (l + u)
                    } else {
                        0.0f64.max(l).min(u)
                    }
                }),
            );
            let projected = set
                .project(&mid)
                .map_err(|_| Error::InvalidSet("polyhedron appears to be empty".into()))?;
            if p.max_violation(&projected) > set.tolerance * (1.0 + projected.amax()) {
                return Err(Error::InvalidSet("polyhedron appears to be empty".into()));
            }
        }
        Ok(set)
    }

    pub fn with_diameter_bound(mut self, c: f64) -> Self {
        self.diameter_bound = c;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64, max_iters: usize) -> Self {
        self.tolerance = tolerance;
        self.max_iters = max_iters;
        self
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SetKind::Box { lower, .. } => lower.len(),
            SetKind::NonnegOrthant { dim } => *dim,
            SetKind::Polyhedron(p) => p.lower.len(),
        }
    }

    pub fn diameter_bound(&self) -> f64 {
        self.diameter_bound
    }

    pub fn is_compact(&self) -> bool {
        self.diameter_bound.is_finite()
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Upper bound on `||y - x||` over feasible `y`, from the bounding box.
    pub fn max_distance_from(&self, x: &Vector) -> f64 {
        let (lower, upper) = match &self.kind {
            SetKind::Box { lower, upper } => (lower, upper),
            SetKind::Polyhedron(p) => (&p.lower, &p.upper),
            SetKind::NonnegOrthant { .. } => return f64::INFINITY,
        };
        x.iter()
            .zip(lower.iter().zip(upper.iter()))
            .map(|(v, (l, u))| {
                let m = (v - l).abs().max((u - v).abs());
                m * m
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Largest constraint violation of `x` (0 when feasible).
    pub fn max_violation(&self, x: &Vector) -> f64 {
        match &self.kind {
            SetKind::Box { lower, upper } => box_violation(lower, upper, x),
            SetKind::NonnegOrthant { .. } => x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max),
            SetKind::Polyhedron(p) => p.max_violation(x),
        }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        x.len() == self.dim() && self.max_violation(x) <= tol
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match &self.kind {
            SetKind::Box { lower, upper } => Ok(clamp_into(lower, upper, x)),
            SetKind::NonnegOrthant { .. } => Ok(x.map(|v| v.max(0.0))),
            SetKind::Polyhedron(p) => self.dykstra(p, x),
        }
    }

    fn dykstra(&self, p: &Polyhedron, x0: &Vector) -> Result<Vector> {
        let n = x0.len();
        let m = p.rows.len();
        let tol = self.tolerance;
        let scale = 1.0 + x0.amax();

        let mut x = clamp_into(&p.lower, &p.upper, x0);
        if p.rows.iter().all(|r| r.dot(&x) >= r.rhs) {
            return Ok(x);
        }

        let mut pbox = x0 - &x;
        let mut s = vec![0.0; m];
        let mut polish_at = (1e-4 * scale).powi(2);
        let mut last_polish_sweep = 0usize;
        let mut change = f64::INFINITY;

        for sweep in 1..=self.max_iters {
            change = 0.0;
            for (i, row) in p.rows.iter().enumerate() {
                let az = row.dot(&x) - s[i] * row.norm_sq;
                let t = ((row.rhs - az) / row.norm_sq).max(0.0);
                let delta = t - s[i];
                if delta != 0.0 {
                    row.axpy(delta, &mut x);
                    change += delta * delta * row.norm_sq;
                }
                s[i] = t;
            }
            for j in 0..n {
                let z = x[j] + pbox[j];
                let c = z.max(p.lower[j]).min(p.upper[j]);
                let np = z - c;
                change += (np - pbox[j]).powi(2);
                pbox[j] = np;
                x[j] = c;
            }

            if change <= polish_at || sweep - last_polish_sweep >= 200 {
                last_polish_sweep = sweep;
                polish_at = change * 1e-2;
                if let Some(exact) = polish(p, x0, &s, &pbox, tol, scale) {
                    return Ok(exact);
                }
            }
            if change <= tol * tol && p.max_violation(&x) <= tol * scale {
                return Ok(x);
            }
        }
        Err(Error::ProjectionFailed {
            iterations: self.max_iters,
            residual: p.max_violation(&x).max(change.sqrt()),
            last_iterate: x.iter().copied().collect(),
        })
    }
}

/// Solve the projection restricted to the active set suggested by the Dykstra
/// multipliers and accept it only if it is a KKT point of the full problem.
fn polish(p: &Polyhedron, x0: &Vector, s: &[f64], pbox: &Vector, tol: f64, scale: f64) -> Option<Vector> {
    let n = x0.len();
    let active: Vec<usize> = (0..s.len()).filter(|&i| s[i] > 0.0).collect();
    // pbox > 0 means the box clipped from above.
    let mut fixed = vec![None; n];
    for j in 0..n {
        if pbox[j] > 0.0 {
            fixed[j] = Some(p.upper[j]);
        } else if pbox[j] < 0.0 {
            fixed[j] = Some(p.lower[j]);
        }
    }

    let mut x = x0.clone();
    for j in 0..n {
        if let Some(v) = fixed[j] {
            x[j] = v;
        }
    }
    let k = active.len();
    let mut mu = Vector::zeros(k);
    if k > 0 {
        // Free-variable block of the active rows.
        let mut a_free = DMatrix::<f64>::zeros(k, n);
        let mut rhs = Vector::zeros(k);
        for (r, &i) in active.iter().enumerate() {
            let row = &p.rows[i];
            let mut acc = row.rhs;
            for (&j, &v) in row.idx.iter().zip(&row.val) {
                if fixed[j].is_some() {
                    acc -= v * x[j];
                } else {
                    a_free[(r, j)] = v;
                    acc -= v * x0[j];
                }
            }
            rhs[r] = acc;
        }
        let gram = &a_free * a_free.transpose();
        mu = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.svd(true, true).solve(&rhs, 1e-12).ok()?,
        };
        let step = a_free.transpose() * &mu;
        for j in 0..n {
            if fixed[j].is_none() {
                x[j] = x0[j] + step[j];
            }
        }
    }

    let feas_tol = 1e-12 * scale;
    if p.max_violation(&x) > feas_tol.max(tol * 1e-3) {
        return None;
    }
    let dual_tol = 1e-10 * scale;
    if mu.iter().any(|&v| v < -dual_tol) {
        return None;
    }
    // Stationarity: x - x0 = A_I' mu + nu, with nu >= 0 on lower-active and
    // nu <= 0 on upper-active coordinates.
    let mut nu = &x - x0;
    for (r, &i) in active.iter().enumerate() {
        p.rows[i].axpy(-mu[r], &mut nu);
    }
    for j in 0..n {
        let ok = match fixed[j] {
            Some(v) if v == p.upper[j] && v != p.lower[j] => nu[j] <= dual_tol,
            Some(v) if v == p.lower[j] && v != p.upper[j] => nu[j] >= -dual_tol,
            Some(_) => true,
            None => nu[j].abs() <= dual_tol,
        };
        if !ok {
            return None;
        }
    }
    Some(x)
}

/// Projection onto the halfspace `{y : a'y >= b}`.
pub fn project_halfspace(a: &Vector, b: f64, x: &Vector) -> Result<Vector> {
    if a.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: x.len(),
        });
    }
    let norm_sq = a.norm_squared();
    if norm_sq == 0.0 {
        return Err(Error::ZeroNormal);
    }
    let ax = a.dot(x);
    if ax >= b {
        Ok(x.clone())
    } else {
        Ok(x + a * ((b - ax) / norm_sq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn box_clamps() {
        let set = FeasibleSet::cube(2, 0.0, 2.0).unwrap();
        assert_eq!(set.project(&dvector![3.0, -1.0]).unwrap(), dvector![2.0, 0.0]);
    }

    #[test]
    fn orthant_leaves_feasible_point() {
        let set = FeasibleSet::nonneg_orthant(2);
        assert_eq!(set.project(&dvector![0.5, 0.7]).unwrap(), dvector![0.5, 0.7]);
        assert!(!set.is_compact());
    }

    #[test]
    fn simplex_like_polyhedron() {
        // x1 + x2 <= 2, x >= 0
        let set = FeasibleSet::polyhedron(
            DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]),
            dvector![-2.0],
            dvector![0.0, 0.0],
            dvector![f64::INFINITY, f64::INFINITY],
        )
        .unwrap();
        let y = set.project(&dvector![2.0, 2.0]).unwrap();
        // Closed-form halfspace projection is the oracle here.
        let oracle = project_halfspace(&dvector![-1.0, -1.0], -2.0, &dvector![2.0, 2.0]).unwrap();
        assert!((y - oracle).norm() <= PROJECTION_TOLERANCE);
        assert!(!set.is_compact());
    }

    #[test]
    fn halfspace_examples() {
        let r = project_halfspace(&dvector![1.0, 0.0], 0.0, &dvector![-3.0, 5.0]).unwrap();
        assert_eq!(r, dvector![0.0, 5.0]);
        let r = project_halfspace(&dvector![1.0, 1.0], 2.0, &dvector![2.0, 2.0]).unwrap();
        assert_eq!(r, dvector![2.0, 2.0]);
        let r = project_halfspace(&dvector![1.0, 1.0], 2.0, &dvector![0.0, 0.0]).unwrap();
        assert!((r - dvector![1.0, 1.0]).norm() < 1e-15);
    }

    #[test]
    fn halfspace_projection_is_closest_boundary_point() {
        // Brute force over the line x1 + x2 = 2.
        let r = project_halfspace(&dvector![1.0, 1.0], 2.0, &dvector![0.0, 0.0]).unwrap();
        let best = (0..=4000)
            .map(|i| -2.0 + i as f64 * 1e-3)
            .map(|t| (t * t + (2.0 - t) * (2.0 - t)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!((r.norm() - best).abs() < 1e-9);
    }

    #[test]
    fn zero_normal_rejected() {
        assert!(matches!(
            project_halfspace(&dvector![0.0, 0.0], 1.0, &dvector![0.0, 0.0]),
            Err(Error::ZeroNormal)
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let set = FeasibleSet::cube(3, 0.0, 1.0).unwrap();
        assert!(matches!(
            set.project(&dvector![1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn inverted_box_rejected() {
        assert!(FeasibleSet::boxed(dvector![1.0], dvector![0.0]).is_err());
    }

    #[test]
    fn empty_polyhedron_rejected() {
        // x1 + x2 >= 5 inside [0,1]^2
        let r = FeasibleSet::polyhedron(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            dvector![5.0],
            dvector![0.0, 0.0],
            dvector![1.0, 1.0],
        );
        assert!(matches!(r, Err(Error::InvalidSet(_))));
    }

    #[test]
    fn diameter_defaults() {
        let set = FeasibleSet::boxed(dvector![-3.0, 0.0], dvector![1.0, 4.0]).unwrap();
        assert_eq!(set.diameter_bound(), 5.0);
    }

    #[test]
    fn failing_projection_reports_iterate() {
        let set = FeasibleSet::polyhedron(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 2.0]),
            dvector![1.0, 0.5],
            dvector![0.0, 0.0],
            dvector![1.0, 1.0],
        )
        .unwrap()
        .with_tolerance(1e-300, 1);
        match set.project(&dvector![-5.0, -7.0]) {
            Ok(y) => assert!(set.max_violation(&y) < 1e-12),
            Err(Error::ProjectionFailed { last_iterate, .. }) => assert_eq!(last_iterate.len(), 2),
            Err(e) => panic!("unexpected {e}"),
        }
    }
}
