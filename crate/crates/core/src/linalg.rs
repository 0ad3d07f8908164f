//! Extreme eigenvalues of symmetric matrices by power iteration.

use nalgebra::DMatrix;

use crate::geometry::Vector;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

fn start_vector(n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|i| 1.0 + 0.1 * ((i * 7 + 3) % 11) as f64))
}

/// Dominant eigenvalue of a symmetric positive semidefinite matrix.
fn dominant_psd(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = start_vector(n);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = m * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotient of the final vector.
    v.dot(&(m * &v)).max(lambda)
}

/// `(lambda_min, lambda_max)` of a symmetric matrix.
pub fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    if n == 0 {
        return (0.0, 0.0);
    }
    // Gershgorin radius bounds the spectrum, so both shifts below are PSD.
    let rho = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let id = DMatrix::<f64>::identity(n, n);
    let upper = dominant_psd(&(m + &id * rho)) - rho;
    let lower = rho - dominant_psd(&(&id * rho - m));
    (lower.min(upper), upper)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = if m.nrows() < m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    dominant_psd(&gram).max(0.0).sqrt()
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense_eigensolver() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 1.0]);
        let eig = m.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = symmetric_extremes(&m);
        assert!((lo - eig.min()).abs() < 1e-8);
        assert!((hi - eig.max()).abs() < 1e-8);
    }

    #[test]
    fn indefinite_and_diagonal() {
        let m = DMatrix::from_diagonal(&Vector::from_vec(vec![20.0, 2.0, -3.0]));
        let (lo, hi) = symmetric_extremes(&m);
        assert!((lo + 3.0).abs() < 1e-8 && (hi - 20.0).abs() < 1e-8);
    }

    #[test]
    fn spectral_norm_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((spectral_norm(&a) - 1.0).abs() < 1e-12);
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 3.0]);
        let svd = b.clone().svd(false, false).singular_values.max();
        assert!((spectral_norm(&b) - svd).abs() < 1e-8);
    }
}
