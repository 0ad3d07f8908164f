//! Theoretical error envelopes, evaluated as functions of the iteration
//! count so traces can be overlaid on them.

use crate::error::{Error, Result};
use crate::schedules::contraction_factor;

/// Envelope on `||x_{k+1} - x*||` for the joint gradient scheme with
/// constant steps on strongly convex objective and learning problems:
/// `q_x^{k+1} e_x + (k + 1) gamma_f L_theta q^k e_theta`, `q = max(q_x, q_g)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StronglyConvexParams {
    pub gamma_f: f64,
    pub eta_f: f64,
    pub g_fx: f64,
    pub gamma_g: f64,
    pub eta_g: f64,
    pub g_g: f64,
    pub x0_err: f64,
    pub theta0_err: f64,
    pub l_theta: f64,
}

pub fn strongly_convex_bound(k: usize, p: &StronglyConvexParams) -> Result<f64> {
    let q_x = contraction_factor(p.gamma_f, p.eta_f, p.g_fx)?;
    let q_g = contraction_factor(p.gamma_g, p.eta_g, p.g_g)?;
    let q = q_x.max(q_g);
    let k1 = (k + 1) as f64;
    Ok(q_x.powf(k1) * p.x0_err + k1 * p.gamma_f * p.l_theta * q.powf(k as f64) * p.theta0_err)
}

fn check_rate(q_g: f64) -> Result<()> {
    if q_g > 0.0 && q_g < 1.0 {
        Ok(())
    } else {
        Err(Error::Inadmissible(format!("learning rate factor {q_g} must lie in (0, 1)")))
    }
}

fn check_horizon(k: usize) -> Result<()> {
    if k >= 1 {
        Ok(())
    } else {
        Err(Error::Inadmissible("bound needs K >= 1".into()))
    }
}

/// Envelope on `|f(avg x_K, theta_K) - f*|` for constant steps with
/// uniform averaging.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AveragingParams {
    pub gamma_f: f64,
    pub x0_err: f64,
    pub theta0_err: f64,
    /// Bound on `||x - x*||` over the feasible set.
    pub c: f64,
    pub g_ftheta: f64,
    pub l_ftheta: f64,
    pub q_g: f64,
}

pub fn averaging_bound(k: usize, p: &AveragingParams) -> Result<f64> {
    check_horizon(k)?;
    check_rate(p.q_g)?;
    let kf = k as f64;
    let a_x = p.x0_err * p.x0_err / (2.0 * p.gamma_f);
    let b_theta = p.c * p.g_ftheta / (1.0 - p.q_g);
    Ok(a_x / kf + p.theta0_err * (b_theta / kf + p.l_ftheta * p.q_g.powf(kf)))
}

/// Envelope on `|f(avg x_K, theta_K) - f*|` for the subgradient scheme run
/// with the optimal constant step for horizon `K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubgradientParams {
    pub m: f64,
    pub x0_err: f64,
    pub theta0_err: f64,
    pub l_ftheta: f64,
    pub q_g: f64,
}

pub fn subgradient_bound(k: usize, p: &SubgradientParams) -> Result<f64> {
    check_horizon(k)?;
    check_rate(p.q_g)?;
    let kf = k as f64;
    let d_x = p.m * p.x0_err;
    let c_theta = 2.0 * p.l_ftheta / (1.0 - p.q_g);
    Ok(d_x / (kf + 1.0).sqrt() + p.theta0_err * (p.l_ftheta * p.q_g.powf(kf) + c_theta / (kf + 1.0)))
}

/// Least-squares slope of `ln(err_k)` against `k` over the positive errors:
/// the empirical per-step linear rate is `exp(slope)`.
pub fn log_linear_rate(points: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, e)| *e > 0.0 && e.is_finite())
        .map(|&(k, e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some((sxy / sxx).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(k: usize, theta0_err: f64) -> f64 {
        strongly_convex_bound(
            k,
            &StronglyConvexParams {
                gamma_f: 0.04,
                eta_f: 20.0,
                g_fx: 20.0,
                gamma_g: 0.05,
                eta_g: 1.0,
                g_g: 2.0,
                x0_err: 1.0,
                theta0_err,
                l_theta: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn strongly_convex_examples() {
        // Known parameter: the plain linear rate.
        for k in [0, 3, 10] {
            assert!((sc(k, 0.0) - 0.2f64.powi(k as i32 + 1)).abs() < 1e-15);
        }
        // q_x = 0 and q_g = 0.5: only the learning term at k = 0.
        let p = StronglyConvexParams {
            gamma_f: 1.0,
            eta_f: 1.0,
            g_fx: 1.0,
            gamma_g: 1.0,
            eta_g: 0.75,
            g_g: 1.0,
            x0_err: 7.0,
            theta0_err: 3.0,
            l_theta: 1.0,
        };
        assert_eq!(contraction_factor(1.0, 0.75, 1.0).unwrap(), 0.5);
        assert!((strongly_convex_bound(0, &p).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn strongly_convex_eventually_decreasing() {
        for k in 50..400 {
            assert!(sc(k + 1, 2.0) < sc(k, 2.0));
        }
    }

    #[test]
    fn averaging_examples() {
        let base = AveragingParams {
            gamma_f: 0.5,
            x0_err: 1.0,
            theta0_err: 0.0,
            c: 1.0,
            g_ftheta: 1.0,
            l_ftheta: 1.0,
            q_g: 0.5,
        };
        assert!((averaging_bound(10, &base).unwrap() - 0.1).abs() < 1e-15);
        let p = AveragingParams {
            gamma_f: 0.1,
            x0_err: 2.0,
            theta0_err: 1.0,
            c: 10.0,
            ..base
        };
        assert!((averaging_bound(4, &p).unwrap() - 10.0625).abs() < 1e-12);
        assert!(averaging_bound(1 << 40, &p).unwrap() < 1e-10);
        assert!(averaging_bound(4, &AveragingParams { q_g: 1.0, ..p }).is_err());
        assert!(averaging_bound(4, &AveragingParams { q_g: 0.0, ..p }).is_err());
    }

    #[test]
    fn subgradient_examples() {
        let p = SubgradientParams {
            m: 1.0,
            x0_err: 1.0,
            theta0_err: 0.0,
            l_ftheta: 1.0,
            q_g: 0.5,
        };
        assert!((subgradient_bound(3, &p).unwrap() - 0.5).abs() < 1e-15);
        let p = SubgradientParams {
            m: 2.0,
            theta0_err: 1.0,
            ..p
        };
        assert!((subgradient_bound(1, &p).unwrap() - (2.0 / 2f64.sqrt() + 2.5)).abs() < 1e-12);
        let lead = |k: usize| 2.0 / ((k + 1) as f64).sqrt();
        let ratio = |k: usize| (subgradient_bound(k, &p).unwrap() - lead(k)) / lead(k);
        assert!(ratio(1_000_000) < 1e-2 * ratio(10));
    }

    #[test]
    fn monotone_in_initial_errors() {
        let mut prev = 0.0;
        for i in 0..20 {
            let e = i as f64 * 0.5;
            let a = averaging_bound(
                7,
                &AveragingParams {
                    gamma_f: 0.1,
                    x0_err: e,
                    theta0_err: e,
                    c: 3.0,
                    g_ftheta: 1.0,
                    l_ftheta: 2.0,
                    q_g: 0.9,
                },
            )
            .unwrap();
            assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn rate_fit_recovers_geometric_decay() {
        let pts: Vec<(usize, f64)> = (0..50).map(|k| (k, 3.0 * 0.8f64.powi(k as i32))).collect();
        assert!((log_linear_rate(&pts).unwrap() - 0.8).abs() < 1e-12);
        assert!(log_linear_rate(&pts[..1]).is_none());
    }
}
