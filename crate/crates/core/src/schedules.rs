//! Steplength and regularization sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Steplength sequence `gamma_k`, queried with `k >= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant { gamma: f64 },
    /// `gamma_k = scale / k`; non-summable and square-summable.
    Harmonic { scale: f64 },
    /// `gamma = r / (m * sqrt(horizon + 1))` for every `k`, the best constant
    /// step for a subgradient run of fixed horizon with `r = ||x0 - x*||` and
    /// subgradient bound `m`.
    OptimalSubgradient { r: f64, m: f64, horizon: usize },
}

impl StepSchedule {
    pub fn constant(gamma: f64) -> Result<Self> {
        Self::Constant { gamma }.validated()
    }

    pub fn harmonic(scale: f64) -> Result<Self> {
        Self::Harmonic { scale }.validated()
    }

    pub fn optimal_subgradient(r: f64, m: f64, horizon: usize) -> Result<Self> {
        Self::OptimalSubgradient { r, m, horizon }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let ok = match self {
            StepSchedule::Constant { gamma } => positive(gamma),
            StepSchedule::Harmonic { scale } => positive(scale),
            StepSchedule::OptimalSubgradient { r, m, horizon } => positive(r) && positive(m) && horizon > 0,
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::InvalidSchedule(format!("{self:?} needs positive parameters")))
        }
    }

    pub fn step_at(&self, k: usize) -> f64 {
        debug_assert!(k >= 1, "schedules are indexed from 1");
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::Harmonic { scale } => scale / k.max(1) as f64,
            StepSchedule::OptimalSubgradient { r, m, horizon } => r / (m * ((horizon + 1) as f64).sqrt()),
        }
    }

    /// The fixed steplength, if the schedule does not depend on `k`.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            StepSchedule::Harmonic { .. } => None,
            _ => Some(self.step_at(1)),
        }
    }
}

/// Steplength/regularization pair for the regularized projection scheme:
/// `gamma_k = 1 / ((L + 1)^2 (k + 1)^alpha)`, `eps_k = (k + 1)^-beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TikhonovSchedule {
    lipschitz: f64,
    alpha: f64,
    beta: f64,
}

impl TikhonovSchedule {
    /// Requires `0 < beta < alpha < 1` and `alpha + beta < 1`.
    pub fn new(lipschitz: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(lipschitz.is_finite() && lipschitz >= 0.0) {
            return Err(Error::InvalidSchedule(format!("Lipschitz constant {lipschitz} must be >= 0")));
        }
        if !(0.0 < beta && beta < alpha && alpha < 1.0 && alpha + beta < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta < alpha < 1 and alpha + beta < 1, got alpha = {alpha}, beta = {beta}"
            )));
        }
        Ok(TikhonovSchedule { lipschitz, alpha, beta })
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `(gamma_k, eps_k)` for `k >= 1`.
    pub fn at(&self, k: usize) -> (f64, f64) {
        let t = (k + 1) as f64;
        let l1 = self.lipschitz + 1.0;
        (1.0 / (l1 * l1 * t.powf(self.alpha)), t.powf(-self.beta))
    }
}

/// `sqrt(1 - gamma eta (2 - gamma G))`, the per-step contraction of projected
/// gradient with step `gamma` on an `eta`-strongly convex function with
/// `G`-Lipschitz gradient.
pub fn contraction_factor(gamma: f64, eta: f64, lipschitz: f64) -> Result<f64> {
    if !(gamma > 0.0 && lipschitz > 0.0 && eta >= 0.0) {
        return Err(Error::Inadmissible(format!(
            "contraction factor needs gamma > 0, G > 0, eta >= 0 (got {gamma}, {lipschitz}, {eta})"
        )));
    }
    if gamma >= 2.0 / lipschitz {
        return Err(Error::Inadmissible(format!(
            "step {gamma} is not below 2/G = {}",
            2.0 / lipschitz
        )));
    }
    if eta > lipschitz {
        return Err(Error::Inadmissible(format!(
            "convexity modulus {eta} exceeds gradient Lipschitz constant {lipschitz}"
        )));
    }
    let q2 = 1.0 - gamma * eta * (2.0 - gamma * lipschitz);
    Ok(q2.max(0.0).sqrt())
}

/// Supremum of admissible extragradient steps when learning runs alongside:
/// `tau^2 < 1 / (L_x^2 + 2 L_theta ||theta0 - theta*||)`.
pub fn extragradient_step_bound(l_fx: f64, l_ftheta: f64, theta_gap: f64) -> Result<f64> {
    if l_fx < 0.0 || l_ftheta < 0.0 || theta_gap < 0.0 {
        return Err(Error::Inadmissible("extragradient constants must be nonnegative".into()));
    }
    let denom = l_fx * l_fx + 2.0 * l_ftheta * theta_gap;
    if denom <= 0.0 {
        return Err(Error::Inadmissible("extragradient step bound is unbounded".into()));
    }
    Ok((1.0 / denom).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_examples() {
        assert_eq!(StepSchedule::harmonic(1.0).unwrap().step_at(4), 0.25);
        assert_eq!(StepSchedule::optimal_subgradient(1.0, 1.0, 3).unwrap().step_at(17), 0.5);
        assert_eq!(StepSchedule::constant(0.04).unwrap().step_at(999), 0.04);
        assert!(StepSchedule::constant(0.0).is_err());
        assert!(StepSchedule::harmonic(-1.0).is_err());
    }

    #[test]
    fn tikhonov_examples() {
        let s = TikhonovSchedule::new(0.0, 0.65, 0.34).unwrap();
        let (g, e) = s.at(1);
        assert!((g - 2f64.powf(-0.65)).abs() < 1e-15);
        assert!((e - 2f64.powf(-0.34)).abs() < 1e-15);

        let s = TikhonovSchedule::new(1.0, 0.5, 0.25).unwrap();
        let (g, e) = s.at(3);
        assert!((g - 0.125).abs() < 1e-15);
        assert!((e - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);

        assert!(TikhonovSchedule::new(1.0, 0.3, 0.5).is_err());
        assert!(TikhonovSchedule::new(1.0, 0.7, 0.4).is_err());
    }

    #[test]
    fn contraction_examples() {
        assert_eq!(contraction_factor(1.0, 1.0, 1.0).unwrap(), 0.0);
        assert!((contraction_factor(0.04, 20.0, 20.0).unwrap() - 0.2).abs() < 1e-12);
        assert!(contraction_factor(0.11, 20.0, 20.0).is_err());
        assert!(contraction_factor(0.1, 20.0, 20.0).is_err());
        assert!(contraction_factor(0.01, 30.0, 20.0).is_err());
    }

    #[test]
    fn extragradient_examples() {
        assert_eq!(extragradient_step_bound(1.0, 0.0, 5.0).unwrap(), 1.0);
        assert!((extragradient_step_bound(2.8, 1.0, 0.0).unwrap() - 1.0 / 2.8).abs() < 1e-12);
        assert!(0.01 < extragradient_step_bound(2.8, 1.0, 0.0).unwrap());
        assert!((extragradient_step_bound(1.0, 1.0, 1.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(extragradient_step_bound(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn contraction_decreases_in_eta() {
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let q = contraction_factor(0.04, i as f64, 20.0).unwrap();
            assert!(q <= prev);
            prev = q;
        }
    }

    #[test]
    fn tikhonov_conditions_hold() {
        for &(l, a, b) in &[(0.0, 0.65, 0.34), (2.8, 0.65, 0.34), (10.0, 0.5, 0.25), (1.0, 0.9, 0.05)] {
            let s = TikhonovSchedule::new(l, a, b).unwrap();
            let mut k = 1usize;
            while k <= 1_000_000 {
                let (g, e) = s.at(k);
                assert!(g * e < 1.0);
                assert!(g <= e / ((l + e) * (l + e)), "k={k}");
                k = k * 3 / 2 + 1;
            }
        }
    }

    #[test]
    fn tikhonov_ratio_vanishes() {
        let s = TikhonovSchedule::new(2.8, 0.65, 0.34).unwrap();
        let ratio = |k: usize| {
            let (_, e_prev) = s.at(k - 1);
            let (g, e) = s.at(k);
            (e_prev - e).abs() / (g * e * e)
        };
        let mut prev = f64::INFINITY;
        for p in 0..=40 {
            let k = (100.0 * 10f64.powf(p as f64 / 10.0)).round() as usize;
            let r = ratio(k);
            assert!(r < prev, "k={k}");
            prev = r;
        }
        // Decays like k^(alpha + beta - 1).
        let slope = (ratio(1_000_000) / ratio(100)).ln() / 1e4f64.ln();
        assert!((slope - (0.65 + 0.34 - 1.0)).abs() < 2e-3, "slope {slope}");
    }
}
