//! Two-parameter Mittag-Leffler function on the real axis.
//!
//! `E_{a,s}(z) = sum_k z^k / Gamma(a k + s)`. Evaluation picks, in order:
//!
//! * closed forms for `a = 1, s in {1, 2}`;
//! * the Taylor series, accepted only when its cancellation error estimate
//!   stays below `series_tol`;
//! * the algebraic expansion for large negative `z`, truncated at the smallest
//!   term;
//! * a trapezoidal rule on a parabolic Bromwich contour as the fallback for
//!   negative `z` and `0 < a <= 1`.
//!
//! Every regime reports its own error estimate, so a value is only returned when
//! some regime certifies it.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_gamma, rgamma};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlParams {
    pub alpha: f64,
    pub sigma: f64,
}

impl MlParams {
    pub fn new(alpha: f64, sigma: f64) -> Self {
        Self { alpha, sigma }
    }

    /// One-parameter function `E_a = E_{a,1}`.
    pub fn classic(alpha: f64) -> Self {
        Self { alpha, sigma: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlEvalConfig {
    pub series_tol: f64,
    pub max_terms: usize,
    /// `None` selects `5 (1 + alpha)`.
    pub asymptotic_switch: Option<f64>,
    pub asymptotic_terms: usize,
}

impl Default for MlEvalConfig {
    fn default() -> Self {
        Self {
            series_tol: 1e-12,
            max_terms: 500,
            asymptotic_switch: None,
            asymptotic_terms: 80,
        }
    }
}

impl MlEvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.series_tol > 0.0) {
            return Err(Error::invalid("series_tol must be positive"));
        }
        if self.max_terms < 8 {
            return Err(Error::invalid("max_terms must be at least 8"));
        }
        if let Some(s) = self.asymptotic_switch {
            if !(s > 0.0) {
                return Err(Error::invalid("asymptotic_switch must be positive"));
            }
        }
        Ok(())
    }

    pub fn switch_for(&self, alpha: f64) -> f64 {
        self.asymptotic_switch.unwrap_or(5.0 * (1.0 + alpha))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ClosedForm,
    Series,
    Asymptotic,
    Contour,
}

/// Value produced by one evaluation regime together with its error estimate.
#[derive(Debug, Clone, Copy)]
pub struct RegimeValue {
    pub value: f64,
    pub error_estimate: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MlEvaluation {
    pub value: f64,
    pub regime: Regime,
}

// Relative rounding budget per series term (Gamma is good to ~1e-15).
const TERM_ROUNDING: f64 = 16.0 * f64::EPSILON;
// Achievable relative accuracy of the contour rule in double precision.
const CONTOUR_FLOOR: f64 = 1e-11;
const CONTOUR_NODES: (usize, usize) = (16, 20);

fn check_params(params: MlParams, z: f64) -> Result<()> {
    if !(params.alpha > 0.0) || !params.alpha.is_finite() {
        return Err(Error::InvalidOrder(params.alpha));
    }
    if !params.sigma.is_finite() {
        return Err(Error::invalid(format!("sigma = {} is not finite", params.sigma)));
    }
    if !z.is_finite() {
        return Err(Error::invalid(format!("z = {z} is not finite")));
    }
    Ok(())
}

/// Evaluate `E_{alpha,sigma}(z)`.
pub fn ml_eval(params: MlParams, z: f64, cfg: &MlEvalConfig) -> Result<f64> {
    ml_eval_traced(params, z, cfg).map(|e| e.value)
}

/// `E_{alpha,sigma}(z)` with the default configuration.
pub fn mittag_leffler(alpha: f64, sigma: f64, z: f64) -> Result<f64> {
    ml_eval(MlParams::new(alpha, sigma), z, &MlEvalConfig::default())
}

/// Like [`ml_eval`] but also reports which regime produced the value.
pub fn ml_eval_traced(params: MlParams, z: f64, cfg: &MlEvalConfig) -> Result<MlEvaluation> {
    check_params(params, z)?;
    cfg.validate()?;
    let MlParams { alpha, sigma } = params;
    let done = |value, regime| Ok(MlEvaluation { value, regime });

    if z == 0.0 {
        return done(rgamma(sigma), Regime::ClosedForm);
    }
    if alpha == 1.0 && sigma == 1.0 {
        return done(z.exp(), Regime::ClosedForm);
    }
    if alpha == 1.0 && sigma == 2.0 {
        return done(z.exp_m1() / z, Regime::ClosedForm);
    }

    let switch = cfg.switch_for(alpha);
    let tol = cfg.series_tol;
    if z.abs() <= switch {
        let s = ml_series(params, z, cfg);
        if s.certified {
            return done(s.value, Regime::Series);
        }
        if z < 0.0 {
            let a = ml_asymptotic(params, z, cfg);
            if a.certified {
                return done(a.value, Regime::Asymptotic);
            }
        }
    } else if z < 0.0 {
        let a = ml_asymptotic(params, z, cfg);
        if a.certified {
            return done(a.value, Regime::Asymptotic);
        }
        let s = ml_series(params, z, cfg);
        if s.certified {
            return done(s.value, Regime::Series);
        }
    } else {
        let s = ml_series(params, z, cfg);
        if s.certified {
            return done(s.value, Regime::Series);
        }
    }

    if z < 0.0 && alpha <= 1.0 {
        let c = ml_contour(params, z, tol);
        if c.certified {
            return done(c.value, Regime::Contour);
        }
    }
    Err(Error::NonConvergent { alpha, sigma, z })
}

/// Taylor series with a cancellation-aware error estimate.
pub fn ml_series(params: MlParams, z: f64, cfg: &MlEvalConfig) -> RegimeValue {
    let MlParams { alpha, sigma } = params;
    let tol = cfg.series_tol;
    let ln_abs_z = z.abs().ln();
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    let mut z_pow = 1.0_f64;
    let mut prev_abs = f64::INFINITY;
    let mut converged = false;
    let mut last = f64::INFINITY;

    for k in 0..cfg.max_terms {
        let arg = alpha * k as f64 + sigma;
        let term = if arg <= 170.0 && z_pow.is_finite() {
            z_pow * rgamma(arg)
        } else {
            // Gamma(arg) > 0 here
            let sign = if z < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
            sign * (k as f64 * ln_abs_z - ln_gamma(arg)).exp()
        };
        sum += term;
        abs_sum += term.abs();
        last = term.abs();
        if k >= 2 && arg > 1.0 && last <= prev_abs && last <= 0.25 * tol * sum.abs() {
            converged = true;
            break;
        }
        if last > 0.0 {
            prev_abs = last;
        }
        z_pow *= z;
    }

    let error_estimate = abs_sum * TERM_ROUNDING + last;
    RegimeValue {
        value: sum,
        error_estimate,
        certified: converged && sum.is_finite() && error_estimate <= tol * sum.abs(),
    }
}

/// Algebraic expansion `sum_{m>=1} (-1)^{m-1} x^{-m} / Gamma(sigma - alpha m)` for `z = -x < 0`.
pub fn ml_asymptotic(params: MlParams, z: f64, cfg: &MlEvalConfig) -> RegimeValue {
    let MlParams { alpha, sigma } = params;
    if z >= 0.0 {
        return RegimeValue {
            value: f64::NAN,
            error_estimate: f64::INFINITY,
            certified: false,
        };
    }
    let x = -z;
    let ln_x = x.ln();
    // |1/Gamma(y)| <= Gamma(1 - y) / pi for y <= 0; the bound drops the sine factor so
    // a term that happens to sit near a pole cannot fake convergence
    let envelope = |m: usize| {
        let y = sigma - alpha * m as f64;
        let ln_r = if y > 0.0 {
            rgamma(y).abs().ln()
        } else {
            ln_gamma(1.0 - y) - PI.ln()
        };
        (ln_r - m as f64 * ln_x).exp()
    };
    let mut sum = 0.0;
    let mut previous = f64::INFINITY;
    let mut error_estimate = envelope(cfg.asymptotic_terms + 1);

    for m in 1..=cfg.asymptotic_terms {
        let env = envelope(m);
        if env >= previous {
            // past the smallest term
            error_estimate = env;
            break;
        }
        previous = env;
        let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * rgamma(sigma - alpha * m as f64) * (-(m as f64) * ln_x).exp();
    }

    RegimeValue {
        value: sum,
        error_estimate,
        certified: sum != 0.0 && error_estimate <= cfg.series_tol * sum.abs(),
    }
}

fn contour_sum(alpha: f64, sigma: f64, x: f64, n: usize) -> f64 {
    // Parabola s(u) = mu (1 + i u)^2, u_k = k h, evaluated at t = 1.
    let h = 3.0 / n as f64;
    let mu = PI * n as f64 / 12.0;
    let term = |u: f64| {
        let w = Complex64::new(1.0, u);
        let s = mu * w * w;
        let ds = Complex64::new(0.0, 2.0 * mu) * w;
        let f = s.powf(alpha - sigma) / (s.powf(alpha) + x);
        (s.exp() * f * ds).im
    };
    let mut total = term(0.0);
    for k in 1..=n {
        total += 2.0 * term(k as f64 * h);
    }
    total * h / (2.0 * PI)
}

/// Inverse Laplace transform of `s^(alpha-sigma) / (s^alpha - z)` at `t = 1`, for `z < 0`.
pub fn ml_contour(params: MlParams, z: f64, tol: f64) -> RegimeValue {
    let MlParams { alpha, sigma } = params;
    if z >= 0.0 || alpha > 1.0 {
        return RegimeValue {
            value: f64::NAN,
            error_estimate: f64::INFINITY,
            certified: false,
        };
    }
    let coarse = contour_sum(alpha, sigma, -z, CONTOUR_NODES.0);
    let fine = contour_sum(alpha, sigma, -z, CONTOUR_NODES.1);
    let error_estimate = (fine - coarse).abs();
    RegimeValue {
        value: fine,
        error_estimate,
        certified: fine.is_finite() && error_estimate <= tol.max(CONTOUR_FLOOR) * fine.abs(),
    }
}

fn check_kernel_order(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidOrder(alpha))
    }
}

/// `t^(alpha-1) E_{alpha,alpha}(-lambda t^alpha)`, the resolvent kernel of the modal equations.
pub fn ml_kernel(alpha: f64, lambda: f64, t: f64) -> Result<f64> {
    check_kernel_order(alpha)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda = {lambda} must be nonnegative")));
    }
    if t == 0.0 {
        return Err(Error::SingularAtZero);
    }
    if !(t > 0.0) {
        return Err(Error::invalid(format!("t = {t} must be positive")));
    }
    let e = ml_eval(
        MlParams::new(alpha, alpha),
        -lambda * t.powf(alpha),
        &MlEvalConfig::default(),
    )?;
    Ok(t.powf(alpha - 1.0) * e)
}

/// `int_0^t s^(alpha-1) E_{alpha,alpha}(-lambda s^alpha) ds = t^alpha E_{alpha,alpha+1}(-lambda t^alpha)`.
///
/// Equal to `(1 - E_alpha(-lambda t^alpha)) / lambda` for `lambda > 0`; that form is used
/// once `lambda t^alpha >= 1`, where it has no cancellation.
pub fn ml_kernel_antiderivative(alpha: f64, lambda: f64, t: f64) -> Result<f64> {
    check_kernel_order(alpha)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda = {lambda} must be nonnegative")));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("t = {t} must be nonnegative")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let ta = t.powf(alpha);
    if lambda == 0.0 {
        return Ok(ta * rgamma(alpha + 1.0));
    }
    let x = lambda * ta;
    let cfg = MlEvalConfig::default();
    if x < 1.0 {
        Ok(ta * ml_eval(MlParams::new(alpha, alpha + 1.0), -x, &cfg)?)
    } else {
        Ok((1.0 - ml_eval(MlParams::classic(alpha), -x, &cfg)?) / lambda)
    }
}

/// Empirical constants of the two-sided bound `M1/(1+z) <= E_alpha(-z) <= M2/(1+z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundFit {
    pub m1: f64,
    pub m2: f64,
}

impl BoundFit {
    /// Smallest of the two margins `E - M1/(1+z)` and `M2/(1+z) - E`.
    pub fn margins(&self, z: f64, e: f64) -> (f64, f64) {
        (e - self.m1 / (1.0 + z), self.m2 / (1.0 + z) - e)
    }
}

/// Largest `M1` and smallest `M2` valid on `z_grid`.
pub fn fit_bound_constants(alpha: f64, z_grid: &[f64]) -> Result<BoundFit> {
    check_kernel_order(alpha)?;
    if z_grid.is_empty() {
        return Err(Error::invalid("z grid is empty"));
    }
    if z_grid.iter().any(|&z| !(z >= 0.0) || !z.is_finite()) {
        return Err(Error::invalid("z grid must be finite and nonnegative"));
    }
    if !z_grid.contains(&0.0) {
        return Err(Error::invalid("z grid must contain 0"));
    }
    let cfg = MlEvalConfig::default();
    let mut m1 = f64::INFINITY;
    let mut m2 = f64::NEG_INFINITY;
    for &z in z_grid {
        let scaled = (1.0 + z) * ml_eval(MlParams::classic(alpha), -z, &cfg)?;
        m1 = m1.min(scaled);
        m2 = m2.max(scaled);
    }
    Ok(BoundFit { m1, m2 })
}

/// `|int_0^T e^{-st} E_alpha(-lambda t^alpha) dt - s^(alpha-1)/(s^alpha + lambda)|`.
pub fn check_laplace_identity(
    alpha: f64,
    lambda: f64,
    s: f64,
    t_max: f64,
    cfg: &MlEvalConfig,
) -> Result<f64> {
    check_kernel_order(alpha)?;
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let abscissa = lambda.powf(1.0 / alpha);
    if !(s > abscissa) {
        return Err(Error::invalid(format!(
            "s = {s} must exceed lambda^(1/alpha) = {abscissa}"
        )));
    }
    if !(t_max > 0.0) {
        return Err(Error::invalid("t_max must be positive"));
    }
    // 0 < E_alpha(-x) <= 1 bounds the neglected tail
    let tail = (-s * t_max).exp() / s;
    if tail > cfg.series_tol {
        return Err(Error::TailNotNegligible {
            bound: tail,
            tol: cfg.series_tol,
        });
    }

    let params = MlParams::classic(alpha);
    let mut failure = None;
    let mut integrand = |t: f64| match ml_eval(params, -lambda * t.powf(alpha), cfg) {
        Ok(e) => (-s * t).exp() * e,
        Err(err) => {
            failure.get_or_insert(err);
            0.0
        }
    };

    // geometric panels resolve the boundary layer at t = 0 and the decay scale 1/s
    let mut edges = vec![0.0];
    let mut b = (1.0 / s).min(t_max);
    while b < t_max {
        edges.push(b);
        b *= 4.0;
    }
    edges.push(t_max);
    let mut integral = 0.0;
    for w in edges.windows(2) {
        let out = crate::quad::integrate(&mut integrand, w[0], w[1], 1e-14);
        integral += out.integral;
    }
    if let Some(err) = failure {
        return Err(err);
    }
    let exact = s.powf(alpha - 1.0) / (s.powf(alpha) + lambda);
    Ok((integral - exact).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(alpha: f64, sigma: f64, z: f64) -> f64 {
        mittag_leffler(alpha, sigma, z).unwrap()
    }

    #[test]
    fn exponential_case() {
        assert!((e(1.0, 1.0, -1.0) - 0.36787944117144233).abs() < 1e-15);
        assert!((e(1.0, 2.0, -3.0) - (1.0 - (-3.0f64).exp()) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn value_at_zero() {
        for &a in &[0.2, 0.5, 0.9, 1.3] {
            assert_eq!(e(a, 1.0, 0.0), 1.0);
        }
        assert!((e(0.5, 0.5, 0.0) - 0.5641895835477563).abs() < 1e-14);
    }

    #[test]
    fn half_order_reference() {
        // E_{1/2}(-1) = e * erfc(1)
        assert!((e(0.5, 1.0, -1.0) - 0.42758357615580705).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_order() {
        assert!(matches!(mittag_leffler(0.0, 1.0, -1.0), Err(Error::InvalidOrder(_))));
        assert!(matches!(mittag_leffler(-0.5, 1.0, -1.0), Err(Error::InvalidOrder(_))));
    }

    #[test]
    fn large_positive_argument_reports_nonconvergence() {
        let cfg = MlEvalConfig {
            max_terms: 8,
            ..Default::default()
        };
        let r = ml_eval(MlParams::classic(0.5), 40.0, &cfg);
        assert!(matches!(r, Err(Error::NonConvergent { .. })));
    }

    #[test]
    fn regimes_used_across_the_axis() {
        let cfg = MlEvalConfig::default();
        let small = ml_eval_traced(MlParams::classic(0.5), -0.5, &cfg).unwrap();
        assert_eq!(small.regime, Regime::Series);
        let far = ml_eval_traced(MlParams::classic(0.3), -200.0, &cfg).unwrap();
        assert_eq!(far.regime, Regime::Asymptotic);
        // alpha near 1 in the middle range needs the contour
        let mid = ml_eval_traced(MlParams::classic(0.95), -12.0, &cfg).unwrap();
        assert_eq!(mid.regime, Regime::Contour);
    }

    #[test]
    fn asymptotic_terms_near_gamma_poles() {
        // sigma - alpha m hits -2 at m = 11; references are 150-digit partial sums of the series
        let cfg = MlEvalConfig::default();
        let e = ml_eval(MlParams::new(0.3, 1.3), -5.0, &cfg).unwrap();
        assert!((e - 0.172_583_826_195_945_88).abs() < 1e-14, "{e}");
        let e = ml_eval(MlParams::classic(0.3), -4.0, &cfg).unwrap();
        assert!((e - 0.166_501_744_315_516_65).abs() < 1e-14, "{e}");
        // and the contour rule agrees independently
        let c = ml_contour(MlParams::new(0.3, 1.3), -5.0, 1e-12);
        assert!(c.certified && (c.value - 0.172_583_826_195_945_88).abs() < 1e-13);
    }

    #[test]
    fn kernel_examples() {
        let k = ml_kernel(0.5, 0.0, 1.0).unwrap();
        assert!((k - 0.5641895835477563).abs() < 1e-14);
        let k = ml_kernel(1.0, 1.0, 2.0).unwrap();
        assert!((k - (-2.0f64).exp()).abs() < 1e-15);
        assert!(matches!(ml_kernel(0.5, 1.0, 0.0), Err(Error::SingularAtZero)));
    }

    #[test]
    fn antiderivative_examples() {
        let a = ml_kernel_antiderivative(0.5, 0.0, 1.0).unwrap();
        assert!((a - std::f64::consts::FRAC_2_SQRT_PI).abs() < 1e-14);
        assert_eq!(ml_kernel_antiderivative(0.3, 2.0, 0.0).unwrap(), 0.0);
        let a = ml_kernel_antiderivative(0.5, 1.0, 1.0).unwrap();
        assert!((a - (1.0 - 0.42758357615580705)).abs() < 1e-13);
    }

    #[test]
    fn antiderivative_branches_agree_at_switch() {
        // x = lambda t^alpha crosses 1 between these two t
        for &alpha in &[0.3, 0.6, 0.9] {
            let lambda: f64 = 2.0;
            let t_star = (1.0 / lambda).powf(1.0 / alpha);
            let below = ml_kernel_antiderivative(alpha, lambda, t_star * (1.0 - 1e-9)).unwrap();
            let above = ml_kernel_antiderivative(alpha, lambda, t_star * (1.0 + 1e-9)).unwrap();
            assert!((below - above).abs() < 1e-8, "alpha = {alpha}");
        }
    }

    #[test]
    fn bound_constants_examples() {
        let fit = fit_bound_constants(1.0, &[0.0]).unwrap();
        assert_eq!((fit.m1, fit.m2), (1.0, 1.0));
        let fit = fit_bound_constants(0.9, &[0.0]).unwrap();
        assert_eq!((fit.m1, fit.m2), (1.0, 1.0));
        let fit = fit_bound_constants(0.5, &[0.0, 1.0, 10.0, 100.0]).unwrap();
        assert!(fit.m1 > 0.0 && fit.m1 <= 1.0 && fit.m2 >= 1.0);
        assert!(fit.m1 / 2.0 <= 0.42758358);
        assert!(matches!(fit_bound_constants(1.5, &[0.0]), Err(Error::InvalidOrder(_))));
        assert!(fit_bound_constants(0.5, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn laplace_identity() {
        let cfg = MlEvalConfig::default();
        let r = check_laplace_identity(1.0, 1.0, 2.0, 80.0, &cfg).unwrap();
        assert!(r < 1e-10, "residual {r}");
        let r = check_laplace_identity(0.5, 1.0, 4.0, 80.0, &cfg).unwrap();
        assert!(r < 1e-6, "residual {r}");
        assert!(check_laplace_identity(0.5, 1.0, 1.0, 80.0, &cfg).is_err());
        assert!(matches!(
            check_laplace_identity(0.5, 1.0, 2.0, 1.0, &cfg),
            Err(Error::TailNotNegligible { .. })
        ));
    }
}
