//! Norms, exponent schedules, contraction constants and runtime checks of the
//! a-priori bounds on computed solutions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{FieldSampler, NonlocalMultipliers, NonlocalProblemSpec};
use crate::fractional_ops::{beta_fn, rl_integral, GridFunction};
use crate::mittag_leffler::fit_bound_constants;
use crate::spectral::{scale_norm, scale_norm_slice, ModalTrajectory, SpectralBasis};
use crate::special::gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleFamily {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentSchedule {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub r: f64,
    pub p_prime: f64,
    pub q_prime: f64,
    pub p_hat: f64,
    pub q_hat: f64,
    pub r_hat: f64,
    pub family: ScheduleFamily,
}

impl ExponentSchedule {
    /// Family-A schedule with the remaining exponents chosen at the edge of their ranges.
    pub fn family_a(alpha: f64, q: f64, s: f64) -> Self {
        let p = 1.0 - q;
        let p_prime = p - s / alpha;
        let q_prime = 1.0 - p_prime;
        let q_hat = p.min(q).min(s / alpha);
        Self {
            p,
            q,
            s,
            r: ((1.0 - alpha * q_prime) / (alpha * q_prime)).min((1.0 - alpha * q) / (alpha * q)),
            p_prime,
            q_prime,
            p_hat: 1.0 - q_hat,
            q_hat,
            r_hat: (1.0 - alpha) / alpha,
            family: ScheduleFamily::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub holds: bool,
    pub inequality: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub family: ScheduleFamily,
    pub checks: Vec<ConstraintCheck>,
}

impl ScheduleReport {
    pub fn valid(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn holds(&self, name: &str) -> Option<bool> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.holds)
    }

    pub fn violated(&self) -> Vec<&ConstraintCheck> {
        self.checks.iter().filter(|c| !c.holds).collect()
    }
}

const SUM_TOL: f64 = 1e-12;

fn check(name: &str, holds: bool, inequality: String) -> ConstraintCheck {
    ConstraintCheck {
        name: name.to_string(),
        holds,
        inequality,
    }
}

pub fn validate_schedule(sched: &ExponentSchedule, alpha: f64) -> ScheduleReport {
    let ExponentSchedule {
        p,
        q,
        s,
        r,
        p_prime,
        q_prime,
        p_hat,
        q_hat,
        r_hat,
        family,
    } = *sched;
    let a = alpha;
    let r_cap = |x: f64| (1.0 - a * x) / (a * x);
    let r_prime_ok = r > 0.0 && r <= r_cap(q_prime) && (q_prime - (1.0 - p_prime)).abs() <= SUM_TOL;
    let r_hat_ok = r_hat > 0.0 && r_hat <= (1.0 - a) / a;
    let hat_sum = (p_hat - (1.0 - q_hat)).abs() <= SUM_TOL;
    let checks = match family {
        ScheduleFamily::A => vec![
            check(
                "A1",
                p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0 && (p + q - 1.0).abs() <= SUM_TOL,
                format!("0 < p, q < 1 and p + q = 1 (p = {p}, q = {q})"),
            ),
            check(
                "A2",
                r > 0.0 && r <= r_cap(q),
                format!("0 < r = {r} <= (1 - a q)/(a q) = {}", r_cap(q)),
            ),
            check(
                "A3",
                s > 0.0 && s < (a * q).min(1.0 - a * q),
                format!("0 < s = {s} < min(a q, 1 - a q) = {}", (a * q).min(1.0 - a * q)),
            ),
            check(
                "A4",
                p_prime > 0.0 && p_prime <= p - s / a && r_prime_ok,
                format!(
                    "0 < p' = {p_prime} <= p - s/a = {}, q' = 1 - p', r <= (1 - a q')/(a q') = {}",
                    p - s / a,
                    r_cap(q_prime)
                ),
            ),
            check(
                "A5",
                q_hat >= 0.0 && q_hat <= p.min(q).min(s / a) && hat_sum && r_hat_ok,
                format!(
                    "0 <= q^ = {q_hat} <= min(p, q, s/a) = {}, p^ = 1 - q^, 0 < r^ = {r_hat} <= (1 - a)/a",
                    p.min(q).min(s / a)
                ),
            ),
        ],
        ScheduleFamily::B => vec![
            check(
                "B1",
                q > 0.0 && q < p && p < 1.0 && (p + q - 1.0).abs() <= SUM_TOL,
                format!("0 < q < p < 1 and p + q = 1 (p = {p}, q = {q})"),
            ),
            check(
                "B2",
                p_prime > 0.0 && p_prime < p && r_prime_ok,
                format!("0 < p' = {p_prime} < p, q' = 1 - p', 0 < r <= {}", r_cap(q_prime)),
            ),
            check(
                "B3",
                p_prime > 0.0 && p_prime <= p - q && r_prime_ok,
                format!("0 < p' = {p_prime} <= p - q = {}, q' = 1 - p'", p - q),
            ),
            check(
                "B4",
                q_hat >= 0.0 && q_hat < q && hat_sum && r_hat_ok,
                format!("0 <= q^ = {q_hat} < q, p^ = 1 - q^, 0 < r^ <= (1 - a)/a"),
            ),
        ],
    };
    ScheduleReport { family, checks }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent(format!("eta = {eta} must lie in (0, 1)")))
    }
}

/// `max_t int_0^t |f(tau)| (t - tau)^(eta-1) d tau` by product integration.
pub fn dpe_norm(f: &GridFunction, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    let abs = f.map(f64::abs);
    let i = rl_integral(&abs, eta)?;
    Ok(gamma(eta) * i.sup_norm())
}

/// [`dpe_norm`] of the spatial `L2` norms of a trajectory.
pub fn dpe_norm_trajectory(u: &ModalTrajectory, basis: &SpectralBasis, eta: f64) -> Result<f64> {
    let norms = GridFunction::new(*u.grid(), u.slice_norms(basis, 0.0))?;
    dpe_norm(&norms, eta)
}

/// `max_{i < j} ||u(t_j) - u(t_i)||_{D(L^gamma)} / (t_j - t_i)^theta` over nodes from `first`.
pub fn holder_norm(
    u: &ModalTrajectory,
    basis: &SpectralBasis,
    theta: f64,
    scale_gamma: f64,
    first: usize,
) -> Result<f64> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidExponent(format!("theta = {theta} must lie in (0, 1]")));
    }
    let grid = *u.grid();
    let lam = basis.eigenvalues();
    let nodes = grid.nodes();
    let mut best = 0.0f64;
    let mut diff = vec![0.0; u.modes()];
    for i in first..grid.len() {
        for j in i + 1..grid.len() {
            for (m, d) in diff.iter_mut().enumerate() {
                *d = u.row(m)[j] - u.row(m)[i];
            }
            let v = scale_norm_slice(&diff, lam, scale_gamma) / (nodes[j] - nodes[i]).powf(theta);
            best = best.max(v);
        }
    }
    Ok(best)
}

/// `sup_j |psi_j|`.
pub fn estimate_ckappa(mult: &NonlocalMultipliers) -> f64 {
    mult.psi.iter().fold(0.0, |m, p| m.max(p.abs()))
}

/// Default grid for the empirical Mittag-Leffler bound constants.
pub fn bound_fit_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((0..=160).map(|i| 10f64.powf(-4.0 + 0.05 * i as f64)));
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionConstants {
    pub m1: f64,
    pub m2: f64,
    pub c_kappa: f64,
    pub c_omega: f64,
    /// `None` when the implicit equation for `M0` has no positive solution.
    pub m0: Option<f64>,
    pub theta_t: f64,
    pub theta_at_zero: f64,
    /// Only defined when `theta_t < 1`.
    pub chi0: Option<f64>,
    pub phi: f64,
    pub phi1: f64,
    pub fit_grid_points: usize,
}

pub struct ThetaInputs {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub q: f64,
    pub horizon: f64,
    pub upsilon: f64,
    pub k_norm: f64,
    pub lambda1: f64,
}

/// Contraction constant of the Picard map.
pub fn compute_theta(m2: f64, c_kappa: f64, x: &ThetaInputs) -> Result<f64> {
    let aq = x.alpha * x.q;
    let tq = x.horizon.powf(aq);
    let l = x.lambda1.powf(x.beta * x.p);
    let inner = tq * x.upsilon
        + c_kappa
        + c_kappa * m2 * x.upsilon * tq
        + tq * x.k_norm
        + m2 * c_kappa * tq * x.k_norm;
    Ok(m2 / l * inner * beta_fn(aq, 1.0 - aq)?)
}

/// Solution of `M0 = C_Omega T^{aq} + M2 (T^{aq} Y / l + C_k + T^{aq} C_k M2 Y M0 / l + T^{aq} ||k||)`.
pub fn compute_m0(m2: f64, c_kappa: f64, c_omega: f64, x: &ThetaInputs) -> Option<f64> {
    let tq = x.horizon.powf(x.alpha * x.q);
    let l = x.lambda1.powf(x.beta * x.p);
    let coeff = 1.0 - m2 * m2 * tq * c_kappa * x.upsilon / l;
    if coeff <= 0.0 {
        return None;
    }
    let rhs = c_omega * tq + m2 * (tq * x.upsilon / l + c_kappa + tq * x.k_norm);
    Some(rhs / coeff)
}

/// Constant of the weighted bound on `t^{aq} ||u(t)||` for linear sources.
pub fn lemma1_phi(m2: f64, c_kappa: f64, x: &ThetaInputs) -> f64 {
    let tq = x.horizon.powf(x.alpha * x.q);
    let l = x.lambda1.powf(x.beta * x.p);
    [
        c_kappa * m2 * tq / (l * l),
        tq * m2 / l,
        c_kappa * m2 * m2 * tq / l,
        c_kappa * m2 * m2 / l,
        m2 / l,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Companion constant built from `p', q', s`.
pub fn lemma3_phi1(m2: f64, c_kappa: f64, x: &ThetaInputs, sched: &ExponentSchedule) -> f64 {
    let aqp = x.alpha * sched.q_prime;
    let t1 = x.horizon.powf(aqp);
    let t2 = x.horizon.powf(aqp + sched.s);
    let lp = x.lambda1.powf(x.beta * sched.p_prime);
    let l = x.lambda1.powf(x.beta * x.p);
    [
        c_kappa * m2 * t1 / lp,
        m2 * t2 / lp,
        c_kappa * m2 * m2 * t2 / lp,
        c_kappa * m2 * m2 / lp,
        m2 / l,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

impl ContractionConstants {
    /// Empirical constants for `spec` under `sched`, with `upsilon` the source Lipschitz constant.
    pub fn estimate(
        spec: &NonlocalProblemSpec,
        mult: &NonlocalMultipliers,
        sched: &ExponentSchedule,
        upsilon: f64,
    ) -> Result<Self> {
        let grid = bound_fit_grid();
        let fit = fit_bound_constants(spec.alpha, &grid)?;
        let x = ThetaInputs {
            alpha: spec.alpha,
            beta: spec.beta,
            p: sched.p,
            q: sched.q,
            horizon: spec.horizon(),
            upsilon,
            k_norm: spec.k.sup_norm(),
            lambda1: spec.basis.eigenvalue(0),
        };
        let c_kappa = estimate_ckappa(mult);
        let c_omega = spec
            .basis
            .powers(-spec.beta * sched.p)
            .into_iter()
            .fold(0.0, f64::max);
        let theta_t = compute_theta(fit.m2, c_kappa, &x)?;
        let theta_at_zero = compute_theta(fit.m2, c_kappa, &ThetaInputs { horizon: 0.0, ..x })?;
        let m0 = compute_m0(fit.m2, c_kappa, c_omega, &x);
        let phi_norm = scale_norm(&spec.phi, &spec.basis, spec.beta * sched.p);
        let chi0 = match m0 {
            Some(m0) if theta_t < 1.0 => Some(m0 * phi_norm / (1.0 - theta_t)),
            _ => None,
        };
        Ok(Self {
            m1: fit.m1,
            m2: fit.m2,
            c_kappa,
            c_omega,
            m0,
            theta_t,
            theta_at_zero,
            chi0,
            phi: lemma1_phi(fit.m2, c_kappa, &x),
            phi1: lemma3_phi1(fit.m2, c_kappa, &x, sched),
            fit_grid_points: grid.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallBound {
    pub bound: Option<GridFunction>,
    pub applicable: bool,
    /// `exp` of the inner integral at the horizon; the bound needs it below 2.
    pub exp_at_horizon: f64,
}

/// `C exp(I(t)) / (2 - exp(I(T)))` with `I(t) = int_0^t g(s) s^(a-1) ds / Gamma(a)`.
pub fn gronwall_bound(c: f64, g: &GridFunction, alpha: f64) -> Result<GronwallBound> {
    if !(c >= 0.0) || g.values().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("gronwall_bound needs C >= 0 and g >= 0"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidOrder(alpha));
    }
    let grid = *g.grid();
    let nodes = grid.nodes();
    let dt = grid.dt();
    let mut inner = vec![0.0; grid.len()];
    for m in 0..grid.steps() {
        let (a, b) = (nodes[m], nodes[m + 1]);
        // exact moments of s^(a-1) against the linear interpolant of g
        let m0 = (b.powf(alpha) - a.powf(alpha)) / alpha;
        let m1 = (b.powf(alpha + 1.0) - a.powf(alpha + 1.0)) / (alpha + 1.0);
        let slope = (g.at(m + 1) - g.at(m)) / dt;
        let step = g.at(m) * m0 + slope * (m1 - a * m0);
        inner[m + 1] = inner[m] + step / gamma(alpha);
    }
    let exp_at_horizon = inner[grid.steps()].exp();
    let applicable = exp_at_horizon < 2.0;
    let bound = if applicable {
        let denom = 2.0 - exp_at_horizon;
        Some(GridFunction::new(
            grid,
            inner.iter().map(|i| c * i.exp() / denom).collect(),
        )?)
    } else {
        None
    };
    Ok(GronwallBound {
        bound,
        applicable,
        exp_at_horizon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub applicable: bool,
    pub exp_term: f64,
    pub phi: f64,
    pub phi1: f64,
    pub phi_norm: f64,
    pub source_norm: f64,
    /// `min_i (rhs_i - lhs_i)`.
    pub margin: f64,
    /// Margin with `Phi1` in place of `Phi`.
    pub margin_phi1: f64,
    pub passes: bool,
}

fn lemma1_margin(
    constant: f64,
    data: f64,
    k_norm: f64,
    aq: f64,
    horizon: f64,
    nodes: &[f64],
    lhs: &[f64],
) -> (bool, f64, f64) {
    let expo = |t: f64| (constant * k_norm * t.powf(2.0 * aq) / (2.0 * aq)).exp();
    let exp_term = expo(horizon);
    if exp_term >= 2.0 {
        return (false, exp_term, f64::NEG_INFINITY);
    }
    let margin = nodes
        .iter()
        .zip(lhs)
        .map(|(&t, &l)| constant * data * expo(t) / (2.0 - exp_term) - l)
        .fold(f64::INFINITY, f64::min);
    (true, exp_term, margin)
}

/// Check `t^{aq} ||u(t)|| <= Phi (||phi||_{D(L^{bp})} + ||F||_{D_{2,aq}}) e^{..t..} / (2 - e^{..T..})`.
pub fn verify_lemma1_bound(
    u: &ModalTrajectory,
    spec: &NonlocalProblemSpec,
    consts: &ContractionConstants,
    sched: &ExponentSchedule,
) -> Result<Lemma1Report> {
    let aq = spec.alpha * sched.q;
    let grid = *u.grid();
    let nodes = grid.nodes();
    let lhs: Vec<f64> = u
        .slice_norms(&spec.basis, 0.0)
        .iter()
        .zip(&nodes)
        .map(|(n, t)| t.powf(aq) * n)
        .collect();
    let f = spec.source.modal(u, &FieldSampler::new(&spec.basis));
    let source_norm = dpe_norm_trajectory(&f, &spec.basis, aq)?;
    let phi_norm = scale_norm(&spec.phi, &spec.basis, spec.beta * sched.p);
    let data = phi_norm + source_norm;
    let k_norm = spec.k.sup_norm();
    let (applicable, exp_term, margin) =
        lemma1_margin(consts.phi, data, k_norm, aq, spec.horizon(), &nodes, &lhs);
    let (_, _, margin_phi1) = lemma1_margin(consts.phi1, data, k_norm, aq, spec.horizon(), &nodes, &lhs);
    // relative slack for roundoff in the all-zero case
    let slack = 1e-12 * lhs.iter().fold(0.0f64, |m, v| m.max(*v));
    Ok(Lemma1Report {
        applicable,
        exp_term,
        phi: consts.phi,
        phi1: consts.phi1,
        phi_norm,
        source_norm,
        margin,
        margin_phi1,
        passes: applicable && margin >= -slack,
    })
}
