//! Recovery of the time coefficient `k(t)` from a point trace `h(t) = u(t, x0)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    evaluate_at_point, geometric_ratio, solve_forward, FieldSampler, ModalOperators,
    NonlocalProblemSpec, SourceModel,
};
use crate::fractional_ops::{caputo_l1, GridFunction};
use crate::spectral::{synthesize, ModalTrajectory, SpectralBasis};
use crate::special::gamma;

pub const DEFAULT_COMPAT_TOL: f64 = 1e-8;

/// Point observation `h(t) = u(t, x0)` with its floor `h0` and L1 derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationData {
    pub h: GridFunction,
    pub x0: f64,
    pub h0: f64,
    pub dh_alpha: GridFunction,
}

impl ObservationData {
    pub fn new(h: GridFunction, x0: f64, h0: f64, alpha: f64) -> Result<Self> {
        if !(h0 > 0.0) {
            return Err(Error::invalid(format!("h0 = {h0} must be positive")));
        }
        let dh_alpha = caputo_l1(&h, alpha)?;
        Ok(Self { h, x0, h0, dh_alpha })
    }

    pub fn min_abs(&self) -> f64 {
        self.h.values().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    fn check_floor(&self) -> Result<()> {
        let min_abs = self.min_abs();
        if min_abs < self.h0 {
            return Err(Error::ObservationTooSmall {
                min_abs,
                h0: self.h0,
            });
        }
        Ok(())
    }
}

/// Inverse problem data. The coefficient stored in `forward.k` is not used.
#[derive(Debug, Clone)]
pub struct InverseSpec {
    pub forward: NonlocalProblemSpec,
    pub obs: ObservationData,
    pub tol_k: f64,
    pub max_outer: usize,
    pub compat_tol: f64,
}

impl InverseSpec {
    pub fn new(forward: NonlocalProblemSpec, obs: ObservationData, tol_k: f64, max_outer: usize) -> Result<Self> {
        let spec = Self {
            forward,
            obs,
            tol_k,
            max_outer,
            compat_tol: DEFAULT_COMPAT_TOL,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.forward.validate()?;
        if *self.obs.h.grid() != self.forward.grid {
            return Err(Error::invalid("observation and problem grids differ"));
        }
        self.forward.basis.check_interior(self.obs.x0)?;
        if !(self.tol_k > 0.0) || self.max_outer == 0 {
            return Err(Error::invalid("tol_k must be positive and max_outer at least 1"));
        }
        if !(self.compat_tol >= 0.0) {
            return Err(Error::invalid("compat_tol must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub d1: bool,
    pub d2: bool,
    pub d3: bool,
    pub min_abs_h: f64,
    pub h0: f64,
    pub compat_residual: f64,
    pub compat_tol: f64,
    pub d3_lhs: f64,
    pub d3_rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub outer_iterations: usize,
    pub k_diffs: Vec<f64>,
    /// `sup_t |u(t, x0) - h(t)|` for the returned pair.
    pub data_residual: f64,
    pub contraction_ratio: f64,
    pub d3_satisfied: bool,
    pub converged: bool,
    pub conditions: ConditionReport,
}

/// `(F(t, x0, h) - d^a h) / h` node by node.
pub fn compute_k0(
    obs: &ObservationData,
    source: &SourceModel,
    basis: &SpectralBasis,
) -> Result<GridFunction> {
    obs.check_floor()?;
    let grid = *obs.h.grid();
    let values = (0..grid.len())
        .map(|i| {
            let h = obs.h.at(i);
            let f = source.at_point(basis, i, grid.node(i), obs.x0, h);
            (f - obs.dh_alpha.at(i)) / h
        })
        .collect();
    GridFunction::new(grid, values)
}

/// `sum_j lambda_j^beta u_j(t_i) e_j(x0)`.
pub fn trace_lbeta(
    u: &ModalTrajectory,
    basis: &SpectralBasis,
    beta: f64,
    x0: f64,
) -> Result<GridFunction> {
    basis.check_interior(x0)?;
    let weights: Vec<f64> = basis
        .powers(beta)
        .iter()
        .enumerate()
        .map(|(m, l)| l * basis.eigenfunction(m, x0))
        .collect();
    let grid = *u.grid();
    let values = (0..grid.len())
        .map(|i| u.rows().iter().zip(&weights).map(|(r, w)| r[i] * w).sum())
        .collect();
    GridFunction::new(grid, values)
}

/// Condition checks. D3 uses `||k_estimate||_C` in place of the unknown coefficient.
pub fn check_conditions(spec: &InverseSpec, k_estimate: &GridFunction, upsilon: f64) -> ConditionReport {
    let f = &spec.forward;
    let obs = &spec.obs;
    let min_abs_h = obs.min_abs();
    let n = f.grid.steps();
    let phi_x0 = synthesize(&f.phi, &f.basis, obs.x0).unwrap_or(f64::NAN);
    let compat_residual = (obs.h.at(n) - f.kappa * obs.h.at(0) - phi_x0).abs();
    let d3_lhs = (f.horizon().powf(f.alpha) / gamma(f.alpha + 1.0) * (upsilon + k_estimate.sup_norm())).exp();
    let d3_rhs = 1.0 + (f.kappa - 1.0).abs();
    ConditionReport {
        d1: min_abs_h >= obs.h0 && obs.h0 > 0.0,
        d2: compat_residual <= spec.compat_tol,
        d3: d3_lhs < d3_rhs,
        min_abs_h,
        h0: obs.h0,
        compat_residual,
        compat_tol: spec.compat_tol,
        d3_lhs,
        d3_rhs,
    }
}

struct StepContext<'a> {
    spec: &'a InverseSpec,
    ops: ModalOperators,
    sampler: FieldSampler,
    k0: GridFunction,
}

impl<'a> StepContext<'a> {
    fn new(spec: &'a InverseSpec) -> Result<Self> {
        spec.validate()?;
        let f = &spec.forward;
        let k0 = compute_k0(&spec.obs, &f.source, &f.basis)?;
        Ok(Self {
            spec,
            ops: ModalOperators::new(f)?,
            sampler: FieldSampler::new(&f.basis),
            k0,
        })
    }

    fn step(&self, k_prev: &GridFunction, u_prev: &ModalTrajectory) -> Result<(GridFunction, ModalTrajectory)> {
        let f = &self.spec.forward;
        let obs = &self.spec.obs;
        let trace = trace_lbeta(u_prev, &f.basis, f.beta, obs.x0)?;
        let k_next = GridFunction::new(
            f.grid,
            (0..f.grid.len())
                .map(|i| self.k0.at(i) - trace.at(i) / obs.h.at(i))
                .collect(),
        )?;
        let density = f
            .source
            .modal(u_prev, &self.sampler)
            .zip_with(&u_prev.times_function(k_prev), |a, b| a - b);
        let u_next = self.ops.mild(&f.phi, &density);
        Ok((k_next, u_next))
    }
}

/// One application of the fixed-point map: the coefficient update from the trace of
/// `L^beta u_prev`, and the mild solution with `F(u_prev)` and `k_prev u_prev` as data.
pub fn psi_step(
    k_prev: &GridFunction,
    u_prev: &ModalTrajectory,
    spec: &InverseSpec,
) -> Result<(GridFunction, ModalTrajectory)> {
    StepContext::new(spec)?.step(k_prev, u_prev)
}

/// Iterate [`psi_step`] from `(k0, phi)` until `||k_n - k_{n-1}||_C <= tol_k`.
pub fn recover(spec: &InverseSpec) -> Result<(GridFunction, ModalTrajectory, RecoveryReport)> {
    let ctx = StepContext::new(spec)?;
    let upsilon = spec.forward.source.lipschitz();
    let initial = check_conditions(spec, &ctx.k0, upsilon);
    if !initial.d2 {
        return Err(Error::IncompatibleObservation {
            residual: initial.compat_residual,
            tol: spec.compat_tol,
        });
    }

    let f = &spec.forward;
    let mut k = ctx.k0.clone();
    let mut u = ModalTrajectory::constant(f.grid, &f.phi);
    let mut diffs = Vec::new();
    let mut converged = false;
    for _ in 0..spec.max_outer {
        let (k_next, u_next) = ctx.step(&k, &u)?;
        let d = k_next.zip_with(&k, |a, b| a - b).sup_norm();
        diffs.push(d);
        k = k_next;
        u = u_next;
        if !d.is_finite() {
            break;
        }
        if d <= spec.tol_k {
            converged = true;
            break;
        }
    }

    let data_residual = if u.sup_l2().is_finite() {
        evaluate_at_point(&u, &f.basis, spec.obs.x0)?
            .zip_with(&spec.obs.h, |a, b| a - b)
            .sup_norm()
    } else {
        f64::INFINITY
    };
    let conditions = check_conditions(spec, &k, upsilon);
    let report = RecoveryReport {
        outer_iterations: diffs.len(),
        contraction_ratio: geometric_ratio(&diffs),
        k_diffs: diffs,
        data_residual,
        d3_satisfied: conditions.d3,
        converged,
        conditions,
    };
    if converged {
        Ok((k, u, report))
    } else {
        Err(Error::RecoveryNotConverged(Box::new(report)))
    }
}

/// Trace of the forward solution at `x0` with seeded uniform noise of amplitude
/// `noise_level ||h||_inf`; `h0` is set to `0.9 min |h|`.
pub fn synthesize_observation(
    spec_with_true_k: &NonlocalProblemSpec,
    x0: f64,
    noise_level: f64,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<ObservationData> {
    if !(noise_level >= 0.0) {
        return Err(Error::invalid("noise_level must be nonnegative"));
    }
    let (u, _) = solve_forward(spec_with_true_k, tol, max_iter)?;
    let clean = evaluate_at_point(&u, &spec_with_true_k.basis, x0)?;
    let amplitude = noise_level * clean.sup_norm();
    let h = if amplitude > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = clean
            .values()
            .iter()
            .map(|v| v + amplitude * rng.gen_range(-1.0..=1.0))
            .collect();
        GridFunction::new(*clean.grid(), noisy)?
    } else {
        clean
    };
    let values = h.values();
    let min_abs = values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let crosses = values.windows(2).any(|w| w[0] * w[1] < 0.0);
    if min_abs == 0.0 || crosses {
        return Err(Error::DatumCrossesZero);
    }
    ObservationData::new(h, x0, 0.9 * min_abs, spec_with_true_k.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::NonlinearSource;
    use crate::fractional_ops::TimeGrid;
    use crate::spectral::ModalVector;
    use std::f64::consts::PI;

    fn basis() -> SpectralBasis {
        SpectralBasis::dirichlet(PI, 2).unwrap()
    }

    #[test]
    fn k0_examples() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let b = basis();
        let one = GridFunction::constant(grid, 1.0);
        let obs = ObservationData::new(one, 1.0, 0.5, 0.5).unwrap();
        // F(t, x, u) = u gives F(t, x0, 1) = 1
        let src = SourceModel::Nonlinear(NonlinearSource::new(|_, _, u| u, 1.0));
        let k0 = compute_k0(&obs, &src, &b).unwrap();
        assert!(k0.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let obs = ObservationData::new(GridFunction::constant(grid, 3.0), 1.0, 1.0, 0.5).unwrap();
        let k0 = compute_k0(&obs, &SourceModel::zero(grid, 2), &b).unwrap();
        assert_eq!(k0.sup_norm(), 0.0);

        let obs = ObservationData::new(GridFunction::from_fn(grid, |t| 1.0 + t), 1.0, 0.5, 0.5).unwrap();
        let k0 = compute_k0(&obs, &SourceModel::zero(grid, 2), &b).unwrap();
        for (t, v) in grid.nodes().iter().zip(k0.values()) {
            let exact = -t.sqrt() * 2.0 / PI.sqrt() / (1.0 + t);
            assert!((v - exact).abs() < 1e-12);
        }

        let obs = ObservationData::new(GridFunction::constant(grid, 0.1), 1.0, 0.5, 0.5).unwrap();
        assert!(matches!(
            compute_k0(&obs, &SourceModel::zero(grid, 2), &b),
            Err(Error::ObservationTooSmall { .. })
        ));
    }

    #[test]
    fn trace_examples() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let b = basis();
        let x0 = 0.7;
        assert_eq!(trace_lbeta(&ModalTrajectory::zeros(grid, 2), &b, 1.0, x0).unwrap().sup_norm(), 0.0);
        let g = GridFunction::from_fn(grid, |t| 1.0 + t);
        let u = ModalTrajectory::separable(&ModalVector(vec![1.0, 0.0]), &g);
        let tr = trace_lbeta(&u, &b, 1.0, x0).unwrap();
        for i in 0..5 {
            assert!((tr.at(i) - g.at(i) * b.eigenfunction(0, x0)).abs() < 1e-15);
        }
        let u = ModalTrajectory::separable(&ModalVector(vec![1.0, 1.0]), &g);
        let tr = trace_lbeta(&u, &b, 0.5, x0).unwrap();
        let e = b.eigenfunction(0, x0) + 2.0 * b.eigenfunction(1, x0);
        assert!((tr.at(4) - 2.0 * e).abs() < 1e-14);
        assert!(trace_lbeta(&u, &b, 0.5, -1.0).is_err());
    }

    fn inverse_spec(kappa: f64, t_end: f64) -> InverseSpec {
        let grid = TimeGrid::new(t_end, 16).unwrap();
        let b = basis();
        let fwd = NonlocalProblemSpec::new(
            0.5,
            1.0,
            kappa,
            grid,
            b,
            ModalVector(vec![1.0, 0.0]),
            SourceModel::zero(grid, 2),
            GridFunction::zeros(grid),
        )
        .unwrap();
        let obs = synthesize_observation(&fwd, PI / 2.0, 0.0, 1, 1e-13, 50).unwrap();
        InverseSpec::new(fwd, obs, 1e-10, 100).unwrap()
    }

    #[test]
    fn conditions() {
        let spec = inverse_spec(0.0, 1.0);
        let grid = spec.forward.grid;
        let r = check_conditions(&spec, &GridFunction::constant(grid, 0.1), 0.0);
        assert!(r.d1 && r.d2 && r.d3);
        assert!((r.d3_lhs - (0.1 / gamma(1.5)).exp()).abs() < 1e-14);
        let spec1 = InverseSpec {
            forward: NonlocalProblemSpec { kappa: 1.0, ..spec.forward.clone() },
            ..spec.clone()
        };
        assert!(!check_conditions(&spec1, &GridFunction::zeros(grid), 0.0).d3);
    }

    #[test]
    fn first_step_from_zero_trajectory() {
        let spec = inverse_spec(0.0, 1.0);
        let grid = spec.forward.grid;
        let k0 = compute_k0(&spec.obs, &spec.forward.source, &spec.forward.basis).unwrap();
        let (k1, _) = psi_step(&GridFunction::zeros(grid), &ModalTrajectory::zeros(grid, 2), &spec).unwrap();
        assert_eq!(k1, k0);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = inverse_spec(0.0, 1.0);
        let a = synthesize_observation(&spec.forward, 1.0, 1e-3, 42, 1e-13, 50).unwrap();
        let b = synthesize_observation(&spec.forward, 1.0, 1e-3, 42, 1e-13, 50).unwrap();
        assert_eq!(a, b);
        let c = synthesize_observation(&spec.forward, 1.0, 1e-3, 43, 1e-13, 50).unwrap();
        assert_ne!(a.h, c.h);
    }

    #[test]
    fn zero_coefficient_round_trip() {
        let spec = inverse_spec(0.0, 0.5);
        let (k, _, rep) = recover(&spec).unwrap();
        assert!(rep.converged);
        // the L1 derivative of an E_alpha-type trace is only O(1) accurate at the first nodes
        let late = &k.values()[k.values().len() / 2..];
        assert!(late.iter().all(|v| v.abs() <= 1e-2), "k = {:?}", k.values());
    }

    #[test]
    fn floor_violation_is_rejected() {
        let mut spec = inverse_spec(0.0, 0.5);
        spec.obs.h0 = 10.0;
        assert!(matches!(recover(&spec), Err(Error::ObservationTooSmall { .. })));
    }
}
