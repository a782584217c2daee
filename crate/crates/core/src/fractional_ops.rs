//! Discrete fractional calculus on uniform time grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mittag_leffler::ml_kernel_antiderivative;
use crate::special::{gamma, ln_gamma};

/// Uniform grid `t_i = i T / N`, `i = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!("horizon T = {horizon} must be positive")));
        }
        if steps < 2 {
            return Err(Error::invalid(format!("step count N = {steps} must be at least 2")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }
}

/// Samples on a [`TimeGrid`], piecewise linear in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: TimeGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self { grid, values }
    }

    pub fn constant(grid: TimeGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Linear interpolation, clamped to `[0, T]`.
    pub fn interpolate(&self, t: f64) -> f64 {
        let dt = self.grid.dt();
        let s = (t / dt).clamp(0.0, self.grid.steps() as f64);
        let i = (s.floor() as usize).min(self.grid.steps() - 1);
        let w = s - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

fn check_open_order(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidOrder(alpha))
    }
}

/// `b_m = (m+1)^(1-alpha) - m^(1-alpha)` for `m = 0..n`.
pub(crate) fn l1_weights(alpha: f64, n: usize) -> Vec<f64> {
    let e = 1.0 - alpha;
    (0..n)
        .map(|m| ((m + 1) as f64).powf(e) - (m as f64).powf(e))
        .collect()
}

/// L1 approximation of the Caputo derivative on raw samples.
pub(crate) fn caputo_l1_slice(values: &[f64], dt: f64, alpha: f64) -> Vec<f64> {
    let n = values.len() - 1;
    let b = l1_weights(alpha, n);
    let c = dt.powf(-alpha) / gamma(2.0 - alpha);
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let mut out = vec![0.0; n + 1];
    for i in 1..=n {
        let mut acc = 0.0;
        for k in 1..=i {
            acc += b[i - k] * diffs[k - 1];
        }
        out[i] = c * acc;
    }
    out
}

/// Caputo derivative of order `alpha` by the L1 scheme; node 0 carries 0.
pub fn caputo_l1(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    check_open_order(alpha)?;
    let values = caputo_l1_slice(&f.values, f.grid.dt(), alpha);
    Ok(GridFunction::from_vec_unchecked(f.grid, values))
}

/// Riemann-Liouville integral of order `alpha` by product integration with
/// piecewise-linear `f`.
pub fn rl_integral(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidOrder(alpha));
    }
    let n_steps = f.grid.steps();
    let scale = f.grid.dt().powf(alpha) / gamma(alpha + 2.0);
    let a1 = alpha + 1.0;
    let p = |m: usize| (m as f64).powf(a1);
    let mut out = vec![0.0; n_steps + 1];
    for (n, slot) in out.iter_mut().enumerate().skip(1) {
        let nf = n as f64;
        let mut acc = (p(n - 1) - (nf - alpha - 1.0) * nf.powf(alpha)) * f.values[0];
        for k in 1..n {
            acc += (p(n - k + 1) - 2.0 * p(n - k) + p(n - k - 1)) * f.values[k];
        }
        acc += f.values[n];
        *slot = scale * acc;
    }
    Ok(GridFunction::from_vec_unchecked(f.grid, out))
}

/// Exact per-step moments of `t^(alpha-1) E_{alpha,alpha}(-lambda t^alpha)`:
/// `w[m] = A((m+1) dt) - A(m dt)` with `A` the kernel antiderivative.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMoments {
    weights: Vec<f64>,
}

impl KernelMoments {
    pub fn new(grid: &TimeGrid, alpha: f64, lambda: f64) -> Result<Self> {
        check_open_order(alpha)?;
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda = {lambda} must be nonnegative")));
        }
        let dt = grid.dt();
        let mut prev = 0.0;
        let mut weights = Vec::with_capacity(grid.steps());
        for m in 1..=grid.steps() {
            let a = ml_kernel_antiderivative(alpha, lambda, m as f64 * dt)?;
            weights.push(a - prev);
            prev = a;
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Convolve node samples, using step-midpoint averages of the density.
    pub fn convolve(&self, values: &[f64]) -> Vec<f64> {
        let n = values.len() - 1;
        debug_assert_eq!(n, self.weights.len());
        let mid: Vec<f64> = values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut out = vec![0.0; n + 1];
        for (i, slot) in out.iter_mut().enumerate().skip(1) {
            *slot = mid[..i]
                .iter()
                .zip(self.weights[..i].iter().rev())
                .map(|(v, w)| v * w)
                .sum();
        }
        out
    }

    /// Value at the last node only.
    pub fn convolve_at_end(&self, values: &[f64]) -> f64 {
        let n = values.len() - 1;
        (0..n)
            .map(|m| 0.5 * (values[m] + values[m + 1]) * self.weights[n - 1 - m])
            .sum()
    }
}

/// `f * [t^(alpha-1) E_{alpha,alpha}(-lambda t^alpha)]` with exact kernel moments.
pub fn ml_convolve(f: &GridFunction, alpha: f64, lambda: f64) -> Result<GridFunction> {
    let moments = KernelMoments::new(&f.grid, alpha, lambda)?;
    Ok(GridFunction::from_vec_unchecked(
        f.grid,
        moments.convolve(&f.values),
    ))
}

/// Euler Beta function.
pub fn beta_fn(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid(format!("beta_fn({a}, {b}) needs positive arguments")));
    }
    if a + b < 170.0 {
        Ok(gamma(a) * gamma(b) / gamma(a + b))
    } else {
        Ok((ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 4).is_err());
        let g = grid(2.0, 4);
        assert_eq!(g.nodes(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn interpolation_is_piecewise_linear() {
        let f = GridFunction::from_fn(grid(1.0, 4), |t| t * t);
        assert!((f.interpolate(0.125) - 0.5 * 0.0625).abs() < 1e-15);
        assert_eq!(f.interpolate(2.0), 1.0);
    }

    #[test]
    fn caputo_of_constant_and_linear() {
        let g = grid(1.0, 64);
        let c = caputo_l1(&GridFunction::constant(g, 3.0), 0.5).unwrap();
        assert!(c.sup_norm() == 0.0);
        // L1 is exact for linear functions
        let d = caputo_l1(&GridFunction::from_fn(g, |t| t), 0.5).unwrap();
        assert!((d.at(64) - 2.0 / std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!(caputo_l1(&GridFunction::zeros(g), 1.0).is_err());
    }

    #[test]
    fn rl_integral_of_constant() {
        let g = grid(2.0, 50);
        let i = rl_integral(&GridFunction::constant(g, 1.0), 0.3).unwrap();
        for (t, v) in g.nodes().iter().zip(i.values()) {
            assert!((v - t.powf(0.3) / gamma(1.3)).abs() < 1e-13);
        }
        assert!(rl_integral(&GridFunction::zeros(g), 0.3).unwrap().sup_norm() == 0.0);
    }

    #[test]
    fn rl_then_caputo_recovers_sine() {
        let alpha = 0.5;
        let errs: Vec<f64> = [128, 256]
            .iter()
            .map(|&n| {
                let g = grid(1.0, n);
                let f = GridFunction::from_fn(g, f64::sin);
                let back = caputo_l1(&rl_integral(&f, alpha).unwrap(), alpha).unwrap();
                (1..=n).fold(0.0f64, |m, i| m.max((back.at(i) - f.at(i)).abs()))
            })
            .collect();
        assert!(errs[1] < 1e-2, "{errs:?}");
        assert!(errs[1] < errs[0]);
    }

    #[test]
    fn convolution_of_constant() {
        let g = grid(1.0, 40);
        let r = ml_convolve(&GridFunction::constant(g, 1.0), 0.5, 0.0).unwrap();
        for (t, v) in g.nodes().iter().zip(r.values()) {
            assert!((v - t.sqrt() / gamma(1.5)).abs() < 1e-14);
        }
        let r = ml_convolve(&GridFunction::constant(g, 1.0), 0.5, 1.0).unwrap();
        assert!((r.at(40) - 0.5724164238441929).abs() < 1e-12);
        let z = ml_convolve(&GridFunction::zeros(g), 0.5, 1.0).unwrap();
        assert_eq!(z.sup_norm(), 0.0);
    }

    #[test]
    fn convolution_lambda_zero_matches_piecewise_constant_rl() {
        let g = grid(1.5, 30);
        let alpha = 0.4;
        let f = GridFunction::from_fn(g, |t| (2.0 * t).cos() + t);
        let conv = ml_convolve(&f, alpha, 0.0).unwrap();
        // independent sum over steps of mid * int (t_i - tau)^(alpha-1)/Gamma(alpha)
        let dt = g.dt();
        for i in 1..=g.steps() {
            let ti = g.node(i);
            let mut acc = 0.0;
            for m in 0..i {
                let mid = 0.5 * (f.at(m) + f.at(m + 1));
                let a = (ti - m as f64 * dt).powf(alpha) - (ti - (m + 1) as f64 * dt).max(0.0).powf(alpha);
                acc += mid * a / gamma(alpha + 1.0);
            }
            assert!((conv.at(i) - acc).abs() < 1e-12, "node {i}");
        }
    }

    #[test]
    fn convolution_tracks_exact_solution() {
        // f = t, lambda = 0 gives t^(1+alpha)/Gamma(2+alpha)
        let g = grid(1.0, 200);
        let f = GridFunction::from_fn(g, |t| t);
        let r = ml_convolve(&f, 0.6, 0.0).unwrap();
        assert!((r.at(200) - 1.0 / gamma(2.6)).abs() < 1e-4);
    }

    #[test]
    fn beta_examples() {
        assert!((beta_fn(1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((beta_fn(0.5, 0.5).unwrap() - std::f64::consts::PI).abs() < 1e-13);
        let r = std::f64::consts::PI / (std::f64::consts::PI / 4.0).sin();
        assert!((beta_fn(0.25, 0.75).unwrap() - r).abs() < 1e-12);
        assert!((beta_fn(100.0, 90.0).unwrap() / beta_fn(90.0, 100.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(beta_fn(0.0, 1.0).is_err());
    }

    fn samples(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0..5.0f64, n)
    }

    proptest! {
        #[test]
        fn operators_are_linear(f in samples(17), g in samples(17), a in -3.0..3.0f64, b in -3.0..3.0f64) {
            let grid = TimeGrid::new(1.0, 16).unwrap();
            let fg = GridFunction::new(grid, f).unwrap();
            let gg = GridFunction::new(grid, g).unwrap();
            let comb = fg.zip_with(&gg, |x, y| a * x + b * y);
            type Op = fn(&GridFunction) -> GridFunction;
            let ops: [Op; 3] = [
                |f| caputo_l1(f, 0.3).unwrap(),
                |f| rl_integral(f, 0.7).unwrap(),
                |f| ml_convolve(f, 0.5, 2.0).unwrap(),
            ];
            for op in ops {
                let lhs = op(&comb);
                let rhs = op(&fg).zip_with(&op(&gg), |x, y| a * x + b * y);
                let scale = 1.0 + op(&fg).sup_norm() + op(&gg).sup_norm();
                for (l, r) in lhs.values().iter().zip(rhs.values()) {
                    prop_assert!((l - r).abs() <= 1e-12 * scale * 10.0);
                }
            }
        }

        #[test]
        fn convolution_preserves_positivity(f in proptest::collection::vec(0.0..5.0f64, 33), lambda in 0.0..10.0f64) {
            let grid = TimeGrid::new(2.0, 32).unwrap();
            let out = ml_convolve(&GridFunction::new(grid, f).unwrap(), 0.4, lambda).unwrap();
            prop_assert!(out.values().iter().all(|&v| v >= 0.0));
        }
    }
}
