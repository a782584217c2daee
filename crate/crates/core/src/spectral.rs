//! Eigenbasis of `L` on `(0, l)`, Hilbert-scale norms and modal trajectories.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractional_ops::{GridFunction, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Eigenfunctions {
    /// `sqrt(2/l) sin(j pi x / l)`.
    DirichletSine,
    /// Samples of each eigenfunction on a uniform grid over `[0, l]`, interpolated linearly.
    Tabulated(Vec<Vec<f64>>),
}

/// Eigenpairs `(lambda_j, e_j)` of `L`, `j = 1..=J`, stored with 0-based index `m = j - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    length: f64,
    eigenvalues: Vec<f64>,
    quad_intervals: usize,
    functions: Eigenfunctions,
}

pub fn default_quadrature(modes: usize) -> usize {
    256.max(8 * modes)
}

/// Dirichlet Laplacian `-d^2/dx^2` on `(0, l)`: `lambda_j = (j pi / l)^2`.
pub fn dirichlet_laplacian_basis(l: f64, modes: usize, quad: usize) -> Result<SpectralBasis> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::invalid(format!("domain length l = {l} must be positive")));
    }
    if modes == 0 {
        return Err(Error::invalid("J must be at least 1"));
    }
    if quad < 4 * modes {
        return Err(Error::invalid(format!("Q = {quad} must be at least 4 J = {}", 4 * modes)));
    }
    let eigenvalues = (1..=modes).map(|j| (j as f64 * PI / l).powi(2)).collect();
    Ok(SpectralBasis {
        length: l,
        eigenvalues,
        quad_intervals: quad + quad % 2,
        functions: Eigenfunctions::DirichletSine,
    })
}

impl SpectralBasis {
    /// Dirichlet basis with the default quadrature size.
    pub fn dirichlet(l: f64, modes: usize) -> Result<Self> {
        dirichlet_laplacian_basis(l, modes, default_quadrature(modes))
    }

    /// User-supplied eigenpairs. `samples[m]` holds `e_{m+1}` on a uniform grid of
    /// `[0, l]` (at least 5 points, all rows the same length).
    pub fn tabulated(l: f64, eigenvalues: Vec<f64>, samples: Vec<Vec<f64>>) -> Result<Self> {
        if !(l > 0.0) {
            return Err(Error::invalid("domain length must be positive"));
        }
        if eigenvalues.is_empty() || eigenvalues.len() != samples.len() {
            return Err(Error::invalid("need one sample row per eigenvalue"));
        }
        if !(eigenvalues[0] > 0.0) || eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("eigenvalues must be positive and ascending"));
        }
        let width = samples[0].len();
        if width < 5 || samples.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("eigenfunction rows must share a length of at least 5"));
        }
        let intervals = width - 1;
        Ok(SpectralBasis {
            length: l,
            eigenvalues,
            // Simpson on the table itself when possible
            quad_intervals: if intervals.is_multiple_of(2) { intervals } else { 2 * intervals },
            functions: Eigenfunctions::Tabulated(samples),
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, m: usize) -> f64 {
        self.eigenvalues[m]
    }

    pub fn quadrature_intervals(&self) -> usize {
        self.quad_intervals
    }

    /// `lambda_j^gamma` for every mode.
    pub fn powers(&self, gamma: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.powf(gamma)).collect()
    }

    /// `e_{m+1}(x)` for `x` in `[0, l]`.
    pub fn eigenfunction(&self, m: usize, x: f64) -> f64 {
        match &self.functions {
            Eigenfunctions::DirichletSine => {
                let l = self.length;
                (2.0 / l).sqrt() * ((m + 1) as f64 * PI * x / l).sin()
            }
            Eigenfunctions::Tabulated(rows) => {
                let row = &rows[m];
                let n = row.len() - 1;
                let s = (x / self.length * n as f64).clamp(0.0, n as f64);
                let i = (s.floor() as usize).min(n - 1);
                let w = s - i as f64;
                (1.0 - w) * row[i] + w * row[i + 1]
            }
        }
    }

    pub fn check_interior(&self, x: f64) -> Result<()> {
        if x > 0.0 && x < self.length {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                x,
                length: self.length,
            })
        }
    }

    /// Composite Simpson nodes and weights on `[0, l]`.
    pub fn quadrature(&self) -> (Vec<f64>, Vec<f64>) {
        let q = self.quad_intervals;
        let h = self.length / q as f64;
        let nodes = (0..=q).map(|i| i as f64 * h).collect();
        let weights = (0..=q)
            .map(|i| {
                let c = if i == 0 || i == q {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect();
        (nodes, weights)
    }

    /// Eigenfunction values on the quadrature nodes, `table[m][i]`.
    pub fn quadrature_table(&self) -> Vec<Vec<f64>> {
        let (nodes, _) = self.quadrature();
        (0..self.modes())
            .map(|m| nodes.iter().map(|&x| self.eigenfunction(m, x)).collect())
            .collect()
    }

    /// Gram matrix `(e_i, e_j)` under the basis quadrature.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let (_, w) = self.quadrature();
        let table = self.quadrature_table();
        table
            .iter()
            .map(|a| {
                table
                    .iter()
                    .map(|b| a.iter().zip(b).zip(&w).map(|((x, y), w)| x * y * w).sum())
                    .collect()
            })
            .collect()
    }
}

/// Coefficients `v_j` of an expansion in the basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalVector(pub Vec<f64>);

impl ModalVector {
    pub fn zeros(modes: usize) -> Self {
        Self(vec![0.0; modes])
    }

    /// Coefficient vector of `e_{m+1}`.
    pub fn unit(modes: usize, m: usize) -> Self {
        let mut v = vec![0.0; modes];
        v[m] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `v_j = (f, e_j)` by composite Simpson.
pub fn project(f: impl Fn(f64) -> f64, basis: &SpectralBasis) -> ModalVector {
    let (nodes, weights) = basis.quadrature();
    let fw: Vec<f64> = nodes.iter().zip(&weights).map(|(&x, &w)| f(x) * w).collect();
    project_weighted(&fw, &basis.quadrature_table())
}

/// Projection given `f(x_i) w_i` on the quadrature nodes.
pub(crate) fn project_weighted(fw: &[f64], table: &[Vec<f64>]) -> ModalVector {
    ModalVector(
        table
            .iter()
            .map(|row| row.iter().zip(fw).map(|(e, f)| e * f).sum())
            .collect(),
    )
}

/// `v_j lambda_j^gamma`.
pub fn fractional_power_apply(v: &ModalVector, basis: &SpectralBasis, gamma: f64) -> ModalVector {
    ModalVector(
        v.0.iter()
            .zip(basis.eigenvalues())
            .map(|(x, l)| x * l.powf(gamma))
            .collect(),
    )
}

/// Truncated `D(L^gamma)` norm `(sum v_j^2 lambda_j^(2 gamma))^(1/2)`.
pub fn scale_norm(v: &ModalVector, basis: &SpectralBasis, gamma: f64) -> f64 {
    scale_norm_slice(&v.0, basis.eigenvalues(), gamma)
}

pub(crate) fn scale_norm_slice(v: &[f64], eigenvalues: &[f64], gamma: f64) -> f64 {
    v.iter()
        .zip(eigenvalues)
        .map(|(x, l)| {
            let y = x * l.powf(gamma);
            y * y
        })
        .sum::<f64>()
        .sqrt()
}

/// `sum_j v_j e_j(x)` for `x` in `(0, l)`.
pub fn synthesize(v: &ModalVector, basis: &SpectralBasis, x: f64) -> Result<f64> {
    basis.check_interior(x)?;
    Ok(v.0
        .iter()
        .enumerate()
        .map(|(m, c)| c * basis.eigenfunction(m, x))
        .sum())
}

/// Modal coefficients `u_j(t_i)`, one row per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalTrajectory {
    grid: TimeGrid,
    rows: Vec<Vec<f64>>,
}

impl ModalTrajectory {
    pub fn zeros(grid: TimeGrid, modes: usize) -> Self {
        Self {
            grid,
            rows: vec![vec![0.0; grid.len()]; modes],
        }
    }

    pub fn from_rows(grid: TimeGrid, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("trajectory needs at least one mode"));
        }
        if rows.iter().any(|r| r.len() != grid.len()) {
            return Err(Error::invalid(format!("every mode needs {} samples", grid.len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("trajectory contains non-finite values"));
        }
        Ok(Self { grid, rows })
    }

    pub(crate) fn from_rows_unchecked(grid: TimeGrid, rows: Vec<Vec<f64>>) -> Self {
        Self { grid, rows }
    }

    /// The time-independent trajectory `u_j(t) = v_j`.
    pub fn constant(grid: TimeGrid, v: &ModalVector) -> Self {
        Self {
            grid,
            rows: v.0.iter().map(|&c| vec![c; grid.len()]).collect(),
        }
    }

    /// `u_j(t) = g(t) v_j`.
    pub fn separable(v: &ModalVector, g: &GridFunction) -> Self {
        Self {
            grid: *g.grid(),
            rows: v
                .0
                .iter()
                .map(|&c| g.values().iter().map(|&x| c * x).collect())
                .collect(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn modes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.rows[m]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }

    /// Coefficients at node `i`.
    pub fn slice(&self, i: usize) -> ModalVector {
        ModalVector(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map_values(|v| c * v)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.modes(), other.modes());
        Self {
            grid: self.grid,
            rows: self
                .rows
                .iter()
                .zip(&other.rows)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        }
    }

    /// Multiply every mode by the scalar time function `k(t_i)`.
    pub fn times_function(&self, k: &GridFunction) -> Self {
        Self {
            grid: self.grid,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().zip(k.values()).map(|(u, k)| u * k).collect())
                .collect(),
        }
    }

    /// `||u(t_i)||` in the truncated `D(L^gamma)` norm, node by node.
    pub fn slice_norms(&self, basis: &SpectralBasis, gamma: f64) -> Vec<f64> {
        let lam = basis.powers(gamma);
        (0..self.grid.len())
            .map(|i| {
                self.rows
                    .iter()
                    .zip(&lam)
                    .map(|(r, l)| (r[i] * l).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// `max_i ||u(t_i)||_{L2}`.
    pub fn sup_l2(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.rows.iter().map(|r| r[i] * r[i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `(int_0^T ||u(t)||^2 dt)^(1/2)` by the trapezoidal rule.
    pub fn l2_time_space(&self) -> f64 {
        let n = self.grid.steps();
        let dt = self.grid.dt();
        let mut acc = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * self.rows.iter().map(|r| r[i] * r[i]).sum::<f64>();
        }
        (acc * dt).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dirichlet_eigenvalues() {
        let b = dirichlet_laplacian_basis(PI, 4, 64).unwrap();
        for (j, l) in b.eigenvalues().iter().enumerate() {
            assert!((l - ((j + 1) * (j + 1)) as f64).abs() < 1e-12);
        }
        assert!((b.eigenfunction(0, PI / 2.0) - 0.7978845608028654).abs() < 1e-15);
        assert!(dirichlet_laplacian_basis(PI, 4, 15).is_err());
        let b = SpectralBasis::dirichlet(2.0, 10).unwrap();
        for (j, l) in b.eigenvalues().iter().enumerate() {
            let jj = (j + 1) as f64;
            assert!((l / (jj * jj) - (PI / 2.0).powi(2)).abs() < 1e-13);
        }
    }

    #[test]
    fn gram_is_identity() {
        let b = dirichlet_laplacian_basis(PI, 4, 64).unwrap();
        let g = b.gram();
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((v - target).abs() < 1e-12, "({i},{j}) = {v}");
            }
        }
    }

    #[test]
    fn projection_examples() {
        let b = SpectralBasis::dirichlet(PI, 6).unwrap();
        let v = project(|x| b.eigenfunction(0, x), &b);
        assert!((v.0[0] - 1.0).abs() < 1e-12);
        assert!(v.0[1..].iter().all(|c| c.abs() < 1e-12));
        assert!(project(|_| 0.0, &b).0.iter().all(|&c| c == 0.0));

        let v = project(|x| x * (PI - x), &b);
        for (m, c) in v.0.iter().enumerate() {
            let j = (m + 1) as f64;
            let exact = if (m + 1) % 2 == 1 {
                (2.0 / PI).sqrt() * 4.0 / (j * j * j)
            } else {
                0.0
            };
            // composite Simpson error at Q = 256 is about 1e-9
            assert!((c - exact).abs() < 1e-8, "mode {}", m + 1);
        }
    }

    #[test]
    fn powers_and_norms() {
        let b = SpectralBasis::dirichlet(PI, 4).unwrap();
        let v = ModalVector(vec![1.0; 4]);
        assert_eq!(fractional_power_apply(&v, &b, 0.0), v);
        let inv = fractional_power_apply(&v, &b, -1.0);
        for (a, e) in inv.0.iter().zip([1.0, 0.25, 1.0 / 9.0, 1.0 / 16.0]) {
            assert!((a - e).abs() < 1e-14);
        }
        let e2 = ModalVector::unit(4, 1);
        assert!((fractional_power_apply(&e2, &b, 0.5).0[1] - 2.0).abs() < 1e-14);
        assert!((scale_norm(&e2, &b, 1.0) - 4.0).abs() < 1e-13);
        assert!((scale_norm(&ModalVector::unit(4, 0), &b, 7.3) - 1.0).abs() < 1e-13);
        assert!((scale_norm(&v, &b, 0.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn synthesis() {
        let b = SpectralBasis::dirichlet(PI, 16).unwrap();
        let v = ModalVector::unit(16, 0);
        assert!((synthesize(&v, &b, PI / 2.0).unwrap() - 0.7978845608028654).abs() < 1e-15);
        assert!(matches!(synthesize(&v, &b, 0.0), Err(Error::OutOfDomain { .. })));
        assert_eq!(synthesize(&ModalVector::zeros(16), &b, 1.0).unwrap(), 0.0);

        let f = |x: f64| x * (PI - x);
        let err = |modes: usize| {
            let b = SpectralBasis::dirichlet(PI, modes).unwrap();
            let v = project(f, &b);
            (1..40)
                .map(|i| i as f64 * PI / 40.0)
                .map(|x| (synthesize(&v, &b, x).unwrap() - f(x)).abs())
                .fold(0.0, f64::max)
        };
        let (e4, e16) = (err(4), err(16));
        assert!(e16 < e4 && e16 < 3e-3, "{e4} {e16}");
    }

    #[test]
    fn parseval() {
        let b = SpectralBasis::dirichlet(1.0, 32).unwrap();
        let f = |x: f64| (PI * x).sin() + 0.3 * (3.0 * PI * x).sin();
        let v = project(f, &b);
        // int_0^1 f^2 = (1 + 0.09) / 2
        assert!((scale_norm(&v, &b, 0.0).powi(2) - 0.545).abs() < 1e-12);
    }

    #[test]
    fn tabulated_matches_closed_form() {
        let l = 2.0;
        let dir = dirichlet_laplacian_basis(l, 3, 400).unwrap();
        let rows = (0..3)
            .map(|m| (0..=400).map(|i| dir.eigenfunction(m, i as f64 * l / 400.0)).collect())
            .collect();
        let tab = SpectralBasis::tabulated(l, dir.eigenvalues().to_vec(), rows).unwrap();
        let f = |x: f64| x * (l - x);
        let (a, b) = (project(f, &dir), project(f, &tab));
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() < 1e-4);
        }
        assert!(SpectralBasis::tabulated(l, vec![2.0, 1.0], vec![vec![0.0; 5]; 2]).is_err());
    }

    #[test]
    fn trajectory_norms() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let v = ModalVector(vec![3.0, 4.0]);
        let u = ModalTrajectory::constant(g, &v);
        assert!((u.sup_l2() - 5.0).abs() < 1e-15);
        assert!((u.l2_time_space() - 5.0).abs() < 1e-14);
        assert_eq!(u.slice(2), v);
    }

    fn coeffs() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0..10.0f64, 6)
    }

    proptest! {
        #[test]
        fn power_composition(v in coeffs(), g1 in -2.0..2.0f64, g2 in -2.0..2.0f64) {
            let b = SpectralBasis::dirichlet(2.5, 6).unwrap();
            let v = ModalVector(v);
            let two = fractional_power_apply(&fractional_power_apply(&v, &b, g1), &b, g2);
            let one = fractional_power_apply(&v, &b, g1 + g2);
            for (a, c) in two.0.iter().zip(&one.0) {
                prop_assert!((a - c).abs() <= 1e-12 * (1.0 + c.abs()));
            }
        }

        #[test]
        fn dual_pairing_cauchy_schwarz(v in coeffs(), w in coeffs(), g in -2.0..2.0f64) {
            let b = SpectralBasis::dirichlet(1.7, 6).unwrap();
            let (v, w) = (ModalVector(v), ModalVector(w));
            let pairing: f64 = v.0.iter().zip(&w.0).map(|(a, b)| a * b).sum();
            let bound = scale_norm(&v, &b, -g) * scale_norm(&w, &b, g);
            prop_assert!(pairing.abs() <= bound * (1.0 + 1e-12) + 1e-12);
        }
    }
}
