//! Nonlocal forward problem: multipliers, mild-solution operators, Picard
//! iteration and an independent L1 shooting solver.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractional_ops::{caputo_l1_slice, l1_weights, GridFunction, KernelMoments, TimeGrid};
use crate::mittag_leffler::{ml_eval, MlEvalConfig, MlParams};
use crate::spectral::{project_weighted, ModalTrajectory, ModalVector, SpectralBasis};
use crate::special::gamma;

pub const DEFAULT_RESONANCE_TOL: f64 = 1e-8;
pub const DEFAULT_ORTHOGONALITY_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

type PointFn = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;

/// Pointwise closure `F(t, x, u)` with its declared Lipschitz constants.
#[derive(Clone)]
pub struct NonlinearSource {
    f: Arc<PointFn>,
    pub lipschitz: f64,
    pub time_lipschitz: Option<f64>,
}

impl fmt::Debug for NonlinearSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearSource")
            .field("lipschitz", &self.lipschitz)
            .field("time_lipschitz", &self.time_lipschitz)
            .finish_non_exhaustive()
    }
}

impl NonlinearSource {
    pub fn new(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static, lipschitz: f64) -> Self {
        Self {
            f: Arc::new(f),
            lipschitz,
            time_lipschitz: None,
        }
    }

    pub fn with_time_lipschitz(mut self, c: f64) -> Self {
        self.time_lipschitz = Some(c);
        self
    }

    pub fn eval(&self, t: f64, x: f64, u: f64) -> f64 {
        (self.f)(t, x, u)
    }

    /// Spot test of `F(t,x,0) = 0` and `|F(t,x,u) - F(t,x,v)| <= L |u - v|` on random samples.
    pub fn spot_check(&self, horizon: f64, length: f64, pairs: usize, seed: u64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..pairs).all(|_| {
            let t = rng.gen_range(0.0..=horizon);
            let x = rng.gen_range(0.0..=length);
            let u = rng.gen_range(-10.0..10.0);
            let v = rng.gen_range(-10.0..10.0);
            let zero_ok = self.eval(t, x, 0.0).abs() <= 1e-14;
            let lip_ok = (self.eval(t, x, u) - self.eval(t, x, v)).abs()
                <= self.lipschitz * (u - v).abs() * (1.0 + 1e-12) + 1e-14;
            zero_ok && lip_ok
        })
    }
}

/// Right-hand side `F` of the diffusion equation.
#[derive(Debug, Clone)]
pub enum SourceModel {
    /// Modal samples `F_j(t_i)`, independent of the solution.
    Linear(ModalTrajectory),
    Nonlinear(NonlinearSource),
}

impl SourceModel {
    pub fn zero(grid: TimeGrid, modes: usize) -> Self {
        SourceModel::Linear(ModalTrajectory::zeros(grid, modes))
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            SourceModel::Linear(_) => 0.0,
            SourceModel::Nonlinear(n) => n.lipschitz,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SourceModel::Linear(f) => f.rows().iter().flatten().all(|&v| v == 0.0),
            SourceModel::Nonlinear(_) => false,
        }
    }

    /// `F(t_i, x, u)` at one point.
    pub fn at_point(&self, basis: &SpectralBasis, i: usize, t: f64, x: f64, u: f64) -> f64 {
        match self {
            SourceModel::Linear(f) => (0..f.modes())
                .map(|m| f.row(m)[i] * basis.eigenfunction(m, x))
                .sum(),
            SourceModel::Nonlinear(n) => n.eval(t, x, u),
        }
    }

    /// Modal coefficients of `F(t, x, w(t, x))`.
    pub fn modal(&self, w: &ModalTrajectory, sampler: &FieldSampler) -> ModalTrajectory {
        match self {
            SourceModel::Linear(f) => f.clone(),
            SourceModel::Nonlinear(n) => sampler.apply(n, w),
        }
    }
}

/// Quadrature nodes and eigenfunction table used to evaluate pointwise closures.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    table: Vec<Vec<f64>>,
}

impl FieldSampler {
    pub fn new(basis: &SpectralBasis) -> Self {
        let (nodes, weights) = basis.quadrature();
        Self {
            nodes,
            weights,
            table: basis.quadrature_table(),
        }
    }

    pub fn apply(&self, source: &NonlinearSource, w: &ModalTrajectory) -> ModalTrajectory {
        let grid = *w.grid();
        let modes = w.modes();
        let columns: Vec<Vec<f64>> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let t = grid.node(i);
                let fw: Vec<f64> = self
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(q, &x)| {
                        let u: f64 = (0..modes).map(|m| w.row(m)[i] * self.table[m][q]).sum();
                        source.eval(t, x, u) * self.weights[q]
                    })
                    .collect();
                project_weighted(&fw, &self.table).0
            })
            .collect();
        let rows = (0..modes)
            .map(|m| columns.iter().map(|c| c[m]).collect())
            .collect();
        ModalTrajectory::from_rows_unchecked(grid, rows)
    }
}

/// Data of the nonlocal problem `d^a u + L^b u + k u = F`, `u(T) = kappa u(0) + phi`.
#[derive(Debug, Clone)]
pub struct NonlocalProblemSpec {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub grid: TimeGrid,
    pub basis: SpectralBasis,
    pub phi: ModalVector,
    pub source: SourceModel,
    pub k: GridFunction,
    pub resonance_tol: f64,
    pub orthogonality_tol: f64,
}

impl NonlocalProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alpha: f64,
        beta: f64,
        kappa: f64,
        grid: TimeGrid,
        basis: SpectralBasis,
        phi: ModalVector,
        source: SourceModel,
        k: GridFunction,
    ) -> Result<Self> {
        let spec = Self {
            alpha,
            beta,
            kappa,
            grid,
            basis,
            phi,
            source,
            k,
            resonance_tol: DEFAULT_RESONANCE_TOL,
            orthogonality_tol: DEFAULT_ORTHOGONALITY_TOL,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn modes(&self) -> usize {
        self.basis.modes()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidOrder(self.alpha));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("beta = {} must lie in (0, 1]", self.beta)));
        }
        if !self.kappa.is_finite() {
            return Err(Error::invalid("kappa must be finite"));
        }
        if self.phi.len() != self.modes() {
            return Err(Error::invalid(format!(
                "phi has {} coefficients, basis has {} modes",
                self.phi.len(),
                self.modes()
            )));
        }
        if *self.k.grid() != self.grid {
            return Err(Error::invalid("coefficient k lives on a different grid"));
        }
        if let SourceModel::Linear(f) = &self.source {
            if f.modes() != self.modes() || *f.grid() != self.grid {
                return Err(Error::invalid("source data shape does not match grid and basis"));
            }
        }
        if !(self.resonance_tol > 0.0 && self.orthogonality_tol >= 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        Ok(())
    }

    /// Same problem with a different coefficient `k`.
    pub fn with_k(&self, k: GridFunction) -> Self {
        Self { k, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KappaCase {
    KappaOutside,
    KappaInsideNonResonant,
    Resonant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlocalMultipliers {
    /// `1 / (E_alpha(-lambda_j^beta T^alpha) - kappa)`; zero on resonant modes.
    pub psi: Vec<f64>,
    /// `E_alpha(-lambda_j^beta T^alpha)`.
    pub terminal_decay: Vec<f64>,
    /// Mode numbers `j` (1-based) with `|E - kappa| < resonance_tol`.
    pub resonant_modes: Vec<usize>,
    pub case_tag: KappaCase,
}

fn terminal_decay(spec: &NonlocalProblemSpec) -> Result<Vec<f64>> {
    let cfg = MlEvalConfig::default();
    let ta = spec.horizon().powf(spec.alpha);
    spec.basis
        .eigenvalues()
        .iter()
        .map(|l| ml_eval(MlParams::classic(spec.alpha), -l.powf(spec.beta) * ta, &cfg))
        .collect()
}

pub fn compute_multipliers(spec: &NonlocalProblemSpec) -> Result<NonlocalMultipliers> {
    spec.validate()?;
    let decay = terminal_decay(spec)?;
    let mut psi = Vec::with_capacity(decay.len());
    let mut resonant = Vec::new();
    let mut blocked = Vec::new();
    for (m, e) in decay.iter().enumerate() {
        let d = e - spec.kappa;
        if d.abs() < spec.resonance_tol {
            resonant.push(m + 1);
            if spec.phi.0[m].abs() > spec.orthogonality_tol {
                blocked.push(m + 1);
            }
            psi.push(0.0);
        } else {
            psi.push(1.0 / d);
        }
    }
    if !blocked.is_empty() {
        return Err(Error::ResonanceDetected(blocked));
    }
    let case_tag = if !(spec.kappa > 0.0 && spec.kappa < 1.0) {
        KappaCase::KappaOutside
    } else if resonant.is_empty() {
        KappaCase::KappaInsideNonResonant
    } else {
        KappaCase::Resonant
    };
    Ok(NonlocalMultipliers {
        psi,
        terminal_decay: decay,
        resonant_modes: resonant,
        case_tag,
    })
}

/// Scalar problem `d^a w + Lambda w = g(t)`, `w(T) = kappa w(0) + psi`.
#[derive(Debug, Clone)]
pub struct ScalarNonlocalProblem {
    pub lambda: f64,
    pub kappa: f64,
    pub psi: f64,
    pub g: GridFunction,
    pub resonance_tol: f64,
}

pub fn solve_scalar_nonlocal(p: &ScalarNonlocalProblem, alpha: f64) -> Result<GridFunction> {
    if !(p.lambda >= 0.0) {
        return Err(Error::invalid("Lambda must be nonnegative"));
    }
    let grid = *p.g.grid();
    let moments = KernelMoments::new(&grid, alpha, p.lambda)?;
    let cfg = MlEvalConfig::default();
    let params = MlParams::classic(alpha);
    let e_t = ml_eval(params, -p.lambda * grid.horizon().powf(alpha), &cfg)?;
    let denominator = e_t - p.kappa;
    if denominator.abs() < p.resonance_tol {
        return Err(Error::ResonantScalar { denominator });
    }
    let a = moments.convolve(p.g.values());
    let amp = (p.psi - a[grid.steps()]) / denominator;
    let values = grid
        .nodes()
        .iter()
        .zip(&a)
        .map(|(&t, &conv)| {
            let e = ml_eval(params, -p.lambda * t.powf(alpha), &cfg)?;
            Ok(conv + amp * e)
        })
        .collect::<Result<Vec<_>>>()?;
    GridFunction::new(grid, values)
}

/// Per-mode kernels and multipliers of the mild-solution operators.
#[derive(Debug, Clone)]
pub struct ModalOperators {
    grid: TimeGrid,
    lambda_beta: Vec<f64>,
    moments: Vec<KernelMoments>,
    decay: Vec<Vec<f64>>,
    mult: NonlocalMultipliers,
}

impl ModalOperators {
    pub fn new(spec: &NonlocalProblemSpec) -> Result<Self> {
        let mult = compute_multipliers(spec)?;
        Self::with_multipliers(spec, mult)
    }

    pub fn with_multipliers(spec: &NonlocalProblemSpec, mult: NonlocalMultipliers) -> Result<Self> {
        spec.validate()?;
        if mult.psi.len() != spec.modes() {
            return Err(Error::invalid("multipliers do not match the basis"));
        }
        let grid = spec.grid;
        let alpha = spec.alpha;
        let lambda_beta = spec.basis.powers(spec.beta);
        let cfg = MlEvalConfig::default();
        let per_mode = lambda_beta
            .par_iter()
            .map(|&lam| {
                let moments = KernelMoments::new(&grid, alpha, lam)?;
                let decay = grid
                    .nodes()
                    .iter()
                    .map(|t| ml_eval(MlParams::classic(alpha), -lam * t.powf(alpha), &cfg))
                    .collect::<Result<Vec<_>>>()?;
                Ok((moments, decay))
            })
            .collect::<Result<Vec<_>>>()?;
        let (moments, decay) = per_mode.into_iter().unzip();
        Ok(Self {
            grid,
            lambda_beta,
            moments,
            decay,
            mult,
        })
    }

    pub fn multipliers(&self) -> &NonlocalMultipliers {
        &self.mult
    }

    pub fn lambda_beta(&self) -> &[f64] {
        &self.lambda_beta
    }

    /// `E_alpha(-lambda_j^beta t_i^alpha)`.
    pub fn decay(&self, m: usize) -> &[f64] {
        &self.decay[m]
    }

    fn check_shape(&self, h: &ModalTrajectory) {
        assert_eq!(h.modes(), self.lambda_beta.len(), "mode count mismatch");
        assert_eq!(*h.grid(), self.grid, "grid mismatch");
    }

    /// Mode-wise convolution with `t^(a-1) E_{a,a}(-lambda_j^b t^a)`.
    pub fn g1(&self, h1: &ModalTrajectory) -> ModalTrajectory {
        self.check_shape(h1);
        let rows = h1
            .rows()
            .par_iter()
            .zip(&self.moments)
            .map(|(r, mo)| mo.convolve(r))
            .collect();
        ModalTrajectory::from_rows_unchecked(self.grid, rows)
    }

    /// `h2_j psi_j E_alpha(-lambda_j^b t^a)`.
    pub fn g2(&self, h2: &ModalVector) -> ModalTrajectory {
        assert_eq!(h2.len(), self.lambda_beta.len(), "mode count mismatch");
        let rows = self
            .decay
            .iter()
            .zip(&self.mult.psi)
            .zip(&h2.0)
            .map(|((d, psi), h)| d.iter().map(|e| h * psi * e).collect())
            .collect();
        ModalTrajectory::from_rows_unchecked(self.grid, rows)
    }

    /// `-G2 (G1 h3)(T)`.
    pub fn g3(&self, h3: &ModalTrajectory) -> ModalTrajectory {
        self.check_shape(h3);
        let end = ModalVector(
            h3.rows()
                .iter()
                .zip(&self.moments)
                .map(|(r, mo)| -mo.convolve_at_end(r))
                .collect(),
        );
        self.g2(&end)
    }

    /// `G2 phi + (G1 + G3) density`.
    pub fn mild(&self, phi: &ModalVector, density: &ModalTrajectory) -> ModalTrajectory {
        self.check_shape(density);
        let n = self.grid.steps();
        let rows = density
            .rows()
            .par_iter()
            .enumerate()
            .map(|(m, r)| {
                let conv = self.moments[m].convolve(r);
                let amp = self.mult.psi[m] * (phi.0[m] - conv[n]);
                conv.iter()
                    .zip(&self.decay[m])
                    .map(|(c, e)| c + amp * e)
                    .collect()
            })
            .collect();
        ModalTrajectory::from_rows_unchecked(self.grid, rows)
    }
}

pub fn apply_g1(h1: &ModalTrajectory, spec: &NonlocalProblemSpec) -> Result<ModalTrajectory> {
    Ok(ModalOperators::new(spec)?.g1(h1))
}

pub fn apply_g2(
    h2: &ModalVector,
    mult: &NonlocalMultipliers,
    spec: &NonlocalProblemSpec,
) -> Result<ModalTrajectory> {
    Ok(ModalOperators::with_multipliers(spec, mult.clone())?.g2(h2))
}

pub fn apply_g3(
    h3: &ModalTrajectory,
    mult: &NonlocalMultipliers,
    spec: &NonlocalProblemSpec,
) -> Result<ModalTrajectory> {
    Ok(ModalOperators::with_multipliers(spec, mult.clone())?.g3(h3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub iterations: usize,
    pub sup_diffs: Vec<f64>,
    pub observed_ratio: f64,
    pub converged: bool,
    /// `||u(T) - kappa u(0) - phi||` of the returned iterate.
    pub nonlocal_residual: f64,
    pub warnings: Vec<String>,
}

/// Geometric mean of consecutive ratios of the positive entries of `diffs`.
pub fn geometric_ratio(diffs: &[f64]) -> f64 {
    let pos: Vec<f64> = diffs.iter().copied().filter(|d| *d > 0.0).collect();
    if pos.len() < 2 {
        return 0.0;
    }
    (pos[pos.len() - 1] / pos[0]).powf(1.0 / (pos.len() - 1) as f64)
}

/// `||u(T) - kappa u(0) - phi||` over the truncated modes.
pub fn nonlocal_residual(u: &ModalTrajectory, kappa: f64, phi: &ModalVector) -> f64 {
    let n = u.grid().steps();
    u.rows()
        .iter()
        .zip(&phi.0)
        .map(|(r, p)| (r[n] - kappa * r[0] - p).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn sup_diff(a: &ModalTrajectory, b: &ModalTrajectory) -> f64 {
    a.zip_with(b, |x, y| x - y).sup_l2()
}

/// Picard iteration on the mild equation, starting from the constant `phi` trajectory.
pub fn solve_forward(
    spec: &NonlocalProblemSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(ModalTrajectory, PicardReport)> {
    let ops = ModalOperators::new(spec)?;
    solve_forward_with(spec, &ops, tol, max_iter)
}

/// [`solve_forward`] reusing precomputed operators.
pub fn solve_forward_with(
    spec: &NonlocalProblemSpec,
    ops: &ModalOperators,
    tol: f64,
    max_iter: usize,
) -> Result<(ModalTrajectory, PicardReport)> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::invalid("tol must be positive and max_iter at least 1"));
    }
    let sampler = FieldSampler::new(&spec.basis);
    let density = |w: &ModalTrajectory| {
        let f = spec.source.modal(w, &sampler);
        let kw = w.times_function(&spec.k);
        f.zip_with(&kw, |a, b| a - b)
    };
    // the map is constant when nothing depends on the iterate
    let affine_constant =
        matches!(spec.source, SourceModel::Linear(_)) && spec.k.values().iter().all(|&v| v == 0.0);

    let mut w = ModalTrajectory::constant(spec.grid, &spec.phi);
    let mut diffs = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let next = ops.mild(&spec.phi, &density(&w));
        let d = sup_diff(&next, &w);
        diffs.push(d);
        w = next;
        if !d.is_finite() {
            break;
        }
        if d <= tol || affine_constant {
            converged = true;
            break;
        }
    }
    let report = PicardReport {
        iterations: diffs.len(),
        observed_ratio: geometric_ratio(&diffs),
        converged,
        nonlocal_residual: nonlocal_residual(&w, spec.kappa, &spec.phi),
        sup_diffs: diffs,
        warnings: Vec::new(),
    };
    if converged {
        Ok((w, report))
    } else {
        Err(Error::NotConverged(Box::new(report)))
    }
}

/// Implicit L1 march of `d^a u + (lam + k) u = f` from `u(0) = a`.
fn l1_march(a: f64, lam: f64, k: &[f64], f: &[f64], b: &[f64], c: f64) -> Vec<f64> {
    let n = f.len() - 1;
    let mut u = vec![0.0; n + 1];
    u[0] = a;
    for i in 1..=n {
        // history: c sum_{j=1}^{i-1} b_{i-j} (u_j - u_{j-1})
        let mut hist = 0.0;
        for j in 1..i {
            hist += b[i - j] * (u[j] - u[j - 1]);
        }
        u[i] = (f[i] + c * u[i - 1] - c * hist) / (c + lam + k[i]);
    }
    u
}

#[allow(clippy::too_many_arguments)]
fn shoot_mode(
    lam: f64,
    kappa: f64,
    phi: f64,
    k: &[f64],
    f: &[f64],
    b: &[f64],
    c: f64,
    shoot_tol: f64,
    mode: usize,
) -> Result<Vec<f64>> {
    let n = f.len() - 1;
    let residual = |u: &[f64]| u[n] - kappa * u[0] - phi;
    let mut a0 = phi;
    let u0 = l1_march(a0, lam, k, f, b, c);
    let mut r0 = residual(&u0);
    if r0.abs() <= shoot_tol {
        return Ok(u0);
    }
    let mut a1 = a0 + 1.0;
    for _ in 0..60 {
        let u1 = l1_march(a1, lam, k, f, b, c);
        let r1 = residual(&u1);
        if !r1.is_finite() {
            break;
        }
        if r1.abs() <= shoot_tol {
            return Ok(u1);
        }
        if r1 == r0 {
            break;
        }
        let a2 = a1 - r1 * (a1 - a0) / (r1 - r0);
        (a0, r0) = (a1, r1);
        a1 = a2;
    }
    Err(Error::ShootingDiverged { mode: Some(mode + 1) })
}

/// Reference solution by L1 time stepping and secant shooting on `u_j(0)`.
///
/// A state-dependent source is handled by an outer fixed point with `F` frozen.
pub fn oracle_shooting_l1(spec: &NonlocalProblemSpec, shoot_tol: f64) -> Result<ModalTrajectory> {
    spec.validate()?;
    if !(shoot_tol > 0.0) {
        return Err(Error::invalid("shoot_tol must be positive"));
    }
    let grid = spec.grid;
    let n = grid.steps();
    let b = l1_weights(spec.alpha, n);
    let c = grid.dt().powf(-spec.alpha) / gamma(2.0 - spec.alpha);
    let lam = spec.basis.powers(spec.beta);
    let sampler = FieldSampler::new(&spec.basis);
    let k = spec.k.values();

    let sweep = |f: &ModalTrajectory| -> Result<ModalTrajectory> {
        let rows = (0..spec.modes())
            .into_par_iter()
            .map(|m| shoot_mode(lam[m], spec.kappa, spec.phi.0[m], k, f.row(m), &b, c, shoot_tol, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModalTrajectory::from_rows_unchecked(grid, rows))
    };

    let mut u = ModalTrajectory::constant(grid, &spec.phi);
    match &spec.source {
        SourceModel::Linear(f) => sweep(f),
        SourceModel::Nonlinear(_) => {
            for _ in 0..500 {
                let f = spec.source.modal(&u, &sampler);
                let next = sweep(&f)?;
                let d = sup_diff(&next, &u);
                u = next;
                if !d.is_finite() {
                    break;
                }
                if d <= shoot_tol {
                    return Ok(u);
                }
            }
            Err(Error::ShootingDiverged { mode: None })
        }
    }
}

/// `u(t_i, x0) = sum_j u_j(t_i) e_j(x0)`.
pub fn evaluate_at_point(
    u: &ModalTrajectory,
    basis: &SpectralBasis,
    x0: f64,
) -> Result<GridFunction> {
    basis.check_interior(x0)?;
    let e: Vec<f64> = (0..u.modes()).map(|m| basis.eigenfunction(m, x0)).collect();
    let grid = *u.grid();
    let values = (0..grid.len())
        .map(|i| u.rows().iter().zip(&e).map(|(r, e)| r[i] * e).sum())
        .collect();
    GridFunction::new(grid, values)
}

/// `||d^a u + L^b u + k u - F(u)||` at each node, with the L1 derivative; node 0 is 0.
pub fn pde_residual(u: &ModalTrajectory, spec: &NonlocalProblemSpec) -> Result<GridFunction> {
    spec.validate()?;
    if *u.grid() != spec.grid || u.modes() != spec.modes() {
        return Err(Error::invalid("trajectory does not match the problem"));
    }
    let grid = spec.grid;
    let f = spec.source.modal(u, &FieldSampler::new(&spec.basis));
    let lam = spec.basis.powers(spec.beta);
    let k = spec.k.values();
    let mut sq = vec![0.0; grid.len()];
    for (m, &lam_m) in lam.iter().enumerate() {
        let row = u.row(m);
        let d = caputo_l1_slice(row, grid.dt(), spec.alpha);
        for i in 1..grid.len() {
            let r = d[i] + (lam_m + k[i]) * row[i] - f.row(m)[i];
            sq[i] += r * r;
        }
    }
    GridFunction::new(grid, sq.into_iter().map(f64::sqrt).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mittag_leffler::mittag_leffler;
    use std::f64::consts::PI;

    const E_HALF_M1: f64 = 0.42758357615580705;

    fn unit_spec(modes: usize, n: usize, kappa: f64) -> NonlocalProblemSpec {
        let grid = TimeGrid::new(1.0, n).unwrap();
        let basis = SpectralBasis::dirichlet(PI, modes).unwrap();
        NonlocalProblemSpec::new(
            0.5,
            1.0,
            kappa,
            grid,
            basis,
            ModalVector::unit(modes, 0),
            SourceModel::zero(grid, modes),
            GridFunction::zeros(grid),
        )
        .unwrap()
    }

    #[test]
    fn multiplier_cases() {
        let m = compute_multipliers(&unit_spec(3, 16, 0.0)).unwrap();
        assert!((m.psi[0] - 1.0 / E_HALF_M1).abs() < 1e-11);
        assert_eq!(m.case_tag, KappaCase::KappaOutside);
        let m = compute_multipliers(&unit_spec(3, 16, 2.0)).unwrap();
        assert_eq!(m.case_tag, KappaCase::KappaOutside);
        assert!(m.psi.iter().all(|&p| p < -0.5 && p > -1.0));
        let m = compute_multipliers(&unit_spec(3, 16, 0.999)).unwrap();
        assert_eq!(m.case_tag, KappaCase::KappaInsideNonResonant);
    }

    #[test]
    fn resonance_detection() {
        let e1 = mittag_leffler(0.5, 1.0, -1.0).unwrap();
        let spec = unit_spec(3, 16, e1);
        match compute_multipliers(&spec) {
            Err(Error::ResonanceDetected(k)) => assert_eq!(k, vec![1]),
            other => panic!("expected resonance, got {other:?}"),
        }
        // orthogonal datum makes the resonant problem admissible
        let mut spec = spec;
        spec.phi = ModalVector::unit(3, 1);
        let m = compute_multipliers(&spec).unwrap();
        assert_eq!(m.case_tag, KappaCase::Resonant);
        assert_eq!(m.resonant_modes, vec![1]);
        assert_eq!(m.psi[0], 0.0);
    }

    #[test]
    fn scalar_closed_form() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let p = ScalarNonlocalProblem {
            lambda: 1.0,
            kappa: 0.0,
            psi: 1.0,
            g: GridFunction::zeros(grid),
            resonance_tol: DEFAULT_RESONANCE_TOL,
        };
        let w = solve_scalar_nonlocal(&p, 0.5).unwrap();
        assert!((w.at(0) - 1.0 / E_HALF_M1).abs() < 1e-10);
        assert!((w.at(64) - 1.0).abs() < 1e-14);
        let p = ScalarNonlocalProblem { psi: 0.0, ..p };
        assert_eq!(solve_scalar_nonlocal(&p, 0.5).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn scalar_constant_source_without_decay() {
        // Lambda = 0, g = c: w = c t^a / Gamma(1+a) + w0, w0 from w(T) = kappa w0 + psi
        let grid = TimeGrid::new(2.0, 50).unwrap();
        let (alpha, c, kappa, psi) = (0.4, 1.5, -1.0, 0.3);
        let p = ScalarNonlocalProblem {
            lambda: 0.0,
            kappa,
            psi,
            g: GridFunction::constant(grid, c),
            resonance_tol: DEFAULT_RESONANCE_TOL,
        };
        let w = solve_scalar_nonlocal(&p, alpha).unwrap();
        let ramp = |t: f64| c * t.powf(alpha) / gamma(1.0 + alpha);
        let w0 = (psi - ramp(2.0)) / (1.0 - kappa);
        for (t, v) in grid.nodes().iter().zip(w.values()) {
            assert!((v - (ramp(*t) + w0)).abs() < 1e-13);
        }
        let p = ScalarNonlocalProblem { kappa: 1.0, ..p };
        assert!(matches!(solve_scalar_nonlocal(&p, alpha), Err(Error::ResonantScalar { .. })));
    }

    #[test]
    fn operators_on_simple_data() {
        let spec = unit_spec(2, 64, 0.0);
        let ops = ModalOperators::new(&spec).unwrap();
        let ones = ModalTrajectory::from_rows(spec.grid, vec![vec![1.0; 65], vec![0.0; 65]]).unwrap();
        let g1 = ops.g1(&ones);
        assert!((g1.row(0)[64] - (1.0 - E_HALF_M1)).abs() < 1e-12);
        assert!(g1.row(1).iter().all(|&v| v == 0.0));

        let g2 = ops.g2(&spec.phi);
        assert!((g2.row(0)[0] - 1.0 / E_HALF_M1).abs() < 1e-10);
        assert!((g2.row(0)[64] - 1.0).abs() < 1e-14);

        let g3 = ops.g3(&ones);
        let psi = 1.0 / E_HALF_M1;
        for (i, t) in spec.grid.nodes().iter().enumerate() {
            let e = mittag_leffler(0.5, 1.0, -t.sqrt()).unwrap();
            assert!((g3.row(0)[i] + (1.0 - E_HALF_M1) * psi * e).abs() < 1e-11);
        }
        let neg = ops.g3(&ones.scale(-1.0));
        assert_eq!(neg, g3.scale(-1.0));
    }

    #[test]
    fn unforced_single_mode() {
        let spec = unit_spec(3, 64, 0.0);
        let (u, rep) = solve_forward(&spec, 1e-12, 50).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        for (i, t) in spec.grid.nodes().iter().enumerate() {
            let exact = mittag_leffler(0.5, 1.0, -t.sqrt()).unwrap() / E_HALF_M1;
            assert!((u.row(0)[i] - exact).abs() < 1e-10);
        }
        assert!(rep.nonlocal_residual < 1e-14);
    }

    #[test]
    fn zero_problem_gives_zero() {
        let mut spec = unit_spec(3, 32, 0.5);
        spec.phi = ModalVector::zeros(3);
        let (u, _) = solve_forward(&spec, 1e-12, 10).unwrap();
        assert_eq!(u.sup_l2(), 0.0);
        let r = pde_residual(&u, &spec).unwrap();
        assert_eq!(r.sup_norm(), 0.0);
    }

    #[test]
    fn nonlinear_wrapper_matches_linear_path() {
        let grid = TimeGrid::new(0.5, 64).unwrap();
        let basis = SpectralBasis::dirichlet(PI, 4).unwrap();
        let phi = ModalVector(vec![1.0, 0.0, 0.3, 0.0]);
        let k = GridFunction::from_fn(grid, |t| 0.2 + 0.1 * t);
        let lin = NonlocalProblemSpec::new(
            0.5, 1.0, -1.0, grid, basis.clone(), phi.clone(),
            SourceModel::zero(grid, 4), k.clone(),
        )
        .unwrap();
        // F(t,x,u) = 0 wrapped as a closure
        let wrapped = NonlocalProblemSpec {
            source: SourceModel::Nonlinear(NonlinearSource::new(|_, _, _| 0.0, 0.0)),
            ..lin.clone()
        };
        let tol = 1e-11;
        let (a, _) = solve_forward(&lin, tol, 200).unwrap();
        let (b, _) = solve_forward(&wrapped, tol, 200).unwrap();
        assert!(sup_diff(&a, &b) <= 2.0 * tol);
    }

    #[test]
    fn shooting_matches_mild_on_single_mode() {
        let spec = unit_spec(2, 256, 0.0);
        let (u, _) = solve_forward(&spec, 1e-12, 10).unwrap();
        let v = oracle_shooting_l1(&spec, 1e-12).unwrap();
        let rel = sup_diff(&u, &v) / u.sup_l2();
        assert!(rel < 2e-2, "rel = {rel}");
        assert!(nonlocal_residual(&v, 0.0, &spec.phi) <= 1e-12);
    }

    #[test]
    fn shooting_periodic_zero_datum() {
        let mut spec = unit_spec(2, 64, 1.0);
        spec.phi = ModalVector::zeros(2);
        let v = oracle_shooting_l1(&spec, 1e-10).unwrap();
        assert!(v.sup_l2() <= 1e-10);
    }

    #[test]
    fn point_evaluation() {
        let spec = unit_spec(2, 16, 0.0);
        let (u, _) = solve_forward(&spec, 1e-12, 10).unwrap();
        let h = evaluate_at_point(&u, &spec.basis, 1.0).unwrap();
        for i in 0..17 {
            let direct = crate::spectral::synthesize(&u.slice(i), &spec.basis, 1.0).unwrap();
            assert_eq!(h.at(i), direct);
        }
        assert!(evaluate_at_point(&u, &spec.basis, PI).is_err());
    }

    #[test]
    fn residual_of_random_trajectory_is_positive() {
        let spec = unit_spec(2, 16, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = (0..2).map(|_| (0..17).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let u = ModalTrajectory::from_rows(spec.grid, rows).unwrap();
        let r = pde_residual(&u, &spec).unwrap();
        assert!(r.values()[1..].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn spot_check_detects_violations() {
        let good = NonlinearSource::new(|_, _, u: f64| 0.1 * u.sin(), 0.1);
        assert!(good.spot_check(1.0, PI, 200, 1));
        let bad = NonlinearSource::new(|_, _, u: f64| u * u, 1.0);
        assert!(!bad.spot_check(1.0, PI, 200, 1));
    }
}
