//! Config-driven runners behind the `fracdiff` command line.
//!
//! Each runner writes CSV tables and one JSON report into `output_dir`. Files are
//! written to a temporary name and renamed into place. Floats are printed in
//! scientific notation with 17 significant digits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Profile, RefineTarget, SourceConfig};
use crate::diagnostics::{
    validate_schedule, verify_lemma1_bound, ContractionConstants, ExponentSchedule,
};
use crate::error::{Error, Result};
use crate::forward::{
    evaluate_at_point, oracle_shooting_l1, solve_forward_with, ModalOperators,
    NonlocalProblemSpec, NonlinearSource, SourceModel,
};
use crate::fractional_ops::{caputo_l1, ml_convolve, GridFunction, TimeGrid};
use crate::inverse::{recover, synthesize_observation, InverseSpec, ObservationData, DEFAULT_COMPAT_TOL};
use crate::mittag_leffler::{
    check_laplace_identity, fit_bound_constants, ml_eval, MlEvalConfig, MlParams,
};
use crate::diagnostics::bound_fit_grid;
use crate::special::gamma;
use crate::spectral::{dirichlet_laplacian_basis, project, ModalTrajectory, ModalVector, SpectralBasis};

/// Paths written by a run and the exit status the command line should report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunArtifacts {
    pub csv: Vec<PathBuf>,
    pub json: PathBuf,
    pub exit_status: i32,
}

/// `{:.16e}`, the fixed float format of every artifact.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&fmt_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_json_value(x, indent + 1, out);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(m) if m.is_empty() => out.push_str("{}"),
        Value::Object(m) => {
            out.push_str("{\n");
            for (i, (k, x)) in m.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_json_value(x, indent + 1, out);
                out.push_str(if i + 1 < m.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Pretty JSON with floats in the artifact format. Non-finite floats become `null`.
pub fn to_json_string(v: &impl Serialize) -> Result<String> {
    let value = serde_json::to_value(v).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = String::new();
    write_json_value(&value, 0, &mut out);
    out.push('\n');
    Ok(out)
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

struct Csv {
    text: String,
}

impl Csv {
    fn new(header: &[&str]) -> Self {
        Self {
            text: header.join(",") + "\n",
        }
    }

    fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text.as_bytes())
    }
}

fn opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

/// Two-column numeric table; a non-numeric first line is treated as a header and
/// lines starting with `#` are skipped.
pub fn read_table(path: &Path, key: &str) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(key, format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = cells.iter().map(|c| c.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 2 => rows.push((v[0], v[1])),
            None if rows.is_empty() && lineno == 0 => continue,
            _ => {
                return Err(Error::config(
                    key,
                    format!("{} line {}: expected two numeric columns", path.display(), lineno + 1),
                ))
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::config(key, format!("{} holds no rows", path.display())));
    }
    Ok(rows)
}

/// Spatial profile as modal coefficients.
pub fn spatial_profile(p: &Profile, basis: &SpectralBasis, key: &str) -> Result<ModalVector> {
    let modes = basis.modes();
    match p {
        Profile::UnitMode(j) => {
            if *j > modes {
                return Err(Error::config(key, format!("mode {j} exceeds J = {modes}")));
            }
            Ok(ModalVector::unit(modes, j - 1))
        }
        Profile::Poly(c) => Ok(project(|x| horner(c, x), basis)),
        Profile::SinProfile(freq) => {
            let w = freq * std::f64::consts::PI / basis.length();
            Ok(project(|x| (w * x).sin(), basis))
        }
        Profile::Table(path) => {
            let mut v = vec![0.0; modes];
            for (j, value) in read_table(path, key)? {
                if j < 1.0 || j.fract() != 0.0 || j as usize > modes {
                    return Err(Error::config(key, format!("mode index {j} is not in 1..={modes}")));
                }
                v[j as usize - 1] = value;
            }
            Ok(ModalVector(v))
        }
    }
}

/// Temporal profile sampled on the grid nodes.
pub fn temporal_profile(p: &Profile, grid: TimeGrid, key: &str) -> Result<GridFunction> {
    match p {
        Profile::UnitMode(_) => Err(Error::config(key, "unit_mode is a spatial profile")),
        Profile::Poly(c) => Ok(GridFunction::from_fn(grid, |t| horner(c, t))),
        Profile::SinProfile(freq) => Ok(GridFunction::from_fn(grid, |t| (freq * t).sin())),
        Profile::Table(path) => {
            let rows = read_table(path, key)?;
            if rows.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::config(key, "table times must increase"));
            }
            let (t0, t1) = (rows[0].0, rows[rows.len() - 1].0);
            let slack = 1e-9 * grid.horizon();
            if t0 > slack || t1 < grid.horizon() - slack {
                return Err(Error::config(key, format!("table covers [{t0}, {t1}], not [0, T]")));
            }
            let values = grid
                .nodes()
                .into_iter()
                .map(|t| {
                    let i = rows.partition_point(|r| r.0 <= t).clamp(1, rows.len() - 1);
                    let (a, b) = (rows[i - 1], rows[i]);
                    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
                })
                .collect();
            GridFunction::new(grid, values)
        }
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Problem built from the config, with `k` taken from `k_profile` (stored under `k_key`).
pub fn build_spec(cfg: &ExperimentConfig, k_profile: &Profile, k_key: &str) -> Result<NonlocalProblemSpec> {
    let alpha = cfg.order();
    let grid = TimeGrid::new(cfg.horizon, cfg.steps)?;
    let basis = dirichlet_laplacian_basis(cfg.l, cfg.modes, cfg.quadrature)?;
    let k = temporal_profile(k_profile, grid, k_key)?;
    let mut phi = match &cfg.phi {
        Some(p) => spatial_profile(p, &basis, "phi")?,
        None => ModalVector::zeros(cfg.modes),
    };
    let source = match &cfg.source {
        SourceConfig::Zero => SourceModel::zero(grid, cfg.modes),
        SourceConfig::Sin { scale } => {
            let c = *scale;
            SourceModel::Nonlinear(NonlinearSource::new(move |_, _, u| c * u.sin(), c.abs()))
        }
        SourceConfig::Separable { space, time } => {
            let v = spatial_profile(space, &basis, "source_space")?;
            let g = temporal_profile(time, grid, "source_time")?;
            SourceModel::Linear(ModalTrajectory::separable(&v, &g))
        }
        SourceConfig::Manufactured { space, time } => {
            let v = spatial_profile(space, &basis, "source_space")?;
            let (f, derived_phi) = manufactured_source(&v, time, &basis, &k, alpha, cfg.beta, cfg.kappa)?;
            phi = derived_phi;
            SourceModel::Linear(f)
        }
    };
    NonlocalProblemSpec::new(alpha, cfg.beta, cfg.kappa, grid, basis, phi, source, k)
}

/// Modal source and datum for which `u = g(t) v` is the exact solution, with
/// `g(t) = sum c_i t^i` and `d^a t^i = Gamma(i+1) t^(i-a) / Gamma(i+1-a)`.
pub fn manufactured_source(
    v: &ModalVector,
    g: &[f64],
    basis: &SpectralBasis,
    k: &GridFunction,
    alpha: f64,
    beta: f64,
    kappa: f64,
) -> Result<(ModalTrajectory, ModalVector)> {
    if g.is_empty() {
        return Err(Error::invalid("time polynomial has no coefficients"));
    }
    let grid = *k.grid();
    let lam = basis.powers(beta);
    let dg = |t: f64| -> f64 {
        g.iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| {
                let i = i as f64;
                c * gamma(i + 1.0) / gamma(i + 1.0 - alpha) * t.powf(i - alpha)
            })
            .sum()
    };
    let rows = v
        .0
        .iter()
        .zip(&lam)
        .map(|(vj, l)| {
            (0..grid.len())
                .map(|i| {
                    let t = grid.node(i);
                    vj * (dg(t) + (l + k.at(i)) * horner(g, t))
                })
                .collect()
        })
        .collect();
    let jump = horner(g, grid.horizon()) - kappa * g[0];
    let phi = ModalVector(v.0.iter().map(|vj| vj * jump).collect());
    Ok((ModalTrajectory::from_rows(grid, rows)?, phi))
}

fn default_s(alpha: f64, q: f64) -> f64 {
    0.5 * (alpha * q).min(1.0 - alpha * q)
}

/// Forward solve with diagnostics.
pub fn run_forward(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let spec = build_spec(cfg, &cfg.k, "k")?;
    let ops = ModalOperators::new(&spec)?;
    let out = &cfg.output_dir;
    let json_path = out.join("forward_report.json");
    let q = cfg.q.ok_or_else(|| Error::config("q", "required key is missing"))?;
    let sched = ExponentSchedule::family_a(spec.alpha, q, cfg.s.unwrap_or_else(|| default_s(spec.alpha, q)));
    let upsilon = spec.source.lipschitz();
    let consts = ContractionConstants::estimate(&spec, ops.multipliers(), &sched, upsilon);

    let (u, mut picard) = match solve_forward_with(&spec, &ops, cfg.tol, cfg.max_iter) {
        Ok(v) => v,
        Err(Error::NotConverged(report)) => {
            let report_json = json!({
                "config": to_value(cfg),
                "picard": to_value(&report),
                "theta_hat": consts.as_ref().ok().map(|c| c.theta_t),
            });
            write_atomic(&json_path, to_json_string(&report_json)?.as_bytes())?;
            return Ok(RunArtifacts {
                csv: Vec::new(),
                json: json_path,
                exit_status: 3,
            });
        }
        Err(e) => return Err(e),
    };
    if let Ok(c) = &consts {
        if c.theta_t >= 1.0 {
            picard
                .warnings
                .push(format!("contraction constant {} is not below 1", fmt_float(c.theta_t)));
        }
    }

    let trace = evaluate_at_point(&u, &spec.basis, cfg.x0)?;
    let grid = spec.grid;
    let mut main = Csv::new(&["t", "u_at_x0", "nonlocal_residual_total"]);
    for i in 0..grid.len() {
        main.row(&[
            fmt_float(grid.node(i)),
            fmt_float(trace.at(i)),
            fmt_float(picard.nonlocal_residual),
        ]);
    }
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=spec.modes()).map(|j| format!("u_{j}")))
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut modal = Csv::new(&header_refs);
    for i in 0..grid.len() {
        let cells: Vec<String> = std::iter::once(fmt_float(grid.node(i)))
            .chain(u.rows().iter().map(|r| fmt_float(r[i])))
            .collect();
        modal.row(&cells);
    }

    let lemma1 = match &consts {
        Ok(c) => verify_lemma1_bound(&u, &spec, c, &sched).map(|r| to_value(&r)),
        Err(e) => Err(Error::invalid(e.to_string())),
    };
    let oracle = if cfg.shoot {
        Some(match oracle_shooting_l1(&spec, cfg.shoot_tol) {
            Ok(reference) => {
                let diff = u.zip_with(&reference, |a, b| a - b).l2_time_space();
                json!({ "relative_l2_difference": diff / reference.l2_time_space() })
            }
            Err(e) => json!({ "error": e.to_string() }),
        })
    } else {
        None
    };
    let report = json!({
        "config": to_value(cfg),
        "picard": to_value(&picard),
        "multipliers": to_value(ops.multipliers()),
        "schedule": to_value(&sched),
        "schedule_checks": to_value(&validate_schedule(&sched, spec.alpha)),
        "constants": match &consts { Ok(c) => to_value(c), Err(e) => json!({ "error": e.to_string() }) },
        "theta_hat": consts.as_ref().ok().map(|c| c.theta_t),
        "lemma1": match lemma1 { Ok(v) => v, Err(e) => json!({ "error": e.to_string() }) },
        "oracle": oracle,
    });

    let csv_main = out.join("forward.csv");
    let csv_modes = out.join("forward_modes.csv");
    main.save(&csv_main)?;
    modal.save(&csv_modes)?;
    write_atomic(&json_path, to_json_string(&report)?.as_bytes())?;
    Ok(RunArtifacts {
        csv: vec![csv_main, csv_modes],
        json: json_path,
        exit_status: 0,
    })
}

fn load_observation(path: &Path, grid: TimeGrid) -> Result<GridFunction> {
    let rows = read_table(path, "observation")?;
    if rows.len() != grid.len() {
        return Err(Error::config(
            "observation",
            format!("{} rows, the grid has {} nodes", rows.len(), grid.len()),
        ));
    }
    let slack = 1e-9 * grid.horizon();
    if let Some(i) = (0..grid.len()).find(|&i| (rows[i].0 - grid.node(i)).abs() > slack) {
        return Err(Error::config(
            "observation",
            format!("row {} has t = {}, expected {}", i + 1, rows[i].0, grid.node(i)),
        ));
    }
    GridFunction::new(grid, rows.into_iter().map(|r| r.1).collect())
}

/// Coefficient recovery from a trace read from `observation` or synthesized from `k_true`.
/// Inverse problem described by `cfg`, with the true coefficient when `k_true` is set.
///
/// Without `observation` the trace is synthesized from `k_true`; `h0` and `compat_tol`
/// fall back to `0.9 min |h|` and a noise-scaled tolerance.
pub fn prepare_inverse(cfg: &ExperimentConfig, observation: Option<&Path>) -> Result<(InverseSpec, Option<GridFunction>)> {
    let truth = cfg.k_true.as_ref();
    let (spec, true_k) = match truth {
        Some(p) => {
            let spec = build_spec(cfg, p, "k_true")?;
            let k = spec.k.clone();
            (spec, Some(k))
        }
        None => (build_spec(cfg, &Profile::Poly(vec![0.0]), "k")?, None),
    };
    let alpha = spec.alpha;
    let h = match observation {
        Some(path) => load_observation(path, spec.grid)?,
        None => {
            if truth.is_none() {
                return Err(Error::config("k_true", "needed to synthesize an observation"));
            }
            synthesize_observation(&spec, cfg.x0, cfg.noise_level, cfg.seed, cfg.tol, cfg.max_iter)?.h
        }
    };
    let min_abs = h.values().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let h0 = cfg.h0.unwrap_or(0.9 * min_abs);
    let compat_tol = cfg
        .compat_tol
        .unwrap_or(DEFAULT_COMPAT_TOL + 3.0 * cfg.noise_level * h.sup_norm());
    let obs = ObservationData::new(h, cfg.x0, h0, alpha)?;
    let mut inv = InverseSpec::new(spec, obs, cfg.tol_k, cfg.max_outer)?;
    inv.compat_tol = compat_tol;

    Ok((inv, true_k))
}

pub fn run_inverse(cfg: &ExperimentConfig, observation: Option<&Path>) -> Result<RunArtifacts> {
    let (inv, true_k) = prepare_inverse(cfg, observation)?;
    let (h0, compat_tol) = (inv.obs.h0, inv.compat_tol);
    let out = &cfg.output_dir;
    let json_path = out.join("inverse_report.json");
    let obs_path = out.join("observation.csv");
    let mut obs_csv = Csv::new(&["t", "h"]);
    let grid = inv.forward.grid;
    for i in 0..grid.len() {
        obs_csv.row(&[fmt_float(grid.node(i)), fmt_float(inv.obs.h.at(i))]);
    }
    let resolved = json!({ "h0": h0, "compat_tol": compat_tol });

    match recover(&inv) {
        Ok((k, _, report)) => {
            let mut csv = Csv::new(&["t", "k_recovered", "k_true_if_known", "abs_error"]);
            let mut max_rel = None::<f64>;
            for i in 0..grid.len() {
                let kt = true_k.as_ref().map(|t| t.at(i));
                let err = kt.map(|t| (k.at(i) - t).abs());
                if let (Some(e), Some(t)) = (err, kt) {
                    let r = e / t.abs().max(f64::MIN_POSITIVE);
                    max_rel = Some(max_rel.map_or(r, |m: f64| m.max(r)));
                }
                csv.row(&[fmt_float(grid.node(i)), fmt_float(k.at(i)), opt_float(kt), opt_float(err)]);
            }
            let rec_path = out.join("recovery.csv");
            csv.save(&rec_path)?;
            obs_csv.save(&obs_path)?;
            let body = json!({
                "config": to_value(cfg),
                "resolved": resolved,
                "recovery": to_value(&report),
                "sup_relative_error": max_rel,
            });
            write_atomic(&json_path, to_json_string(&body)?.as_bytes())?;
            Ok(RunArtifacts {
                csv: vec![rec_path, obs_path],
                json: json_path,
                exit_status: 0,
            })
        }
        Err(Error::RecoveryNotConverged(report)) => {
            obs_csv.save(&obs_path)?;
            let body = json!({
                "config": to_value(cfg),
                "resolved": resolved,
                "recovery": to_value(&report),
            });
            write_atomic(&json_path, to_json_string(&body)?.as_bytes())?;
            Ok(RunArtifacts {
                csv: vec![obs_path],
                json: json_path,
                exit_status: 3,
            })
        }
        Err(e) => Err(e),
    }
}

/// Error of one refinement target on an `n`-step grid over `[0, horizon]`.
pub fn refine_error(target: RefineTarget, alpha: f64, lambda: f64, horizon: f64, n: usize, t_min: f64) -> Result<f64> {
    let grid = TimeGrid::new(horizon, n)?;
    let window = |err: &[f64]| {
        err.iter()
            .enumerate()
            // node 0 carries no L1 derivative
            .filter(|(i, _)| *i >= 1 && grid.node(*i) >= t_min)
            .map(|(_, e)| *e)
            .fold(0.0, f64::max)
    };
    let errs: Vec<f64> = match target {
        RefineTarget::CaputoT3 => {
            let d = caputo_l1(&GridFunction::from_fn(grid, |t| t * t * t), alpha)?;
            let c = 6.0 / gamma(4.0 - alpha);
            (0..grid.len())
                .map(|i| (d.at(i) - c * grid.node(i).powf(3.0 - alpha)).abs())
                .collect()
        }
        RefineTarget::ConvolveConstLambda0 => {
            let c = ml_convolve(&GridFunction::constant(grid, 1.0), alpha, lambda)?;
            let cfg = MlEvalConfig::default();
            (0..grid.len())
                .map(|i| {
                    let t = grid.node(i);
                    let exact = if lambda == 0.0 {
                        Ok(t.powf(alpha) / gamma(alpha + 1.0))
                    } else {
                        ml_eval(MlParams::classic(alpha), -lambda * t.powf(alpha), &cfg)
                            .map(|e| (1.0 - e) / lambda)
                    };
                    exact.map(|x| (c.at(i) - x).abs())
                })
                .collect::<Result<_>>()?
        }
        RefineTarget::MlCaputo => {
            let cfg = MlEvalConfig::default();
            let e: Vec<f64> = grid
                .nodes()
                .into_iter()
                .map(|t| ml_eval(MlParams::classic(alpha), -t.powf(alpha), &cfg))
                .collect::<Result<_>>()?;
            let f = GridFunction::new(grid, e)?;
            let d = caputo_l1(&f, alpha)?;
            (0..grid.len()).map(|i| (d.at(i) + f.at(i)).abs()).collect()
        }
    };
    Ok(window(&errs))
}

/// Empirical orders `log(e_{i-1}/e_i) / log(n_i/n_{i-1})`.
pub fn empirical_orders(ns: &[usize], errors: &[f64]) -> Vec<Option<f64>> {
    (0..ns.len())
        .map(|i| {
            if i == 0 || errors[i] <= 0.0 || errors[i - 1] <= 0.0 {
                None
            } else {
                Some((errors[i - 1] / errors[i]).ln() / (ns[i] as f64 / ns[i - 1] as f64).ln())
            }
        })
        .collect()
}

/// Grid-refinement study of one target.
pub fn run_refine(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let target = cfg
        .refine_target
        .ok_or_else(|| Error::config("refine_target", "required key is missing"))?;
    let alpha = cfg.order();
    let errors: Vec<f64> = cfg
        .refine_n
        .iter()
        .map(|&n| refine_error(target, alpha, cfg.refine_lambda, cfg.horizon, n, cfg.refine_t_min))
        .collect::<Result<_>>()?;
    let orders = empirical_orders(&cfg.refine_n, &errors);
    let mut csv = Csv::new(&["N", "error", "order"]);
    for ((n, e), o) in cfg.refine_n.iter().zip(&errors).zip(&orders) {
        csv.row(&[n.to_string(), fmt_float(*e), opt_float(*o)]);
    }
    // roundoff level for the exactly representable target, 2 - alpha otherwise
    let (expected_order, pass) = match target {
        RefineTarget::ConvolveConstLambda0 => (None, errors.iter().all(|e| *e <= 1e-12)),
        _ => {
            let expected = 2.0 - alpha;
            let ok = orders
                .iter()
                .flatten()
                .all(|o| (o - expected).abs() <= cfg.order_band);
            (Some(expected), ok)
        }
    };
    let out = &cfg.output_dir;
    let csv_path = out.join("refine.csv");
    let json_path = out.join("refine_report.json");
    csv.save(&csv_path)?;
    let body = json!({
        "config": to_value(cfg),
        "target": to_value(&target),
        "errors": errors,
        "orders": orders,
        "expected_order": expected_order,
        "order_band": cfg.order_band,
        "pass": pass,
    });
    write_atomic(&json_path, to_json_string(&body)?.as_bytes())?;
    Ok(RunArtifacts {
        csv: vec![csv_path],
        json: json_path,
        exit_status: 0,
    })
}

/// One row of the special-function check table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlCheckRow {
    pub alpha: f64,
    pub z: f64,
    pub value: Option<f64>,
    pub lower_margin: Option<f64>,
    pub upper_margin: Option<f64>,
    /// `|E_{a,1}(z) - 1 - z E_{a,a+1}(z)|`.
    pub recurrence_residual: Option<f64>,
    pub laplace_residual: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlCheckSummary {
    pub rows: usize,
    pub evaluation_failures: usize,
    pub range_violations: usize,
    pub monotonicity_violations: usize,
    pub bound_violations: usize,
    pub max_recurrence_residual: f64,
    pub max_laplace_residual: f64,
    pub pass: bool,
}

const LAPLACE_TOL: f64 = 1e-6;
const RECURRENCE_TOL: f64 = 1e-10;

/// Mittag-Leffler values, bound margins and identity residuals on `alphas x z_values`.
pub fn mlcheck_rows(cfg: &ExperimentConfig) -> (Vec<MlCheckRow>, MlCheckSummary) {
    let ml = MlEvalConfig::default();
    let mut rows = Vec::new();
    let mut monotonicity_violations = 0;
    for &alpha in &cfg.alphas {
        let fit = fit_bound_constants(alpha, &bound_fit_grid());
        for &z in &cfg.z_values {
            let mut row = MlCheckRow {
                alpha,
                z,
                value: None,
                lower_margin: None,
                upper_margin: None,
                recurrence_residual: None,
                laplace_residual: None,
                error: None,
            };
            let mut eval = || -> Result<()> {
                let e = ml_eval(MlParams::classic(alpha), z, &ml)?;
                row.value = Some(e);
                let e2 = ml_eval(MlParams::new(alpha, alpha + 1.0), z, &ml)?;
                row.recurrence_residual = Some((e - 1.0 - z * e2).abs());
                if z <= 0.0 {
                    let fit = fit.as_ref().map_err(|e| Error::invalid(e.to_string()))?;
                    let (lo, hi) = fit.margins(-z, e);
                    row.lower_margin = Some(lo);
                    row.upper_margin = Some(hi);
                }
                if z < 0.0 {
                    let lambda = -z;
                    let s = cfg.laplace_s.max(2.0 * lambda.powf(1.0 / alpha));
                    row.laplace_residual =
                        Some(check_laplace_identity(alpha, lambda, s, cfg.laplace_t_max.max(30.0 / s), &ml)?);
                }
                Ok(())
            };
            if let Err(e) = eval() {
                row.error = Some(e.to_string());
            }
            rows.push(row);
        }
        // E_a(-x) must decrease strictly along increasing x
        let mut neg: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.alpha == alpha && r.z <= 0.0)
            .filter_map(|r| r.value.map(|v| (-r.z, v)))
            .collect();
        neg.sort_by(|a, b| a.0.total_cmp(&b.0));
        neg.dedup_by(|a, b| a.0 == b.0);
        monotonicity_violations += neg.windows(2).filter(|w| !(w[1].1 < w[0].1)).count();
    }

    let range_violations = rows
        .iter()
        .filter(|r| r.z < 0.0)
        .filter(|r| r.value.is_some_and(|v| !(v > 0.0 && v < 1.0)))
        .count();
    let bound_violations = rows
        .iter()
        .filter(|r| r.lower_margin.is_some_and(|m| m < 0.0) || r.upper_margin.is_some_and(|m| m < 0.0))
        .count();
    let evaluation_failures = rows.iter().filter(|r| r.error.is_some()).count();
    let max_recurrence_residual = rows.iter().filter_map(|r| r.recurrence_residual).fold(0.0, f64::max);
    let max_laplace_residual = rows.iter().filter_map(|r| r.laplace_residual).fold(0.0, f64::max);
    let summary = MlCheckSummary {
        rows: rows.len(),
        evaluation_failures,
        range_violations,
        monotonicity_violations,
        bound_violations,
        max_recurrence_residual,
        max_laplace_residual,
        pass: evaluation_failures == 0
            && range_violations == 0
            && monotonicity_violations == 0
            && bound_violations == 0
            && max_recurrence_residual <= RECURRENCE_TOL
            && max_laplace_residual < LAPLACE_TOL,
    };
    (rows, summary)
}

/// Special-function check table and summary.
pub fn run_mlcheck(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let (rows, summary) = mlcheck_rows(cfg);
    let mut csv = Csv::new(&[
        "alpha",
        "z",
        "E",
        "lower_margin",
        "upper_margin",
        "recurrence_residual",
        "laplace_residual",
    ]);
    for r in &rows {
        csv.row(&[
            fmt_float(r.alpha),
            fmt_float(r.z),
            opt_float(r.value),
            opt_float(r.lower_margin),
            opt_float(r.upper_margin),
            opt_float(r.recurrence_residual),
            opt_float(r.laplace_residual),
        ]);
    }
    let out = &cfg.output_dir;
    let csv_path = out.join("mlcheck.csv");
    let json_path = out.join("mlcheck_report.json");
    csv.save(&csv_path)?;
    let errors: Vec<Value> = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| json!({ "alpha": r.alpha, "z": r.z, "error": e })))
        .collect();
    let body = json!({
        "config": to_value(cfg),
        "summary": to_value(&summary),
        "errors": errors,
    });
    write_atomic(&json_path, to_json_string(&body)?.as_bytes())?;
    Ok(RunArtifacts {
        csv: vec![csv_path],
        json: json_path,
        exit_status: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_float(-0.25), "-2.5000000000000000e-1");
    }

    #[test]
    fn json_floats_use_artifact_format() {
        let s = to_json_string(&json!({ "a": 0.5, "b": [1, 2.0], "c": f64::NAN, "d": "x" })).unwrap();
        assert!(s.contains("\"a\": 5.0000000000000000e-1"));
        assert!(s.contains("2.0000000000000000e0"));
        assert!(s.contains("\"c\": null"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"][0], json!(1));
    }

    #[test]
    fn orders_from_halving() {
        let o = empirical_orders(&[10, 20, 40], &[1.0, 0.25, 0.0625]);
        assert_eq!(o[0], None);
        assert!((o[1].unwrap() - 2.0).abs() < 1e-14);
        assert!((o[2].unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(empirical_orders(&[64], &[1e-3]), vec![None]);
    }

    #[test]
    fn horner_and_profiles() {
        assert_eq!(horner(&[1.0, 2.0, 3.0], 2.0), 17.0);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let k = temporal_profile(&Profile::Poly(vec![1.0, 0.5]), grid, "k").unwrap();
        assert_eq!(k.values(), &[1.0, 1.125, 1.25, 1.375, 1.5]);
        assert!(temporal_profile(&Profile::UnitMode(1), grid, "k").is_err());
        let basis = SpectralBasis::dirichlet(std::f64::consts::PI, 4).unwrap();
        let v = spatial_profile(&Profile::SinProfile(2.0), &basis, "phi").unwrap();
        assert!((v.0[1] - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-10);
        assert!(spatial_profile(&Profile::UnitMode(5), &basis, "phi").is_err());
    }

    #[test]
    fn manufactured_solution_is_exact_for_the_mild_map() {
        let grid = TimeGrid::new(0.5, 64).unwrap();
        let basis = SpectralBasis::dirichlet(std::f64::consts::PI, 3).unwrap();
        let k = GridFunction::from_fn(grid, |t| 1.0 + 0.5 * t);
        let v = ModalVector(vec![1.0, 0.25, 1.0 / 9.0]);
        let (f, phi) = manufactured_source(&v, &[1.0, 1.0], &basis, &k, 0.5, 1.0, 0.0).unwrap();
        assert!((phi.0[0] - 1.5).abs() < 1e-15);
        // the L1 derivative of a linear function is exact, so the residual vanishes
        let u = ModalTrajectory::separable(&v, &GridFunction::from_fn(grid, |t| 1.0 + t));
        let spec = NonlocalProblemSpec::new(0.5, 1.0, 0.0, grid, basis, phi, SourceModel::Linear(f), k).unwrap();
        let r = crate::forward::pde_residual(&u, &spec).unwrap();
        assert!(r.sup_norm() < 1e-12, "{}", r.sup_norm());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
