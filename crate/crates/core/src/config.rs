//! Flat-key TOML experiment configuration.
//!
//! Every key lives at the top level of the file. Unknown keys are rejected and
//! every resolved default is echoed back through [`ExperimentConfig`]'s
//! `Serialize` impl.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Serialize, Serializer};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::spectral::default_quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Forward,
    Inverse,
    Refine,
    Mlcheck,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "forward" => Ok(Mode::Forward),
            "inverse" => Ok(Mode::Inverse),
            "refine" => Ok(Mode::Refine),
            "mlcheck" => Ok(Mode::Mlcheck),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Forward => "forward",
            Mode::Inverse => "inverse",
            Mode::Refine => "refine",
            Mode::Mlcheck => "mlcheck",
        };
        f.write_str(s)
    }
}

/// Named profile: `unit_mode(j)`, `poly(c0, c1, ...)`, `sin_profile(freq)` or `table(path)`.
///
/// In space, `poly` is `sum c_i x^i`, `sin_profile(f)` is `sin(f pi x / l)`, and a
/// table lists modal coefficients as `j,value` rows. In time, `poly` is
/// `sum c_i t^i`, `sin_profile(f)` is `sin(f t)`, and a table lists `t,value` rows
/// that are linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    UnitMode(usize),
    Poly(Vec<f64>),
    SinProfile(f64),
    Table(PathBuf),
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::UnitMode(j) => write!(f, "unit_mode({j})"),
            Profile::Poly(c) => {
                let parts: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
                write!(f, "poly({})", parts.join(", "))
            }
            Profile::SinProfile(freq) => write!(f, "sin_profile({freq:?})"),
            Profile::Table(p) => write!(f, "table({})", p.display()),
        }
    }
}

impl Serialize for Profile {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl Profile {
    /// Parse `name(args)`; relative table paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> std::result::Result<Self, String> {
        let text = text.trim();
        let open = text.find('(').ok_or_else(|| format!("`{text}` is not of the form name(args)"))?;
        let args = text[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| format!("`{text}` is missing a closing parenthesis"))?
            .trim();
        let numbers = || -> std::result::Result<Vec<f64>, String> {
            args.split(',')
                .map(|a| a.trim().parse::<f64>().map_err(|e| format!("`{a}`: {e}")))
                .collect()
        };
        match text[..open].trim() {
            "unit_mode" => {
                let j: usize = args.parse().map_err(|e| format!("`{args}`: {e}"))?;
                if j == 0 {
                    return Err("mode indices start at 1".into());
                }
                Ok(Profile::UnitMode(j))
            }
            "poly" => {
                let c = numbers()?;
                if c.iter().any(|v| !v.is_finite()) {
                    return Err("coefficients must be finite".into());
                }
                Ok(Profile::Poly(c))
            }
            "sin_profile" => match numbers()?.as_slice() {
                [f] if f.is_finite() => Ok(Profile::SinProfile(*f)),
                _ => Err("sin_profile takes one finite frequency".into()),
            },
            "table" => {
                if args.is_empty() {
                    return Err("table needs a path".into());
                }
                Ok(Profile::Table(base.join(args)))
            }
            other => Err(format!("unknown profile `{other}`")),
        }
    }
}

/// Source term `F(t, x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    Zero,
    /// `F = scale sin(u)`.
    Sin { scale: f64 },
    /// `F(t, x) = space(x) time(t)`.
    Separable { space: Profile, time: Profile },
    /// `F` chosen so that `u = time(t) space(x)` solves the problem for the given `k`;
    /// `time` must be a polynomial and `phi` is derived from the nonlocal condition.
    Manufactured { space: Profile, time: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineTarget {
    /// L1 derivative of `t^3` against `Gamma(4) t^(3-a) / Gamma(4-a)`.
    CaputoT3,
    /// Exact-moment convolution of a constant with `lambda = 0` against `t^a / Gamma(a+1)`.
    ConvolveConstLambda0,
    /// L1 derivative of `E_a(-t^a)` against `-E_a(-t^a)`, measured for `t >= refine_t_min`.
    MlCaputo,
}

impl FromStr for RefineTarget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "caputo_t3" => Ok(RefineTarget::CaputoT3),
            "convolve_const_lambda0" => Ok(RefineTarget::ConvolveConstLambda0),
            "ml_caputo" => Ok(RefineTarget::MlCaputo),
            _ => Err(format!("unknown refine target `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub kappa: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub l: f64,
    #[serde(rename = "J")]
    pub modes: usize,
    #[serde(rename = "N")]
    pub steps: usize,
    #[serde(rename = "Q")]
    pub quadrature: usize,
    pub phi: Option<Profile>,
    pub source: SourceConfig,
    pub k: Profile,
    pub k_true: Option<Profile>,
    pub x0: f64,
    pub h0: Option<f64>,
    pub noise_level: f64,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub tol_k: f64,
    pub max_outer: usize,
    pub compat_tol: Option<f64>,
    pub q: Option<f64>,
    pub p: Option<f64>,
    pub s: Option<f64>,
    pub shoot: bool,
    pub shoot_tol: f64,
    pub refine_target: Option<RefineTarget>,
    pub refine_n: Vec<usize>,
    pub refine_lambda: f64,
    pub refine_t_min: f64,
    pub order_band: f64,
    pub alphas: Vec<f64>,
    pub z_values: Vec<f64>,
    pub laplace_s: f64,
    pub laplace_t_max: f64,
    pub output_dir: PathBuf,
}

const KNOWN_KEYS: &[&str] = &[
    "mode",
    "alpha",
    "beta",
    "kappa",
    "T",
    "l",
    "J",
    "N",
    "Q",
    "phi",
    "source",
    "source_scale",
    "source_space",
    "source_time",
    "k",
    "k_true",
    "x0",
    "h0",
    "noise_level",
    "seed",
    "tol",
    "max_iter",
    "tol_k",
    "max_outer",
    "compat_tol",
    "q",
    "p",
    "s",
    "shoot",
    "shoot_tol",
    "refine_target",
    "refine_n",
    "refine_lambda",
    "refine_t_min",
    "order_band",
    "alphas",
    "z_values",
    "laplace_s",
    "laplace_t_max",
    "output_dir",
];

struct Reader<'a> {
    table: &'a Table,
    base: &'a Path,
}

fn bad(key: &str, message: impl Into<String>) -> Error {
    Error::config(key, message)
}

impl Reader<'_> {
    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(bad(key, "expected a number")),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as usize)),
            Some(_) => Err(bad(key, "expected a nonnegative integer")),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&str>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(bad(key, "expected a string")),
        }
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(bad(key, "expected true or false")),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(x) => Ok(*x as f64),
                    _ => Err(bad(key, "expected an array of numbers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(bad(key, "expected an array of numbers")),
        }
    }

    fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Integer(x) if *x > 0 => Ok(*x as usize),
                    _ => Err(bad(key, "expected an array of positive integers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(bad(key, "expected an array of positive integers")),
        }
    }

    fn profile(&self, key: &str) -> Result<Option<Profile>> {
        self.str(key)?
            .map(|s| Profile::parse(s, self.base).map_err(|m| bad(key, m)))
            .transpose()
    }

    fn require<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| bad(key, "required key is missing"))
    }
}

fn check(key: &str, ok: bool, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(bad(key, message))
    }
}

impl ExperimentConfig {
    /// Read and validate a config file for the given subcommand.
    pub fn load(path: &Path, mode: Mode) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad("<file>", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base, mode)
    }

    /// Parse config text; `base` anchors relative paths.
    pub fn parse(text: &str, base: &Path, mode: Mode) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| bad("<file>", e.message().to_string()))?;
        if let Some(key) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(bad(key, "unknown key"));
        }
        let r = Reader { table: &table, base };

        if let Some(m) = r.str("mode")? {
            let declared: Mode = m.parse().map_err(|e: String| bad("mode", e))?;
            check("mode", declared == mode, &format!("config declares `{declared}` but `{mode}` was requested"))?;
        }

        let alpha = r.f64("alpha")?;
        if mode != Mode::Mlcheck {
            let a = r.require("alpha", alpha)?;
            check("alpha", a > 0.0 && a < 1.0, "alpha must lie in (0, 1)")?;
        }
        let beta = r.f64("beta")?.unwrap_or(1.0);
        check("beta", beta > 0.0 && beta <= 1.0, "beta must lie in (0, 1]")?;
        let kappa = r.f64("kappa")?.unwrap_or(0.0);
        check("kappa", kappa.is_finite(), "kappa must be finite")?;
        let horizon = r.f64("T")?.unwrap_or(1.0);
        check("T", horizon > 0.0 && horizon.is_finite(), "T must be positive")?;
        let l = r.f64("l")?.unwrap_or(std::f64::consts::PI);
        check("l", l > 0.0 && l.is_finite(), "l must be positive")?;
        let modes = r.usize("J")?.unwrap_or(8);
        check("J", modes >= 1, "J must be at least 1")?;
        let steps = r.usize("N")?.unwrap_or(256);
        check("N", steps >= 1, "N must be at least 1")?;
        let quadrature = r.usize("Q")?.unwrap_or_else(|| default_quadrature(modes));
        check("Q", quadrature >= 4 * modes, "Q must be at least 4 J")?;

        let source = match r.str("source")?.unwrap_or("zero") {
            "zero" => SourceConfig::Zero,
            "sin" => {
                let scale = r.require("source_scale", r.f64("source_scale")?)?;
                check("source_scale", scale.is_finite(), "source_scale must be finite")?;
                SourceConfig::Sin { scale }
            }
            "separable" => SourceConfig::Separable {
                space: r.require("source_space", r.profile("source_space")?)?,
                time: r.require("source_time", r.profile("source_time")?)?,
            },
            "manufactured" => SourceConfig::Manufactured {
                space: r.require("source_space", r.profile("source_space")?)?,
                time: match r.require("source_time", r.profile("source_time")?)? {
                    Profile::Poly(c) => c,
                    _ => return Err(bad("source_time", "manufactured sources need a poly(...) time profile")),
                },
            },
            other => {
                return Err(bad(
                    "source",
                    format!("unknown source `{other}`; expected zero, sin, separable or manufactured"),
                ))
            }
        };
        let unused_source_keys: &[&str] = match source {
            SourceConfig::Zero => &["source_scale", "source_space", "source_time"],
            SourceConfig::Sin { .. } => &["source_space", "source_time"],
            SourceConfig::Separable { .. } => &["source_scale"],
            SourceConfig::Manufactured { .. } => &["source_scale"],
        };
        if let Some(key) = unused_source_keys.iter().find(|k| table.contains_key(**k)) {
            return Err(bad(key, "not used by this source kind"));
        }

        let phi = r.profile("phi")?;
        if matches!(source, SourceConfig::Manufactured { .. }) && phi.is_some() {
            return Err(bad("phi", "phi is derived from source_space for manufactured sources"));
        }
        let k = r.profile("k")?.unwrap_or(Profile::Poly(vec![0.0]));
        let k_true = r.profile("k_true")?;
        for (key, p) in [("k", Some(&k)), ("k_true", k_true.as_ref())] {
            if let Some(Profile::UnitMode(_)) = p {
                return Err(bad(key, "unit_mode is a spatial profile"));
            }
        }

        let x0 = r.f64("x0")?.unwrap_or(0.5 * l);
        check("x0", x0 > 0.0 && x0 < l, "x0 must lie in (0, l)")?;
        let h0 = r.f64("h0")?;
        if let Some(h0) = h0 {
            check("h0", h0 > 0.0, "h0 must be positive")?;
        }
        let noise_level = r.f64("noise_level")?.unwrap_or(0.0);
        check("noise_level", noise_level >= 0.0, "noise_level must be nonnegative")?;
        let seed = match r.table.get("seed") {
            None => 0,
            Some(Value::Integer(v)) if *v >= 0 => *v as u64,
            Some(_) => return Err(bad("seed", "expected a nonnegative integer")),
        };
        let tol = r.f64("tol")?.unwrap_or(1e-12);
        check("tol", tol > 0.0, "tol must be positive")?;
        let max_iter = r.usize("max_iter")?.unwrap_or(200);
        check("max_iter", max_iter >= 1, "max_iter must be at least 1")?;
        let tol_k = r.f64("tol_k")?.unwrap_or(1e-10);
        check("tol_k", tol_k > 0.0, "tol_k must be positive")?;
        let max_outer = r.usize("max_outer")?.unwrap_or(100);
        check("max_outer", max_outer >= 1, "max_outer must be at least 1")?;
        let compat_tol = r.f64("compat_tol")?;
        if let Some(c) = compat_tol {
            check("compat_tol", c >= 0.0, "compat_tol must be nonnegative")?;
        }

        let q = r.f64("q")?;
        if mode == Mode::Forward {
            r.require("q", q)?;
        }
        if let Some(q) = q {
            check("q", q > 0.0 && q < 1.0, "q must lie in (0, 1)")?;
        }
        let p = r.f64("p")?;
        if let Some(p) = p {
            let q = r.require("q", q)?;
            check("p", (p + q - 1.0).abs() <= 1e-12, "p + q must equal 1")?;
        }
        let s = r.f64("s")?;
        if let Some(s) = s {
            check("s", s > 0.0, "s must be positive")?;
        }

        let shoot = r.bool("shoot")?.unwrap_or(false);
        let shoot_tol = r.f64("shoot_tol")?.unwrap_or(1e-10);
        check("shoot_tol", shoot_tol > 0.0, "shoot_tol must be positive")?;

        let refine_target = r
            .str("refine_target")?
            .map(|s| s.parse::<RefineTarget>().map_err(|e| bad("refine_target", e)))
            .transpose()?;
        let refine_n = r.usize_list("refine_n")?.unwrap_or_default();
        if mode == Mode::Refine {
            r.require("refine_target", refine_target)?;
            check("refine_n", !refine_n.is_empty(), "refine_n must list at least one N")?;
        }
        let refine_lambda = r.f64("refine_lambda")?.unwrap_or(0.0);
        check("refine_lambda", refine_lambda >= 0.0, "refine_lambda must be nonnegative")?;
        let refine_t_min = r.f64("refine_t_min")?.unwrap_or(0.0);
        check("refine_t_min", refine_t_min >= 0.0 && refine_t_min < horizon, "refine_t_min must lie in [0, T)")?;
        let order_band = r.f64("order_band")?.unwrap_or(0.3);
        check("order_band", order_band > 0.0, "order_band must be positive")?;

        let alphas = r.f64_list("alphas")?.unwrap_or_default();
        let z_values = r.f64_list("z_values")?.unwrap_or_default();
        if mode == Mode::Mlcheck {
            check("alphas", !alphas.is_empty(), "alphas must list at least one order")?;
            check("z_values", !z_values.is_empty(), "z_values must list at least one argument")?;
        }
        check("alphas", alphas.iter().all(|a| *a > 0.0 && *a <= 1.0), "orders must lie in (0, 1]")?;
        check("z_values", z_values.iter().all(|z| z.is_finite()), "arguments must be finite")?;
        let laplace_s = r.f64("laplace_s")?.unwrap_or(2.0);
        check("laplace_s", laplace_s > 0.0, "laplace_s must be positive")?;
        let laplace_t_max = r.f64("laplace_t_max")?.unwrap_or(40.0);
        check("laplace_t_max", laplace_t_max > 0.0, "laplace_t_max must be positive")?;

        let output_dir = base.join(r.str("output_dir")?.unwrap_or("out"));

        Ok(Self {
            mode,
            alpha,
            beta,
            kappa,
            horizon,
            l,
            modes,
            steps,
            quadrature,
            phi,
            source,
            k,
            k_true,
            x0,
            h0,
            noise_level,
            seed,
            tol,
            max_iter,
            tol_k,
            max_outer,
            compat_tol,
            q,
            p,
            s,
            shoot,
            shoot_tol,
            refine_target,
            refine_n,
            refine_lambda,
            refine_t_min,
            order_band,
            alphas,
            z_values,
            laplace_s,
            laplace_t_max,
            output_dir,
        })
    }

    /// `alpha` for the modes that require it.
    pub fn order(&self) -> f64 {
        self.alpha.unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, mode: Mode) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("/cfg"), mode)
    }

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn defaults_are_filled() {
        let c = parse("alpha = 0.5\nq = 0.5\n", Mode::Forward).unwrap();
        assert_eq!(c.beta, 1.0);
        assert_eq!(c.modes, 8);
        assert_eq!(c.quadrature, 256);
        assert_eq!(c.source, SourceConfig::Zero);
        assert_eq!(c.k, Profile::Poly(vec![0.0]));
        assert_eq!(c.output_dir, PathBuf::from("/cfg/out"));
    }

    #[test]
    fn missing_q_names_the_key() {
        assert_eq!(key_of(parse("alpha = 0.5\n", Mode::Forward).unwrap_err()), "q");
    }

    #[test]
    fn unknown_and_mistyped_keys() {
        assert_eq!(key_of(parse("alpha = 0.5\nq = 0.5\nbogus = 1\n", Mode::Forward).unwrap_err()), "bogus");
        assert_eq!(key_of(parse("alpha = \"x\"\nq = 0.5\n", Mode::Forward).unwrap_err()), "alpha");
        assert_eq!(key_of(parse("alpha = 1.5\nq = 0.5\n", Mode::Forward).unwrap_err()), "alpha");
        assert_eq!(key_of(parse("alpha = 0.5\nq = 0.5\nmode = \"inverse\"\n", Mode::Forward).unwrap_err()), "mode");
        assert_eq!(
            key_of(parse("alpha = 0.5\nq = 0.5\nsource = \"sin\"\n", Mode::Forward).unwrap_err()),
            "source_scale"
        );
        assert_eq!(
            key_of(parse("alpha = 0.5\nq = 0.5\nsource_scale = 1.0\n", Mode::Forward).unwrap_err()),
            "source_scale"
        );
    }

    #[test]
    fn profiles() {
        let base = Path::new("/data");
        assert_eq!(Profile::parse("unit_mode(2)", base).unwrap(), Profile::UnitMode(2));
        assert_eq!(Profile::parse(" poly(1, 0.5) ", base).unwrap(), Profile::Poly(vec![1.0, 0.5]));
        assert_eq!(Profile::parse("sin_profile(3)", base).unwrap(), Profile::SinProfile(3.0));
        assert_eq!(
            Profile::parse("table(k.csv)", base).unwrap(),
            Profile::Table(PathBuf::from("/data/k.csv"))
        );
        assert!(Profile::parse("unit_mode(0)", base).is_err());
        assert!(Profile::parse("cosine(1)", base).is_err());
        assert!(Profile::parse("poly(1", base).is_err());
        assert_eq!(Profile::Poly(vec![1.0, 0.5]).to_string(), "poly(1.0, 0.5)");
    }

    #[test]
    fn mode_specific_requirements() {
        assert_eq!(key_of(parse("alpha = 0.5\n", Mode::Refine).unwrap_err()), "refine_target");
        assert_eq!(key_of(parse("alphas = [0.5]\n", Mode::Mlcheck).unwrap_err()), "z_values");
        let c = parse("alphas = [0.5, 1]\nz_values = [-1, -2]\n", Mode::Mlcheck).unwrap();
        assert_eq!(c.alphas, vec![0.5, 1.0]);
        assert_eq!(
            key_of(parse("alpha = 0.5\nsource = \"manufactured\"\nsource_space = \"unit_mode(1)\"\nsource_time = \"poly(1, 1)\"\nphi = \"unit_mode(1)\"\n", Mode::Inverse).unwrap_err()),
            "phi"
        );
        assert_eq!(key_of(parse("alpha = 0.5\nk = \"unit_mode(1)\"\n", Mode::Inverse).unwrap_err()), "k");
    }
}
