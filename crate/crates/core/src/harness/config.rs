//! Run configuration: a flat `key = value` file plus command-line overrides.
//!
//! Grammar (one entry per line):
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value (ws+ comment)?
//! key     := [a-z0-9_]+
//! ```
//!
//! Unknown keys and repeated keys are errors.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Hyperfast,
    NatmiExact,
    Sliding,
    Gd,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperfast" => Ok(Method::Hyperfast),
            "natmi-exact" | "natmi_exact" => Ok(Method::NatmiExact),
            "sliding" => Ok(Method::Sliding),
            "gd" | "gd_baseline" | "gd-baseline" => Ok(Method::Gd),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected hyperfast, natmi-exact, sliding or gd)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Hyperfast => "hyperfast",
            Method::NatmiExact => "natmi-exact",
            Method::Sliding => "sliding",
            Method::Gd => "gd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// `x⁴/4` in one dimension.
    Monomial,
    /// `½‖x‖²`.
    Quadratic,
    /// Seeded `½xᵀQx + ⟨c, x⟩ + (a4/4)‖x‖⁴`.
    Quartic,
    /// The chain `x₁⁴ + Σ (x_i − x_{i−1})⁴`.
    WorstCase,
    /// Ridge-regularized logistic regression.
    Logreg,
    /// `g + h` with `g` a tiny-coefficient quartic and `h` logistic loss plus
    /// a quartic.
    SlidingBench,
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monomial" => Ok(ProblemKind::Monomial),
            "quadratic" => Ok(ProblemKind::Quadratic),
            "quartic" => Ok(ProblemKind::Quartic),
            "worst-case" | "worst_case" => Ok(ProblemKind::WorstCase),
            "logreg" => Ok(ProblemKind::Logreg),
            "sliding-bench" | "sliding_bench" => Ok(ProblemKind::SlidingBench),
            other => Err(Error::Config(format!("unknown problem '{other}'"))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Monomial => "monomial",
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Quartic => "quartic",
            ProblemKind::WorstCase => "worst-case",
            ProblemKind::Logreg => "logreg",
            ProblemKind::SlidingBench => "sliding-bench",
        })
    }
}

/// Where the reference optimal value comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FstarSpec {
    /// Known closed form or committed fixture, else none.
    Auto,
    Value(f64),
    /// Computed by a long damped-Newton run.
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub a4: f64,
    pub ridge: f64,
    pub dataset: Option<PathBuf>,
    /// `L3(g)/L3(h)` for the sliding benchmark.
    pub l3_ratio: f64,
    /// Starting point scale; `None` picks the problem default.
    pub x0_scale: Option<f64>,
    pub eps: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub gamma: f64,
    pub xi: f64,
    pub c_delta: f64,
    pub middle_max_iters: usize,
    pub seed: u64,
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub timing: bool,
    pub fit_lo: usize,
    pub fit_hi: usize,
    pub fstar: FstarSpec,
}

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "problem",
    "method",
    "n",
    "m",
    "a4",
    "ridge",
    "dataset",
    "l3_ratio",
    "x0_scale",
    "eps",
    "max_iters",
    "grad_tol",
    "gamma",
    "xi",
    "c_delta",
    "middle_max_iters",
    "seed",
    "trace",
    "summary",
    "timing",
    "fit_lo",
    "fit_hi",
    "fstar",
];

impl RunConfig {
    pub fn new(problem: ProblemKind) -> Self {
        Self {
            problem,
            method: Method::Hyperfast,
            n: 10,
            m: 200,
            a4: 1.0,
            ridge: 1e-3,
            dataset: None,
            l3_ratio: 1e-3,
            x0_scale: None,
            eps: 1e-10,
            max_iters: 30,
            grad_tol: 0.0,
            gamma: 1.0 / 6.0,
            xi: 1.5,
            c_delta: 1.0,
            middle_max_iters: 200,
            seed: 0,
            trace: None,
            summary: None,
            timing: false,
            fit_lo: 3,
            fit_hi: 30,
            fstar: FstarSpec::Auto,
        }
    }

    /// Build from parsed entries; `problem` is required.
    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for (k, _) in entries {
            if !seen.insert(k.as_str()) {
                return Err(Error::Config(format!("duplicate key '{k}'")));
            }
        }
        let problem = entries
            .iter()
            .find(|(k, _)| k == "problem")
            .ok_or_else(|| Error::Config("missing required key 'problem'".into()))?
            .1
            .parse()?;
        let mut cfg = Self::new(problem);
        for (k, v) in entries {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_entries(&parse_entries(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value '{v}' for '{key}'")))
        }
        match key {
            "problem" => self.problem = value.parse()?,
            "method" => self.method = value.parse()?,
            "n" => self.n = num(key, value)?,
            "m" => self.m = num(key, value)?,
            "a4" => self.a4 = num(key, value)?,
            "ridge" => self.ridge = num(key, value)?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "l3_ratio" => self.l3_ratio = num(key, value)?,
            "x0_scale" => self.x0_scale = Some(num(key, value)?),
            "eps" => self.eps = num(key, value)?,
            "max_iters" => self.max_iters = num(key, value)?,
            "grad_tol" => self.grad_tol = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "xi" => self.xi = num(key, value)?,
            "c_delta" => self.c_delta = num(key, value)?,
            "middle_max_iters" => self.middle_max_iters = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "trace" => self.trace = Some(PathBuf::from(value)),
            "summary" => self.summary = Some(PathBuf::from(value)),
            "timing" => self.timing = num(key, value)?,
            "fit_lo" => self.fit_lo = num(key, value)?,
            "fit_hi" => self.fit_hi = num(key, value)?,
            "fstar" => {
                self.fstar = match value {
                    "auto" => FstarSpec::Auto,
                    "reference" => FstarSpec::Reference,
                    v => FstarSpec::Value(num(key, v)?),
                }
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Range and consistency checks that do not need the problem built.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 || self.m == 0 {
            return bad("n and m must be positive".into());
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.grad_tol >= 0.0) {
            return bad(format!("grad_tol must be >= 0, got {}", self.grad_tol));
        }
        if !(self.a4 >= 0.0) || !(self.ridge >= 0.0) {
            return bad("a4 and ridge must be >= 0".into());
        }
        if !(self.l3_ratio > 0.0) {
            return bad(format!("l3_ratio must be positive, got {}", self.l3_ratio));
        }
        if !(self.c_delta > 0.0) {
            return bad(format!("c_delta must be positive, got {}", self.c_delta));
        }
        if self.fit_lo < 1 || self.fit_hi <= self.fit_lo {
            return bad("fit window needs 1 <= fit_lo < fit_hi".into());
        }
        if self.method == Method::Sliding && self.problem != ProblemKind::SlidingBench {
            return bad(format!(
                "method sliding needs a composite problem (sliding-bench), got {}",
                self.problem
            ));
        }
        if self.dataset.is_some() && self.problem != ProblemKind::Logreg {
            return bad("dataset is only used by problem logreg".into());
        }
        Ok(())
    }

    /// The effective configuration as `key = value` pairs, in [`KEYS`] order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let opt_path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or("-".to_string(), |p| p.display().to_string())
        };
        let mut out = Vec::new();
        for &k in KEYS {
            let v = match k {
                "problem" => self.problem.to_string(),
                "method" => self.method.to_string(),
                "n" => self.n.to_string(),
                "m" => self.m.to_string(),
                "a4" => format!("{:e}", self.a4),
                "ridge" => format!("{:e}", self.ridge),
                "dataset" => opt_path(&self.dataset),
                "l3_ratio" => format!("{:e}", self.l3_ratio),
                "x0_scale" => self.x0_scale.map_or("default".into(), |v| format!("{v:e}")),
                "eps" => format!("{:e}", self.eps),
                "max_iters" => self.max_iters.to_string(),
                "grad_tol" => format!("{:e}", self.grad_tol),
                "gamma" => format!("{:e}", self.gamma),
                "xi" => format!("{:e}", self.xi),
                "c_delta" => format!("{:e}", self.c_delta),
                "middle_max_iters" => self.middle_max_iters.to_string(),
                "seed" => self.seed.to_string(),
                "trace" => opt_path(&self.trace),
                "summary" => opt_path(&self.summary),
                "timing" => self.timing.to_string(),
                "fit_lo" => self.fit_lo.to_string(),
                "fit_hi" => self.fit_hi.to_string(),
                "fstar" => match self.fstar {
                    FstarSpec::Auto => "auto".into(),
                    FstarSpec::Reference => "reference".into(),
                    FstarSpec::Value(v) => format!("{v:e}"),
                },
                _ => unreachable!("every key is echoed"),
            };
            out.push((k.to_string(), v));
        }
        out
    }
}

/// Split config text into `(key, value)` entries.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
        let key = key.trim();
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        {
            return Err(Error::Config(format!(
                "line {}: invalid key '{key}'",
                i + 1
            )));
        }
        let value = match value.find(" #").or_else(|| value.find("\t#")) {
            Some(pos) => &value[..pos],
            None => value,
        }
        .trim();
        if value.is_empty() {
            return Err(Error::Config(format!(
                "line {}: empty value for '{key}'",
                i + 1
            )));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_comments() {
        let text = "# run\nproblem = logreg\nmethod=gd   # baseline\n\nseed = 7\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.problem, ProblemKind::Logreg);
        assert_eq!(cfg.method, Method::Gd);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_text("method = gd\n").is_err());
        assert!(RunConfig::from_text("problem = quartic\nbogus = 1\n").is_err());
        assert!(RunConfig::from_text("problem = quartic\nseed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::from_text("problem = quartic\nseed = x\n").is_err());
        assert!(RunConfig::from_text("problem = quartic\njunk line\n").is_err());
        assert!(RunConfig::from_text("problem = nope\n").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::new(ProblemKind::Quartic);
        assert!(cfg.validate().is_ok());
        cfg.method = Method::Sliding;
        assert!(cfg.validate().is_err());
        cfg.method = Method::Hyperfast;
        cfg.eps = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::new(ProblemKind::SlidingBench);
        cfg.method = Method::Sliding;
        cfg.fstar = FstarSpec::Value(0.25);
        let echoed: Vec<(String, String)> = cfg
            .echo()
            .into_iter()
            .filter(|(_, v)| v != "-" && v != "default")
            .collect();
        assert_eq!(RunConfig::from_entries(&echoed).unwrap(), cfg);
    }
}
