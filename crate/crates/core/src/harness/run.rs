//! Building problems from a [`RunConfig`], running a method, and writing the
//! trace and summary files.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::baseline::{baseline_gd, GdConfig};
use super::config::{FstarSpec, Method, ProblemKind, RunConfig};
use super::fit::fit_rate;
use super::reference::{reference_fstar, REFERENCE_BUDGET};
use crate::bdgm::BdgmConfig;
use crate::error::{Error, Result};
use crate::natmi::{self, predicted_sigma, validate_params, NatmiConfig, NatmiRun, Subsolver};
use crate::oracle::{CountedOracle, Oracle, Point, SumOracle};
use crate::problems::{
    load_libsvm, make_logreg, make_quartic, make_worst_case, quarter_quartic, random_quartic,
    synth_logreg,
};
use crate::rng::SeededStream;
use crate::sliding::{solve_sliding, CompositeProblem, SharedOracle, SlidingConfig};
use crate::trace::{write_csv, ComponentCounts, TraceRecord};

/// Committed reference optimal values (see `fixtures/fstar.txt`).
pub const FSTAR_FIXTURE: &str = include_str!("../../fixtures/fstar.txt");

/// Look up a logistic-regression optimal value in [`FSTAR_FIXTURE`].
///
/// Lines look like `logreg seed=7 m=200 n=20 ridge=1e-3 fstar=0.5`.
pub fn fixture_fstar(seed: u64, m: usize, n: usize, ridge: f64) -> Option<f64> {
    parse_fixture(FSTAR_FIXTURE)
        .into_iter()
        .find(|e| e.seed == seed && e.m == m && e.n == n && e.ridge == ridge)
        .map(|e| e.fstar)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureEntry {
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub ridge: f64,
    pub fstar: f64,
}

/// Parse fixture text; malformed lines are skipped.
pub fn parse_fixture(text: &str) -> Vec<FixtureEntry> {
    let mut out = Vec::new();
    for line in text.lines().map(str::trim) {
        let mut words = line.split_whitespace();
        if words.next() != Some("logreg") {
            continue;
        }
        let mut e = FixtureEntry {
            seed: 0,
            m: 0,
            n: 0,
            ridge: f64::NAN,
            fstar: f64::NAN,
        };
        let mut ok = true;
        for w in words {
            let Some((k, v)) = w.split_once('=') else {
                ok = false;
                break;
            };
            ok &= match k {
                "seed" => v.parse().map(|x| e.seed = x).is_ok(),
                "m" => v.parse().map(|x| e.m = x).is_ok(),
                "n" => v.parse().map(|x| e.n = x).is_ok(),
                "ridge" => v.parse().map(|x| e.ridge = x).is_ok(),
                "fstar" => v.parse().map(|x| e.fstar = x).is_ok(),
                _ => false,
            };
        }
        if ok && e.fstar.is_finite() && e.ridge.is_finite() {
            out.push(e);
        }
    }
    out
}

/// The objective of a run.
pub enum Objective {
    Single(SharedOracle),
    /// `g + h` with the raw parts and the counted composite.
    Composite {
        g: SharedOracle,
        h: SharedOracle,
        problem: CompositeProblem,
    },
}

impl Objective {
    /// The whole objective as one oracle.
    pub fn total(&self) -> Result<SharedOracle> {
        match self {
            Objective::Single(o) => Ok(o.clone()),
            Objective::Composite { g, h, .. } => {
                Ok(Arc::new(SumOracle::new(g.clone(), h.clone())?))
            }
        }
    }
}

pub struct BuiltProblem {
    pub objective: Objective,
    pub x0: Point,
    /// Optimal value and where it came from, when known without solving.
    pub fstar: Option<(f64, &'static str)>,
}

fn seeded_start(seed: u64, n: usize, scale: f64) -> Point {
    // offset the stream so the start is independent of the problem draw
    Point::from_vec(SeededStream::new(seed ^ 0x5eed_57a7).normals(n)) * scale
}

/// Construct the objective, starting point and closed-form `f*` for `cfg`.
pub fn build_problem(cfg: &RunConfig) -> Result<BuiltProblem> {
    cfg.validate()?;
    let config_err = |e: Error| Error::Config(format!("problem {}: {e}", cfg.problem));
    let n = cfg.n;
    let built = match cfg.problem {
        ProblemKind::Monomial => BuiltProblem {
            objective: Objective::Single(Arc::new(quarter_quartic())),
            x0: Point::from_element(1, cfg.x0_scale.unwrap_or(1.0)),
            fstar: Some((0.0, "closed form")),
        },
        ProblemKind::Quadratic => {
            let f =
                make_quartic(DMatrix::identity(n, n), Point::zeros(n), 0.0).map_err(config_err)?;
            let mut x0 = Point::zeros(n);
            x0[0] = cfg.x0_scale.unwrap_or(1.0);
            BuiltProblem {
                objective: Objective::Single(Arc::new(f)),
                x0,
                fstar: Some((0.0, "closed form")),
            }
        }
        ProblemKind::Quartic => {
            let f = random_quartic(cfg.seed, n, cfg.a4, 1.0).map_err(config_err)?;
            BuiltProblem {
                objective: Objective::Single(Arc::new(f)),
                x0: cfg
                    .x0_scale
                    .map_or_else(|| Point::zeros(n), |s| seeded_start(cfg.seed, n, s)),
                fstar: None,
            }
        }
        ProblemKind::WorstCase => BuiltProblem {
            objective: Objective::Single(Arc::new(make_worst_case(3, n).map_err(config_err)?)),
            x0: Point::from_element(n, cfg.x0_scale.unwrap_or(1.0)),
            fstar: Some((0.0, "closed form")),
        },
        ProblemKind::Logreg => {
            let (data, fixture) = match &cfg.dataset {
                Some(path) => (load_libsvm(path).map_err(config_err)?, None),
                None => (
                    synth_logreg(cfg.seed, cfg.m, n).map_err(config_err)?,
                    fixture_fstar(cfg.seed, cfg.m, n, cfg.ridge),
                ),
            };
            let dim = data.n();
            let f = make_logreg(data, cfg.ridge).map_err(config_err)?;
            BuiltProblem {
                objective: Objective::Single(Arc::new(f)),
                x0: cfg
                    .x0_scale
                    .map_or_else(|| Point::zeros(dim), |s| seeded_start(cfg.seed, dim, s)),
                fstar: fixture.map(|v| (v, "fixture")),
            }
        }
        ProblemKind::SlidingBench => {
            let data = synth_logreg(cfg.seed, cfg.m, n).map_err(config_err)?;
            let loss = make_logreg(data, cfg.ridge).map_err(config_err)?;
            let quart =
                make_quartic(DMatrix::zeros(n, n), Point::zeros(n), 1.0).map_err(config_err)?;
            let h: SharedOracle = Arc::new(SumOracle::new(loss, quart).map_err(config_err)?);
            let a4_g = cfg.l3_ratio * h.lipschitz_l3() / 6.0;
            let g: SharedOracle = Arc::new(
                random_quartic(cfg.seed.wrapping_add(1), n, a4_g, 1.0).map_err(config_err)?,
            );
            let problem = CompositeProblem::new(g.clone(), h.clone()).map_err(config_err)?;
            BuiltProblem {
                objective: Objective::Composite { g, h, problem },
                x0: cfg
                    .x0_scale
                    .map_or_else(|| Point::zeros(n), |s| seeded_start(cfg.seed, n, s)),
                fstar: None,
            }
        }
    };
    Ok(built)
}

/// Solver settings for the accelerated methods.
pub fn natmi_config(cfg: &RunConfig) -> NatmiConfig {
    NatmiConfig {
        gamma: cfg.gamma,
        xi: cfg.xi,
        eps: cfg.eps,
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        subsolver: if cfg.method == Method::NatmiExact {
            Subsolver::Exact
        } else {
            Subsolver::Bdgm
        },
        bdgm: BdgmConfig {
            gamma: cfg.gamma,
            c_delta: cfg.c_delta,
            ..BdgmConfig::default()
        },
        timing: cfg.timing,
        ..NatmiConfig::default()
    }
}

/// End-of-run report.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub problem: String,
    pub method: String,
    pub stop: String,
    pub iterations: usize,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub n_grad: u64,
    pub n_hess: u64,
    pub components: Option<ComponentCounts>,
    pub max_grad_norm: f64,
    pub max_hess_norm: f64,
    pub fstar: Option<f64>,
    pub fstar_source: String,
    pub final_gap: Option<f64>,
    /// Fitted slope of `ln(f_k − f*)` vs `ln k`, or why there is none.
    pub slope: std::result::Result<f64, String>,
    pub sigma_predicted: Option<f64>,
    pub sigma_max: Option<f64>,
    pub window_min: Option<f64>,
    pub window_max: Option<f64>,
    /// `‖y_K − x₀‖`, a lower proxy for the distance to the solution set.
    pub r_hat: f64,
    pub error: Option<String>,
    pub config: Vec<(String, String)>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.16e}"))
}

impl Summary {
    /// `key = value` lines, parseable with the config grammar.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("problem", self.problem.clone());
        kv("method", self.method.clone());
        kv("stop", self.stop.clone());
        kv("iterations", self.iterations.to_string());
        kv("final_f", format!("{:.16e}", self.final_f));
        kv("final_grad_norm", format!("{:.16e}", self.final_grad_norm));
        kv("n_grad", self.n_grad.to_string());
        kv("n_hess", self.n_hess.to_string());
        if let Some(c) = self.components {
            kv("n_grad_g", c.grad_g.to_string());
            kv("n_hess_g", c.hess_g.to_string());
            kv("n_grad_h", c.grad_h.to_string());
            kv("n_hess_h", c.hess_h.to_string());
        }
        kv("max_grad_norm", format!("{:.16e}", self.max_grad_norm));
        kv("max_hess_norm", format!("{:.16e}", self.max_hess_norm));
        kv("fstar", opt(self.fstar));
        kv("fstar_source", self.fstar_source.clone());
        kv("final_gap", opt(self.final_gap));
        match &self.slope {
            Ok(v) => kv("slope", format!("{v:.16e}")),
            Err(why) => {
                kv("slope", "-".into());
                kv("slope_note", why.clone());
            }
        }
        kv("sigma_predicted", opt(self.sigma_predicted));
        kv("sigma_max", opt(self.sigma_max));
        kv("window_min", opt(self.window_min));
        kv("window_max", opt(self.window_max));
        kv("r_hat", format!("{:.16e}", self.r_hat));
        kv(
            "error",
            self.error
                .clone()
                .unwrap_or_else(|| "-".into())
                .replace('\n', " "),
        );
        for (k, v) in &self.config {
            kv(&format!("config.{k}"), v.clone());
        }
        s
    }
}

/// A finished (or failed) run.
#[derive(Debug)]
pub struct RunOutcome {
    pub trace: Vec<TraceRecord>,
    pub final_point: Point,
    pub summary: Summary,
    /// Per-iteration diagnostics of the accelerated methods.
    pub iterations: Vec<natmi::IterationInfo>,
    /// Set when the solver failed after starting; exit code 3.
    pub error: Option<Error>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.error.is_some() {
            3
        } else {
            0
        }
    }
}

/// Config echo for the trace header: every key except the output paths,
/// so traces written to different files are byte-identical.
pub fn trace_meta(cfg: &RunConfig) -> Vec<(String, String)> {
    cfg.echo()
        .into_iter()
        .filter(|(k, _)| k != "trace" && k != "summary")
        .collect()
}

/// Run the configured method without touching the filesystem (except to
/// read a dataset). `Err` means the configuration or problem could not be
/// built (exit code 2).
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let problem = build_problem(cfg)?;
    let ncfg = natmi_config(cfg);
    if cfg.method != Method::Gd {
        validate_params(&ncfg).map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Objective::Composite { problem: p, .. } = &problem.objective {
        if p.swapped() {
            eprintln!(
                "warning: L3(g) > L3(h); swapping the components so that g is the smoother part"
            );
        }
    }
    let total = problem.objective.total()?;
    let x0 = problem.x0.clone();
    let (trace, final_point, iterations, stop, error) = match cfg.method {
        Method::Hyperfast | Method::NatmiExact => {
            let run = natmi::solve(&ncfg, &*total, x0.clone())?;
            unpack(run)
        }
        Method::Sliding => {
            let Objective::Composite { problem: p, .. } = &problem.objective else {
                return Err(Error::Config(
                    "method sliding needs a composite problem".into(),
                ));
            };
            let scfg = SlidingConfig {
                natmi: ncfg.clone(),
                middle_max_iters: cfg.middle_max_iters,
            };
            let (run, _) = solve_sliding(p, x0.clone(), &scfg)?;
            unpack(run)
        }
        Method::Gd => {
            let counted = CountedOracle::new(total.clone());
            let gcfg = GdConfig {
                max_iters: cfg.max_iters,
                grad_tol: cfg.grad_tol,
                timing: cfg.timing,
            };
            let run = baseline_gd(&counted, x0.clone(), &gcfg)?;
            let stop = if run.error.is_some() {
                "failed"
            } else if run.trace.last().is_some_and(|r| r.k >= cfg.max_iters) {
                "max_iters"
            } else {
                "grad_tol"
            };
            (run.trace, run.x, Vec::new(), stop.to_string(), run.error)
        }
    };

    let (fstar, fstar_source) = match cfg.fstar {
        FstarSpec::Value(v) => (Some(v), "config".to_string()),
        FstarSpec::Auto => match problem.fstar {
            Some((v, src)) => (Some(v), src.to_string()),
            None => (None, "unknown".to_string()),
        },
        FstarSpec::Reference => {
            let start = if final_point.iter().all(|v| v.is_finite()) {
                &final_point
            } else {
                &x0
            };
            match reference_fstar(&*total, start, REFERENCE_BUDGET) {
                Ok(r) => (Some(r.f), "reference".to_string()),
                Err(e) => (None, format!("reference failed: {e}")),
            }
        }
    };
    let summary = summarize(
        cfg,
        &trace,
        &iterations,
        &final_point,
        &x0,
        stop,
        fstar,
        fstar_source,
        &error,
    );
    Ok(RunOutcome {
        trace,
        final_point,
        summary,
        iterations,
        error,
    })
}

type Unpacked = (
    Vec<TraceRecord>,
    Point,
    Vec<natmi::IterationInfo>,
    String,
    Option<Error>,
);

fn unpack(run: NatmiRun) -> Unpacked {
    let stop = format!("{:?}", run.stop).to_lowercase();
    (run.trace, run.y, run.iterations, stop, run.error)
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    cfg: &RunConfig,
    trace: &[TraceRecord],
    iterations: &[natmi::IterationInfo],
    final_point: &Point,
    x0: &Point,
    stop: String,
    fstar: Option<f64>,
    fstar_source: String,
    error: &Option<Error>,
) -> Summary {
    let last = trace.last();
    let slope = match fstar {
        None => Err("optimal value unknown".to_string()),
        Some(fs) => fit_rate(trace, cfg.fit_lo, cfg.fit_hi, fs).map_err(|e| e.to_string()),
    };
    let accelerated = cfg.method != Method::Gd;
    let fold = |f: fn(f64, f64) -> f64, init: f64, v: &dyn Fn(&natmi::IterationInfo) -> f64| {
        if iterations.is_empty() {
            None
        } else {
            Some(iterations.iter().map(v).fold(init, f))
        }
    };
    Summary {
        problem: cfg.problem.to_string(),
        method: cfg.method.to_string(),
        stop,
        iterations: last.map_or(0, |r| r.k),
        final_f: last.map_or(f64::NAN, |r| r.f),
        final_grad_norm: last.map_or(f64::NAN, |r| r.grad_norm),
        n_grad: last.map_or(0, |r| r.n_grad),
        n_hess: last.map_or(0, |r| r.n_hess),
        components: last.and_then(|r| r.components),
        max_grad_norm: last.map_or(0.0, |r| r.max_grad_norm),
        max_hess_norm: last.map_or(0.0, |r| r.max_hess_norm),
        fstar,
        fstar_source,
        final_gap: fstar.and_then(|fs| last.map(|r| r.f - fs)),
        slope,
        sigma_predicted: accelerated.then(|| predicted_sigma(3, cfg.gamma, cfg.xi)),
        sigma_max: fold(f64::max, f64::NEG_INFINITY, &|i| i.sigma_observed),
        window_min: fold(f64::min, f64::INFINITY, &|i| i.window),
        window_max: fold(f64::max, f64::NEG_INFINITY, &|i| i.window),
        r_hat: (final_point - x0).norm(),
        error: error.as_ref().map(|e| e.to_string()),
        config: cfg.echo(),
    }
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Write the trace CSV (with an error footer on failure) and the summary to
/// the configured paths.
pub fn write_outputs(cfg: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    if let Some(path) = &cfg.trace {
        let err = outcome.error.as_ref().map(|e| e.to_string());
        write_file(path, |w| {
            write_csv(w, &trace_meta(cfg), &outcome.trace, err.as_deref())
        })?;
    }
    if let Some(path) = &cfg.summary {
        let text = outcome.summary.to_text();
        write_file(path, |w| w.write_all(text.as_bytes()))?;
    }
    Ok(())
}

/// [`execute`] followed by [`write_outputs`].
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let outcome = execute(cfg)?;
    write_outputs(cfg, &outcome)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_parsing() {
        let text =
            "# c\nlogreg seed=7 m=200 n=20 ridge=1e-3 fstar=0.5\nlogreg seed=x\nquartic a=1\n";
        let e = parse_fixture(text);
        assert_eq!(e.len(), 1);
        assert_eq!(
            e[0],
            FixtureEntry {
                seed: 7,
                m: 200,
                n: 20,
                ridge: 1e-3,
                fstar: 0.5
            }
        );
    }

    #[test]
    fn committed_fixture_matches_recomputation() {
        let f = make_logreg(synth_logreg(7, 200, 20).unwrap(), 1e-3).unwrap();
        let sol = reference_fstar(&f, &Point::zeros(20), REFERENCE_BUDGET).unwrap();
        let committed = fixture_fstar(7, 200, 20, 1e-3).expect("fixture line present");
        assert!(
            (sol.f - committed).abs() <= 1e-14 * committed.abs(),
            "{} vs {committed}",
            sol.f
        );
    }

    #[test]
    fn gd_quadratic_run() {
        let mut cfg = RunConfig::new(ProblemKind::Quadratic);
        cfg.method = Method::Gd;
        cfg.max_iters = 100;
        cfg.n = 3;
        let out = execute(&cfg).unwrap();
        assert!(out.error.is_none());
        assert_eq!(out.summary.fstar, Some(0.0));
        // ½‖x‖² with step ≈ 1 lands on the minimizer in one step
        assert!(out.trace.len() >= 2);
        assert!(out.trace[1].f <= 1e-28);
        assert!(out.trace.windows(2).all(|w| w[1].f <= w[0].f));
    }

    #[test]
    fn hyperfast_monomial_summary() {
        let mut cfg = RunConfig::new(ProblemKind::Monomial);
        cfg.max_iters = 10;
        let out = execute(&cfg).unwrap();
        assert!(out.error.is_none(), "{:?}", out.error);
        let s = &out.summary;
        assert!(s.sigma_max.unwrap() <= 0.6 + 1e-8);
        assert!(s.window_min.unwrap() >= 0.5 && s.window_max.unwrap() <= 0.75);
        assert!(s.final_gap.unwrap() < 1e-6);
        let text = s.to_text();
        assert!(text.contains("method = hyperfast\n"));
        assert!(text.contains("config.eps = "));
    }

    #[test]
    fn sliding_requires_composite() {
        let mut cfg = RunConfig::new(ProblemKind::Quartic);
        cfg.method = Method::Sliding;
        assert!(matches!(execute(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_parameters_are_config_errors() {
        let mut cfg = RunConfig::new(ProblemKind::Monomial);
        cfg.gamma = 0.5;
        cfg.xi = 1.0;
        assert!(matches!(execute(&cfg), Err(Error::Config(_))));
    }
}
