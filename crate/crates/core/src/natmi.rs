//! The accelerated outer loop for third-order tensor steps.
//!
//! Each iteration picks `λ > 0`, forms
//!
//! ```text
//! a  = (λ + √(λ² + 4λA)) / 2,      x̃ = (A·y + a·x) / (A + a),
//! ```
//!
//! solves the regularized model at `x̃` inexactly to get `y'`, and accepts
//! `λ` when `½ ≤ λ·H‖y' − x̃‖²/2 ≤ ¾`. Then `x ← x − a∇f(y')`, `A ← A + a`,
//! `y ← y'`.
//!
//! The subproblem solver is pluggable through [`Subproblem`]: the Hyperfast
//! method uses the Bregman-distance gradient method (gradients and one
//! Hessian per anchor), the reference variant uses an exact Newton solve of
//! the model.

use std::time::Instant;

use crate::bdgm::{setup_from_parts, BdgmConfig, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::oracle::{check_dim, ensure_finite_vec, sym_opnorm, CountedOracle, Oracle, Point};
use crate::taylor::{ModelSpec, MODEL_ORDER};
use crate::trace::{ComponentCounts, TraceRecord};

/// Default scaling `ξ` of the regularization `H = ξ·L3`.
pub const DEFAULT_XI: f64 = 1.5;

/// Midpoint of the acceptance window, used for the first iteration.
pub const WINDOW_TARGET: f64 = 0.625;
pub const WINDOW_LO: f64 = 0.5;
pub const WINDOW_HI: f64 = 0.75;

/// Relative model-gradient tolerance of the exact subproblem solve.
pub const EXACT_RTOL: f64 = 1e-10;

/// Which inner solver produces `y ∈ N^γ(x̃)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Subsolver {
    /// Bregman-distance gradient method: no third derivatives.
    #[default]
    Bdgm,
    /// Damped Newton on the model, to near machine precision.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NatmiConfig {
    pub p: u32,
    pub gamma: f64,
    pub xi: f64,
    /// Target accuracy; enters the inner accuracy of BDGM.
    pub eps: f64,
    /// Outer iteration cap `K_max`.
    pub max_iters: usize,
    /// Stop once `‖∇f(y_k)‖ ≤ grad_tol`.
    pub grad_tol: f64,
    /// λ bracket growth factor.
    pub lambda_growth: f64,
    pub max_expansions: usize,
    pub max_bisections: usize,
    pub subsolver: Subsolver,
    pub bdgm: BdgmConfig,
    /// Fill `wall_ms`; off by default so traces are reproducible.
    pub timing: bool,
}

impl Default for NatmiConfig {
    fn default() -> Self {
        Self {
            p: MODEL_ORDER,
            gamma: DEFAULT_GAMMA,
            xi: DEFAULT_XI,
            eps: 1e-8,
            max_iters: 100,
            grad_tol: 0.0,
            lambda_growth: 2.0,
            max_expansions: 60,
            max_bisections: 100,
            subsolver: Subsolver::Bdgm,
            bdgm: BdgmConfig::default(),
            timing: false,
        }
    }
}

/// Outcome of [`validate_params`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamReport {
    /// Contraction factor predicted for the accepted steps.
    pub sigma: f64,
    /// `2γ + 1/(ξ(p+1))`, which must not exceed 1.
    pub contraction_lhs: f64,
}

/// `σ = (pξ + 1 − ξ + 2γξ) / ((1 − γ)·2pξ)`.
pub fn predicted_sigma(p: u32, gamma: f64, xi: f64) -> f64 {
    let p = p as f64;
    (p * xi + 1.0 - xi + 2.0 * gamma * xi) / ((1.0 - gamma) * 2.0 * p * xi)
}

/// Check `1 ≥ 2γ + 1/(ξ(p+1))`, `γ ∈ [0, 1)`, `ξ ≥ 1` and `p = 3`.
pub fn validate_params(cfg: &NatmiConfig) -> Result<ParamReport> {
    if cfg.p != MODEL_ORDER {
        return Err(Error::UnsupportedOrder(cfg.p));
    }
    let (gamma, xi) = (cfg.gamma, cfg.xi);
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Parameters(format!(
            "gamma must lie in [0, 1), got {gamma}"
        )));
    }
    if !(xi >= 1.0) || !xi.is_finite() {
        return Err(Error::Parameters(format!(
            "H = xi*L3 >= L3 requires xi >= 1, got {xi}"
        )));
    }
    let contraction_lhs = 2.0 * gamma + 1.0 / (xi * (cfg.p as f64 + 1.0));
    if contraction_lhs > 1.0 {
        return Err(Error::Parameters(format!(
            "contraction condition 1 >= 2*gamma + 1/(xi*(p+1)) fails: {contraction_lhs} > 1"
        )));
    }
    if !(cfg.eps > 0.0) {
        return Err(Error::Parameters(format!(
            "eps must be positive, got {}",
            cfg.eps
        )));
    }
    if !(cfg.lambda_growth > 1.0) {
        return Err(Error::Parameters(
            "lambda growth factor must exceed 1".into(),
        ));
    }
    Ok(ParamReport {
        sigma: predicted_sigma(cfg.p, gamma, xi),
        contraction_lhs,
    })
}

/// `λ·H·r²/2` for `H = 3·L3/2`, i.e. `λ·3L3r²/4`.
pub fn window_value(lambda: f64, r: f64, l3: f64) -> f64 {
    lambda * 3.0 * l3 * r * r / 4.0
}

/// `½ ≤ λ·3L3r²/4 ≤ ¾`.
pub fn lambda_window(lambda: f64, r: f64, l3: f64) -> bool {
    in_window(window_value(lambda, r, l3))
}

fn in_window(w: f64) -> bool {
    (WINDOW_LO..=WINDOW_HI).contains(&w)
}

/// The positive root of `a² = λ(A + a)`.
pub fn step_weight(lambda: f64, a_acc: f64) -> f64 {
    (lambda + (lambda * lambda + 4.0 * lambda * a_acc).sqrt()) / 2.0
}

/// An inexact model solution at an anchor.
#[derive(Debug, Clone)]
pub struct SubSolution {
    pub y: Point,
    pub grad_y: Point,
    pub inner_iters: u64,
    pub anchor_grad_norm: f64,
    pub anchor_hess_norm: f64,
    /// `∇f(x̃) = 0`; then `y = x̃`.
    pub stationary_anchor: bool,
}

/// Produces `y ∈ N^γ(x̃)` for a given anchor `x̃`.
pub trait Subproblem {
    fn solve_at(&mut self, anchor: &Point) -> Result<SubSolution>;
}

/// BDGM on the model of `oracle` with regularization `H`.
pub struct BdgmSubproblem<'a, O: Oracle + ?Sized> {
    oracle: &'a O,
    eps: f64,
    /// Quartic scale handed to BDGM: `2H/3`.
    l3: f64,
    cfg: BdgmConfig,
}

impl<'a, O: Oracle + ?Sized> BdgmSubproblem<'a, O> {
    pub fn new(oracle: &'a O, reg: f64, eps: f64, cfg: BdgmConfig) -> Self {
        Self {
            oracle,
            eps,
            l3: 2.0 * reg / 3.0,
            cfg,
        }
    }
}

impl<O: Oracle + ?Sized> Subproblem for BdgmSubproblem<'_, O> {
    fn solve_at(&mut self, anchor: &Point) -> Result<SubSolution> {
        let grad = self.oracle.gradient(anchor);
        ensure_finite_vec(&grad, "gradient")?;
        let hess = self.oracle.hessian(anchor);
        let mut st = setup_from_parts(
            self.oracle,
            anchor.clone(),
            grad,
            hess,
            self.eps,
            self.l3,
            self.cfg.clone(),
        )?;
        let out = st.solve()?;
        Ok(SubSolution {
            y: out.z,
            grad_y: out.grad_z,
            inner_iters: out.inner_iters as u64,
            anchor_grad_norm: st.grad_anchor().norm(),
            anchor_hess_norm: st.hess_norm(),
            stationary_anchor: st.is_stationary(),
        })
    }
}

/// Newton's method on the model of `oracle` with regularization `H`.
///
/// When `γ > 0` and the computed minimizer fails `‖∇Ω̃(y)‖ ≤ γ‖∇f(y)‖`
/// without the absolute slack of the membership test, the gradients are at
/// roundoff level and the solve reports [`Error::AccuracyFloor`].
pub struct ExactSubproblem<'a, O: Oracle + ?Sized> {
    oracle: &'a O,
    reg: f64,
    gamma: f64,
}

impl<'a, O: Oracle + ?Sized> ExactSubproblem<'a, O> {
    pub fn new(oracle: &'a O, reg: f64) -> Self {
        Self {
            oracle,
            reg,
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }
}

impl<O: Oracle + ?Sized> Subproblem for ExactSubproblem<'_, O> {
    fn solve_at(&mut self, anchor: &Point) -> Result<SubSolution> {
        let spec = ModelSpec::new(self.oracle, anchor.clone(), MODEL_ORDER, self.reg)?;
        let anchor_grad_norm = spec.grad_anchor().norm();
        let anchor_hess_norm = sym_opnorm(spec.hess_anchor());
        if anchor_grad_norm == 0.0 {
            return Ok(SubSolution {
                y: anchor.clone(),
                grad_y: spec.grad_anchor().clone(),
                inner_iters: 0,
                anchor_grad_norm,
                anchor_hess_norm,
                stationary_anchor: true,
            });
        }
        // relative to the anchor gradient so steps stay resolvable near the optimum
        let (y, iters) = spec.exact_model_min_counted(Some(EXACT_RTOL * anchor_grad_norm))?;
        let grad_y = self.oracle.gradient(&y);
        ensure_finite_vec(&grad_y, "gradient")?;
        let residual = spec.model_grad(&y)?.norm();
        let grad_norm = grad_y.norm();
        if self.gamma > 0.0 && residual > self.gamma * grad_norm {
            return Err(Error::AccuracyFloor {
                grad_norm,
                floor: residual / self.gamma,
                point: y.iter().copied().collect(),
            });
        }
        Ok(SubSolution {
            y,
            grad_y,
            inner_iters: iters as u64,
            anchor_grad_norm,
            anchor_hess_norm,
            stationary_anchor: false,
        })
    }
}

/// Cumulative call counts reported in the trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountSnapshot {
    pub n_grad: u64,
    pub n_hess: u64,
    pub components: Option<ComponentCounts>,
}

/// What the outer loop needs from the objective besides the subproblem.
pub trait Objective {
    fn value(&self, y: &Point) -> f64;
    fn gradient(&self, y: &Point) -> Point;
    fn counts(&self) -> CountSnapshot;
}

/// An oracle whose calls are counted, as an [`Objective`].
pub struct Metered<'o, O: Oracle>(pub &'o CountedOracle<O>);

impl<O: Oracle> Objective for Metered<'_, O> {
    fn value(&self, y: &Point) -> f64 {
        self.0.value(y)
    }

    fn gradient(&self, y: &Point) -> Point {
        self.0.gradient(y)
    }

    fn counts(&self) -> CountSnapshot {
        let c = self.0.counts();
        CountSnapshot {
            n_grad: c.grad,
            n_hess: c.hess,
            components: None,
        }
    }
}

/// Any oracle as an [`Objective`] that reports no counts.
pub struct Unmetered<'o, O: Oracle + ?Sized>(pub &'o O);

impl<O: Oracle + ?Sized> Objective for Unmetered<'_, O> {
    fn value(&self, y: &Point) -> f64 {
        self.0.value(y)
    }

    fn gradient(&self, y: &Point) -> Point {
        self.0.gradient(y)
    }

    fn counts(&self) -> CountSnapshot {
        CountSnapshot::default()
    }
}

/// Accumulator, dual and primal iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub a_acc: f64,
    pub x: Point,
    pub y: Point,
    pub grad_y: Point,
    pub k: usize,
    /// λ accepted in the last iteration (warm start for the next search).
    pub lambda: Option<f64>,
}

impl SolverState {
    pub fn new(x0: Point, grad_x0: Point) -> Self {
        Self {
            a_acc: 0.0,
            x: x0.clone(),
            y: x0,
            grad_y: grad_x0,
            k: 0,
            lambda: None,
        }
    }
}

/// Result of one λ search.
#[derive(Debug, Clone)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub a: f64,
    pub anchor: Point,
    pub sol: SubSolution,
    /// `λ·H‖y − x̃‖²/2` at the accepted λ.
    pub window: f64,
    pub trials: usize,
    /// Inner iterations summed over all trials.
    pub inner_iters: u64,
    pub max_grad_norm: f64,
    pub max_hess_norm: f64,
}

impl LambdaChoice {
    pub fn radius(&self) -> f64 {
        (&self.sol.y - &self.anchor).norm()
    }
}

struct Trial {
    lambda: f64,
    a: f64,
    anchor: Point,
    sol: SubSolution,
    window: f64,
}

/// Find `λ` whose model step lands in the acceptance window.
///
/// With `A = 0` the anchor does not depend on `λ`, so a single solve fixes
/// `r` and `λ` is set to hit the window midpoint. Otherwise the search starts
/// at the previous λ, expands geometrically until the window value brackets
/// `[½, ¾]`, then bisects on `log λ`. A trial whose anchor is stationary ends
/// the search: the anchor is a global minimizer.
pub fn lambda_search<S: Subproblem + ?Sized>(
    cfg: &NatmiConfig,
    sub: &mut S,
    reg: f64,
    state: &SolverState,
) -> Result<LambdaChoice> {
    let mut trials = 0usize;
    let mut inner = 0u64;
    let mut gmax = 0.0_f64;
    let mut hmax = 0.0_f64;
    let mut run = |lambda: f64, trials: &mut usize| -> Result<Trial> {
        let a = step_weight(lambda, state.a_acc);
        let anchor = if state.a_acc == 0.0 {
            state.x.clone()
        } else {
            (&state.y * state.a_acc + &state.x * a) / (state.a_acc + a)
        };
        let sol = sub.solve_at(&anchor)?;
        *trials += 1;
        inner += sol.inner_iters;
        gmax = gmax.max(sol.anchor_grad_norm).max(sol.grad_y.norm());
        hmax = hmax.max(sol.anchor_hess_norm);
        let r = (&sol.y - &anchor).norm();
        let window = lambda * reg * r * r / 2.0;
        Ok(Trial {
            lambda,
            a,
            anchor,
            sol,
            window,
        })
    };

    let accepted = if state.a_acc == 0.0 {
        let t = run(1.0, &mut trials)?;
        if t.sol.stationary_anchor {
            t
        } else {
            let r = (&t.sol.y - &t.anchor).norm();
            if !(r > 0.0) {
                return Err(Error::LambdaSearch(
                    "zero step at a non-stationary starting point".into(),
                ));
            }
            let lambda = WINDOW_TARGET / (reg * r * r / 2.0);
            Trial {
                lambda,
                a: lambda,
                window: WINDOW_TARGET,
                ..t
            }
        }
    } else {
        let start = state.lambda.unwrap_or(1.0);
        let growth = cfg.lambda_growth;
        let first = run(start, &mut trials)?;
        if first.sol.stationary_anchor || in_window(first.window) {
            first
        } else {
            // bracket: lo has window < ½, hi has window > ¾
            let (mut lo, mut hi) = if first.window < WINDOW_LO {
                let mut lo = first;
                let mut found = None;
                for _ in 0..cfg.max_expansions {
                    let t = run(lo.lambda * growth, &mut trials)?;
                    if t.sol.stationary_anchor || t.window >= WINDOW_LO {
                        found = Some(t);
                        break;
                    }
                    lo = t;
                }
                let hi = found.ok_or_else(|| {
                    Error::LambdaSearch(format!(
                        "no upper bracket after {} expansions (lambda = {:e}); L3 may be mis-specified",
                        cfg.max_expansions, lo.lambda
                    ))
                })?;
                (Some(lo), hi)
            } else {
                let mut hi = first;
                let mut found = None;
                for _ in 0..cfg.max_expansions {
                    let t = run(hi.lambda / growth, &mut trials)?;
                    if t.sol.stationary_anchor || t.window <= WINDOW_HI {
                        found = Some(t);
                        break;
                    }
                    hi = t;
                }
                let lo = found.ok_or_else(|| {
                    Error::LambdaSearch(format!(
                        "no lower bracket after {} contractions (lambda = {:e}); L3 may be mis-specified",
                        cfg.max_expansions, hi.lambda
                    ))
                })?;
                (Some(lo), hi)
            };
            // one end of the bracket may already be acceptable
            let lo_ref = lo.as_ref().expect("bracket set");
            if lo_ref.sol.stationary_anchor || in_window(lo_ref.window) {
                lo.take().expect("bracket set")
            } else if hi.sol.stationary_anchor || in_window(hi.window) {
                hi
            } else {
                let mut lo = lo.take().expect("bracket set");
                let mut accepted = None;
                for _ in 0..cfg.max_bisections {
                    let mid = (lo.lambda * hi.lambda).sqrt();
                    let t = run(mid, &mut trials)?;
                    if t.sol.stationary_anchor || in_window(t.window) {
                        accepted = Some(t);
                        break;
                    }
                    if t.window < WINDOW_LO {
                        lo = t;
                    } else {
                        hi = t;
                    }
                }
                accepted.ok_or_else(|| {
                    Error::LambdaSearch(format!(
                        "bisection on lambda in [{:e}, {:e}] did not reach the window in {} steps",
                        lo.lambda, hi.lambda, cfg.max_bisections
                    ))
                })?
            }
        }
    };
    Ok(LambdaChoice {
        lambda: accepted.lambda,
        a: accepted.a,
        anchor: accepted.anchor,
        sol: accepted.sol,
        window: accepted.window,
        trials,
        inner_iters: inner,
        max_grad_norm: gmax,
        max_hess_norm: hmax,
    })
}

/// Per-iteration diagnostics beyond the trace columns.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationInfo {
    pub k: usize,
    pub lambda: f64,
    pub a: f64,
    pub anchor: Point,
    pub y: Point,
    pub radius: f64,
    pub window: f64,
    /// `‖y − (x̃ − λ∇f(y))‖ / ‖y − x̃‖`.
    pub sigma_observed: f64,
    pub trials: usize,
}

/// Apply an accepted λ: `x ← x − a∇f(y')`, `A ← A + a`, `y ← y'`.
pub fn outer_step(state: &SolverState, choice: &LambdaChoice) -> (SolverState, IterationInfo) {
    let y = choice.sol.y.clone();
    let grad_y = choice.sol.grad_y.clone();
    let radius = choice.radius();
    let sigma_observed = if radius > 0.0 {
        let t = &choice.anchor - &grad_y * choice.lambda;
        (&y - t).norm() / radius
    } else {
        0.0
    };
    let next = SolverState {
        a_acc: state.a_acc + choice.a,
        x: &state.x - &grad_y * choice.a,
        y: y.clone(),
        grad_y,
        k: state.k + 1,
        lambda: Some(choice.lambda),
    };
    let info = IterationInfo {
        k: next.k,
        lambda: choice.lambda,
        a: choice.a,
        anchor: choice.anchor.clone(),
        y,
        radius,
        window: choice.window,
        sigma_observed,
        trials: choice.trials,
    };
    (next, info)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradTol,
    MaxIters,
    /// An anchor with `∇f = 0` was found.
    Stationary,
    /// The caller's predicate accepted an iterate.
    Predicate,
    /// The gradient fell below what the inner accuracy can certify.
    AccuracyFloor,
    Failed,
}

/// Everything a run produced; `error` is set when it ended in failure, in
/// which case `trace` holds the rows completed before the failure.
///
/// `y` is the last accepted iterate, except after
/// [`StopReason::AccuracyFloor`], where it is the floor point if that has the
/// smaller gradient.
#[derive(Debug)]
pub struct NatmiRun {
    pub y: Point,
    pub state: SolverState,
    pub trace: Vec<TraceRecord>,
    pub iterations: Vec<IterationInfo>,
    pub stop: StopReason,
    pub params: ParamReport,
    pub error: Option<Error>,
    /// Inner iterate whose gradient fell below the inner accuracy floor.
    pub floor_point: Option<Point>,
}

impl NatmiRun {
    pub fn into_result(self) -> Result<NatmiRun> {
        match self.error {
            Some(_) => {
                let mut run = self;
                Err(run.error.take().expect("checked"))
            }
            None => Ok(self),
        }
    }
}

/// Extra stopping test on `(y, ∇f(y))`.
pub type StopPredicate<'s> = dyn FnMut(&Point, &Point) -> Result<bool> + 's;

/// Options of the generic outer loop.
pub struct LoopOptions<'s> {
    /// Regularization `H` of the models (`ξ·L3`).
    pub reg: f64,
    /// Evaluate `f(y_k)` for the trace (skip to save value calls).
    pub record_values: bool,
    /// Extra stopping test on `(y, ∇f(y))` after each accepted iteration.
    pub stop_when: Option<&'s mut StopPredicate<'s>>,
}

/// The outer loop over any subproblem solver and objective.
pub fn run_outer<S: Subproblem + ?Sized, F: Objective + ?Sized>(
    cfg: &NatmiConfig,
    sub: &mut S,
    objective: &F,
    x0: Point,
    mut opts: LoopOptions<'_>,
) -> Result<NatmiRun> {
    let params = validate_params(cfg)?;
    if !(opts.reg > 0.0) || !opts.reg.is_finite() {
        return Err(Error::Parameters(format!(
            "H must be positive, got {}",
            opts.reg
        )));
    }
    let started = Instant::now();
    let wall = |timing: bool| {
        if timing {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };
    let grad0 = objective.gradient(&x0);
    ensure_finite_vec(&grad0, "gradient")?;
    let value_of = |y: &Point| {
        if opts.record_values {
            objective.value(y)
        } else {
            f64::NAN
        }
    };
    let mut state = SolverState::new(x0.clone(), grad0);
    let mut gmax = state.grad_y.norm();
    let mut hmax = 0.0_f64;
    let counts = objective.counts();
    let mut trace = vec![TraceRecord {
        k: 0,
        f: value_of(&x0),
        grad_norm: gmax,
        step_radius: 0.0,
        lambda: 0.0,
        a_acc: 0.0,
        inner_iters: 0,
        n_grad: counts.n_grad,
        n_hess: counts.n_hess,
        max_grad_norm: gmax,
        max_hess_norm: hmax,
        wall_ms: wall(cfg.timing),
        components: counts.components,
    }];
    let mut iterations = Vec::new();
    let finish = |state: SolverState,
                  trace: Vec<TraceRecord>,
                  iterations: Vec<IterationInfo>,
                  stop: StopReason,
                  error: Option<Error>| NatmiRun {
        y: state.y.clone(),
        state,
        trace,
        iterations,
        stop,
        params,
        error,
        floor_point: None,
    };

    let g0 = state.grad_y.norm();
    if g0 == 0.0 {
        return Ok(finish(
            state,
            trace,
            iterations,
            StopReason::Stationary,
            None,
        ));
    }
    if g0 <= cfg.grad_tol {
        return Ok(finish(state, trace, iterations, StopReason::GradTol, None));
    }
    loop {
        if state.k >= cfg.max_iters {
            return Ok(finish(state, trace, iterations, StopReason::MaxIters, None));
        }
        let choice = match lambda_search(cfg, sub, opts.reg, &state) {
            Ok(c) => c,
            Err(Error::AccuracyFloor { point, .. }) => {
                let point = Point::from_vec(point);
                let better = objective.gradient(&point).norm() < state.grad_y.norm();
                let mut run = finish(state, trace, iterations, StopReason::AccuracyFloor, None);
                if better {
                    run.y = point.clone();
                }
                run.floor_point = Some(point);
                return Ok(run);
            }
            Err(e) => {
                return Ok(finish(
                    state,
                    trace,
                    iterations,
                    StopReason::Failed,
                    Some(e),
                ))
            }
        };
        gmax = gmax.max(choice.max_grad_norm);
        hmax = hmax.max(choice.max_hess_norm);
        let stationary = choice.sol.stationary_anchor;
        let (next, info) = outer_step(&state, &choice);
        state = next;
        let gnorm = state.grad_y.norm();
        gmax = gmax.max(gnorm);
        let counts = objective.counts();
        trace.push(TraceRecord {
            k: state.k,
            f: value_of(&state.y),
            grad_norm: gnorm,
            step_radius: info.radius,
            lambda: info.lambda,
            a_acc: state.a_acc,
            inner_iters: choice.inner_iters,
            n_grad: counts.n_grad,
            n_hess: counts.n_hess,
            max_grad_norm: gmax,
            max_hess_norm: hmax,
            wall_ms: wall(cfg.timing),
            components: counts.components,
        });
        iterations.push(info);
        if stationary || gnorm == 0.0 {
            return Ok(finish(
                state,
                trace,
                iterations,
                StopReason::Stationary,
                None,
            ));
        }
        if gnorm <= cfg.grad_tol {
            return Ok(finish(state, trace, iterations, StopReason::GradTol, None));
        }
        if let Some(pred) = opts.stop_when.as_mut() {
            match pred(&state.y, &state.grad_y) {
                Ok(true) => {
                    return Ok(finish(
                        state,
                        trace,
                        iterations,
                        StopReason::Predicate,
                        None,
                    ))
                }
                Ok(false) => {}
                Err(e) => {
                    return Ok(finish(
                        state,
                        trace,
                        iterations,
                        StopReason::Failed,
                        Some(e),
                    ))
                }
            }
        }
    }
}

/// Run the accelerated method on `oracle` from `x0` with `H = ξ·L3`.
///
/// The returned run carries a failure in `error` rather than as `Err` once
/// the loop has started, so partial traces survive.
pub fn solve<O: Oracle + ?Sized>(cfg: &NatmiConfig, oracle: &O, x0: Point) -> Result<NatmiRun> {
    check_dim(oracle.dim(), &x0)?;
    let counted = CountedOracle::new(oracle);
    let reg = cfg.xi * oracle.lipschitz_l3();
    let opts = LoopOptions {
        reg,
        record_values: true,
        stop_when: None,
    };
    match cfg.subsolver {
        Subsolver::Bdgm => {
            let mut bdgm_cfg = cfg.bdgm.clone();
            bdgm_cfg.gamma = cfg.gamma;
            let mut sub = BdgmSubproblem::new(&counted, reg, cfg.eps, bdgm_cfg);
            run_outer(cfg, &mut sub, &Metered(&counted), x0, opts)
        }
        Subsolver::Exact => {
            let mut sub = ExactSubproblem::new(&counted, reg).with_gamma(cfg.gamma);
            run_outer(cfg, &mut sub, &Metered(&counted), x0, opts)
        }
    }
}
