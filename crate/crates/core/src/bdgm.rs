//! Bregman-distance gradient method for the quartic-regularized third-order
//! model, using gradients and one Hessian of `f` only.
//!
//! The subproblem at anchor `x̃` is
//!
//! ```text
//! φ(z) = ⟨∇f(x̃), s⟩ + ½∇²f(x̃)[s]² + (1/6)D³f(x̃)[s]³ + (L3/4)‖s‖⁴,   s = z − x̃,
//! ```
//!
//! which is the regularized Taylor model with `H = 3·L3/2`. Each iteration
//! replaces `D³f(x̃)[s]²` by a central second difference of the gradient and
//! takes a Bregman step in the geometry of
//! `ρ(z) = ½⟨∇²f(x̃)s, s⟩ + (L3/4)‖s‖⁴` restricted to the ball
//! `‖s‖ ≤ 2((2+√2)‖∇f(x̃)‖/L3)^{1/3}`.
//!
//! The run stops at the first iterate with
//! `‖g(z)‖ ≤ γ‖∇f(z)‖ − δ`, where `g` is the approximate model gradient.
//! If an iterate has `γ‖∇f(z)‖ ≤ δ` the test can never hold there; the run
//! then ends with [`Error::AccuracyFloor`], since such a point is already far
//! inside the requested accuracy. The same error ends a run whose residual
//! has not halved in [`STAGNATION_WINDOW`] iterations: the finite-difference
//! noise in `g` is then larger than what is left of the threshold.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oracle::{check_dim, ensure_finite_vec, Oracle, Point};
use crate::taylor::{fd_displacement, ModelSpec};

/// Bregman step scale `2(1 + 1/√2)`.
pub const STEP_SCALE: f64 = 2.0 * (1.0 + FRAC_1_SQRT_2);

/// Relative accuracy of the inexact subproblem solution.
pub const DEFAULT_GAMMA: f64 = 1.0 / 6.0;

/// Iterations without halving the best residual after which the residual
/// is taken to be at the noise floor of the approximate gradient.
pub const STAGNATION_WINDOW: usize = 200;
const STAGNATION_FACTOR: f64 = 0.5;

/// Relative tolerance of the radial bisection.
const RADIAL_RTOL: f64 = 1e-12;

/// How the shifted linear systems `(∇²f(x̃) + νI)s = c` are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// One eigendecomposition at setup; `O(n²)` per trial shift.
    #[default]
    Eigen,
    /// A dense Cholesky factorization per trial shift.
    Cholesky,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdgmConfig {
    /// Target relative accuracy `γ` of the stopping test.
    pub gamma: f64,
    /// Constant in front of the inner accuracy `δ`.
    pub c_delta: f64,
    pub max_iters: usize,
    pub solver: LinearSolver,
}

impl Default for BdgmConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            c_delta: 1.0,
            max_iters: 10_000,
            solver: LinearSolver::Eigen,
        }
    }
}

/// `δ = c_δ·ε^{3/2} / (‖∇f(x̃)‖^{1/2} + ‖∇²f(x̃)‖^{3/2}/L3^{1/2})`.
pub fn inner_accuracy(eps: f64, grad_norm: f64, hess_norm: f64, l3: f64, c_delta: f64) -> f64 {
    c_delta * eps.powf(1.5) / (grad_norm.sqrt() + hess_norm.powf(1.5) / l3.sqrt())
}

/// `τ = 3δ / (8(2+√2)‖∇f(x̃)‖)`.
pub fn fd_tau(delta: f64, grad_norm: f64) -> f64 {
    3.0 * delta / (8.0 * (2.0 + SQRT_2) * grad_norm)
}

/// `2((2+√2)‖∇f(x̃)‖/L3)^{1/3}`.
pub fn ball_radius(grad_norm: f64, l3: f64) -> f64 {
    2.0 * ((2.0 + SQRT_2) * grad_norm / l3).cbrt()
}

/// Central second difference of the gradient along `s`:
/// `(∇f(x̃+τs) + ∇f(x̃−τs) − 2∇f(x̃)) / τ²`, an estimate of `D³f(x̃)[s, s]`.
///
/// Exact (up to rounding) whenever the fifth derivative of `f` vanishes.
pub fn fd_third_action<O: Oracle + ?Sized>(
    oracle: &O,
    anchor: &Point,
    s: &Point,
    tau: f64,
) -> Point {
    if s.iter().all(|&v| v == 0.0) {
        return Point::zeros(s.len());
    }
    let center = oracle.gradient(anchor);
    fd_third_action_with_center(oracle, anchor, &center, s, tau)
}

pub(crate) fn fd_third_action_with_center<O: Oracle + ?Sized>(
    oracle: &O,
    anchor: &Point,
    center: &Point,
    s: &Point,
    tau: f64,
) -> Point {
    let step = s * tau;
    let gp = oracle.gradient(&(anchor + &step));
    let gm = oracle.gradient(&(anchor - &step));
    (gp + gm - center * 2.0) / (tau * tau)
}

/// Output of [`BdgmState::solve`].
#[derive(Debug, Clone)]
pub struct BdgmOutput {
    pub z: Point,
    pub inner_iters: usize,
    /// `∇f(z)` from the final stopping test.
    pub grad_z: Point,
    /// `‖g(z)‖` at the final test.
    pub residual: f64,
    /// `γ‖∇f(z)‖ − δ` at the final test.
    pub threshold: f64,
}

pub struct BdgmState<'a, O: Oracle + ?Sized> {
    oracle: &'a O,
    anchor: Point,
    grad_anchor: Point,
    hess_anchor: DMatrix<f64>,
    /// `∇²f(x̃)` with rounding-level negative eigenvalues clipped; defines `ρ`.
    hess_psd: DMatrix<f64>,
    eig_values: DVector<f64>,
    eig_vectors: DMatrix<f64>,
    hess_norm: f64,
    l3: f64,
    delta: f64,
    tau: f64,
    ball_radius: f64,
    z: Point,
    iter: usize,
    cfg: BdgmConfig,
    stationary: bool,
}

/// Prepare a BDGM run at `anchor` with the oracle's own `L3`.
pub fn setup<'a, O: Oracle + ?Sized>(
    oracle: &'a O,
    anchor: Point,
    eps: f64,
    cfg: BdgmConfig,
) -> Result<BdgmState<'a, O>> {
    let l3 = oracle.lipschitz_l3();
    setup_with_l3(oracle, anchor, eps, l3, cfg)
}

/// Prepare a BDGM run with an explicit quartic scale `l3` (the subproblem's
/// regularization is then `H = 3·l3/2`).
pub fn setup_with_l3<'a, O: Oracle + ?Sized>(
    oracle: &'a O,
    anchor: Point,
    eps: f64,
    l3: f64,
    cfg: BdgmConfig,
) -> Result<BdgmState<'a, O>> {
    check_dim(oracle.dim(), &anchor)?;
    let grad = oracle.gradient(&anchor);
    let hess = oracle.hessian(&anchor);
    setup_from_parts(oracle, anchor, grad, hess, eps, l3, cfg)
}

pub(crate) fn setup_from_parts<'a, O: Oracle + ?Sized>(
    oracle: &'a O,
    anchor: Point,
    grad: Point,
    hess: DMatrix<f64>,
    eps: f64,
    l3: f64,
    cfg: BdgmConfig,
) -> Result<BdgmState<'a, O>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if !(l3 > 0.0) || !l3.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "L3 must be positive, got {l3}"
        )));
    }
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in [0, 1], got {}",
            cfg.gamma
        )));
    }
    ensure_finite_vec(&grad, "gradient")?;
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteOracle { what: "Hessian" });
    }
    let hess_sym = (&hess + hess.transpose()) * 0.5;
    let eig = hess_sym.clone().symmetric_eigen();
    let hess_norm = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let eig_values = eig.eigenvalues.map(|v| v.max(0.0));
    let eig_vectors = eig.eigenvectors;
    let hess_psd = &eig_vectors * DMatrix::from_diagonal(&eig_values) * eig_vectors.transpose();

    let grad_norm = grad.norm();
    let stationary = grad_norm == 0.0;
    let (delta, tau, radius) = if stationary {
        (0.0, 0.0, 0.0)
    } else {
        let delta = inner_accuracy(eps, grad_norm, hess_norm, l3, cfg.c_delta);
        (delta, fd_tau(delta, grad_norm), ball_radius(grad_norm, l3))
    };
    Ok(BdgmState {
        oracle,
        z: anchor.clone(),
        anchor,
        grad_anchor: grad,
        hess_anchor: hess_sym,
        hess_psd,
        eig_values,
        eig_vectors,
        hess_norm,
        l3,
        delta,
        tau,
        ball_radius: radius,
        iter: 0,
        cfg,
        stationary,
    })
}

impl<'a, O: Oracle + ?Sized> BdgmState<'a, O> {
    pub fn anchor(&self) -> &Point {
        &self.anchor
    }

    pub fn grad_anchor(&self) -> &Point {
        &self.grad_anchor
    }

    pub fn hess_anchor(&self) -> &DMatrix<f64> {
        &self.hess_anchor
    }

    /// Spectral norm of `∇²f(x̃)`.
    pub fn hess_norm(&self) -> f64 {
        self.hess_norm
    }

    pub fn l3(&self) -> f64 {
        self.l3
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn ball_radius(&self) -> f64 {
        self.ball_radius
    }

    pub fn step_scale(&self) -> f64 {
        STEP_SCALE
    }

    pub fn z(&self) -> &Point {
        &self.z
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    /// `∇f(x̃) = 0`: the anchor is already a minimizer.
    pub fn is_stationary(&self) -> bool {
        self.stationary
    }

    pub fn config(&self) -> &BdgmConfig {
        &self.cfg
    }

    /// Regularization `H = 3·L3/2` of the equivalent Taylor model.
    pub fn model_reg(&self) -> f64 {
        1.5 * self.l3
    }

    /// The equivalent Taylor model, sharing the cached anchor derivatives.
    pub fn model(&self) -> ModelSpec<'a, O> {
        ModelSpec::from_parts(
            self.oracle,
            self.anchor.clone(),
            self.grad_anchor.clone(),
            self.hess_anchor.clone(),
            self.model_reg(),
        )
        .expect("anchor data validated at setup")
    }

    /// Finite-difference parameter actually used for displacement `s`.
    ///
    /// The nominal `τ` is tied to `δ` and is far below the rounding floor of
    /// a second difference in double precision; the displacement `τ‖s‖` is
    /// therefore kept at least `ε_mach^{1/4}·max(1, ‖x̃‖)`.
    pub fn effective_tau(&self, s_norm: f64) -> f64 {
        self.tau.max(fd_displacement(&self.anchor) / s_norm)
    }

    /// Inexact model gradient
    /// `∇f(x̃) + ∇²f(x̃)s + ½g^τ(s) + L3‖s‖²s`.
    pub fn approx_grad(&self, z: &Point) -> Result<Point> {
        check_dim(self.anchor.len(), z)?;
        let s = z - &self.anchor;
        let s_norm = s.norm();
        let mut g = &self.grad_anchor + &self.hess_anchor * &s;
        if s_norm > 0.0 {
            let third = fd_third_action_with_center(
                self.oracle,
                &self.anchor,
                &self.grad_anchor,
                &s,
                self.effective_tau(s_norm),
            );
            g += third * 0.5;
            g += &s * (self.l3 * s_norm * s_norm);
        }
        Ok(g)
    }

    /// `∇ρ(z) = ∇²f(x̃)s + L3‖s‖²s`.
    pub fn rho_grad(&self, z: &Point) -> Point {
        let s = z - &self.anchor;
        let r2 = s.norm_squared();
        &self.hess_psd * &s + &s * (self.l3 * r2)
    }

    /// `ρ(z) = ½⟨∇²f(x̃)s, s⟩ + (L3/4)‖s‖⁴`.
    pub fn rho(&self, z: &Point) -> f64 {
        let s = z - &self.anchor;
        let r2 = s.norm_squared();
        0.5 * s.dot(&(&self.hess_psd * &s)) + 0.25 * self.l3 * r2 * r2
    }

    /// The subproblem objective `φ(z)` with exact third-derivative terms when
    /// the oracle has them (verification only).
    pub fn phi(&self, z: &Point) -> Result<f64> {
        let model = self.model();
        Ok(model.model_value(z)? - model.value_anchor())
    }

    fn solve_shift(&self, c: &Point, nu: f64) -> Result<Point> {
        match self.cfg.solver {
            LinearSolver::Eigen => {
                let mut proj = self.eig_vectors.transpose() * c;
                for (i, v) in proj.iter_mut().enumerate() {
                    *v /= self.eig_values[i] + nu;
                }
                Ok(&self.eig_vectors * proj)
            }
            LinearSolver::Cholesky => {
                let n = c.len();
                let m = &self.hess_psd + DMatrix::identity(n, n) * nu;
                m.cholesky().map(|ch| ch.solve(c)).ok_or_else(|| {
                    Error::InvalidBracket(format!("shifted system singular at ν = {nu:e}"))
                })
            }
        }
    }

    /// Minimize `⟨g, z − z_i⟩ + a·β_ρ(z_i, z)` over the ball.
    ///
    /// The optimality condition is `∇ρ(z) = ∇ρ(z_i) − g/a =: c`, i.e.
    /// `(∇²f(x̃) + L3 r² I)s = c` with `r = ‖s‖`. `‖s(r)‖ − r` is decreasing in
    /// `r`, so the interior root is found by bisection on `r`. When that root
    /// lies outside the ball, the constrained minimizer solves
    /// `(∇²f(x̃) + νI)s = c` with `ν ≥ L3R²` and `‖s‖ = R`, found by bisection
    /// on `ν`.
    pub fn bregman_step(&self, z_i: &Point, g: &Point) -> Result<Point> {
        check_dim(self.anchor.len(), z_i)?;
        check_dim(self.anchor.len(), g)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOracle {
                what: "model gradient",
            });
        }
        let c = self.rho_grad(z_i) - g / STEP_SCALE;
        if c.iter().all(|&v| v == 0.0) {
            return Ok(self.anchor.clone());
        }
        let radius = self.ball_radius;
        let at_radius = self.solve_shift(&c, self.l3 * radius * radius)?;
        let s = if at_radius.norm() <= radius {
            // interior: ‖s(r)‖ − r is +∞ or positive as r → 0 and ≤ 0 at R
            let (mut lo, mut hi) = (0.0_f64, radius);
            let mut s_hi = at_radius;
            for _ in 0..400 {
                if hi - lo <= RADIAL_RTOL * hi {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let s_mid = self.solve_shift(&c, self.l3 * mid * mid)?;
                if s_mid.norm() > mid {
                    lo = mid;
                } else {
                    hi = mid;
                    s_hi = s_mid;
                }
            }
            s_hi
        } else {
            let nu_lo0 = self.l3 * radius * radius;
            let mut nu_hi = (c.norm() / radius).max(nu_lo0);
            let mut s_hi = self.solve_shift(&c, nu_hi)?;
            let mut guard = 0;
            while s_hi.norm() > radius {
                nu_hi *= 2.0;
                s_hi = self.solve_shift(&c, nu_hi)?;
                guard += 1;
                if guard > 200 {
                    return Err(Error::InvalidBracket(
                        "no upper shift bounds the boundary step".into(),
                    ));
                }
            }
            let mut nu_lo = nu_lo0;
            for _ in 0..400 {
                if nu_hi - nu_lo <= 1e-15 * nu_hi {
                    break;
                }
                let mid = 0.5 * (nu_lo + nu_hi);
                let s_mid = self.solve_shift(&c, mid)?;
                if s_mid.norm() > radius {
                    nu_lo = mid;
                } else {
                    nu_hi = mid;
                    s_hi = s_mid;
                }
            }
            let norm = s_hi.norm();
            if norm > 0.0 {
                s_hi *= radius / norm;
            }
            s_hi
        };
        Ok(&self.anchor + s)
    }

    /// Run until the stopping test holds.
    pub fn solve(&mut self) -> Result<BdgmOutput> {
        if self.stationary {
            return Ok(BdgmOutput {
                z: self.anchor.clone(),
                inner_iters: 0,
                grad_z: self.grad_anchor.clone(),
                residual: 0.0,
                threshold: 0.0,
            });
        }
        let mut residual;
        let mut threshold;
        // (residual, iterate, gradient norm, iteration) with the smallest residual
        let mut best: Option<(f64, Point, f64, usize)> = None;
        loop {
            let g = self.approx_grad(&self.z)?;
            let grad_z = if self.z == self.anchor {
                self.grad_anchor.clone()
            } else {
                self.oracle.gradient(&self.z)
            };
            ensure_finite_vec(&grad_z, "gradient")?;
            residual = g.norm();
            threshold = self.cfg.gamma * grad_z.norm() - self.delta;
            if threshold <= 0.0 {
                return Err(Error::AccuracyFloor {
                    grad_norm: grad_z.norm(),
                    floor: self.delta / self.cfg.gamma,
                    point: self.z.iter().copied().collect(),
                });
            }
            if residual <= threshold {
                return Ok(BdgmOutput {
                    z: self.z.clone(),
                    inner_iters: self.iter,
                    grad_z,
                    residual,
                    threshold,
                });
            }
            if best
                .as_ref()
                .is_none_or(|b| residual <= STAGNATION_FACTOR * b.0)
            {
                best = Some((residual, self.z.clone(), grad_z.norm(), self.iter));
            } else if let Some((res, z, gnorm, at)) = &best {
                if self.iter - at >= STAGNATION_WINDOW {
                    // the residual sits at the noise level of the approximate
                    // gradient, just above the threshold
                    return Err(Error::AccuracyFloor {
                        grad_norm: *gnorm,
                        floor: (res + self.delta) / self.cfg.gamma,
                        point: z.iter().copied().collect(),
                    });
                }
            }
            if self.iter >= self.cfg.max_iters {
                return Err(Error::BdgmIterationCap {
                    iters: self.iter,
                    residual,
                    threshold,
                });
            }
            self.z = self.bregman_step(&self.z, &g)?;
            self.iter += 1;
        }
    }
}
