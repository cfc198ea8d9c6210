//! The regularized third-order Taylor model
//! `Ω̃(y) = Ω₃(f, x̃; y) + (H/6)‖y − x̃‖⁴`.
//!
//! With `s = y − x̃`:
//!
//! ```text
//! Ω̃(y)  = f(x̃) + ⟨∇f(x̃), s⟩ + ½⟨∇²f(x̃)s, s⟩ + (1/6)D³f(x̃)[s]³ + (H/6)‖s‖⁴
//! ∇Ω̃(y) = ∇f(x̃) + ∇²f(x̃)s + ½D³f(x̃)[s]² + (2H/3)‖s‖²s
//! ```
//!
//! Third-derivative terms use the oracle's closed form when it has one and
//! central differences of the gradient otherwise. For `H ≥ L3` the model is
//! convex.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::bdgm::fd_third_action;
use crate::error::{Error, Result};
use crate::oracle::{check_dim, ensure_finite_vec, Oracle, Point};

/// Order of every Taylor model in this crate.
pub const MODEL_ORDER: u32 = 3;

/// Newton step cap for [`ModelSpec::exact_model_min`].
pub const EXACT_MIN_MAX_ITERS: usize = 500;

/// Length of the finite-difference displacement used when the oracle has no
/// closed-form third derivative: `ε_mach^{1/4}·max(1, ‖x̃‖)`.
pub fn fd_displacement(anchor: &Point) -> f64 {
    f64::EPSILON.powf(0.25) * anchor.norm().max(1.0)
}

/// Absolute slack added to the membership inequality.
pub fn membership_tol(grad_anchor_norm: f64) -> f64 {
    1e-12 * (1.0 + grad_anchor_norm)
}

/// Result of the inexactness test `‖∇Ω̃(T)‖ ≤ γ‖∇f(T)‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub lhs: f64,
    pub rhs: f64,
    pub member: bool,
}

/// A frozen model anchor: `x̃`, cached `∇f(x̃)`, `∇²f(x̃)`, and `H`.
pub struct ModelSpec<'a, O: Oracle + ?Sized> {
    oracle: &'a O,
    anchor: Point,
    grad: Point,
    hess: DMatrix<f64>,
    value: OnceLock<f64>,
    reg: f64,
}

impl<'a, O: Oracle + ?Sized> ModelSpec<'a, O> {
    /// Query gradient and Hessian at `anchor` and freeze them.
    pub fn new(oracle: &'a O, anchor: Point, order: u32, reg: f64) -> Result<Self> {
        if order != MODEL_ORDER {
            return Err(Error::UnsupportedOrder(order));
        }
        check_dim(oracle.dim(), &anchor)?;
        let grad = oracle.gradient(&anchor);
        let hess = oracle.hessian(&anchor);
        Self::from_parts(oracle, anchor, grad, hess, reg)
    }

    /// Build from derivatives already computed at `anchor`.
    pub fn from_parts(
        oracle: &'a O,
        anchor: Point,
        grad: Point,
        hess: DMatrix<f64>,
        reg: f64,
    ) -> Result<Self> {
        check_dim(oracle.dim(), &anchor)?;
        check_dim(oracle.dim(), &grad)?;
        if !(reg >= 0.0) || !reg.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "regularization H must be >= 0, got {reg}"
            )));
        }
        ensure_finite_vec(&grad, "gradient")?;
        Ok(Self {
            oracle,
            anchor,
            grad,
            hess,
            value: OnceLock::new(),
            reg,
        })
    }

    pub fn oracle(&self) -> &'a O {
        self.oracle
    }

    pub fn anchor(&self) -> &Point {
        &self.anchor
    }

    pub fn grad_anchor(&self) -> &Point {
        &self.grad
    }

    pub fn hess_anchor(&self) -> &DMatrix<f64> {
        &self.hess
    }

    /// The regularization parameter `H`.
    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn order(&self) -> u32 {
        MODEL_ORDER
    }

    /// `f(x̃)`, queried once on first use.
    pub fn value_anchor(&self) -> f64 {
        *self.value.get_or_init(|| self.oracle.value(&self.anchor))
    }

    fn step(&self, y: &Point) -> Result<Point> {
        check_dim(self.anchor.len(), y)?;
        Ok(y - &self.anchor)
    }

    /// `D³f(x̃)[s, s]`.
    pub fn third_action(&self, s: &Point) -> Point {
        if let Some(v) = self.oracle.third_action(&self.anchor, s) {
            return v;
        }
        let norm = s.norm();
        if norm == 0.0 {
            return Point::zeros(s.len());
        }
        fd_third_action(
            self.oracle,
            &self.anchor,
            s,
            fd_displacement(&self.anchor) / norm,
        )
    }

    /// `D³f(x̃)[s]` as a matrix.
    pub fn third_matrix(&self, s: &Point) -> DMatrix<f64> {
        if let Some(m) = self.oracle.third_directional(&self.anchor, s) {
            return m;
        }
        let n = s.len();
        let norm = s.norm();
        if norm == 0.0 {
            return DMatrix::zeros(n, n);
        }
        let h = fd_displacement(&self.anchor);
        let u = s / norm;
        let hp = self.oracle.hessian(&(&self.anchor + &u * h));
        let hm = self.oracle.hessian(&(&self.anchor - &u * h));
        let m = (hp - hm) * (norm / (2.0 * h));
        (&m + m.transpose()) * 0.5
    }

    pub fn model_value(&self, y: &Point) -> Result<f64> {
        let s = self.step(y)?;
        let r2 = s.norm_squared();
        let third = self.third_action(&s).dot(&s);
        Ok(self.value_anchor()
            + self.grad.dot(&s)
            + 0.5 * s.dot(&(&self.hess * &s))
            + third / 6.0
            + self.reg / 6.0 * r2 * r2)
    }

    pub fn model_grad(&self, y: &Point) -> Result<Point> {
        let s = self.step(y)?;
        let r2 = s.norm_squared();
        let mut g = &self.grad + &self.hess * &s;
        g += self.third_action(&s) * 0.5;
        g += &s * (2.0 * self.reg / 3.0 * r2);
        Ok(g)
    }

    /// `∇²f(x̃) + D³f(x̃)[s] + (2H/3)(‖s‖²I + 2ssᵀ)`.
    pub fn model_hessian(&self, y: &Point) -> Result<DMatrix<f64>> {
        let s = self.step(y)?;
        let n = s.len();
        let c = 2.0 * self.reg / 3.0;
        let mut h = &self.hess + self.third_matrix(&s);
        h += DMatrix::identity(n, n) * (c * s.norm_squared());
        h += (&s * s.transpose()) * (2.0 * c);
        Ok(h)
    }

    /// The inexactness test at `t` with a fresh oracle gradient `∇f(t)`.
    pub fn membership_residual(&self, gamma: f64, t: &Point) -> Result<Membership> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in [0, 1], got {gamma}"
            )));
        }
        let lhs = self.model_grad(t)?.norm();
        let rhs = gamma * self.oracle.gradient(t).norm();
        let member = lhs <= rhs + membership_tol(self.grad.norm());
        Ok(Membership { lhs, rhs, member })
    }

    /// Reference minimizer of the model by damped Newton with backtracking.
    ///
    /// `tol` defaults to `1e-12·(1 + ‖∇f(x̃)‖)` on the model gradient norm.
    pub fn exact_model_min(&self, tol: Option<f64>) -> Result<Point> {
        self.exact_model_min_counted(tol).map(|(y, _)| y)
    }

    /// As [`Self::exact_model_min`], also returning the Newton step count.
    pub fn exact_model_min_counted(&self, tol: Option<f64>) -> Result<(Point, usize)> {
        let tol = tol.unwrap_or_else(|| membership_tol(self.grad.norm()));
        let mut y = self.anchor.clone();
        let mut g = self.model_grad(&y)?;
        for iter in 0..EXACT_MIN_MAX_ITERS {
            let gnorm = g.norm();
            if gnorm <= tol {
                return Ok((y, iter));
            }
            let d = newton_direction(self.model_hessian(&y)?, &g);
            // full Newton step when it clearly reduces the gradient (the
            // quadratically convergent regime, where value differences are
            // at roundoff level); otherwise backtrack on the model value
            let full = &y + &d;
            let g_full = self.model_grad(&full)?;
            if g_full.norm() <= 0.5 * gnorm {
                y = full;
                g = g_full;
                continue;
            }
            let m0 = self.model_value(&y)?;
            let slope = g.dot(&d);
            let mut t = 1.0;
            let mut accepted = None;
            while t > 1e-12 {
                let trial = &y + &d * t;
                let m = self.model_value(&trial)?;
                if m < m0 && m <= m0 + 1e-4 * t * slope {
                    accepted = Some(trial);
                    break;
                }
                t *= 0.5;
            }
            let next = match accepted {
                Some(p) => p,
                None if g_full.norm() < gnorm => full,
                None if gnorm <= 1e3 * tol => return Ok((y, iter)),
                None => {
                    return Err(Error::ModelNonConvergence {
                        iters: iter,
                        grad_norm: gnorm,
                    })
                }
            };
            y = next;
            g = self.model_grad(&y)?;
        }
        Err(Error::ModelNonConvergence {
            iters: EXACT_MIN_MAX_ITERS,
            grad_norm: g.norm(),
        })
    }
}

/// Solve `H d = −g` by Cholesky, adding a growing diagonal shift if `H` is
/// not numerically positive definite.
pub(crate) fn newton_direction(h: DMatrix<f64>, g: &Point) -> Point {
    let n = g.len();
    let scale = 1.0 + h.norm();
    let mut shift = 0.0;
    loop {
        let shifted = &h + DMatrix::identity(n, n) * shift;
        if let Some(chol) = shifted.cholesky() {
            return -chol.solve(g);
        }
        shift = if shift == 0.0 {
            1e-14 * scale
        } else {
            shift * 10.0
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quartic, quarter_quartic};
    use nalgebra::dvector;

    fn monomial4() -> crate::problems::Quartic {
        // x⁴ = (a4/4)x⁴ with a4 = 4
        make_quartic(DMatrix::zeros(1, 1), Point::zeros(1), 4.0).unwrap()
    }

    fn half_square(n: usize) -> crate::problems::Quartic {
        make_quartic(DMatrix::identity(n, n), Point::zeros(n), 0.0).unwrap()
    }

    #[test]
    fn value_at_anchor() {
        let f = quarter_quartic();
        let spec = ModelSpec::new(&f, dvector![1.3], 3, 9.0).unwrap();
        assert_eq!(
            spec.model_value(&dvector![1.3]).unwrap(),
            f.value(&dvector![1.3])
        );
        assert_eq!(
            spec.model_grad(&dvector![1.3]).unwrap(),
            f.gradient(&dvector![1.3])
        );
    }

    #[test]
    fn quadratic_gap_is_the_regularizer() {
        let f = half_square(3);
        let anchor = dvector![0.5, -1.0, 2.0];
        let spec = ModelSpec::new(&f, anchor.clone(), 3, 2.5).unwrap();
        for y in [dvector![0.0, 0.0, 0.0], dvector![1.0, 2.0, -3.0]] {
            let gap = spec.model_value(&y).unwrap() - f.value(&y);
            let r = (&y - &anchor).norm();
            assert!((gap - 2.5 / 6.0 * r.powi(4)).abs() < 1e-12);
        }
        let spec0 = ModelSpec::new(&f, anchor, 3, 0.0).unwrap();
        let y = dvector![1.0, 2.0, -3.0];
        assert_eq!(spec0.model_grad(&y).unwrap(), f.gradient(&y));
    }

    #[test]
    fn monomial_at_zero() {
        let f = monomial4();
        let spec = ModelSpec::new(&f, dvector![0.0], 3, 36.0).unwrap();
        for y in [0.5, -1.0, 2.0] {
            let v = spec.model_value(&dvector![y]).unwrap();
            assert!((v - 6.0 * y.powi(4)).abs() < 1e-12);
            let g = spec.model_grad(&dvector![y]).unwrap()[0];
            assert!((g - 24.0 * y.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn membership_examples() {
        let f = monomial4();
        let spec = ModelSpec::new(&f, dvector![0.0], 3, 36.0).unwrap();
        let at0 = spec.membership_residual(1.0 / 6.0, &dvector![0.0]).unwrap();
        assert_eq!((at0.lhs, at0.rhs, at0.member), (0.0, 0.0, true));
        let m = spec.membership_residual(1.0 / 6.0, &dvector![0.1]).unwrap();
        assert!((m.lhs - 0.024).abs() < 1e-15);
        assert!((m.rhs - 4e-3 / 6.0).abs() < 1e-15);
        assert!(!m.member);
        assert!(spec.membership_residual(1.5, &dvector![0.1]).is_err());
    }

    #[test]
    fn exact_min_monomial_is_zero() {
        let f = monomial4();
        for h in [1.0, 36.0] {
            let spec = ModelSpec::new(&f, dvector![0.0], 3, h).unwrap();
            assert_eq!(spec.exact_model_min(None).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn exact_min_quadratic_h3_matches_bisection() {
        // ½x² at x̃ = 1, H = 3: root of y + 2(y − 1)³ = 0 in (0, 1)
        let f = half_square(1);
        let spec = ModelSpec::new(&f, dvector![1.0], 3, 3.0).unwrap();
        let y = spec.exact_model_min(None).unwrap()[0];
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + 2.0 * (mid - 1.0).powi(3) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((y - 0.5 * (lo + hi)).abs() < 1e-12, "{y} vs {lo}");
        assert!(spec.membership_residual(0.0, &dvector![y]).unwrap().member);
    }

    #[test]
    fn exact_min_pure_quadratic_is_one_newton_step() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = make_quartic(q.clone(), dvector![1.0, -1.0], 0.0).unwrap();
        let anchor = dvector![0.3, 0.7];
        let spec = ModelSpec::new(&f, anchor.clone(), 3, 0.0).unwrap();
        let (y, iters) = spec.exact_model_min_counted(None).unwrap();
        let newton = &anchor - q.clone().cholesky().unwrap().solve(&f.gradient(&anchor));
        assert!((y - newton).norm() < 1e-13);
        assert!(iters <= 1);
    }

    #[test]
    fn order_and_dimension_checked() {
        let f = quarter_quartic();
        assert!(matches!(
            ModelSpec::new(&f, dvector![1.0], 2, 1.0),
            Err(Error::UnsupportedOrder(2))
        ));
        let spec = ModelSpec::new(&f, dvector![1.0], 3, 1.0).unwrap();
        assert!(matches!(
            spec.model_value(&dvector![1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
