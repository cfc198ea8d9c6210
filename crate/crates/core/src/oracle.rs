//! Problem oracles, call counting, and finite-difference verification.
//!
//! An [`Oracle`] yields value, gradient and Hessian of a convex function
//! together with a Lipschitz constant `L3` of its third derivative. Oracles
//! that know their third derivative in closed form may also expose it; the
//! solvers never ask for it, only the verification code does.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense iterate in `R^n`.
pub type Point = DVector<f64>;

/// Default finite-difference step factor for gradient and Hessian checks.
pub fn default_fd_step(x: &Point) -> f64 {
    f64::EPSILON.cbrt() * x.norm().max(1.0)
}

/// A smooth convex function with a Lipschitz third derivative.
///
/// Implementations are deterministic pure functions of `x` and must be safe
/// to evaluate from several threads at once.
pub trait Oracle: Send + Sync {
    fn dim(&self) -> usize;

    /// Lipschitz constant of the third derivative.
    fn lipschitz_l3(&self) -> f64;

    fn value(&self, x: &Point) -> f64;

    fn gradient(&self, x: &Point) -> Point;

    fn hessian(&self, x: &Point) -> DMatrix<f64>;

    /// The matrix `D³f(x)[s]`, when available in closed form.
    fn third_directional(&self, _x: &Point, _s: &Point) -> Option<DMatrix<f64>> {
        None
    }

    /// The vector `D³f(x)[s, s]`, when available in closed form.
    fn third_action(&self, x: &Point, s: &Point) -> Option<Point> {
        self.third_directional(x, s).map(|m| m * s)
    }

    /// Whether [`Oracle::third_directional`] returns `Some`.
    fn has_third(&self) -> bool {
        false
    }

    /// True only for the identically-zero function.
    fn is_zero(&self) -> bool {
        false
    }
}

macro_rules! forward_oracle {
    ($($ty:ty),*) => {$(
        impl<T: Oracle + ?Sized> Oracle for $ty {
            fn dim(&self) -> usize { (**self).dim() }
            fn lipschitz_l3(&self) -> f64 { (**self).lipschitz_l3() }
            fn value(&self, x: &Point) -> f64 { (**self).value(x) }
            fn gradient(&self, x: &Point) -> Point { (**self).gradient(x) }
            fn hessian(&self, x: &Point) -> DMatrix<f64> { (**self).hessian(x) }
            fn third_directional(&self, x: &Point, s: &Point) -> Option<DMatrix<f64>> {
                (**self).third_directional(x, s)
            }
            fn third_action(&self, x: &Point, s: &Point) -> Option<Point> {
                (**self).third_action(x, s)
            }
            fn has_third(&self) -> bool { (**self).has_third() }
            fn is_zero(&self) -> bool { (**self).is_zero() }
        }
    )*};
}

forward_oracle!(&T, Box<T>, Arc<T>);

/// Snapshot of oracle call counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub value: u64,
    pub grad: u64,
    pub hess: u64,
    pub third: u64,
}

impl std::ops::Add for CallCounts {
    type Output = CallCounts;

    fn add(self, rhs: CallCounts) -> CallCounts {
        CallCounts {
            value: self.value + rhs.value,
            grad: self.grad + rhs.grad,
            hess: self.hess + rhs.hess,
            third: self.third + rhs.third,
        }
    }
}

/// Wraps an oracle and counts every call. Outputs are forwarded untouched.
#[derive(Debug)]
pub struct CountedOracle<O> {
    inner: O,
    n_value: AtomicU64,
    n_grad: AtomicU64,
    n_hess: AtomicU64,
    n_third: AtomicU64,
}

/// Wrap `oracle` in a [`CountedOracle`] with all counters at zero.
pub fn counted<O: Oracle>(oracle: O) -> CountedOracle<O> {
    CountedOracle::new(oracle)
}

impl<O: Oracle> CountedOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            n_value: AtomicU64::new(0),
            n_grad: AtomicU64::new(0),
            n_hess: AtomicU64::new(0),
            n_third: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            value: self.n_value.load(Ordering::Relaxed),
            grad: self.n_grad.load(Ordering::Relaxed),
            hess: self.n_hess.load(Ordering::Relaxed),
            third: self.n_third.load(Ordering::Relaxed),
        }
    }

    pub fn n_value(&self) -> u64 {
        self.n_value.load(Ordering::Relaxed)
    }

    pub fn n_grad(&self) -> u64 {
        self.n_grad.load(Ordering::Relaxed)
    }

    pub fn n_hess(&self) -> u64 {
        self.n_hess.load(Ordering::Relaxed)
    }
}

impl<O: Oracle> Oracle for CountedOracle<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn lipschitz_l3(&self) -> f64 {
        self.inner.lipschitz_l3()
    }

    fn value(&self, x: &Point) -> f64 {
        self.n_value.fetch_add(1, Ordering::Relaxed);
        self.inner.value(x)
    }

    fn gradient(&self, x: &Point) -> Point {
        self.n_grad.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(x)
    }

    fn hessian(&self, x: &Point) -> DMatrix<f64> {
        self.n_hess.fetch_add(1, Ordering::Relaxed);
        self.inner.hessian(x)
    }

    fn third_directional(&self, x: &Point, s: &Point) -> Option<DMatrix<f64>> {
        self.n_third.fetch_add(1, Ordering::Relaxed);
        self.inner.third_directional(x, s)
    }

    fn third_action(&self, x: &Point, s: &Point) -> Option<Point> {
        self.n_third.fetch_add(1, Ordering::Relaxed);
        self.inner.third_action(x, s)
    }

    fn has_third(&self) -> bool {
        self.inner.has_third()
    }

    fn is_zero(&self) -> bool {
        self.inner.is_zero()
    }
}

/// The identically-zero function on `R^n`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroOracle {
    dim: usize,
}

impl ZeroOracle {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Oracle for ZeroOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    // Any positive constant bounds a vanishing third derivative.
    fn lipschitz_l3(&self) -> f64 {
        f64::MIN_POSITIVE
    }

    fn value(&self, _x: &Point) -> f64 {
        0.0
    }

    fn gradient(&self, _x: &Point) -> Point {
        Point::zeros(self.dim)
    }

    fn hessian(&self, _x: &Point) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }

    fn third_directional(&self, _x: &Point, _s: &Point) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(self.dim, self.dim))
    }

    fn has_third(&self) -> bool {
        true
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Pointwise sum `a + b` of two oracles; `L3` adds.
#[derive(Debug, Clone)]
pub struct SumOracle<A, B> {
    a: A,
    b: B,
}

impl<A: Oracle, B: Oracle> SumOracle<A, B> {
    pub fn new(a: A, b: B) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                got: b.dim(),
            });
        }
        Ok(Self { a, b })
    }

    pub fn parts(&self) -> (&A, &B) {
        (&self.a, &self.b)
    }
}

impl<A: Oracle, B: Oracle> Oracle for SumOracle<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn lipschitz_l3(&self) -> f64 {
        self.a.lipschitz_l3() + self.b.lipschitz_l3()
    }

    fn value(&self, x: &Point) -> f64 {
        self.a.value(x) + self.b.value(x)
    }

    fn gradient(&self, x: &Point) -> Point {
        self.a.gradient(x) + self.b.gradient(x)
    }

    fn hessian(&self, x: &Point) -> DMatrix<f64> {
        self.a.hessian(x) + self.b.hessian(x)
    }

    fn third_directional(&self, x: &Point, s: &Point) -> Option<DMatrix<f64>> {
        Some(self.a.third_directional(x, s)? + self.b.third_directional(x, s)?)
    }

    fn has_third(&self) -> bool {
        self.a.has_third() && self.b.has_third()
    }

    fn is_zero(&self) -> bool {
        self.a.is_zero() && self.b.is_zero()
    }
}

pub(crate) fn check_dim(expected: usize, x: &Point) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

pub(crate) fn ensure_finite_vec(v: &Point, what: &'static str) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteOracle { what })
    }
}

fn ensure_finite_mat(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteOracle { what })
    }
}

/// Relative error between the analytic gradient and central differences of
/// the value: `‖∇f(x) − est‖ / max(1, ‖∇f(x)‖)`.
pub fn fd_check_grad<O: Oracle + ?Sized>(oracle: &O, x: &Point, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step h must be positive, got {h}"
        )));
    }
    check_dim(oracle.dim(), x)?;
    ensure_finite_vec(x, "point")?;
    let grad = oracle.gradient(x);
    ensure_finite_vec(&grad, "gradient")?;
    let mut est = Point::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = oracle.value(&xp);
        xp[i] = xi - h;
        let fm = oracle.value(&xp);
        xp[i] = xi;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteOracle { what: "value" });
        }
        est[i] = (fp - fm) / (2.0 * h);
    }
    let scale = grad.norm().max(1.0);
    Ok((grad - est).norm() / scale)
}

/// Relative error between the analytic Hessian and central differences of
/// the gradient, in Frobenius norm.
pub fn fd_check_hess<O: Oracle + ?Sized>(oracle: &O, x: &Point, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step h must be positive, got {h}"
        )));
    }
    check_dim(oracle.dim(), x)?;
    ensure_finite_vec(x, "point")?;
    let n = x.len();
    let hess = oracle.hessian(x);
    ensure_finite_mat(&hess, "Hessian")?;
    let mut est = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for j in 0..n {
        let xj = x[j];
        xp[j] = xj + h;
        let gp = oracle.gradient(&xp);
        xp[j] = xj - h;
        let gm = oracle.gradient(&xp);
        xp[j] = xj;
        ensure_finite_vec(&gp, "gradient")?;
        ensure_finite_vec(&gm, "gradient")?;
        est.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    Ok((&hess - est).norm() / hess.norm().max(1.0))
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_opnorm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v))
}

/// `‖M − Mᵀ‖_F`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    struct HalfSquare(usize);

    impl Oracle for HalfSquare {
        fn dim(&self) -> usize {
            self.0
        }
        fn lipschitz_l3(&self) -> f64 {
            1.0
        }
        fn value(&self, x: &Point) -> f64 {
            0.5 * x.norm_squared()
        }
        fn gradient(&self, x: &Point) -> Point {
            x.clone()
        }
        fn hessian(&self, _x: &Point) -> DMatrix<f64> {
            DMatrix::identity(self.0, self.0)
        }
    }

    struct QuarterQuartic;

    impl Oracle for QuarterQuartic {
        fn dim(&self) -> usize {
            1
        }
        fn lipschitz_l3(&self) -> f64 {
            6.0
        }
        fn value(&self, x: &Point) -> f64 {
            x[0].powi(4) / 4.0
        }
        fn gradient(&self, x: &Point) -> Point {
            dvector![x[0].powi(3)]
        }
        fn hessian(&self, x: &Point) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 3.0 * x[0] * x[0])
        }
    }

    struct Broken;

    impl Oracle for Broken {
        fn dim(&self) -> usize {
            1
        }
        fn lipschitz_l3(&self) -> f64 {
            1.0
        }
        fn value(&self, _x: &Point) -> f64 {
            f64::NAN
        }
        fn gradient(&self, _x: &Point) -> Point {
            dvector![f64::NAN]
        }
        fn hessian(&self, _x: &Point) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, f64::NAN)
        }
    }

    #[test]
    fn fd_grad_quadratic_is_exact() {
        let err = fd_check_grad(&HalfSquare(2), &dvector![1.0, 2.0], 1e-5).unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn fd_grad_quartic_1d() {
        let o = QuarterQuartic;
        assert_eq!(o.gradient(&dvector![2.0])[0], 8.0);
        let err = fd_check_grad(&o, &dvector![2.0], 1e-4).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn fd_hess_checks() {
        let err = fd_check_hess(&HalfSquare(3), &dvector![0.3, -1.0, 2.0], 1e-5).unwrap();
        assert!(err <= 1e-9, "{err}");
        let o = QuarterQuartic;
        assert_eq!(o.hessian(&dvector![2.0])[(0, 0)], 12.0);
        let err = fd_check_hess(&o, &dvector![2.0], 1e-4).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn fd_checks_reject_broken_oracles_and_bad_steps() {
        assert!(matches!(
            fd_check_grad(&Broken, &dvector![1.0], 1e-4),
            Err(Error::NonFiniteOracle { .. })
        ));
        assert!(matches!(
            fd_check_hess(&Broken, &dvector![1.0], 1e-4),
            Err(Error::NonFiniteOracle { .. })
        ));
        assert!(fd_check_grad(&HalfSquare(1), &dvector![1.0], 0.0).is_err());
        assert!(fd_check_grad(&HalfSquare(2), &dvector![1.0], 1e-4).is_err());
    }

    #[test]
    fn counters() {
        let c = counted(HalfSquare(2));
        assert_eq!(c.counts(), CallCounts::default());
        let x = dvector![1.0, 1.0];
        c.gradient(&x);
        c.gradient(&x);
        assert_eq!((c.n_grad(), c.n_hess()), (2, 0));

        let c = counted(HalfSquare(2));
        c.value(&x);
        c.gradient(&x);
        c.hessian(&x);
        assert_eq!((c.n_value(), c.n_grad(), c.n_hess()), (1, 1, 1));
    }

    #[test]
    fn counted_forwarding_is_bit_exact() {
        let plain = QuarterQuartic;
        let c = counted(QuarterQuartic);
        let x = dvector![0.123456789];
        assert_eq!(plain.value(&x).to_bits(), c.value(&x).to_bits());
        assert_eq!(plain.gradient(&x)[0].to_bits(), c.gradient(&x)[0].to_bits());
        assert_eq!(
            plain.hessian(&x)[(0, 0)].to_bits(),
            c.hessian(&x)[(0, 0)].to_bits()
        );
    }

    #[test]
    fn sum_and_zero() {
        let s = SumOracle::new(HalfSquare(2), ZeroOracle::new(2)).unwrap();
        let x = dvector![1.0, -2.0];
        assert_eq!(s.gradient(&x), x);
        assert!(!s.is_zero());
        assert!(SumOracle::new(HalfSquare(2), ZeroOracle::new(3)).is_err());
    }
}
