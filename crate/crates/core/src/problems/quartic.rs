use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::oracle::{asymmetry, sym_min_eigenvalue, sym_opnorm, Oracle, Point};
use crate::rng::SeededStream;

/// `L3` reported when `a4 = 0`: the third derivative vanishes, so any
/// positive constant is a valid bound.
pub const QUADRATIC_L3: f64 = 1.0;

/// `f(x) = ½xᵀQx + ⟨c, x⟩ + (a4/4)‖x‖⁴`.
///
/// The fourth derivative is `D⁴f[s, s, s] = 6·a4·‖s‖²s`, so the third
/// derivative is Lipschitz with constant exactly `6·a4`.
#[derive(Debug, Clone)]
pub struct Quartic {
    q: DMatrix<f64>,
    c: Point,
    a4: f64,
    l3: f64,
}

/// Build a [`Quartic`]; `q` must be symmetric positive semidefinite.
pub fn make_quartic(q: DMatrix<f64>, c: Point, a4: f64) -> Result<Quartic> {
    let n = c.len();
    if n == 0 || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.nrows(),
        });
    }
    if !(a4 >= 0.0) || !a4.is_finite() {
        return Err(Error::InvalidArgument(format!("a4 must be >= 0, got {a4}")));
    }
    let scale = 1.0 + q.norm();
    let asym = asymmetry(&q);
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let min_eig = sym_min_eigenvalue(&q);
    if min_eig < -1e-10 * scale {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min_eig,
        });
    }
    let l3 = if a4 > 0.0 { 6.0 * a4 } else { QUADRATIC_L3 };
    Ok(Quartic { q, c, a4, l3 })
}

/// `f(x) = x⁴/4` in one dimension (`L3 = 6`).
pub fn quarter_quartic() -> Quartic {
    make_quartic(DMatrix::zeros(1, 1), Point::zeros(1), 1.0).expect("valid")
}

/// Seeded member of the quartic family: `Q = BᵀB/n` with `B` an `n×n`
/// standard normal matrix (row-major draw order), then `c` as `n` normals
/// scaled by `c_scale`.
pub fn random_quartic(seed: u64, n: usize, a4: f64, c_scale: f64) -> Result<Quartic> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    let mut stream = SeededStream::new(seed);
    let b = DMatrix::from_row_slice(n, n, &stream.normals(n * n));
    let q = b.transpose() * &b / n as f64;
    let q = (&q + q.transpose()) * 0.5;
    let c = Point::from_vec(stream.normals(n)) * c_scale;
    make_quartic(q, c, a4)
}

impl Quartic {
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c(&self) -> &Point {
        &self.c
    }

    pub fn a4(&self) -> f64 {
        self.a4
    }

    /// Largest eigenvalue of `Q`.
    pub fn q_norm(&self) -> f64 {
        sym_opnorm(&self.q)
    }
}

impl Oracle for Quartic {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn lipschitz_l3(&self) -> f64 {
        self.l3
    }

    fn value(&self, x: &Point) -> f64 {
        let r2 = x.norm_squared();
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x) + 0.25 * self.a4 * r2 * r2
    }

    fn gradient(&self, x: &Point) -> Point {
        &self.q * x + &self.c + x * (self.a4 * x.norm_squared())
    }

    fn hessian(&self, x: &Point) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = self.q.clone();
        h += DMatrix::identity(n, n) * (self.a4 * x.norm_squared());
        h += (x * x.transpose()) * (2.0 * self.a4);
        h
    }

    fn third_directional(&self, x: &Point, s: &Point) -> Option<DMatrix<f64>> {
        // a4·(2⟨x,s⟩I + 2(s xᵀ + x sᵀ))
        let n = self.dim();
        let mut m = DMatrix::identity(n, n) * (2.0 * self.a4 * x.dot(s));
        m += (s * x.transpose() + x * s.transpose()) * (2.0 * self.a4);
        Some(m)
    }

    fn has_third(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn monomial_derivatives() {
        let f = quarter_quartic();
        let x = dvector![2.0];
        assert_eq!(f.value(&x), 4.0);
        assert_eq!(f.gradient(&x)[0], 8.0);
        assert_eq!(f.hessian(&x)[(0, 0)], 12.0);
        assert_eq!(f.lipschitz_l3(), 6.0);
        // D³f(x)[s, s] = 6 x s²
        let s = dvector![0.7];
        let t = f.third_action(&x, &s).unwrap()[0];
        assert!((t - 6.0 * 2.0 * 0.49).abs() < 1e-14);
    }

    #[test]
    fn asymmetric_q_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            make_quartic(q, Point::zeros(2), 1.0),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn indefinite_q_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            make_quartic(q, Point::zeros(2), 1.0),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn pure_quadratic_has_default_l3() {
        let f = make_quartic(DMatrix::identity(3, 3), Point::zeros(3), 0.0).unwrap();
        assert_eq!(f.lipschitz_l3(), QUADRATIC_L3);
        let x = dvector![1.0, 2.0, 3.0];
        assert_eq!(f.gradient(&x), x);
    }

    #[test]
    fn random_quartic_is_reproducible() {
        let a = random_quartic(3, 4, 0.5, 1.0).unwrap();
        let b = random_quartic(3, 4, 0.5, 1.0).unwrap();
        assert_eq!(a.q(), b.q());
        assert_eq!(a.c(), b.c());
        assert_eq!(a.lipschitz_l3(), 3.0);
    }
}
