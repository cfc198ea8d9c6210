use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oracle::{sym_opnorm, Oracle, Point};

/// `f_3(x) = x₁⁴ + Σ_{i≥2} (x_i − x_{i−1})⁴`.
///
/// Writing `t = Bx` with `B` the lower bidiagonal difference operator,
/// `f_3 = Σ t_j⁴` and `D⁴f[s,s,s] = 24·Bᵀ(Bs)³`. Since `|(Bs)_j| ≤ √2‖s‖`,
/// `‖(Bs)³‖ ≤ 2‖B‖‖s‖³`, so `L3 = min(24‖B‖⁴, 48‖B‖²)` bounds the fourth
/// derivative (the first term is tighter only for `n = 1`, where it gives 24).
#[derive(Debug, Clone)]
pub struct WorstCase {
    b: DMatrix<f64>,
    l3: f64,
}

/// The worst-case chain function for order `p`; only `p = 3` is supported.
pub fn make_worst_case(p: u32, n: usize) -> Result<WorstCase> {
    if p != 3 {
        return Err(Error::UnsupportedOrder(p));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    let mut b = DMatrix::identity(n, n);
    for i in 1..n {
        b[(i, i - 1)] = -1.0;
    }
    let b_norm2 = sym_opnorm(&(b.transpose() * &b));
    let l3 = (24.0 * b_norm2 * b_norm2).min(48.0 * b_norm2);
    Ok(WorstCase { b, l3 })
}

impl WorstCase {
    fn diffs(&self, x: &Point) -> DVector<f64> {
        &self.b * x
    }

    fn congruence(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.b.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= w[i];
        }
        self.b.transpose() * scaled
    }
}

impl Oracle for WorstCase {
    fn dim(&self) -> usize {
        self.b.nrows()
    }

    fn lipschitz_l3(&self) -> f64 {
        self.l3
    }

    fn value(&self, x: &Point) -> f64 {
        self.diffs(x).iter().map(|t| t.powi(4)).sum()
    }

    fn gradient(&self, x: &Point) -> Point {
        let t = self.diffs(x);
        self.b.transpose() * t.map(|v| 4.0 * v.powi(3))
    }

    fn hessian(&self, x: &Point) -> DMatrix<f64> {
        let t = self.diffs(x);
        self.congruence(&t.map(|v| 12.0 * v * v))
    }

    fn third_directional(&self, x: &Point, s: &Point) -> Option<DMatrix<f64>> {
        let t = self.diffs(x);
        let u = self.diffs(s);
        Some(self.congruence(&t.component_mul(&u).map(|v| 24.0 * v)))
    }

    fn has_third(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fd_check_hess;
    use nalgebra::dvector;

    #[test]
    fn vanishes_at_origin() {
        let f = make_worst_case(3, 4).unwrap();
        let z = Point::zeros(4);
        assert_eq!(f.value(&z), 0.0);
        assert_eq!(f.gradient(&z), Point::zeros(4));
    }

    #[test]
    fn hand_values() {
        let f = make_worst_case(3, 2).unwrap();
        assert_eq!(f.value(&dvector![1.0, 1.0]), 1.0);
        assert_eq!(f.gradient(&dvector![1.0, 1.0]), dvector![4.0, 0.0]);
        assert_eq!(f.value(&dvector![1.0, 2.0]), 2.0);
        assert_eq!(f.gradient(&dvector![1.0, 2.0]), dvector![0.0, 4.0]);
    }

    #[test]
    fn hessian_matches_differences() {
        let f = make_worst_case(3, 2).unwrap();
        let err = fd_check_hess(&f, &dvector![1.0, 1.0], 1e-5).unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn only_third_order() {
        assert!(matches!(
            make_worst_case(2, 3),
            Err(Error::UnsupportedOrder(2))
        ));
        assert_eq!(make_worst_case(3, 1).unwrap().lipschitz_l3(), 24.0);
    }
}
