//! High-accuracy optimal values for the gap columns of the harness.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::oracle::{check_dim, ensure_finite_vec, Oracle, Point};

/// Gradient-norm target of [`reference_fstar`].
pub const REFERENCE_GRAD_TOL: f64 = 1e-13;

/// Default iteration budget of [`reference_fstar`].
pub const REFERENCE_BUDGET: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub x: Point,
    pub f: f64,
    pub grad_norm: f64,
    pub iters: usize,
}

/// Solve `(H + μI)d = −g` with the smallest `μ ∈ {0, 1e-14·s, 1e-12·s, …}`
/// for which the Cholesky factorization succeeds.
fn newton_step(h: &DMatrix<f64>, g: &Point) -> Option<Point> {
    let n = g.len();
    let scale = 1.0 + h.amax();
    let mut mu = 0.0;
    for _ in 0..12 {
        let shifted = h + DMatrix::identity(n, n) * mu;
        if let Some(ch) = Cholesky::new(shifted) {
            let d = -ch.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        mu = if mu == 0.0 { 1e-14 * scale } else { mu * 100.0 };
    }
    None
}

/// Damped Newton from `x0` until `‖∇f‖ ≤ 1e-13`.
///
/// A full step is taken when it at least halves the gradient norm; otherwise
/// Armijo backtracking on `f`. Fails with [`Error::BudgetExhausted`] if the
/// target is not met within `budget` iterations.
pub fn reference_fstar<O: Oracle + ?Sized>(
    oracle: &O,
    x0: &Point,
    budget: usize,
) -> Result<ReferenceSolution> {
    check_dim(oracle.dim(), x0)?;
    let mut x = x0.clone();
    let mut f = oracle.value(&x);
    let mut g = oracle.gradient(&x);
    ensure_finite_vec(&g, "gradient")?;
    for iters in 0..=budget {
        let gnorm = g.norm();
        if gnorm <= REFERENCE_GRAD_TOL {
            return Ok(ReferenceSolution {
                x,
                f,
                grad_norm: gnorm,
                iters,
            });
        }
        if iters == budget {
            break;
        }
        let h = oracle.hessian(&x);
        let Some(d) = newton_step(&h, &g) else { break };
        let full = &x + &d;
        let g_full = oracle.gradient(&full);
        if g_full.norm() <= 0.5 * gnorm {
            x = full;
            f = oracle.value(&x);
            g = g_full;
            continue;
        }
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = &x + &d * t;
            let ft = oracle.value(&trial);
            if ft < f && ft <= f + 1e-4 * t * slope {
                x = trial;
                f = ft;
                g = oracle.gradient(&x);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            if g_full.norm() < gnorm {
                x = full;
                f = oracle.value(&x);
                g = g_full;
            } else {
                break;
            }
        }
    }
    Err(Error::BudgetExhausted {
        budget,
        grad_norm: g.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quartic, quarter_quartic};
    use nalgebra::dvector;

    #[test]
    fn quadratic_matches_closed_form() {
        // f = ½xᵀQx + cᵀx, f* = −½cᵀQ⁻¹c
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = dvector![1.0, -2.0];
        let f = make_quartic(q.clone(), c.clone(), 0.0).unwrap();
        let sol = reference_fstar(&f, &dvector![3.0, 3.0], 50).unwrap();
        let exact = -0.5 * c.dot(&q.clone().lu().solve(&c).unwrap());
        assert!((sol.f - exact).abs() <= 1e-14, "{} vs {exact}", sol.f);
    }

    #[test]
    fn monomial_reaches_zero() {
        let sol = reference_fstar(&quarter_quartic(), &dvector![1.0], 200).unwrap();
        assert!(sol.grad_norm <= REFERENCE_GRAD_TOL);
        assert!(sol.f.abs() <= 1e-16 && sol.x[0].abs() <= 1e-4);
    }

    #[test]
    fn budget_is_enforced() {
        assert!(matches!(
            reference_fstar(&quarter_quartic(), &dvector![1.0], 3),
            Err(Error::BudgetExhausted { budget: 3, .. })
        ));
    }
}
