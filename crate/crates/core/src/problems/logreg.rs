use nalgebra::{DMatrix, DVector};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::oracle::{Oracle, Point};

/// `max_t |ψ''''(t)|` for the softplus `ψ(t) = log(1 + eᵗ)`.
///
/// With `σ` the logistic function and `u = σ(1 − σ) ∈ (0, 1/4]`,
/// `ψ'''' = u(1 − 6u)`, whose modulus peaks at `u = 1/4` (that is `t = 0`)
/// with value `1/8`.
pub const SOFTPLUS_D4_MAX: f64 = 0.125;

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eᵗ)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Derivatives one to four of [`softplus`] at `t`.
pub fn softplus_derivatives(t: f64) -> [f64; 4] {
    let s = sigmoid(t);
    let u = s * (1.0 - s);
    [s, u, u * (1.0 - 2.0 * s), u * (1.0 - 6.0 * u)]
}

/// Regularized logistic loss
/// `f(x) = (1/m) Σ log(1 + exp(−y_k⟨a_k, x⟩)) + (ridge/2)‖x‖²`.
#[derive(Debug, Clone)]
pub struct LogReg {
    data: Dataset,
    ridge: f64,
    l3: f64,
}

/// Build the logistic-regression oracle for `data`.
pub fn make_logreg(data: Dataset, ridge: f64) -> Result<LogReg> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    let m = data.m() as f64;
    let mean_row4 = data
        .features()
        .row_iter()
        .map(|r| r.norm_squared().powi(2))
        .sum::<f64>()
        / m;
    let l3 = SOFTPLUS_D4_MAX * mean_row4;
    Ok(LogReg { data, ridge, l3 })
}

impl LogReg {
    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Margins `z_k = −y_k⟨a_k, x⟩`.
    fn margins(&self, x: &Point) -> DVector<f64> {
        let ax = self.data.features() * x;
        -ax.component_mul(self.data.labels())
    }

    fn weighted_gram(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let a = self.data.features();
        let mut scaled = a.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut g = a.transpose() * scaled;
        g /= self.data.m() as f64;
        // exact symmetry
        let gt = g.transpose();
        (g + gt) * 0.5
    }
}

impl Oracle for LogReg {
    fn dim(&self) -> usize {
        self.data.n()
    }

    fn lipschitz_l3(&self) -> f64 {
        self.l3
    }

    fn value(&self, x: &Point) -> f64 {
        let z = self.margins(x);
        z.iter().map(|&t| softplus(t)).sum::<f64>() / self.data.m() as f64
            + 0.5 * self.ridge * x.norm_squared()
    }

    fn gradient(&self, x: &Point) -> Point {
        let z = self.margins(x);
        // d/dx ψ(z_k) = ψ'(z_k)·(−y_k a_k)
        let coef = DVector::from_iterator(
            z.len(),
            z.iter()
                .zip(self.data.labels().iter())
                .map(|(&t, &y)| -y * sigmoid(t)),
        );
        self.data.features().transpose() * coef / self.data.m() as f64 + x * self.ridge
    }

    fn hessian(&self, x: &Point) -> DMatrix<f64> {
        let z = self.margins(x);
        let w = z.map(|t| softplus_derivatives(t)[1]);
        let mut h = self.weighted_gram(&w);
        for i in 0..h.nrows() {
            h[(i, i)] += self.ridge;
        }
        h
    }

    fn third_directional(&self, x: &Point, s: &Point) -> Option<DMatrix<f64>> {
        let z = self.margins(x);
        let as_ = self.data.features() * s;
        // (−y)³ = −y for y = ±1
        let w = DVector::from_iterator(
            z.len(),
            (0..z.len()).map(|k| softplus_derivatives(z[k])[2] * (-self.data.labels()[k]) * as_[k]),
        );
        Some(self.weighted_gram(&w))
    }

    fn has_third(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::super::dataset::synth_logreg;
    use super::*;
    use crate::oracle::{default_fd_step, fd_check_grad};

    #[test]
    fn value_at_origin_is_log2() {
        for seed in [1, 2, 3] {
            let d = synth_logreg(seed, 17, 4).unwrap();
            let f = make_logreg(d, 0.0).unwrap();
            assert!((f.value(&Point::zeros(4)) - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_at_origin() {
        let d = synth_logreg(5, 30, 3).unwrap();
        let f = make_logreg(d.clone(), 0.0).unwrap();
        let mut expect = Point::zeros(3);
        for k in 0..d.m() {
            expect -= d.features().row(k).transpose() * d.labels()[k];
        }
        expect /= 2.0 * d.m() as f64;
        let g = f.gradient(&Point::zeros(3));
        assert!((g - expect).norm() < 1e-15);
        let x = Point::zeros(3);
        assert!(fd_check_grad(&f, &x, default_fd_step(&x)).unwrap() <= 1e-6);
    }

    #[test]
    fn softplus_fourth_derivative_peak_matches_grid_search() {
        // independent 1D search: dense grid then golden refinement
        let g = |t: f64| {
            let s = 1.0 / (1.0 + (-t).exp());
            (s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)).abs()
        };
        let (mut best_t, mut best) = (0.0, 0.0);
        let mut t = -20.0;
        while t <= 20.0 {
            if g(t) > best {
                best = g(t);
                best_t = t;
            }
            t += 1e-3;
        }
        let (mut lo, mut hi) = (best_t - 1e-3, best_t + 1e-3);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if g(a) > g(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let peak = g(0.5 * (lo + hi));
        assert!((peak - SOFTPLUS_D4_MAX).abs() < 1e-12, "{peak}");
        assert_eq!(softplus_derivatives(0.0)[3], -0.125);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
    }

    #[test]
    fn negative_ridge_rejected() {
        let d = synth_logreg(1, 3, 2).unwrap();
        assert!(make_logreg(d, -1.0).is_err());
    }
}
