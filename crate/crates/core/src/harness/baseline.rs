//! Plain gradient descent, for comparison in the same trace schema.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::oracle::{check_dim, ensure_finite_vec, CountedOracle, Oracle, Point};
use crate::trace::TraceRecord;

/// Attempts per step before declaring divergence.
pub const MAX_REFRESHES: usize = 60;

/// Largest eigenvalue of a symmetric PSD matrix by power iteration from the
/// all-ones direction (with a fallback basis vector if that is in the
/// kernel).
pub fn power_iteration(h: &DMatrix<f64>, iters: usize) -> f64 {
    let n = h.nrows();
    let mut v = Point::from_element(n, 1.0 / (n as f64).sqrt());
    if (h * &v).norm() == 0.0 {
        // ones may be in the kernel; try each basis vector
        match (0..n)
            .map(|i| (i, h.column(i).norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
        {
            Some((i, norm)) if norm > 0.0 => {
                v = Point::zeros(n);
                v[i] = 1.0;
            }
            _ => return 0.0,
        }
    }
    let mut est = 0.0;
    for _ in 0..iters {
        let w = h * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - est).abs() <= 1e-12 * next.abs() {
            return next.max(norm);
        }
        est = next;
    }
    est
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub timing: bool,
}

#[derive(Debug)]
pub struct GdRun {
    pub x: Point,
    pub trace: Vec<TraceRecord>,
    /// Set when the run diverged; `trace` holds the rows before that.
    pub error: Option<Error>,
}

/// Gradient descent with step `1/L₁`, `L₁` from power iteration on
/// `∇²f(x₀)`. When a step fails to decrease `f`, `L₁` is raised to
/// `max(2L₁, λ_max(∇²f(x_k)))` and the step retried; after
/// [`MAX_REFRESHES`] failed attempts the run reports [`Error::Divergence`].
pub fn baseline_gd<O: Oracle>(
    oracle: &CountedOracle<O>,
    x0: Point,
    cfg: &GdConfig,
) -> Result<GdRun> {
    check_dim(oracle.dim(), &x0)?;
    let started = Instant::now();
    let wall = || {
        if cfg.timing {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };
    let mut x = x0;
    let mut f = oracle.value(&x);
    let mut g = oracle.gradient(&x);
    ensure_finite_vec(&g, "gradient")?;
    let mut l1 = power_iteration(&oracle.hessian(&x), 500);
    let mut gmax = g.norm();
    let mut hmax = l1;
    let row = |k, f, gnorm, r, step, tries, gmax, hmax, wall_ms| {
        let c = oracle.counts();
        TraceRecord {
            k,
            f,
            grad_norm: gnorm,
            step_radius: r,
            lambda: step,
            a_acc: 0.0,
            inner_iters: tries,
            n_grad: c.grad,
            n_hess: c.hess,
            max_grad_norm: gmax,
            max_hess_norm: hmax,
            wall_ms,
            components: None,
        }
    };
    let mut trace = vec![row(0, f, gmax, 0.0, 0.0, 0, gmax, hmax, wall())];
    for k in 1..=cfg.max_iters {
        let gnorm = g.norm();
        if gnorm == 0.0 || gnorm <= cfg.grad_tol {
            break;
        }
        let mut accepted = None;
        for tries in 1..=MAX_REFRESHES as u64 {
            if !(l1 > 0.0) || !l1.is_finite() {
                l1 = 1.0;
            }
            let trial = &x - &g * (1.0 / l1);
            let ft = oracle.value(&trial);
            if ft <= f {
                accepted = Some((trial, ft, tries));
                break;
            }
            let h = oracle.hessian(&x);
            let fresh = power_iteration(&h, 500);
            hmax = hmax.max(fresh);
            l1 = (2.0 * l1).max(fresh);
        }
        let Some((next, fnext, tries)) = accepted else {
            return Ok(GdRun {
                x,
                trace,
                error: Some(Error::Divergence { step: k, value: f }),
            });
        };
        let r = (&next - &x).norm();
        x = next;
        f = fnext;
        g = oracle.gradient(&x);
        ensure_finite_vec(&g, "gradient")?;
        gmax = gmax.max(g.norm());
        trace.push(row(k, f, g.norm(), r, 1.0 / l1, tries, gmax, hmax, wall()));
    }
    Ok(GdRun {
        x,
        trace,
        error: None,
    })
}
