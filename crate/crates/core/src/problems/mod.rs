//! Convex test problems with known third-derivative Lipschitz constants.

mod dataset;
mod logreg;
mod quartic;
mod worst_case;

pub use dataset::{load_libsvm, parse_libsvm, synth_logreg, Dataset, LABEL_FLIP_RATE};
pub use logreg::{make_logreg, softplus, softplus_derivatives, LogReg, SOFTPLUS_D4_MAX};
pub use quartic::{make_quartic, quarter_quartic, random_quartic, Quartic, QUADRATIC_L3};
pub use worst_case::{make_worst_case, WorstCase};

use crate::bdgm::fd_third_action;
use crate::oracle::{Oracle, Point};
use crate::rng::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L3Method {
    AnalyticBound,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L3Estimate {
    pub value: f64,
    pub method: L3Method,
}

/// The constant the oracle reports.
pub fn analytic_l3<O: Oracle + ?Sized>(oracle: &O) -> L3Estimate {
    L3Estimate {
        value: oracle.lipschitz_l3(),
        method: L3Method::AnalyticBound,
    }
}

/// Empirical lower estimate of `L3`:
/// `max ‖(D³f(x) − D³f(y))[s, s]‖ / (‖x − y‖‖s‖²)` over random `x, y` in the
/// ball of radius `radius` and random unit `s`, with third-derivative actions
/// taken by central second differences of the gradient.
pub fn estimate_l3_sampled<O: Oracle + ?Sized>(
    oracle: &O,
    samples: usize,
    radius: f64,
    seed: u64,
) -> L3Estimate {
    let n = oracle.dim();
    let mut stream = SeededStream::new(seed);
    let draw_ball = |stream: &mut SeededStream| {
        let v = Point::from_vec(stream.normals(n));
        let r = radius * stream.uniform().powf(1.0 / n as f64);
        v.normalize() * r
    };
    let mut best = 0.0_f64;
    for _ in 0..samples {
        let x = draw_ball(&mut stream);
        let y = draw_ball(&mut stream);
        let s = Point::from_vec(stream.normals(n)).normalize();
        let dist = (&x - &y).norm();
        if dist < 1e-3 * radius {
            continue;
        }
        let tau = |p: &Point| f64::EPSILON.powf(0.25) * p.norm().max(1.0);
        let dx = fd_third_action(oracle, &x, &s, tau(&x));
        let dy = fd_third_action(oracle, &y, &s, tau(&y));
        best = best.max((dx - dy).norm() / dist);
    }
    L3Estimate {
        value: best,
        method: L3Method::Sampled,
    }
}
