//! Second-order sliding for `f = g + h` with `L3(g) ≤ L3(h)`.
//!
//! Three nested levels:
//!
//! 1. the outer accelerated loop builds models of `g` only
//!    (`H_g = ξ·L3(g)`) and takes the dual step `x ← x − a(∇g + ∇h)(y)`;
//! 2. each outer subproblem `min_y Ω̃_g(x̃; y) + h(y)` is solved by the same
//!    accelerated loop applied to `F = Ω̃_g(x̃; ·) + h`, stopped as soon as
//!    its iterate passes the outer inexactness test
//!    `‖∇Ω̃_g(x̃; y) + ∇h(y)‖ ≤ γ‖∇g(y) + ∇h(y)‖`;
//! 3. the middle loop's own subproblems go to BDGM.
//!
//! `F` has `L3(F) ≤ L3(h) + 4H_g`: the cubic part of the model of `g` has a
//! constant third derivative and the quartic `(H_g/6)‖s‖⁴` has fourth
//! derivative bounded by `4H_g`.
//!
//! Every outer subproblem costs one Hessian of `g` and about `n² + n`
//! gradients of `g` (for the third-derivative tensor at the anchor), while
//! all the middle-level Hessians are Hessians of `h`.

use std::cell::RefCell;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use crate::bdgm::{fd_third_action_with_center, BdgmConfig};
use crate::error::{Error, Result};
use crate::natmi::{
    run_outer, validate_params, BdgmSubproblem, CountSnapshot, LoopOptions, NatmiConfig, NatmiRun,
    Objective, StopReason, SubSolution, Subproblem, Unmetered,
};
use crate::oracle::{check_dim, ensure_finite_vec, CountedOracle, Oracle, Point, SumOracle};
use crate::taylor::{fd_displacement, membership_tol, Membership, ModelSpec, MODEL_ORDER};
use crate::trace::ComponentCounts;

pub type SharedOracle = Arc<dyn Oracle>;

/// `g` and `h` with per-component call counters.
pub struct CompositeProblem {
    g: CountedOracle<SharedOracle>,
    h: CountedOracle<SharedOracle>,
    swapped: bool,
}

impl CompositeProblem {
    /// Order the parts so that `L3(g) ≤ L3(h)`; [`Self::swapped`] reports
    /// whether the arguments had to be exchanged.
    pub fn new(g: SharedOracle, h: SharedOracle) -> Result<Self> {
        if g.dim() != h.dim() {
            return Err(Error::DimensionMismatch {
                expected: g.dim(),
                got: h.dim(),
            });
        }
        // the zero function stays in the h slot regardless of constants
        let swapped = !h.is_zero() && (g.is_zero() || g.lipschitz_l3() > h.lipschitz_l3());
        let (g, h) = if swapped { (h, g) } else { (g, h) };
        Ok(Self {
            g: CountedOracle::new(g),
            h: CountedOracle::new(h),
            swapped,
        })
    }

    pub fn g(&self) -> &CountedOracle<SharedOracle> {
        &self.g
    }

    pub fn h(&self) -> &CountedOracle<SharedOracle> {
        &self.h
    }

    pub fn swapped(&self) -> bool {
        self.swapped
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    pub fn l3_g(&self) -> f64 {
        self.g.lipschitz_l3()
    }

    pub fn l3_h(&self) -> f64 {
        self.h.lipschitz_l3()
    }

    pub fn counts(&self) -> ComponentCounts {
        let (g, h) = (self.g.counts(), self.h.counts());
        ComponentCounts {
            grad_g: g.grad,
            hess_g: g.hess,
            grad_h: h.grad,
            hess_h: h.hess,
        }
    }
}

impl Objective for CompositeProblem {
    fn value(&self, y: &Point) -> f64 {
        self.g.value(y) + self.h.value(y)
    }

    fn gradient(&self, y: &Point) -> Point {
        self.g.gradient(y) + self.h.gradient(y)
    }

    fn counts(&self) -> CountSnapshot {
        let c = CompositeProblem::counts(self);
        CountSnapshot {
            n_grad: c.grad_g + c.grad_h,
            n_hess: c.hess_g + c.hess_h,
            components: Some(c),
        }
    }
}

/// `‖∇Ω̃_g(x̃; T) + ∇h(T)‖ ≤ γ‖∇g(T) + ∇h(T)‖` with `H = reg`.
pub fn composite_membership(
    prob: &CompositeProblem,
    anchor: &Point,
    t: &Point,
    gamma: f64,
    reg: f64,
) -> Result<Membership> {
    check_dim(prob.dim(), t)?;
    let spec = ModelSpec::new(&prob.g, anchor.clone(), MODEL_ORDER, reg)?;
    let grad_h_t = prob.h.gradient(t);
    let lhs = (spec.model_grad(t)? + &grad_h_t).norm();
    let rhs = gamma * (prob.g.gradient(t) + grad_h_t).norm();
    let anchor_grad = (spec.grad_anchor() + prob.h.gradient(anchor)).norm();
    Ok(Membership {
        lhs,
        rhs,
        member: lhs <= rhs + membership_tol(anchor_grad),
    })
}

/// Symmetric third-derivative tensor stored as the slices `D³f[e_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThirdTensor {
    slices: Vec<DMatrix<f64>>,
}

impl ThirdTensor {
    /// `D³f(x̃)` from second differences of the gradient along `e_i` and
    /// `e_i + e_j`, polarized and symmetrized; `n(n+1)` gradient calls.
    pub fn from_gradients<O: Oracle + ?Sized>(oracle: &O, anchor: &Point, center: &Point) -> Self {
        let n = anchor.len();
        let h = fd_displacement(anchor);
        let unit = |i: usize| {
            let mut e = Point::zeros(n);
            e[i] = 1.0;
            e
        };
        let diag: Vec<Point> = (0..n)
            .map(|i| fd_third_action_with_center(oracle, anchor, center, &unit(i), h))
            .collect();
        // raw[i][j] = D³f[e_i, e_j]
        let mut raw = vec![vec![Point::zeros(n); n]; n];
        for i in 0..n {
            raw[i][i] = diag[i].clone();
            for j in i + 1..n {
                let s = unit(i) + unit(j);
                let both = fd_third_action_with_center(oracle, anchor, center, &s, h);
                let v = (both - &diag[i] - &diag[j]) * 0.5;
                raw[i][j] = v.clone();
                raw[j][i] = v;
            }
        }
        let mut slices = vec![DMatrix::zeros(n, n); n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let t = (raw[i][j][k] + raw[j][k][i] + raw[k][i][j]) / 3.0;
                    slices[i][(j, k)] = t;
                }
            }
        }
        Self { slices }
    }

    /// Exact tensor from an oracle with closed-form third derivatives.
    pub fn from_oracle<O: Oracle + ?Sized>(oracle: &O, anchor: &Point) -> Option<Self> {
        let n = anchor.len();
        let mut slices = Vec::with_capacity(n);
        for i in 0..n {
            let mut e = Point::zeros(n);
            e[i] = 1.0;
            slices.push(oracle.third_directional(anchor, &e)?);
        }
        Some(Self { slices })
    }

    pub fn dim(&self) -> usize {
        self.slices.len()
    }

    /// `D³f[s]`.
    pub fn contract(&self, s: &Point) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, slice) in self.slices.iter().enumerate() {
            if s[i] != 0.0 {
                m += slice * s[i];
            }
        }
        m
    }
}

/// The regularized third-order model of `g` at a fixed anchor, as an oracle.
pub struct ModelOracle<'a> {
    g: &'a dyn Oracle,
    anchor: Point,
    grad: Point,
    hess: DMatrix<f64>,
    tensor: ThirdTensor,
    reg: f64,
    value: OnceLock<f64>,
}

impl<'a> ModelOracle<'a> {
    pub fn new(
        g: &'a dyn Oracle,
        anchor: Point,
        grad: Point,
        hess: DMatrix<f64>,
        tensor: ThirdTensor,
        reg: f64,
    ) -> Self {
        Self {
            g,
            anchor,
            grad,
            hess,
            tensor,
            reg,
            value: OnceLock::new(),
        }
    }

    pub fn anchor(&self) -> &Point {
        &self.anchor
    }
}

impl Oracle for ModelOracle<'_> {
    fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// Fourth-derivative bound of `(H/6)‖s‖⁴`.
    fn lipschitz_l3(&self) -> f64 {
        4.0 * self.reg
    }

    fn value(&self, y: &Point) -> f64 {
        let f0 = *self.value.get_or_init(|| self.g.value(&self.anchor));
        let s = y - &self.anchor;
        let r2 = s.norm_squared();
        let ts = self.tensor.contract(&s);
        f0 + self.grad.dot(&s)
            + 0.5 * s.dot(&(&self.hess * &s))
            + s.dot(&(&ts * &s)) / 6.0
            + self.reg / 6.0 * r2 * r2
    }

    fn gradient(&self, y: &Point) -> Point {
        let s = y - &self.anchor;
        let r2 = s.norm_squared();
        let ts = self.tensor.contract(&s);
        &self.grad + &self.hess * &s + (&ts * &s) * 0.5 + &s * (2.0 * self.reg / 3.0 * r2)
    }

    fn hessian(&self, y: &Point) -> DMatrix<f64> {
        let s = y - &self.anchor;
        let n = s.len();
        let c = 2.0 * self.reg / 3.0;
        let mut m = &self.hess + self.tensor.contract(&s);
        m += DMatrix::identity(n, n) * (c * s.norm_squared());
        m += (&s * s.transpose()) * (2.0 * c);
        m
    }

    fn third_directional(&self, y: &Point, u: &Point) -> Option<DMatrix<f64>> {
        let s = y - &self.anchor;
        let n = s.len();
        let c = 2.0 * self.reg / 3.0;
        let mut m = self.tensor.contract(u);
        m += DMatrix::identity(n, n) * (2.0 * c * s.dot(u));
        m += (u * s.transpose() + &s * u.transpose()) * (2.0 * c);
        Some(m)
    }

    fn has_third(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingConfig {
    /// Outer loop settings; `gamma`, `xi`, `eps` and `bdgm` are shared with
    /// the middle level.
    pub natmi: NatmiConfig,
    /// Iteration cap of each middle-level solve.
    pub middle_max_iters: usize,
}

impl Default for SlidingConfig {
    fn default() -> Self {
        Self {
            natmi: NatmiConfig::default(),
            middle_max_iters: 200,
        }
    }
}

/// Outer subproblem solver: the middle loop on `Ω̃_g(x̃; ·) + h`.
struct MiddleLevel<'p> {
    prob: &'p CompositeProblem,
    cfg: &'p SlidingConfig,
    reg_g: f64,
    bdgm: BdgmConfig,
}

impl MiddleLevel<'_> {
    fn solve_zero_h(&mut self, anchor: &Point) -> Result<SubSolution> {
        let mut sub = BdgmSubproblem::new(
            &self.prob.g,
            self.reg_g,
            self.cfg.natmi.eps,
            self.bdgm.clone(),
        );
        let mut sol = sub.solve_at(anchor)?;
        sol.grad_y += self.prob.h.gradient(&sol.y);
        Ok(sol)
    }
}

impl Subproblem for MiddleLevel<'_> {
    fn solve_at(&mut self, anchor: &Point) -> Result<SubSolution> {
        if self.prob.h.is_zero() {
            return self.solve_zero_h(anchor);
        }
        let g = &self.prob.g;
        let grad_g = g.gradient(anchor);
        ensure_finite_vec(&grad_g, "gradient")?;
        let hess_g = g.hessian(anchor);
        let tensor = ThirdTensor::from_gradients(g, anchor, &grad_g);
        let model = ModelOracle::new(g, anchor.clone(), grad_g, hess_g, tensor, self.reg_g);
        let f_mid = SumOracle::new(&model, &self.prob.h)?;
        let reg_mid = self.cfg.natmi.xi * f_mid.lipschitz_l3();

        let mut mid_cfg = self.cfg.natmi.clone();
        mid_cfg.max_iters = self.cfg.middle_max_iters;
        mid_cfg.grad_tol = 0.0;
        mid_cfg.timing = false;
        let gamma = mid_cfg.gamma;
        let mut inner = BdgmSubproblem::new(&f_mid, reg_mid, mid_cfg.eps, self.bdgm.clone());

        let tol = RefCell::new(None::<f64>);
        let last_grad_f = RefCell::new(None::<Point>);
        let mut accept = |y: &Point, grad_mid: &Point| -> Result<bool> {
            let grad_h = grad_mid - model.gradient(y);
            let grad_f = g.gradient(y) + grad_h;
            let tol = *tol
                .borrow_mut()
                .get_or_insert_with(|| membership_tol(grad_f.norm()));
            let member = grad_mid.norm() <= gamma * grad_f.norm() + tol;
            *last_grad_f.borrow_mut() = Some(grad_f);
            Ok(member)
        };
        let run = run_outer(
            &mid_cfg,
            &mut inner,
            &Unmetered(&f_mid),
            anchor.clone(),
            LoopOptions {
                reg: reg_mid,
                record_values: false,
                stop_when: Some(&mut accept),
            },
        )?;
        let run = run.into_result()?;
        let inner_iters: u64 = run.trace.iter().map(|r| r.inner_iters).sum();
        let anchor_grad_norm = run.trace[0].grad_norm;
        let anchor_hess_norm = run.trace.last().map_or(0.0, |r| r.max_hess_norm);
        let outer_test = |y: &Point| -> Option<Point> {
            let grad_mid = f_mid.gradient(y);
            let grad_f = g.gradient(y) + (&grad_mid - model.gradient(y));
            let ok = grad_mid.norm() <= gamma * grad_f.norm() + membership_tol(grad_f.norm());
            ok.then_some(grad_f)
        };
        let (y, grad_y) = match run.stop {
            StopReason::Predicate => (
                run.y.clone(),
                last_grad_f.into_inner().expect("set by predicate"),
            ),
            StopReason::Stationary | StopReason::AccuracyFloor => {
                // ∇F is zero or below the inner floor near these points
                let mut candidates = vec![run.y.clone()];
                candidates.extend(run.floor_point.clone());
                let found = candidates
                    .iter()
                    .rev()
                    .find_map(|y| outer_test(y).map(|gf| (y.clone(), gf)));
                match found {
                    Some(hit) => hit,
                    None => {
                        // both levels are at the inner accuracy floor
                        let best = candidates.last().expect("nonempty");
                        return Err(Error::AccuracyFloor {
                            grad_norm: f_mid.gradient(best).norm(),
                            floor: 0.0,
                            point: best.iter().copied().collect(),
                        });
                    }
                }
            }
            StopReason::MaxIters | StopReason::GradTol | StopReason::Failed => {
                return Err(Error::MiddleLevel(mid_cfg.max_iters))
            }
        };
        // passing only through the absolute slack of the test means the
        // gradients are at roundoff level: report the floor instead
        let grad_mid_norm = f_mid.gradient(&y).norm();
        if grad_mid_norm > gamma * grad_y.norm() {
            return Err(Error::AccuracyFloor {
                grad_norm: grad_y.norm(),
                floor: grad_mid_norm / gamma,
                point: y.iter().copied().collect(),
            });
        }
        Ok(SubSolution {
            stationary_anchor: run.state.k == 0 && anchor_grad_norm == 0.0,
            y,
            grad_y,
            inner_iters,
            anchor_grad_norm,
            anchor_hess_norm,
        })
    }
}

/// Per-component oracle totals of a sliding run.
pub type SlidingCounts = ComponentCounts;

/// The outer composite loop; the trace carries per-component counts.
pub fn solve_composite_natmi(
    prob: &CompositeProblem,
    x0: Point,
    cfg: &SlidingConfig,
) -> Result<NatmiRun> {
    check_dim(prob.dim(), &x0)?;
    validate_params(&cfg.natmi)?;
    let reg_g = cfg.natmi.xi * prob.l3_g();
    let mut bdgm = cfg.natmi.bdgm.clone();
    bdgm.gamma = cfg.natmi.gamma;
    let mut middle = MiddleLevel {
        prob,
        cfg,
        reg_g,
        bdgm,
    };
    run_outer(
        &cfg.natmi,
        &mut middle,
        prob,
        x0,
        LoopOptions {
            reg: reg_g,
            record_values: true,
            stop_when: None,
        },
    )
}

/// [`solve_composite_natmi`] plus the final per-component counts.
pub fn solve_sliding(
    prob: &CompositeProblem,
    x0: Point,
    cfg: &SlidingConfig,
) -> Result<(NatmiRun, SlidingCounts)> {
    let run = solve_composite_natmi(prob, x0, cfg)?;
    Ok((run, prob.counts()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ZeroOracle;
    use crate::problems::{make_quartic, quarter_quartic, random_quartic};
    use nalgebra::dvector;

    fn shared<O: Oracle + 'static>(o: O) -> SharedOracle {
        Arc::new(o)
    }

    #[test]
    fn composite_membership_examples() {
        let g = shared(quarter_quartic());
        let h = shared(make_quartic(DMatrix::identity(1, 1), Point::zeros(1), 0.0).unwrap());
        let prob = CompositeProblem::new(g, h).unwrap();
        // ½x² reports L3 = 1 < 6, so the parts are swapped; restore by hand
        assert!(prob.swapped());
        let g = shared(quarter_quartic());
        let h = shared(ZeroOracle::new(1));
        let prob0 = CompositeProblem::new(g, h).unwrap();
        assert!(!prob0.swapped());
        let m =
            composite_membership(&prob0, &dvector![1.0], &dvector![1.0], 1.0 / 6.0, 9.0).unwrap();
        assert_eq!(m.lhs, 1.0);
        assert!(!m.member);
    }

    #[test]
    fn hand_membership_with_half_square() {
        // g = x⁴/4 with a tiny a4 is not needed: build the problem directly
        let g: SharedOracle = shared(quarter_quartic());
        let h: SharedOracle =
            shared(make_quartic(DMatrix::identity(1, 1), Point::zeros(1), 1.0).unwrap());
        let prob = CompositeProblem::new(g, h).unwrap();
        assert!(!prob.swapped());
        let m =
            composite_membership(&prob, &dvector![1.0], &dvector![1.0], 1.0 / 6.0, 9.0).unwrap();
        // ∇g(1) + ∇h(1) = 1 + 2
        assert_eq!(m.lhs, 3.0);
        assert!((m.rhs - 0.5).abs() < 1e-15);
        assert!(!m.member);
    }

    #[test]
    fn tensor_from_gradients_matches_closed_form() {
        let f = random_quartic(4, 3, 0.8, 1.0).unwrap();
        let x = dvector![0.3, -0.7, 1.1];
        let fd = ThirdTensor::from_gradients(&f, &x, &f.gradient(&x));
        let exact = ThirdTensor::from_oracle(&f, &x).unwrap();
        for u in [dvector![1.0, 0.0, 0.0], dvector![0.3, -1.0, 2.0]] {
            let err = (fd.contract(&u) - exact.contract(&u)).norm();
            assert!(err <= 1e-6 * (1.0 + exact.contract(&u).norm()), "{err}");
        }
    }

    #[test]
    fn model_oracle_matches_taylor_model() {
        let f = random_quartic(5, 2, 1.0, 1.0).unwrap();
        let x = dvector![0.4, -0.2];
        let tensor = ThirdTensor::from_oracle(&f, &x).unwrap();
        let m = ModelOracle::new(&f, x.clone(), f.gradient(&x), f.hessian(&x), tensor, 9.0);
        let spec = ModelSpec::new(&f, x.clone(), 3, 9.0).unwrap();
        let y = dvector![0.9, 0.1];
        assert!((m.value(&y) - spec.model_value(&y).unwrap()).abs() < 1e-12);
        assert!((m.gradient(&y) - spec.model_grad(&y).unwrap()).norm() < 1e-12);
        assert!((m.hessian(&y) - spec.model_hessian(&y).unwrap()).norm() < 1e-12);
        assert!(crate::oracle::fd_check_hess(&m, &y, 1e-5).unwrap() < 1e-6);
        assert_eq!(m.lipschitz_l3(), 36.0);
    }

    #[test]
    fn zero_h_counts() {
        let prob =
            CompositeProblem::new(shared(quarter_quartic()), shared(ZeroOracle::new(1))).unwrap();
        let cfg = SlidingConfig {
            natmi: NatmiConfig {
                max_iters: 5,
                ..NatmiConfig::default()
            },
            ..SlidingConfig::default()
        };
        let (_, counts) = solve_sliding(&prob, dvector![1.0], &cfg).unwrap();
        assert_eq!(counts.hess_h, 0);
        assert!(counts.grad_h > 0);
        assert!(counts.hess_g > 0);
    }

    #[test]
    fn one_dimensional_composite_converges() {
        let g = shared(quarter_quartic());
        let h = shared(make_quartic(DMatrix::identity(1, 1), Point::zeros(1), 1.0).unwrap());
        let prob = CompositeProblem::new(g, h).unwrap();
        let cfg = SlidingConfig {
            natmi: NatmiConfig {
                max_iters: 30,
                grad_tol: 1e-8,
                ..NatmiConfig::default()
            },
            ..SlidingConfig::default()
        };
        let run = solve_composite_natmi(&prob, dvector![1.0], &cfg)
            .unwrap()
            .into_result()
            .unwrap();
        let grad = Objective::gradient(&prob, &run.y).norm();
        assert!(grad <= 1e-8, "{grad} ({:?})", run.stop);
        assert!(run.state.k <= 30);
        for it in &run.iterations {
            let m = composite_membership(&prob, &it.anchor, &it.y, 1.0 / 6.0, 1.5 * prob.l3_g())
                .unwrap();
            assert!(m.member, "{m:?}");
        }
    }
}
