//! Limited-memory BFGS with a strong-Wolfe cubic line search.
//!
//! Deliberately unconstrained: the experiments use no bounds, so the
//! box-constrained variant is out of scope.

use ndarray::{Array1, ArrayView1};
use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Max-norm gradient tolerance.
    pub grad_tol: f64,
    /// Relative objective-decrease tolerance.
    pub rel_f_tol: f64,
    pub max_iter: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_ls_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-6,
            rel_f_tol: 2.22e-9,
            max_iter: 500,
            c1: 1e-4,
            c2: 0.9,
            max_ls_evals: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradTol,
    RelFTol,
    MaxIter,
    LineSearchFailure,
    NanObjective,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::GradTol => "gradient tolerance reached",
            Termination::RelFTol => "relative objective decrease below tolerance",
            Termination::MaxIter => "iteration limit reached",
            Termination::LineSearchFailure => "line search failed",
            Termination::NanObjective => "objective returned NaN",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_max: f64,
    pub step: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, Default)]
pub struct OptimTrace {
    pub records: Vec<IterRecord>,
    pub total_evals: usize,
}

pub struct MinimizeResult {
    pub x: Array1<f64>,
    pub objective: f64,
    pub gradient: Array1<f64>,
    pub trace: OptimTrace,
    pub termination: Termination,
}

fn max_norm(v: ArrayView1<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

struct TwoLoop {
    pairs: VecDeque<(Array1<f64>, Array1<f64>, f64)>, // (s, y, 1/y.s)
    memory: usize,
}

impl TwoLoop {
    fn new(memory: usize) -> Self {
        Self { pairs: VecDeque::new(), memory }
    }

    fn push(&mut self, s: Array1<f64>, y: Array1<f64>) {
        let ys = y.dot(&s);
        // Skip pairs that would wreck positive definiteness.
        if ys <= 1e-10 * y.dot(&y).sqrt() * s.dot(&s).sqrt() {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / ys));
    }

    fn direction(&self, grad: &Array1<f64>) -> Array1<f64> {
        let mut q = -grad.clone();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q.scaled_add(-a, y);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = s.dot(y) / y.dot(y);
            q *= gamma;
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q.scaled_add(a - b, s);
        }
        q
    }
}

/// Safeguarded cubic minimizer of the interpolant through
/// `(a, fa, da)` and `(b, fb, db)`; falls back to bisection.
fn cubic_interpolate(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let mid = 0.5 * (a + b);
    if !fa.is_finite() || !fb.is_finite() {
        return mid;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return mid;
    }
    let d2 = disc.sqrt() * (b - a).signum();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let width = hi - lo;
    if !t.is_finite() || t < lo + 0.1 * width || t > hi - 0.1 * width {
        mid
    } else {
        t
    }
}

struct LineSearchOutcome {
    alpha: f64,
    f: f64,
    grad: Array1<f64>,
    evals: usize,
}

fn eval_along<F>(
    f: &mut F,
    x: &Array1<f64>,
    d: &Array1<f64>,
    alpha: f64,
    evals: &mut usize,
) -> (f64, Array1<f64>, f64)
where
    F: FnMut(&Array1<f64>) -> (f64, Array1<f64>),
{
    *evals += 1;
    let (fv, g) = f(&(x + &(d * alpha)));
    let dv = if fv.is_finite() { g.dot(d) } else { f64::INFINITY };
    (fv, g, dv)
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    f: &mut F,
    x: &Array1<f64>,
    d: &Array1<f64>,
    f0: f64,
    d0: f64,
    opts: &LbfgsOptions,
    mut lo: f64,
    mut f_lo: f64,
    mut d_lo: f64,
    mut hi: f64,
    mut f_hi: f64,
    mut d_hi: f64,
    evals: &mut usize,
) -> Option<LineSearchOutcome>
where
    F: FnMut(&Array1<f64>) -> (f64, Array1<f64>),
{
    while *evals < opts.max_ls_evals {
        let a = cubic_interpolate(lo, f_lo, d_lo, hi, f_hi, d_hi);
        let (fa, ga, da) = eval_along(f, x, d, a, evals);
        if !fa.is_finite() || fa > f0 + opts.c1 * a * d0 || fa >= f_lo {
            hi = a;
            f_hi = fa;
            d_hi = da;
        } else {
            if da.abs() <= -opts.c2 * d0 {
                return Some(LineSearchOutcome { alpha: a, f: fa, grad: ga, evals: *evals });
            }
            if da * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
                d_hi = d_lo;
            }
            lo = a;
            f_lo = fa;
            d_lo = da;
        }
        if (hi - lo).abs() < 1e-16 * lo.abs().max(1.0) {
            break;
        }
    }
    None
}

/// Strong-Wolfe line search (bracket + zoom with cubic interpolation).
/// Non-finite trial objectives are treated as "too far" and bracketed.
fn wolfe_search<F>(
    f: &mut F,
    x: &Array1<f64>,
    d: &Array1<f64>,
    f0: f64,
    d0: f64,
    alpha_init: f64,
    opts: &LbfgsOptions,
) -> Option<LineSearchOutcome>
where
    F: FnMut(&Array1<f64>) -> (f64, Array1<f64>),
{
    let mut evals = 0usize;
    let mut prev_a = 0.0;
    let mut prev_f = f0;
    let mut prev_d = d0;
    let mut a = alpha_init;
    while evals < opts.max_ls_evals {
        let (fa, ga, da) = eval_along(f, x, d, a, &mut evals);
        if !fa.is_finite() || fa > f0 + opts.c1 * a * d0 || (evals > 1 && fa >= prev_f) {
            return zoom(f, x, d, f0, d0, opts, prev_a, prev_f, prev_d, a, fa, da, &mut evals);
        }
        if da.abs() <= -opts.c2 * d0 {
            return Some(LineSearchOutcome { alpha: a, f: fa, grad: ga, evals });
        }
        if da >= 0.0 {
            return zoom(f, x, d, f0, d0, opts, a, fa, da, prev_a, prev_f, prev_d, &mut evals);
        }
        prev_a = a;
        prev_f = fa;
        prev_d = da;
        a *= 2.0;
    }
    None
}

/// Minimize `f` from `x0`. `observer` is called once per accepted
/// iteration, in order; it is how the trainers stream their logs.
pub fn minimize<F, O>(
    mut f: F,
    x0: Array1<f64>,
    opts: &LbfgsOptions,
    mut observer: O,
) -> MinimizeResult
where
    F: FnMut(&Array1<f64>) -> (f64, Array1<f64>),
    O: FnMut(&IterRecord),
{
    assert!(opts.memory >= 1, "memory must be at least 1");
    assert!(0.0 < opts.c1 && opts.c1 < opts.c2 && opts.c2 < 1.0, "need 0 < c1 < c2 < 1");

    let mut trace = OptimTrace::default();
    let mut x = x0;
    let (mut fx, mut gx) = f(&x);
    trace.total_evals = 1;
    if fx.is_nan() {
        return MinimizeResult {
            objective: fx,
            gradient: gx,
            x,
            trace,
            termination: Termination::NanObjective,
        };
    }

    let mut two_loop = TwoLoop::new(opts.memory);
    let mut termination = Termination::MaxIter;
    let mut first = true;

    for iter in 1..=opts.max_iter {
        let grad_max = max_norm(gx.view());
        if grad_max <= opts.grad_tol {
            termination = Termination::GradTol;
            break;
        }

        let mut d = two_loop.direction(&gx);
        let mut d0 = gx.dot(&d);
        if !(d0 < 0.0) {
            two_loop = TwoLoop::new(opts.memory);
            d = -gx.clone();
            d0 = gx.dot(&d);
        }
        let alpha_init = if first { (1.0 / grad_max).min(1.0) } else { 1.0 };
        first = false;

        let mut outcome = wolfe_search(&mut f, &x, &d, fx, d0, alpha_init, opts);
        if outcome.is_none() && !two_loop.pairs.is_empty() {
            // Restart from steepest descent once before giving up.
            two_loop = TwoLoop::new(opts.memory);
            d = -gx.clone();
            d0 = gx.dot(&d);
            outcome = wolfe_search(&mut f, &x, &d, fx, d0, (1.0 / grad_max).min(1.0), opts);
        }
        let Some(ls) = outcome else {
            termination = Termination::LineSearchFailure;
            break;
        };
        trace.total_evals += ls.evals;

        let s = &d * ls.alpha;
        let y = &ls.grad - &gx;
        two_loop.push(s.clone(), y);
        x += &s;
        let f_prev = fx;
        fx = ls.f;
        gx = ls.grad;

        if fx.is_nan() {
            termination = Termination::NanObjective;
            break;
        }

        let record = IterRecord {
            iter,
            objective: fx,
            grad_max: max_norm(gx.view()),
            step: ls.alpha,
            evals: ls.evals,
        };
        observer(&record);
        trace.records.push(record);

        if f_prev - fx <= opts.rel_f_tol * f_prev.abs().max(fx.abs()).max(1.0) {
            termination = Termination::RelFTol;
            break;
        }
    }

    MinimizeResult { objective: fx, gradient: gx, x, trace, termination }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn rosenbrock(x: &Array1<f64>) -> (f64, Array1<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = arr1(&[
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ]);
        (f, g)
    }

    #[test]
    fn quadratic_converges_fast() {
        let a = arr1(&[3.0, -1.0, 0.5, 7.0, -2.5]);
        let target = a.clone();
        let res = minimize(
            move |x| (0.5 * (x - &a).mapv(|v| v * v).sum(), x - &a),
            Array1::zeros(5),
            &LbfgsOptions::default(),
            |_| {},
        );
        assert!(res.trace.records.len() <= 7, "took {} iterations", res.trace.records.len());
        let err = (&res.x - &target).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(err < 1e-12, "distance to minimizer: {err}");
        assert_eq!(res.termination, Termination::GradTol);
    }

    #[test]
    fn rosenbrock_reaches_the_minimum() {
        // Independent oracle: long gradient-descent run with adaptive step
        // locates the same minimizer from the same start.
        let mut x = arr1(&[-1.2, 1.0]);
        let mut step = 1e-3;
        let (mut fx, mut g) = rosenbrock(&x);
        for _ in 0..2_000_000 {
            let trial = &x - &(&g * step);
            let (ft, gt) = rosenbrock(&trial);
            if ft < fx {
                x = trial;
                fx = ft;
                g = gt;
                step *= 1.05;
            } else {
                step *= 0.5;
            }
            if step < 1e-18 {
                break;
            }
        }
        let gd_err = ((x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2)).sqrt();
        assert!(gd_err < 1e-3, "gradient-descent oracle off by {gd_err}");

        let res = minimize(
            |x| rosenbrock(x),
            arr1(&[-1.2, 1.0]),
            // Tight tolerances: the valley floor is flat (smallest Hessian
            // eigenvalue ~0.04 at the minimum), so the default grad_tol
            // would stop ~1e-5 short of the minimizer.
            &LbfgsOptions {
                max_iter: 200,
                grad_tol: 1e-12,
                rel_f_tol: 0.0,
                ..Default::default()
            },
            |_| {},
        );
        let err = ((res.x[0] - 1.0).powi(2) + (res.x[1] - 1.0).powi(2)).sqrt();
        assert!(err < 1e-8, "distance to (1,1): {err}");
        assert!(res.trace.records.len() < 200);
    }

    #[test]
    fn trace_is_monotone() {
        let res = minimize(
            |x| rosenbrock(x),
            arr1(&[-1.2, 1.0]),
            &LbfgsOptions { max_iter: 200, ..Default::default() },
            |_| {},
        );
        let mut prev = f64::INFINITY;
        for rec in &res.trace.records {
            assert!(rec.objective < prev, "objective rose at iter {}", rec.iter);
            prev = rec.objective;
        }
    }

    #[test]
    fn deterministic_trace() {
        let run = || {
            minimize(
                |x| rosenbrock(x),
                arr1(&[-1.2, 1.0]),
                &LbfgsOptions::default(),
                |_| {},
            )
        };
        let a = run();
        let b = run();
        assert_eq!(a.x, b.x);
        assert_eq!(a.trace.records.len(), b.trace.records.len());
        for (ra, rb) in a.trace.records.iter().zip(&b.trace.records) {
            assert_eq!(ra.objective, rb.objective);
            assert_eq!(ra.step, rb.step);
        }
    }

    #[test]
    fn infinite_trials_are_backtracked() {
        // Quadratic with a forbidden region; trials landing there report
        // +inf and the line search must recover.
        let f = |x: &Array1<f64>| -> (f64, Array1<f64>) {
            if x[0].abs() > 2.0 {
                (f64::INFINITY, Array1::zeros(1))
            } else {
                (0.5 * x[0] * x[0], arr1(&[x[0]]))
            }
        };
        let res = minimize(f, arr1(&[1.9]), &LbfgsOptions::default(), |_| {});
        assert!(res.x[0].abs() < 1e-6, "got {}", res.x[0]);
    }

    #[test]
    fn nan_at_start_terminates_with_diagnostic() {
        let res = minimize(
            |x| (f64::NAN, x.clone()),
            arr1(&[1.0]),
            &LbfgsOptions::default(),
            |_| {},
        );
        assert_eq!(res.termination, Termination::NanObjective);
        assert_eq!(res.x, arr1(&[1.0]));
    }

    #[test]
    fn observer_sees_every_record() {
        let mut seen = Vec::new();
        let res = minimize(
            |x| rosenbrock(x),
            arr1(&[-1.2, 1.0]),
            &LbfgsOptions { max_iter: 50, ..Default::default() },
            |r| seen.push(r.iter),
        );
        assert_eq!(seen.len(), res.trace.records.len());
        assert!(seen.windows(2).all(|w| w[1] == w[0] + 1));
    }
}
