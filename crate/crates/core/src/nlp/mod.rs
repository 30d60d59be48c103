//! Small dense nonlinear programming solver.
//!
//! Problems have the form
//!
//! ```text
//! min f(z)  s.t.  g(z) <= 0,  h(z) = 0,  lo <= z <= hi
//! ```
//!
//! and are solved with a bound-constrained augmented Lagrangian: the general
//! constraints are moved into a penalised merit function whose box-constrained
//! minimisation is done by projected L-BFGS ([`lbfgs`]). Multipliers and the
//! penalty are updated between inner solves. Everything is sequential and
//! free of randomness, so identical inputs give bit-identical reports.

mod lbfgs;

use nalgebra::DMatrix;
use serde::Serialize;

pub use lbfgs::{minimize_box, BoxResult};

/// Smooth constrained problem. Derivatives default to central differences.
pub trait NlpProblem {
    fn dim(&self) -> usize;

    /// Lower and upper bounds; infinite entries are allowed.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);

    fn num_inequality(&self) -> usize {
        0
    }

    fn num_equality(&self) -> usize {
        0
    }

    fn objective(&self, z: &[f64]) -> f64;

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        fd_gradient(|x| self.objective(x), z, FD_STEP, grad);
    }

    /// Inequality residuals `g(z)`, feasible when `<= 0`.
    fn inequality(&self, _z: &[f64], _out: &mut [f64]) {}

    /// Equality residuals `h(z)`.
    fn equality(&self, _z: &[f64], _out: &mut [f64]) {}

    /// Jacobian of `g`, one row per constraint.
    fn inequality_jacobian(&self, z: &[f64], jac: &mut DMatrix<f64>) {
        fd_jacobian(|x, out| self.inequality(x, out), z, FD_STEP, jac);
    }

    fn equality_jacobian(&self, z: &[f64], jac: &mut DMatrix<f64>) {
        fd_jacobian(|x, out| self.equality(x, out), z, FD_STEP, jac);
    }

    /// Fixed magnitude of the objective gradient used to scale the
    /// stationarity test. By default `max(1, |∇f(z)|∞)` at each outer
    /// iterate; problems mixing penalty slopes with much smaller economic
    /// terms should supply the economic scale here.
    fn objective_scale(&self) -> Option<f64> {
        None
    }
}

const FD_STEP: f64 = 1e-6;

/// Scaled multiplier size above which stationarity is measured relatively.
const DUAL_SCALE_THRESHOLD: f64 = 100.0;

/// Central-difference gradient with step `h * max(1, |z_i|)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, z: &[f64], h: f64, grad: &mut [f64]) {
    let mut x = z.to_vec();
    for i in 0..z.len() {
        let step = h * z[i].abs().max(1.0);
        x[i] = z[i] + step;
        let fp = f(&x);
        x[i] = z[i] - step;
        let fm = f(&x);
        x[i] = z[i];
        grad[i] = (fp - fm) / (2.0 * step);
    }
}

/// Central-difference Jacobian (rows = outputs) with step `h * max(1, |z_i|)`.
pub fn fd_jacobian(f: impl Fn(&[f64], &mut [f64]), z: &[f64], h: f64, jac: &mut DMatrix<f64>) {
    let m = jac.nrows();
    if m == 0 {
        return;
    }
    let mut x = z.to_vec();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    for j in 0..z.len() {
        let step = h * z[j].abs().max(1.0);
        x[j] = z[j] + step;
        f(&x, &mut fp);
        x[j] = z[j] - step;
        f(&x, &mut fm);
        x[j] = z[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOptions {
    /// Scaled projected-gradient norm of the Lagrangian at convergence.
    pub stationarity_tol: f64,
    /// Largest constraint violation at convergence.
    pub violation_tol: f64,
    pub max_outer: usize,
    /// Iteration cap of each inner box-constrained solve.
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Number of L-BFGS correction pairs.
    pub memory: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            stationarity_tol: 1e-6,
            violation_tol: 1e-6,
            max_outer: 500,
            max_inner: 2000,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e12,
            memory: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub z: Vec<f64>,
    pub objective: f64,
    /// Projected gradient norm of the Lagrangian scaled by the objective
    /// gradient magnitude (see [`NlpProblem::objective_scale`]).
    pub stationarity: f64,
    pub max_violation: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub ineq_multipliers: Vec<f64>,
    pub eq_multipliers: Vec<f64>,
}

/// Evaluation buffers shared by the merit function and the final report.
struct Workspace {
    g: Vec<f64>,
    h: Vec<f64>,
    jg: DMatrix<f64>,
    jh: DMatrix<f64>,
    grad_f: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, mi: usize, me: usize) -> Self {
        Self {
            g: vec![0.0; mi],
            h: vec![0.0; me],
            jg: DMatrix::zeros(mi, n),
            jh: DMatrix::zeros(me, n),
            grad_f: vec![0.0; n],
        }
    }
}

fn project(z: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((zi, &l), &u) in z.iter_mut().zip(lo).zip(hi) {
        *zi = zi.clamp(l, u);
    }
}

/// Projected gradient infinity norm for gradient `grad` at `z`.
pub(crate) fn projected_gradient_norm(z: &[f64], grad: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    z.iter()
        .zip(grad)
        .zip(lo.iter().zip(hi))
        .map(|((&zi, &gi), (&l, &u))| ((zi - gi).clamp(l, u) - zi).abs())
        .fold(0.0, f64::max)
}

/// `out += J^T w`.
fn add_jt_w(jac: &DMatrix<f64>, w: &[f64], out: &mut [f64]) {
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += jac[(i, j)] * wi;
        }
    }
}

/// Solves `problem` from `z0` (projected onto the box first).
///
/// Never panics on non-convergence: the report carries the last iterate with
/// `converged = false`.
pub fn solve<P: NlpProblem + ?Sized>(problem: &P, z0: &[f64], opts: &SolveOptions) -> SolveReport {
    let n = problem.dim();
    assert_eq!(z0.len(), n, "initial point has wrong dimension");
    let (lo, hi) = problem.bounds();
    let mi = problem.num_inequality();
    let me = problem.num_equality();

    let mut z = z0.to_vec();
    project(&mut z, &lo, &hi);

    let mut mu = vec![0.0; mi];
    let mut lam = vec![0.0; me];
    let mut rho = opts.initial_penalty;
    let mut ws = Workspace::new(n, mi, me);
    let mut inner_total = 0;
    let mut prev_infeas = f64::INFINITY;
    let mut inner_tol = 1e-3f64.max(opts.stationarity_tol);

    let mut report = SolveReport {
        z: z.clone(),
        objective: f64::NAN,
        stationarity: f64::INFINITY,
        max_violation: f64::INFINITY,
        iterations: 0,
        inner_iterations: 0,
        converged: false,
        ineq_multipliers: mu.clone(),
        eq_multipliers: lam.clone(),
    };

    for outer in 0..opts.max_outer.max(1) {
        let merit = |x: &[f64], grad: &mut [f64], ws: &mut Workspace| -> f64 {
            let mut val = problem.objective(x);
            problem.gradient(x, grad);
            if mi > 0 {
                problem.inequality(x, &mut ws.g);
                problem.inequality_jacobian(x, &mut ws.jg);
                let mut w = vec![0.0; mi];
                for i in 0..mi {
                    let s = (mu[i] + rho * ws.g[i]).max(0.0);
                    val += (s * s - mu[i] * mu[i]) / (2.0 * rho);
                    w[i] = s;
                }
                add_jt_w(&ws.jg, &w, grad);
            }
            if me > 0 {
                problem.equality(x, &mut ws.h);
                problem.equality_jacobian(x, &mut ws.jh);
                let mut w = vec![0.0; me];
                for i in 0..me {
                    val += lam[i] * ws.h[i] + 0.5 * rho * ws.h[i] * ws.h[i];
                    w[i] = lam[i] + rho * ws.h[i];
                }
                add_jt_w(&ws.jh, &w, grad);
            }
            val
        };

        // The merit is divided by the objective gradient scale so that one
        // tolerance works in both the gradient and the distance-to-bound
        // parts of the projected gradient.
        problem.gradient(&z, &mut ws.grad_f);
        let scale = problem.objective_scale().unwrap_or_else(|| ws.grad_f.iter().fold(1.0f64, |m, g| m.max(g.abs())));
        let res = minimize_box(
            |x, g| {
                let v = merit(x, g, &mut ws);
                g.iter_mut().for_each(|gi| *gi /= scale);
                v / scale
            },
            &mut z,
            &lo,
            &hi,
            inner_tol,
            opts.max_inner,
            opts.memory,
        );
        inner_total += res.iterations;

        // Constraint values at the new iterate.
        problem.inequality(&z, &mut ws.g);
        problem.equality(&z, &mut ws.h);
        let infeas_v = ws
            .h
            .iter()
            .map(|v| v.abs())
            .chain(ws.g.iter().zip(&mu).map(|(&g, &m)| g.max(-m / rho).abs()))
            .fold(0.0, f64::max);
        for i in 0..me {
            lam[i] += rho * ws.h[i];
        }
        for i in 0..mi {
            mu[i] = (mu[i] + rho * ws.g[i]).max(0.0);
        }

        // Optimality of the ordinary Lagrangian with the updated multipliers.
        problem.gradient(&z, &mut ws.grad_f);
        let mut grad_l = ws.grad_f.clone();
        if mi > 0 {
            problem.inequality_jacobian(&z, &mut ws.jg);
            add_jt_w(&ws.jg, &mu, &mut grad_l);
        }
        if me > 0 {
            problem.equality_jacobian(&z, &mut ws.jh);
            add_jt_w(&ws.jh, &lam, &mut grad_l);
        }
        let scale = problem.objective_scale().unwrap_or_else(|| ws.grad_f.iter().fold(1.0f64, |m, g| m.max(g.abs())));
        // Large multipliers make the Lagrangian gradient a difference of
        // large terms; measure it relative to them as interior-point codes do.
        let dual = mu.iter().chain(&lam).fold(0.0f64, |m, v| m.max(v.abs())) / scale;
        let dual_scale = (dual / DUAL_SCALE_THRESHOLD).max(1.0);
        grad_l.iter_mut().for_each(|g| *g /= scale * dual_scale);
        let stationarity = projected_gradient_norm(&z, &grad_l, &lo, &hi);
        let violation = ws.h.iter().map(|v| v.abs()).chain(ws.g.iter().map(|&v| v.max(0.0))).fold(0.0, f64::max);
        let complementarity = ws.g.iter().zip(&mu).map(|(&g, &m)| (-g).min(m).abs()).fold(0.0, f64::max);

        report = SolveReport {
            z: z.clone(),
            objective: problem.objective(&z),
            stationarity,
            max_violation: violation,
            iterations: outer + 1,
            inner_iterations: inner_total,
            converged: false,
            ineq_multipliers: mu.clone(),
            eq_multipliers: lam.clone(),
        };
        log::trace!(
            "outer {outer}: f={:.6e} stat={stationarity:.2e} viol={violation:.2e} compl={complementarity:.2e} rho={rho:.1e}",
            report.objective
        );

        let tight = inner_tol <= opts.stationarity_tol * 1.000_001;
        if violation <= opts.violation_tol
            && stationarity <= opts.stationarity_tol
            && complementarity <= opts.violation_tol.max(opts.stationarity_tol)
            && (tight || mi + me == 0)
        {
            report.converged = true;
            break;
        }
        if mi + me == 0 && res.stalled && stationarity <= opts.stationarity_tol {
            report.converged = true;
            break;
        }

        if infeas_v > 0.25 * prev_infeas && infeas_v > opts.violation_tol {
            rho = (rho * opts.penalty_growth).min(opts.max_penalty);
        }
        prev_infeas = infeas_v;
        inner_tol = (inner_tol * 0.1).max(opts.stationarity_tol);
    }
    report
}

/// Outcome of [`check_gradients`]: normwise relative errors between supplied
/// derivatives and central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub objective: f64,
    pub inequality: f64,
    pub equality: f64,
}

impl GradientCheck {
    pub fn max_error(&self) -> f64 {
        self.objective.max(self.inequality).max(self.equality)
    }
}

fn normwise_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let norm = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if norm == 0.0 {
        0.0
    } else {
        diff / norm
    }
}

/// Compares the problem's derivatives with central differences of absolute
/// step `h_fd`. Each function (the objective and every constraint row) is
/// compared normwise; the largest error per group is reported.
pub fn check_gradients<P: NlpProblem + ?Sized>(problem: &P, z: &[f64], h_fd: f64) -> GradientCheck {
    let n = problem.dim();
    let fd = |f: &dyn Fn(&[f64], &mut [f64]), m: usize| {
        let mut jac = DMatrix::zeros(m, n);
        let mut x = z.to_vec();
        let mut fp = vec![0.0; m];
        let mut fm = vec![0.0; m];
        for j in 0..n {
            x[j] = z[j] + h_fd;
            f(&x, &mut fp);
            x[j] = z[j] - h_fd;
            f(&x, &mut fm);
            x[j] = z[j];
            for i in 0..m {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h_fd);
            }
        }
        jac
    };
    let rows_error = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        (0..a.nrows())
            .map(|i| {
                let ra: Vec<f64> = a.row(i).iter().copied().collect();
                let rb: Vec<f64> = b.row(i).iter().copied().collect();
                normwise_error(&ra, &rb)
            })
            .fold(0.0, f64::max)
    };

    let mut grad = vec![0.0; n];
    problem.gradient(z, &mut grad);
    let fd_obj = fd(&|x: &[f64], out: &mut [f64]| out[0] = problem.objective(x), 1);
    let fd_grad: Vec<f64> = fd_obj.row(0).iter().copied().collect();
    let objective = normwise_error(&grad, &fd_grad);

    let mi = problem.num_inequality();
    let mut jg = DMatrix::zeros(mi, n);
    problem.inequality_jacobian(z, &mut jg);
    let inequality = rows_error(&jg, &fd(&|x: &[f64], out: &mut [f64]| problem.inequality(x, out), mi));

    let me = problem.num_equality();
    let mut jh = DMatrix::zeros(me, n);
    problem.equality_jacobian(z, &mut jh);
    let equality = rows_error(&jh, &fd(&|x: &[f64], out: &mut [f64]| problem.equality(x, out), me));

    GradientCheck { objective, inequality, equality }
}
