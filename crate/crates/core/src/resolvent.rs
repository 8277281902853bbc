//! Implicit time stepping for `du/dt + pv(u^m) = 0`.
//!
//! One implicit Euler step of size `lambda` solves
//!
//! ```text
//!     u + lambda pv(u^m) = f.
//! ```
//!
//! In the substituted variable `v = u^m` (so `u = v^(1/m)`, odd powers
//! throughout) this is the Euler-Lagrange equation of the strictly convex
//! functional
//!
//! ```text
//!     Psi(v) = sum_i w_i [ m/(m+1) |v_i|^((m+1)/m) - f_i v_i ]
//!              + lambda/(2p) [v]_p^p,
//! ```
//!
//! whose unique minimizer we find by damped Newton: the measure-symmetrized
//! Hessian `W J` is positive definite, the Newton system is solved by
//! Jacobi-preconditioned conjugate gradients (no factorization), and an
//! Armijo backtracking line search keeps every iterate strictly downhill.
//!
//! For p < 2 (or m > 1) the odd powers have unbounded second derivatives at
//! coincident arguments; on plateau data the exact Newton model overshoots at
//! the kinks and backtracking crawls. The solve therefore runs a smoothing
//! continuation: each rung replaces `|a|^(q-1) a` by the mollification
//! `(a^2 + mu^2)^((q-1)/2) a`, Newton converges fast on the smooth surrogate,
//! and `mu` shrinks geometrically until the iterate satisfies the EXACT
//! discrete equation to tolerance. The exact equation is never Newton-stepped
//! directly in the kinked cases; it is only used as the acceptance test, and
//! its residual is what gets reported.
//!
//! Convergence requires BOTH `sup_i |r_i| <= newton_tol` and
//! `sum_i w_i |r_i| <= newton_tol`, which keeps residual bookkeeping in the
//! structural identities (mass drift, contraction slack) uniform in the grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::grid::{mass, Domain, Field, GridError};
use crate::kernel::KernelTable;
use crate::nonlocal::{apply_pv, seminorm_p, AbsPow, Kahan, OddPow};

/// Floor applied to `|v|` and `|v_i - v_j|` inside exact-stage Hessian
/// entries.
const HESSIAN_REG: f64 = 1e-12;
/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
/// First smoothing parameter of the continuation for kinked exponents.
const MU_INIT: f64 = 1e-3;
/// Geometric shrink factor between smoothing rungs.
const MU_SHRINK: f64 = 1e-2;
/// Rung cap; at `MU_INIT * MU_SHRINK^24` the mollifier is far below any
/// attainable residual, so running out of rungs means genuine stagnation.
const MAX_RUNGS: usize = 25;
/// Iterations a stage may go without improving its best residual before it
/// is declared floored.
const STAGE_PATIENCE: usize = 8;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver configuration: {0}")]
    Config(String),
    #[error("non-finite value encountered at Newton iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("Newton stalled after {iterations} iterations with sup residual {residual_sup:.3e}")]
    Stalled { iterations: usize, residual_sup: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepConfig {
    /// Residual tolerance (both sup and weighted-L1 must drop below it).
    pub newton_tol: f64,
    /// Newton iteration cap per smoothing stage.
    pub max_newton: usize,
    /// Backtracking factor of the line search, in (0, 1).
    pub ls_shrink: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig { newton_tol: 1e-12, max_newton: 80, ls_shrink: 0.5 }
    }
}

impl StepConfig {
    fn validate(&self) -> Result<(), SolverError> {
        if !(self.newton_tol > 0.0) {
            return Err(SolverError::Config(format!("newton_tol must be positive, got {}", self.newton_tol)));
        }
        if self.max_newton == 0 {
            return Err(SolverError::Config("max_newton must be at least 1".into()));
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0) {
            return Err(SolverError::Config(format!("ls_shrink must lie in (0,1), got {}", self.ls_shrink)));
        }
        Ok(())
    }
}

/// Output of one resolvent solve: the new state in both variables plus
/// convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct ResolventSolution {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub newton_iters: usize,
    pub residual_sup: f64,
    pub residual_l1: f64,
}

/// Mollified odd power `(a^2 + mu^2)^((q-1)/2) a`; the exact odd power at
/// `mu = 0` (through the fast-path dispatch).
#[derive(Clone, Copy)]
struct SmoothOdd {
    q: f64,
    mu2: f64,
    exact: OddPow,
}

impl SmoothOdd {
    fn new(q: f64, mu: f64) -> Self {
        SmoothOdd { q, mu2: mu * mu, exact: OddPow::for_exponent(q) }
    }

    #[inline]
    fn eval(&self, a: f64) -> f64 {
        if self.mu2 == 0.0 {
            self.exact.eval(a)
        } else {
            (a * a + self.mu2).powf(0.5 * (self.q - 1.0)) * a
        }
    }

    /// Derivative; in the exact case the argument magnitude is floored at
    /// `reg` to keep `|a|^(q-2)` finite.
    #[inline]
    fn derivative(&self, a: f64, reg: f64) -> f64 {
        if self.mu2 == 0.0 {
            let t = a.abs().max(reg);
            self.q * t.powf(self.q - 1.0)
        } else {
            let s = a * a + self.mu2;
            s.powf(0.5 * self.q - 1.5) * (self.q * a * a + self.mu2)
        }
    }

    /// Primitive vanishing at zero: `((a^2 + mu^2)^((q+1)/2) - mu^(q+1)) / (q+1)`.
    #[inline]
    fn primitive(&self, a: f64) -> f64 {
        if self.mu2 == 0.0 {
            a.abs().powf(self.q + 1.0) / (self.q + 1.0)
        } else {
            ((a * a + self.mu2).powf(0.5 * (self.q + 1.0)) - self.mu2.powf(0.5 * (self.q + 1.0))) / (self.q + 1.0)
        }
    }
}

struct NewtonContext<'a> {
    table: &'a KernelTable,
    lambda: f64,
    f: &'a [f64],
    m: f64,
    /// scratch: `lambda w_i K(i,j) eta(v_i - v_j)`, zero diagonal
    hess: Vec<f64>,
    diag: Vec<f64>,
    delta: Vec<f64>,
    trace: bool,
}

struct StageOutcome {
    iterations: usize,
    residual_sup: f64,
    residual_l1: f64,
}

impl<'a> NewtonContext<'a> {
    fn residual(&self, v: &[f64], g: &SmoothOdd, phi: &SmoothOdd) -> Vec<f64> {
        let n = self.table.n();
        if g.mu2 == 0.0 {
            let pv = apply_pv(self.table, v);
            (0..n).map(|i| phi.eval(v[i]) + self.lambda * pv[i] - self.f[i]).collect()
        } else {
            exec::map_indexed(n, |i| {
                let vi = v[i];
                let row = self.table.row(i);
                let mut acc = Kahan::default();
                for (j, &k) in row.iter().enumerate() {
                    acc.add(k * g.eval(vi - v[j]));
                }
                acc.add(self.table.exterior_weight(i) * g.eval(vi));
                phi.eval(vi) + self.lambda * acc.value() - self.f[i]
            })
        }
    }

    fn objective(&self, v: &[f64], g: &SmoothOdd, phi: &SmoothOdd) -> f64 {
        let n = self.table.n();
        let weights = self.table.domain.weights();
        let p = self.table.p;
        if g.mu2 == 0.0 {
            let pow0 = AbsPow::for_exponent((self.m + 1.0) / self.m);
            let zero_order: f64 = (0..n)
                .map(|i| weights[i] * (self.m / (self.m + 1.0) * pow0.eval(v[i]) - self.f[i] * v[i]))
                .sum();
            zero_order + self.lambda / (2.0 * p) * seminorm_p(self.table, v)
        } else {
            let rows: Vec<f64> = exec::map_indexed(n, |i| {
                let vi = v[i];
                let row = self.table.row(i);
                let mut acc = 0.0;
                for (j, &k) in row.iter().enumerate() {
                    acc += k * g.primitive(vi - v[j]);
                }
                weights[i]
                    * (phi.primitive(vi) - self.f[i] * vi
                        + self.lambda * (0.5 * acc + self.table.exterior_weight(i) * g.primitive(vi)))
            });
            rows.iter().sum()
        }
    }

    /// Scalar residual at node `i` as a function of `v_i` alone.
    fn node_residual(&self, v: &[f64], i: usize, x: f64, g: &SmoothOdd, phi: &SmoothOdd) -> f64 {
        let row = self.table.row(i);
        let mut acc = Kahan::default();
        for (j, &k) in row.iter().enumerate() {
            if j != i {
                acc.add(k * g.eval(x - v[j]));
            }
        }
        acc.add(self.table.exterior_weight(i) * g.eval(x));
        phi.eval(x) + self.lambda * acc.value() - self.f[i]
    }

    /// Straggler repair: Newton rungs leave isolated nodes (wetting fronts,
    /// where the kink sits inside the step) a few ulps-of-the-problem short
    /// of tolerance. Each node's residual is strictly increasing in its own
    /// value, so a bracketed bisection finishes the job kink or no kink.
    /// Sweeps cyclically because fixing one node perturbs its neighbors.
    fn polish_nodes(&self, v: &mut [f64], tol: f64) {
        let n = self.table.n();
        let g = SmoothOdd::new(self.table.p - 1.0, 0.0);
        let phi = SmoothOdd::new(1.0 / self.m, 0.0);
        for _ in 0..4 {
            let r = self.residual(v, &g, &phi);
            let mut touched = false;
            for i in 0..n {
                if r[i].abs() <= 0.5 * tol {
                    continue;
                }
                // expand a bracket below or above the current value; the
                // local slope is at least phi'
                let x0 = v[i];
                let r0 = r[i];
                let slope = phi.derivative(x0, HESSIAN_REG).max(1e-6);
                let mut s = (r0.abs() / slope).max(1e-18);
                let dir = if r0 > 0.0 { -1.0 } else { 1.0 };
                let mut x1 = x0;
                let mut r1 = r0;
                let mut bracketed = false;
                for _ in 0..60 {
                    x1 = x0 + dir * s;
                    r1 = self.node_residual(v, i, x1, &g, &phi);
                    if r1 == 0.0 || (r1 > 0.0) != (r0 > 0.0) {
                        bracketed = true;
                        break;
                    }
                    s *= 2.0;
                }
                if !bracketed {
                    continue;
                }
                let (mut lo, mut hi) = if x0 < x1 { (x0, x1) } else { (x1, x0) };
                let (mut rlo, _rhi) = if x0 < x1 { (r0, r1) } else { (r1, r0) };
                for _ in 0..90 {
                    let mid = 0.5 * (lo + hi);
                    if mid == lo || mid == hi {
                        break;
                    }
                    let rm = self.node_residual(v, i, mid, &g, &phi);
                    if (rm > 0.0) == (rlo > 0.0) {
                        lo = mid;
                        rlo = rm;
                    } else {
                        hi = mid;
                    }
                }
                v[i] = 0.5 * (lo + hi);
                touched = true;
            }
            if !touched {
                break;
            }
        }
    }

    /// One smoothing stage of damped Newton on `v`, to tolerance `tol`.
    ///
    /// Hands back the best iterate seen. That iterate meets `tol` when the
    /// stage converged; when arithmetic noise floors the progress first, the
    /// stage exits early and the caller decides whether the floor is
    /// acceptable.
    fn solve_stage(
        &mut self,
        v: &mut Vec<f64>,
        mu: f64,
        tol: f64,
        cfg: &StepConfig,
    ) -> Result<StageOutcome, SolverError> {
        let n = self.table.n();
        let weights = self.table.domain.weights();
        let g = SmoothOdd::new(self.table.p - 1.0, mu);
        let phi = SmoothOdd::new(1.0 / self.m, mu);

        let mut best_v = v.clone();
        let mut best = StageOutcome { iterations: 0, residual_sup: f64::INFINITY, residual_l1: f64::INFINITY };
        let mut best_iteration = 0;
        let mut spent = 0;
        for iteration in 0..=cfg.max_newton {
            spent = iteration;
            let r = self.residual(v, &g, &phi);
            if r.iter().any(|x| !x.is_finite()) {
                // an aggressive step exploded; the best iterate is still good
                if iteration == 0 {
                    return Err(SolverError::NonFinite { iteration });
                }
                break;
            }
            let residual_sup = r.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
            let residual_l1: f64 = r.iter().zip(weights).map(|(&x, &w)| w * x.abs()).sum();
            if self.trace {
                eprintln!("  stage mu={mu:.1e} iter {iteration}: sup {residual_sup:.3e} l1 {residual_l1:.3e}");
            }
            if residual_sup + residual_l1 < best.residual_sup + best.residual_l1 {
                best_v.copy_from_slice(v);
                best = StageOutcome { iterations: iteration, residual_sup, residual_l1 };
                best_iteration = iteration;
            }
            if residual_sup <= tol && residual_l1 <= tol {
                return Ok(StageOutcome { iterations: iteration, residual_sup, residual_l1 });
            }
            if iteration == cfg.max_newton || iteration - best_iteration >= STAGE_PATIENCE {
                break;
            }

            // Hessian at the current iterate
            {
                let vv: &[f64] = v;
                let lambda = self.lambda;
                let table = self.table;
                exec::for_each_row(&mut self.hess, n, |i, row| {
                    let vi = vv[i];
                    let wi = weights[i];
                    let krow = table.row(i);
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot = lambda * wi * krow[j] * g.derivative(vi - vv[j], HESSIAN_REG);
                    }
                });
            }
            for i in 0..n {
                let row_sum: f64 = self.hess[i * n..(i + 1) * n].iter().sum();
                let ext = self.lambda
                    * weights[i]
                    * self.table.exterior_weight(i)
                    * g.derivative(v[i], HESSIAN_REG);
                self.diag[i] = weights[i] * phi.derivative(v[i], HESSIAN_REG) + row_sum + ext;
            }

            let b: Vec<f64> = (0..n).map(|i| -weights[i] * r[i]).collect();
            let forcing = residual_sup.sqrt().clamp(1e-12, 0.1);
            pcg(&self.hess, &self.diag, &b, forcing, 10 * n, &mut self.delta);

            // descent check; fall back to the Jacobi-scaled gradient if CG
            // rounding produced an uphill direction
            let mut slope: f64 = (0..n).map(|i| weights[i] * r[i] * self.delta[i]).sum();
            if !(slope < 0.0) {
                for i in 0..n {
                    self.delta[i] = b[i] / self.diag[i];
                }
                slope = (0..n).map(|i| weights[i] * r[i] * self.delta[i]).sum();
                if !(slope < 0.0) {
                    break; // gradient itself gives no signed decrease: floor
                }
            }

            let psi0 = self.objective(v, &g, &phi);
            if slope.abs() <= 1e-15 * (psi0.abs() + 1.0) {
                // predicted decrease is below rounding; take the full step
                // and let the residual test decide
                for i in 0..n {
                    v[i] += self.delta[i];
                }
                continue;
            }

            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = (0..n).map(|i| v[i] + t * self.delta[i]).collect();
                let psi_t = self.objective(&trial, &g, &phi);
                if psi_t <= psi0 + ARMIJO_C * t * slope {
                    *v = trial;
                    accepted = true;
                    break;
                }
                t *= cfg.ls_shrink;
            }
            if !accepted {
                // near the noise floor of the objective the Armijo test sees
                // only rounding; try the full step and let the best-iterate
                // bookkeeping absorb it either way
                for i in 0..n {
                    v[i] += self.delta[i];
                }
            }
        }

        // noise floor reached before `tol`: hand back the best iterate
        *v = best_v;
        best.iterations = spent;
        Ok(best)
    }
}

/// Solve `u + lambda pv(u^m) = f`. `warm` seeds the Newton iteration in
/// v-variables (a previous step's `v` is the natural choice); without it the
/// iteration starts from `f^m`.
pub fn resolvent(
    table: &KernelTable,
    m: f64,
    lambda: f64,
    f: &[f64],
    warm: Option<&[f64]>,
    cfg: &StepConfig,
) -> Result<ResolventSolution, SolverError> {
    cfg.validate()?;
    let n = table.n();
    if f.len() != n {
        return Err(SolverError::Config(format!("datum has {} values on a {n}-node table", f.len())));
    }
    if !(m > 0.0) || !lambda.is_finite() || lambda < 0.0 {
        return Err(SolverError::Config(format!("need m > 0 and lambda >= 0, got m = {m}, lambda = {lambda}")));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::Config("datum contains non-finite values".into()));
    }

    let pow_m = OddPow::for_exponent(m);
    if lambda == 0.0 {
        let v: Vec<f64> = f.iter().map(|&x| pow_m.eval(x)).collect();
        return Ok(ResolventSolution {
            u: f.to_vec(),
            v,
            newton_iters: 0,
            residual_sup: 0.0,
            residual_l1: 0.0,
        });
    }

    let mut v: Vec<f64> = match warm {
        Some(w) => {
            if w.len() != n {
                return Err(SolverError::Config(format!("warm start has {} values on a {n}-node table", w.len())));
            }
            w.to_vec()
        }
        None => f.iter().map(|&x| pow_m.eval(x)).collect(),
    };

    let mut ctx = NewtonContext {
        table,
        lambda,
        f,
        m,
        hess: vec![0.0; n * n],
        diag: vec![0.0; n],
        delta: vec![0.0; n],
        trace: std::env::var_os("FPLAB_TRACE_NEWTON").is_some(),
    };

    let g0 = SmoothOdd::new(table.p - 1.0, 0.0);
    let phi0 = SmoothOdd::new(1.0 / m, 0.0);
    let weights = table.domain.weights();
    let exact_norms = |ctx: &NewtonContext, v: &[f64]| -> (f64, f64) {
        let r = ctx.residual(v, &g0, &phi0);
        let sup = r.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let l1 = r.iter().zip(weights).map(|(&x, &w)| w * x.abs()).sum();
        (sup, l1)
    };

    let kinked = table.p < 2.0 || m > 1.0;
    let (total_iters, residual_sup, residual_l1) = if !kinked {
        // smooth exponents: damped Newton on the exact equation
        let out = ctx.solve_stage(&mut v, 0.0, cfg.newton_tol, cfg)?;
        if out.residual_sup > cfg.newton_tol || out.residual_l1 > cfg.newton_tol {
            return Err(SolverError::Stalled { iterations: out.iterations, residual_sup: out.residual_sup });
        }
        (out.iterations, out.residual_sup, out.residual_l1)
    } else {
        // kinked exponents: smoothing continuation, accepting on the exact
        // residual after each rung
        let (mut sup, mut l1) = exact_norms(&ctx, &v);
        let mut total = 0;
        let mut mu = MU_INIT;
        let mut rung = 0;
        while sup > cfg.newton_tol || l1 > cfg.newton_tol {
            if rung == MAX_RUNGS {
                return Err(SolverError::Stalled { iterations: total, residual_sup: sup });
            }
            // the rung targets a quarter of the final tolerance so the exact
            // check is not left balancing on the boundary; rungs whose mu
            // sits near the scale of the awkward pair differences make no
            // visible progress, the next decades of mu do, so flat rungs are
            // part of a normal solve
            let stage_tol = (0.1 * mu).max(0.25 * cfg.newton_tol);
            let out = ctx.solve_stage(&mut v, mu, stage_tol, cfg)?;
            total += out.iterations;
            (sup, l1) = exact_norms(&ctx, &v);
            if (sup > cfg.newton_tol || l1 > cfg.newton_tol) && sup <= 1e4 * cfg.newton_tol {
                // a few straggler nodes short of tolerance: scalar repair
                ctx.polish_nodes(&mut v, cfg.newton_tol);
                (sup, l1) = exact_norms(&ctx, &v);
            }
            if ctx.trace {
                eprintln!("  rung mu={mu:.1e} done: exact sup {sup:.3e} l1 {l1:.3e}");
            }
            mu *= MU_SHRINK;
            rung += 1;
        }
        (total, sup, l1)
    };

    let pow_phi = OddPow::for_exponent(1.0 / m);
    let u: Vec<f64> = v.iter().map(|&x| pow_phi.eval(x)).collect();
    Ok(ResolventSolution { u, v, newton_iters: total_iters, residual_sup, residual_l1 })
}

/// Jacobi-preconditioned conjugate gradients for the Newton system
/// `(diag - hess) x = b` (the Hessian action is `diag_i x_i - sum_j
/// hess_ij x_j`; `hess` has zero diagonal). Stops at a relative residual
/// `forcing` or the iteration cap, whichever first.
fn pcg(hess: &[f64], diag: &[f64], b: &[f64], forcing: f64, max_iter: usize, x: &mut [f64]) {
    let n = diag.len();
    let matvec = |x: &[f64]| -> Vec<f64> {
        exec::map_indexed(n, |i| {
            let row = &hess[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (j, &hij) in row.iter().enumerate() {
                acc += hij * x[j];
            }
            diag[i] * x[i] - acc
        })
    };

    x.fill(0.0);
    let mut r = b.to_vec();
    let b_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return;
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(&ri, &di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(&a, &b)| a * b).sum();
    for _ in 0..max_iter {
        let ap = matvec(&p);
        let p_ap: f64 = p.iter().zip(&ap).map(|(&a, &b)| a * b).sum();
        if !(p_ap > 0.0) {
            break; // loss of positivity through rounding; keep current x
        }
        let alpha = rz / p_ap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= forcing * b_norm {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(&a, &b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
}

/// Time grids for the march: uniform spacing, or geometric spacing (constant
/// ratio), both hitting the endpoints exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum TimeSchedule {
    Uniform { t0: f64, t1: f64, steps: usize },
    Geometric { t0: f64, t1: f64, steps: usize },
}

impl TimeSchedule {
    pub fn times(&self) -> Result<Vec<f64>, SolverError> {
        match *self {
            TimeSchedule::Uniform { t0, t1, steps } => {
                if !(t1 > t0) || steps == 0 {
                    return Err(SolverError::Config(format!("uniform schedule needs t1 > t0 and steps >= 1, got [{t0}, {t1}] x {steps}")));
                }
                let dt = (t1 - t0) / steps as f64;
                let mut times: Vec<f64> = (0..=steps).map(|k| t0 + k as f64 * dt).collect();
                times[steps] = t1;
                Ok(times)
            }
            TimeSchedule::Geometric { t0, t1, steps } => {
                if !(t0 > 0.0 && t1 > t0) || steps == 0 {
                    return Err(SolverError::Config(format!("geometric schedule needs 0 < t0 < t1 and steps >= 1, got [{t0}, {t1}] x {steps}")));
                }
                let log_ratio = (t1 / t0).ln() / steps as f64;
                let mut times: Vec<f64> = (0..=steps).map(|k| t0 * (k as f64 * log_ratio).exp()).collect();
                times[steps] = t1;
                Ok(times)
            }
        }
    }
}

/// Per-step convergence and conservation bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub newton_iters: usize,
    pub residual_sup: f64,
    pub residual_l1: f64,
    pub mass: f64,
    pub linf: f64,
    /// `J(v) = [v]_p^p / (2p)` at the new state, the dissipated energy.
    pub energy: f64,
}

/// A completed march: states at every time (including the initial one) and
/// diagnostics for every step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub domain: Arc<Domain>,
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub newton_tol: f64,
}

impl Trajectory {
    pub fn field(&self, k: usize) -> Field {
        Field::new(self.domain.clone(), self.snapshots[k].clone()).expect("snapshot length matches domain")
    }

    pub fn last(&self) -> &[f64] {
        self.snapshots.last().expect("trajectory holds at least the initial state")
    }

    pub fn steps(&self) -> usize {
        self.diagnostics.len()
    }
}

/// March the implicit scheme through `times` (strictly increasing, the first
/// entry being the time of `u0`). Each step warm-starts from the previous
/// step's v-variables.
pub fn march(
    table: &KernelTable,
    m: f64,
    u0: &[f64],
    times: &[f64],
    cfg: &StepConfig,
) -> Result<Trajectory, SolverError> {
    if times.is_empty() {
        return Err(SolverError::Config("march needs at least one time".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(SolverError::Config("times must be finite and strictly increasing".into()));
    }
    if u0.len() != table.n() {
        return Err(SolverError::Config(format!("datum has {} values on a {}-node table", u0.len(), table.n())));
    }

    let mut snapshots = Vec::with_capacity(times.len());
    let mut diagnostics = Vec::with_capacity(times.len() - 1);
    snapshots.push(u0.to_vec());
    let mut warm: Option<Vec<f64>> = None;

    for k in 0..times.len() - 1 {
        let lambda = times[k + 1] - times[k];
        let f = &snapshots[k];
        let sol = resolvent(table, m, lambda, f, warm.as_deref(), cfg)?;
        let field = Field::new(table.domain.clone(), sol.u.clone())?;
        diagnostics.push(StepDiagnostics {
            newton_iters: sol.newton_iters,
            residual_sup: sol.residual_sup,
            residual_l1: sol.residual_l1,
            mass: mass(&field),
            linf: sol.u.iter().fold(0.0f64, |a, &x| a.max(x.abs())),
            energy: seminorm_p(table, &sol.v) / (2.0 * table.p),
        });
        snapshots.push(sol.u);
        warm = Some(sol.v);
    }

    Ok(Trajectory {
        domain: table.domain.clone(),
        times: times.to_vec(),
        snapshots,
        diagnostics,
        newton_tol: cfg.newton_tol,
    })
}

/// Initial data menu. Every shape is sampled at the nodes and then rescaled
/// so the discrete mass matches `mass` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDatum {
    Zero,
    /// Indicator of the ball `|x| < radius`.
    Box { mass: f64, radius: f64 },
    /// Smooth compact bump `cos^2(pi |x| / (2 radius))` on `|x| < radius`.
    Bump { mass: f64, radius: f64 },
    /// The bump concentrated by `x -> k x` (support radius `radius / k`,
    /// height scaled by `k^d`): a nascent delta as `k` grows.
    NascentDelta { mass: f64, radius: f64, k: f64 },
}

pub fn realize(datum: &InitialDatum, domain: &Arc<Domain>) -> Result<Field, SolverError> {
    let shape: Field = match *datum {
        InitialDatum::Zero => return Ok(Field::zeros(domain.clone())),
        InitialDatum::Box { radius, .. } => {
            check_radius(radius)?;
            Field::from_fn(domain.clone(), |x| if x.abs() < radius { 1.0 } else { 0.0 })
        }
        InitialDatum::Bump { radius, .. } => {
            check_radius(radius)?;
            Field::from_fn(domain.clone(), |x| bump_profile(x, radius))
        }
        InitialDatum::NascentDelta { radius, k, .. } => {
            check_radius(radius)?;
            if !(k >= 1.0) {
                return Err(SolverError::Config(format!("nascent delta needs k >= 1, got {k}")));
            }
            let kd = k.powi(domain.d as i32);
            Field::from_fn(domain.clone(), |x| kd * bump_profile(k * x, radius))
        }
    };
    let target = match *datum {
        InitialDatum::Zero => unreachable!(),
        InitialDatum::Box { mass, .. }
        | InitialDatum::Bump { mass, .. }
        | InitialDatum::NascentDelta { mass, .. } => mass,
    };
    if !(target > 0.0) {
        return Err(SolverError::Config(format!("initial mass must be positive, got {target}")));
    }
    let raw = mass(&shape);
    if !(raw > 0.0) {
        return Err(SolverError::Config(
            "initial datum vanishes on every node; its support is narrower than a cell".into(),
        ));
    }
    let scale = target / raw;
    let values = shape.values.iter().map(|&v| scale * v).collect();
    Ok(Field::new(domain.clone(), values)?)
}

fn check_radius(radius: f64) -> Result<(), SolverError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(SolverError::Config(format!("initial datum radius must be positive, got {radius}")));
    }
    Ok(())
}

fn bump_profile(x: f64, radius: f64) -> f64 {
    let r = x.abs();
    if r >= radius {
        0.0
    } else {
        let c = (std::f64::consts::PI * r / (2.0 * radius)).cos();
        c * c
    }
}

/// Odd-power transform of a whole field: `u -> u^m` nodewise.
pub fn power_field(u: &[f64], m: f64) -> Vec<f64> {
    let pow = OddPow::for_exponent(m);
    u.iter().map(|&x| pow.eval(x)).collect()
}
