//! Bound-constrained augmented-Lagrangian method.
//!
//! Equalities and inequalities are folded into the classic augmented
//! Lagrangian
//!
//! ```text
//! L(x) = f(x) + sum_i [ lam_i c_i + (rho/2) c_i^2 ]
//!             + sum_j [ (max(0, mu_j + rho g_j)^2 - mu_j^2) / (2 rho) ]
//! ```
//!
//! minimized over the bound box by a projected L-BFGS with Armijo
//! backtracking along the projection arc. Multipliers follow the standard
//! first-order update; the penalty grows tenfold whenever the constraint
//! violation fails to shrink by a factor of four per outer iteration, and the
//! run is declared `Diverged` past a cap of `1e12`. The best point seen
//! (feasibility first, then objective) is what gets returned, regardless of
//! where the iteration wandered afterwards.

use super::{NlpProblem, NlpSolution, SolveStatus, SolverOptions, PENALTY_CAP};
use crate::scalar::{sc, Scalar};

/// Local solve from `warm_start` (clipped into bounds) or a deterministic
/// default start. Never panics on a valid problem; failures surface as
/// statuses.
pub fn solve<T: Scalar>(
    p: &NlpProblem<T>,
    opts: &SolverOptions,
    warm_start: Option<&[T]>,
) -> NlpSolution<T> {
    let n = p.n();
    let mut x: Vec<T> = match warm_start {
        Some(w) => {
            let mut x = w.to_vec();
            x.resize(n, T::zero());
            x
        }
        None => default_start(p),
    };
    p.project(&mut x);

    let mut state = AlState {
        lam: vec![T::zero(); p.eq.len()],
        mu: vec![T::zero(); p.ineq.len()],
        rho: sc(10.0),
    };
    let tol_feas = sc::<T>(opts.tol_feas);
    let tol_opt = sc::<T>(opts.tol_opt);

    let mut eval = Workspace::new(p);
    let mut best: Option<(u8, T, NlpSolution<T>)> = None;
    let mut v_prev = T::infinity();
    let mut status = SolveStatus::IterationLimit;

    for _outer in 0..opts.max_outer_iter.max(1) {
        // inner tolerance tightens with feasibility progress
        let inner_tol = tol_opt.max(sc::<T>(1e-2).min(sc::<T>(0.05) * v_prev));
        let inner = lbfgs_box(p, &mut eval, &state, &mut x, inner_tol, opts.max_inner_iter);

        let (veq, vineq) = p.violations(&x);
        let v = veq.max(vineq);
        let f = p.objective.forward(&x, &mut eval.vals);

        let cand = NlpSolution {
            x: x.clone(),
            objective_value: f,
            max_eq_violation: veq,
            max_ineq_violation: vineq,
            stationarity: inner.pg_norm,
            status: SolveStatus::Converged, // fixed up below
        };
        let key = if v <= tol_feas { (0u8, f) } else { (1u8, v) };
        let improved = match &best {
            None => true,
            Some((k, val, _)) => key.0 < *k || (key.0 == *k && key.1 < *val),
        };
        if improved {
            best = Some((key.0, key.1, cand));
        }

        if v <= tol_feas && inner.pg_norm <= tol_opt {
            status = SolveStatus::Converged;
            break;
        }

        // first-order multiplier update with safeguards
        let clamp = sc::<T>(1e10);
        for (lam, c) in state.lam.iter_mut().zip(&p.eq) {
            let ci = c.forward(&x, &mut eval.vals);
            *lam = (*lam + state.rho * ci).max(-clamp).min(clamp);
        }
        for (mu, g) in state.mu.iter_mut().zip(&p.ineq) {
            let gi = g.forward(&x, &mut eval.vals);
            *mu = (*mu + state.rho * gi).max(T::zero()).min(clamp);
        }

        if v > sc::<T>(0.25) * v_prev && v > tol_feas {
            state.rho = state.rho * sc(10.0);
            if state.rho > sc(PENALTY_CAP) {
                status = SolveStatus::Diverged;
                break;
            }
        }
        v_prev = v.min(v_prev);
    }

    let (_, _, mut sol) = best.expect("at least one outer iteration");
    sol.status = status;
    if status == SolveStatus::Converged {
        // converged: report the final iterate, not an earlier best
        let (veq, vineq) = p.violations(&x);
        sol = NlpSolution {
            objective_value: p.objective.forward(&x, &mut eval.vals),
            max_eq_violation: veq,
            max_ineq_violation: vineq,
            stationarity: sol.stationarity.min(tol_opt),
            x,
            status,
        };
    }
    sol
}

fn default_start<T: Scalar>(p: &NlpProblem<T>) -> Vec<T> {
    p.lower
        .iter()
        .zip(&p.upper)
        .map(|(&lo, &hi)| {
            let two = sc::<T>(2.0);
            if lo.is_finite() && hi.is_finite() {
                (lo + hi) / two
            } else if lo.is_finite() {
                lo + T::one()
            } else if hi.is_finite() {
                hi - T::one()
            } else {
                T::zero()
            }
        })
        .collect()
}

struct AlState<T> {
    lam: Vec<T>,
    mu: Vec<T>,
    rho: T,
}

/// Scratch buffers reused across every evaluation of one solve call.
struct Workspace<T> {
    vals: Vec<T>,
    adj: Vec<T>,
    grad: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(p: &NlpProblem<T>) -> Self {
        Workspace {
            vals: Vec::new(),
            adj: Vec::new(),
            grad: vec![T::zero(); p.n()],
        }
    }
}

/// Augmented-Lagrangian value at `x`.
fn al_value<T: Scalar>(p: &NlpProblem<T>, st: &AlState<T>, ws: &mut Workspace<T>, x: &[T]) -> T {
    let half = sc::<T>(0.5);
    let mut total = p.objective.forward(x, &mut ws.vals);
    for (c, &lam) in p.eq.iter().zip(&st.lam) {
        let ci = c.forward(x, &mut ws.vals);
        total += lam * ci + half * st.rho * ci * ci;
    }
    for (g, &mu) in p.ineq.iter().zip(&st.mu) {
        let gi = g.forward(x, &mut ws.vals);
        let t = mu + st.rho * gi;
        if t > T::zero() {
            total += (t * t - mu * mu) / (st.rho + st.rho);
        } else {
            total -= mu * mu / (st.rho + st.rho);
        }
    }
    total
}

/// Augmented-Lagrangian value and gradient (into `ws.grad`).
fn al_value_grad<T: Scalar>(
    p: &NlpProblem<T>,
    st: &AlState<T>,
    ws: &mut Workspace<T>,
    x: &[T],
) -> T {
    let half = sc::<T>(0.5);
    ws.grad.iter_mut().for_each(|g| *g = T::zero());
    let mut vals = std::mem::take(&mut ws.vals);
    let mut adj = std::mem::take(&mut ws.adj);

    let mut total = p.objective.forward(x, &mut vals);
    p.objective.reverse_acc(x, T::one(), &mut ws.grad, &vals, &mut adj);

    for (c, &lam) in p.eq.iter().zip(&st.lam) {
        let ci = c.forward(x, &mut vals);
        total += lam * ci + half * st.rho * ci * ci;
        c.reverse_acc(x, lam + st.rho * ci, &mut ws.grad, &vals, &mut adj);
    }
    for (g, &mu) in p.ineq.iter().zip(&st.mu) {
        let gi = g.forward(x, &mut vals);
        let t = mu + st.rho * gi;
        if t > T::zero() {
            total += (t * t - mu * mu) / (st.rho + st.rho);
            g.reverse_acc(x, t, &mut ws.grad, &vals, &mut adj);
        } else {
            total -= mu * mu / (st.rho + st.rho);
        }
    }

    ws.vals = vals;
    ws.adj = adj;
    total
}

struct InnerResult<T> {
    pg_norm: T,
}

/// Projected L-BFGS over the bound box; `x` is updated in place.
fn lbfgs_box<T: Scalar>(
    p: &NlpProblem<T>,
    ws: &mut Workspace<T>,
    st: &AlState<T>,
    x: &mut Vec<T>,
    tol: T,
    max_iter: usize,
) -> InnerResult<T> {
    const MEMORY: usize = 10;
    let n = p.n();
    let mut mem: Vec<(Vec<T>, Vec<T>, T)> = Vec::new(); // (s, y, 1/s'y)
    let mut f = al_value_grad(p, st, ws, x);
    let mut g = ws.grad.clone();

    if !f.is_finite() {
        // hopeless start; let the caller's restart machinery handle it
        return InnerResult {
            pg_norm: T::infinity(),
        };
    }

    let mut d = vec![T::zero(); n];
    let mut xt = vec![T::zero(); n];
    let mut pg = proj_grad_norm(p, x, &g);

    for _it in 0..max_iter {
        if pg <= tol {
            break;
        }

        two_loop(&mem, &g, &mut d);
        let mut gtd = dot(&g, &d);
        if !(gtd < T::zero()) {
            // not a descent direction: steepest descent restart
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -*gi;
            }
            mem.clear();
            gtd = dot(&g, &d);
            if !(gtd < T::zero()) {
                break;
            }
        }

        // Armijo backtracking along the projection arc
        let mut alpha = if mem.is_empty() {
            T::one() / T::one().max(inf_norm(&g))
        } else {
            T::one()
        };
        let c1 = sc::<T>(1e-4);
        let mut accepted = false;
        for _ls in 0..60 {
            for i in 0..n {
                xt[i] = x[i] + alpha * d[i];
            }
            p.project(&mut xt);
            let step: T = xt
                .iter()
                .zip(x.iter())
                .zip(&g)
                .map(|((xti, xi), gi)| (*xti - *xi) * *gi)
                .fold(T::zero(), |a, b| a + b);
            if step >= T::zero() {
                // projection removed all descent at this step size
                if inf_diff(&xt, x) == T::zero() {
                    break;
                }
                alpha = alpha * sc(0.5);
                continue;
            }
            let ft = al_value(p, st, ws, &xt);
            if ft.is_finite() && ft <= f + c1 * step {
                accepted = true;
                break;
            }
            alpha = alpha * sc(0.5);
        }
        if !accepted {
            break;
        }

        let ft = al_value_grad(p, st, ws, &xt);
        let gt = ws.grad.clone();

        let s: Vec<T> = xt.iter().zip(x.iter()).map(|(a, b)| *a - *b).collect();
        let y: Vec<T> = gt.iter().zip(g.iter()).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        if sy > sc::<T>(1e-12) * norm2(&s) * norm2(&y) && sy > T::zero() {
            if mem.len() == MEMORY {
                mem.remove(0);
            }
            mem.push((s, y, T::one() / sy));
        }

        x.copy_from_slice(&xt);
        f = ft;
        g = gt;
        pg = proj_grad_norm(p, x, &g);
    }

    InnerResult { pg_norm: pg }
}

/// Two-loop recursion computing `d = -H g`.
fn two_loop<T: Scalar>(mem: &[(Vec<T>, Vec<T>, T)], g: &[T], d: &mut [T]) {
    for (di, gi) in d.iter_mut().zip(g) {
        *di = -*gi;
    }
    if mem.is_empty() {
        return;
    }
    let mut alphas = vec![T::zero(); mem.len()];
    for (k, (s, y, rho_inv)) in mem.iter().enumerate().rev() {
        let a = *rho_inv * dot(s, d);
        alphas[k] = a;
        for (di, yi) in d.iter_mut().zip(y) {
            *di -= a * *yi;
        }
    }
    // initial Hessian scaling from the most recent pair
    let (s_last, y_last, _) = mem.last().unwrap();
    let yy = dot(y_last, y_last);
    if yy > T::zero() {
        let scale = dot(s_last, y_last) / yy;
        for di in d.iter_mut() {
            *di = *di * scale;
        }
    }
    for (k, (s, y, rho_inv)) in mem.iter().enumerate() {
        let b = *rho_inv * dot(y, d);
        let a = alphas[k];
        for (di, si) in d.iter_mut().zip(s) {
            *di += (a - b) * *si;
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| *x * *y)
        .fold(T::zero(), |acc, v| acc + v)
}

fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn inf_norm<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

fn inf_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
}

/// Infinity norm of `x - P(x - g)`, the projected-gradient stationarity
/// measure.
fn proj_grad_norm<T: Scalar>(p: &NlpProblem<T>, x: &[T], g: &[T]) -> T {
    let mut m = T::zero();
    for i in 0..x.len() {
        let stepped = (x[i] - g[i]).max(p.lower[i]).min(p.upper[i]);
        m = m.max((x[i] - stepped).abs());
    }
    m
}
