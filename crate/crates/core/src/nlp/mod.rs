//! Finite-dimensional smooth nonlinear programs and a local solver.
//!
//! The master problem and every adversary subproblem of the reduction engine
//! are assembled as an [`NlpProblem`]: box bounds, a scalar objective, and
//! lists of equality (`= 0`) and inequality (`<= 0`) constraint functions.
//! [`solve`] runs a bound-constrained augmented-Lagrangian method with a
//! projected L-BFGS inner loop; [`multistart`] wraps it with seeded random
//! restarts and returns the best feasible point found (or the
//! least-infeasible one, so callers can distinguish "nothing found" from
//! "search failed").
//!
//! Only first derivatives are used, matching what the expression tapes
//! provide. Solutions are local; no global claim is made.

mod solver;

use crate::expr::Tape;
use crate::scalar::{sc, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub use solver::solve;

/// Scalar function with gradient, either a compiled expression tape or a
/// custom pair of closures (used by tests and oracles).
#[derive(Clone)]
pub enum NlpFn<T: Scalar> {
    Tape(Tape<T>),
    Custom(Arc<CustomFn<T>>),
}

/// Closure-backed function: `value` and a gradient that overwrites its
/// output slice.
pub struct CustomFn<T> {
    pub value: Box<dyn Fn(&[T]) -> T + Send + Sync>,
    pub grad: Box<dyn Fn(&[T], &mut [T]) + Send + Sync>,
}

impl<T: Scalar> NlpFn<T> {
    pub fn custom(
        value: impl Fn(&[T]) -> T + Send + Sync + 'static,
        grad: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        NlpFn::Custom(Arc::new(CustomFn {
            value: Box::new(value),
            grad: Box::new(grad),
        }))
    }

    /// Forward evaluation; `vals` is scratch reused across calls.
    pub fn forward(&self, x: &[T], vals: &mut Vec<T>) -> T {
        match self {
            NlpFn::Tape(t) => t.forward(x, vals),
            NlpFn::Custom(f) => (f.value)(x),
        }
    }

    /// Adds `seed * gradient` into `grad` and returns the value; `vals` must
    /// hold the forward pass for the tape path.
    pub fn reverse_acc(&self, x: &[T], seed: T, grad: &mut [T], vals: &[T], adj: &mut Vec<T>) {
        match self {
            NlpFn::Tape(t) => t.reverse_acc(seed, grad, vals, adj),
            NlpFn::Custom(f) => {
                adj.clear();
                adj.resize(x.len(), T::zero());
                (f.grad)(x, adj);
                for (g, d) in grad.iter_mut().zip(adj.iter()) {
                    *g += seed * *d;
                }
            }
        }
    }

    /// Value-only evaluation with fresh scratch.
    pub fn value(&self, x: &[T]) -> T {
        self.forward(x, &mut Vec::new())
    }
}

impl<T: Scalar> std::fmt::Debug for NlpFn<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NlpFn::Tape(t) => write!(f, "Tape({} ops)", t.len()),
            NlpFn::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Smooth program: `min objective(x)` subject to `eq = 0`, `ineq <= 0`, and
/// `lower <= x <= upper` (entries may be infinite).
#[derive(Debug, Clone)]
pub struct NlpProblem<T: Scalar = f64> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub objective: NlpFn<T>,
    pub eq: Vec<NlpFn<T>>,
    pub ineq: Vec<NlpFn<T>>,
    /// Diagnostic names mapping each variable back to its origin, e.g.
    /// `theta[3]` or `s#2[4]` for the `s` block of scenario copy 2.
    pub names: Vec<String>,
}

impl<T: Scalar> NlpProblem<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>, objective: NlpFn<T>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(!lower.is_empty(), "problem needs at least one variable");
        for (l, u) in lower.iter().zip(&upper) {
            assert!(l <= u, "lower bound exceeds upper bound");
        }
        let names = (0..lower.len()).map(|i| format!("x[{i}]")).collect();
        NlpProblem {
            lower,
            upper,
            objective,
            eq: Vec::new(),
            ineq: Vec::new(),
            names,
        }
    }

    pub fn n(&self) -> usize {
        self.lower.len()
    }

    /// Clamps `x` into the bound box in place.
    pub fn project(&self, x: &mut [T]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            if *xi < *lo {
                *xi = *lo;
            }
            if *xi > *hi {
                *xi = *hi;
            }
        }
    }

    /// Worst equality and inequality violations at `x`.
    pub fn violations(&self, x: &[T]) -> (T, T) {
        let mut scratch = Vec::new();
        let mut veq = T::zero();
        for c in &self.eq {
            veq = veq.max(c.forward(x, &mut scratch).abs());
        }
        let mut vineq = T::zero();
        for c in &self.ineq {
            vineq = vineq.max(c.forward(x, &mut scratch).max(T::zero()));
        }
        (veq, vineq)
    }
}

/// Termination status of a local solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Feasible to `tol_feas` and first-order stationary to `tol_opt`.
    Converged,
    /// Ran out of iterations; best point seen is returned.
    IterationLimit,
    /// The penalty exceeded its cap without reaching feasibility.
    Diverged,
}

/// Locally optimal (or best-found) point with its quality measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NlpSolution<T: Scalar = f64> {
    pub x: Vec<T>,
    pub objective_value: T,
    pub max_eq_violation: T,
    pub max_ineq_violation: T,
    /// Projected-gradient norm of the augmented Lagrangian at `x`.
    pub stationarity: T,
    pub status: SolveStatus,
}

impl<T: Scalar> NlpSolution<T> {
    pub fn max_violation(&self) -> T {
        self.max_eq_violation.max(self.max_ineq_violation)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_violation() <= sc(tol)
    }
}

/// Options for [`solve`] and [`multistart`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Feasibility tolerance on constraint violations.
    pub tol_feas: f64,
    /// Stationarity tolerance on the projected gradient.
    pub tol_opt: f64,
    /// Augmented-Lagrangian (outer) iteration cap.
    pub max_outer_iter: usize,
    /// Inner L-BFGS iteration cap per outer iteration.
    pub max_inner_iter: usize,
    /// Number of random restarts used by [`multistart`].
    pub restarts: usize,
    /// Seed for restart sampling; identical seeds give identical results.
    pub rng_seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_feas: 1e-7,
            tol_opt: 1e-6,
            max_outer_iter: 50,
            max_inner_iter: 500,
            restarts: 10,
            rng_seed: 0,
        }
    }
}

/// Penalty cap beyond which the augmented Lagrangian reports divergence.
pub(crate) const PENALTY_CAP: f64 = 1e12;
/// Sampling box for coordinates without finite bounds.
pub(crate) const UNBOUNDED_SAMPLE: f64 = 10.0;

/// Draws a start point uniformly inside the bounds, with unbounded
/// coordinates sampled in `[-10, 10]`.
fn sample_start<T: Scalar>(p: &NlpProblem<T>, rng: &mut ChaCha8Rng) -> Vec<T> {
    let big = sc::<T>(UNBOUNDED_SAMPLE);
    p.lower
        .iter()
        .zip(&p.upper)
        .map(|(&lo, &hi)| {
            let lo_eff = lo.max(-big);
            let hi_eff = hi.min(big);
            let (lo_eff, hi_eff) = if lo_eff <= hi_eff {
                (lo_eff, hi_eff)
            } else {
                // box entirely outside the sampling window
                (lo, lo)
            };
            let u: f64 = rng.gen_range(0.0..=1.0);
            lo_eff + (hi_eff - lo_eff) * sc(u)
        })
        .collect()
}

/// Runs [`solve`] from each of `extra_starts` (clipped into bounds) plus
/// `opts.restarts` seeded random starts, and returns the feasible solution
/// with the best objective, else the least-infeasible one. `Diverged` is
/// propagated only when every start diverges. Deterministic given
/// `opts.rng_seed`; ties break toward the earlier start.
pub fn multistart<T: Scalar>(
    p: &NlpProblem<T>,
    opts: &SolverOptions,
    extra_starts: &[Vec<T>],
) -> NlpSolution<T> {
    let mut starts: Vec<Vec<T>> = Vec::with_capacity(extra_starts.len() + opts.restarts);
    for s in extra_starts {
        let mut s = s.clone();
        s.resize(p.n(), T::zero());
        p.project(&mut s);
        starts.push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    for _ in 0..opts.restarts.max(1) {
        starts.push(sample_start(p, &mut rng));
    }

    let tol = sc::<T>(opts.tol_feas);
    let mut best: Option<NlpSolution<T>> = None;
    for start in &starts {
        let sol = solve(p, opts, Some(start));
        let better = match &best {
            None => true,
            Some(b) => rank(&sol, tol) < rank(b, tol),
        };
        if better {
            best = Some(sol);
        }
    }
    best.expect("at least one start")
}

/// Lexicographic quality: feasible-and-better-objective first, then less
/// infeasible; diverged runs always rank last. NaNs sort to the very end so
/// they can never displace a usable point.
fn rank<T: Scalar>(s: &NlpSolution<T>, tol: T) -> (u8, f64) {
    let finite = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    let v = s.max_violation();
    if s.status == SolveStatus::Diverged {
        (2, finite(v.to_f64_lossy()))
    } else if v <= tol {
        (0, finite(s.objective_value.to_f64_lossy()))
    } else {
        (1, finite(v.to_f64_lossy()))
    }
}

#[cfg(test)]
mod tests;
