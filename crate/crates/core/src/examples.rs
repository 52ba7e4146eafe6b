//! Built-in example problems and their brute-force oracles.
//!
//! Three families exercise the three structural extensions the solver
//! targets:
//!
//! - `obstacle`: open-loop trajectory planning with a disjunctive
//!   (stay-clear-of-a-cylinder) constraint smoothed into an existence
//!   constraint over simplex variables;
//! - `saturation`: feedback-gain synthesis under exactly modelled input
//!   saturation, encoded with non-unique modelling variables;
//! - `estimation`: set-membership mass estimation where the trajectory
//!   equalities couple the admissible noises to a single explaining mass.
//!
//! Each constructor is paired with an independent oracle (exhaustive
//! simulation or closed-form enumeration) used by the acceptance suite, and
//! a [`Simulator`] giving the audit closed-form per-sample resolution.

use crate::audit::Simulator;
use crate::expr::Expr;
use crate::model::{Bounds, Dims, SipProblem};
use crate::nlp::{multistart, NlpFn, NlpProblem, SolverOptions};
use crate::reduction::{mix, GroupMap, VarMap};
use crate::scalar::{sc, Scalar};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Exact interval projection (saturation function).
pub fn sat<T: Scalar>(lo: T, hi: T, v: T) -> T {
    v.max(lo).min(hi)
}

/// Parameters of the obstacle-avoidance problem.
#[derive(Debug, Clone)]
pub struct ObstacleParams {
    pub n_steps: usize,
    pub x0: [f64; 3],
    pub xref: [f64; 3],
    /// Terminal-state weight (identity scaled).
    pub q_weight: f64,
    /// Input weight (identity scaled).
    pub r_weight: f64,
    pub u_bound: f64,
    pub w_bound: f64,
}

impl Default for ObstacleParams {
    fn default() -> Self {
        ObstacleParams {
            n_steps: 5,
            x0: [-2.0, 0.0, 0.0],
            xref: [2.0, 0.0, 0.0],
            q_weight: 1.0,
            r_weight: 0.05,
            u_bound: 1.0,
            w_bound: 0.1,
        }
    }
}

/// Parameters of the input-saturation problem.
#[derive(Debug, Clone)]
pub struct SaturationParams {
    pub n_steps: usize,
    /// Unstable pole; must exceed one.
    pub a: f64,
    pub w_bound: f64,
    pub x0: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub b_range: [f64; 2],
}

impl Default for SaturationParams {
    fn default() -> Self {
        SaturationParams {
            n_steps: 5,
            a: 1.3,
            w_bound: 0.2,
            x0: 1.0,
            u_lo: -1.0,
            u_hi: 1.0,
            b_range: [0.0, 3.0],
        }
    }
}

/// Parameters of the mass-estimation problem.
#[derive(Debug, Clone)]
pub struct EstimationParams {
    pub n_steps: usize,
    /// Position measurements, length `n_steps + 1`.
    pub y: Vec<f64>,
    /// Applied forces, length `n_steps`, all nonzero.
    pub u: Vec<f64>,
    pub dt: f64,
    pub w_bound: f64,
    /// Known initial velocity.
    pub x20: f64,
    /// Physical bracket on the mass itself.
    pub m_box: [f64; 2],
}

impl Default for EstimationParams {
    fn default() -> Self {
        EstimationParams {
            n_steps: 5,
            y: vec![-0.1, 0.0, 0.9, 3.0, 6.1, 10.2],
            u: vec![1.0; 5],
            dt: 1.0,
            // recovered from the reported bound pair: 0.2 reproduces both
            // endpoints to printed precision, see the estimation oracle
            w_bound: 0.2,
            x20: 0.0,
            m_box: [1e-3, 1e3],
        }
    }
}

/// Constructor failure (bad data in the parameters).
#[derive(Debug, thiserror::Error)]
pub enum ExampleError {
    #[error("measurement vector must have length n_steps + 1 = {expected}, got {got}")]
    BadMeasurementLength { expected: usize, got: usize },
    #[error("input vector must have length n_steps = {expected}, got {got}")]
    BadInputLength { expected: usize, got: usize },
    #[error("input u[{0}] is zero; the mass brackets divide by it")]
    ZeroInput(usize),
}

// ---------------------------------------------------------------------
// obstacle avoidance
// ---------------------------------------------------------------------

/// Builds the obstacle problem: steer from `x0` to `xref` in `n` steps
/// under per-axis disturbances, staying outside a unit cylinder (or above
/// `+1` / below `-1` along the third axis) at every step. The disjunction
/// is carried by simplex smoothing variables, three per step.
///
/// Index layouts are step-major: `theta[3k+i]` is input axis `i` at step
/// `k`, `zp[3(k-1)+i]` is state axis `i` at step `k >= 1` (the initial state
/// is folded in as constants), `s[3(k-1)+j]` is smoothing weight `j` for the
/// step-`k` obstacle row.
pub fn build_obstacle<T: Scalar>(p: &ObstacleParams) -> SipProblem<T> {
    assert!(p.n_steps >= 1, "need at least one step");
    assert!(p.u_bound > 0.0 && p.w_bound > 0.0, "bounds must be positive");
    let n = p.n_steps;

    // state expression: axis i at step k (k = 0 folds in the constant x0)
    let state = |k: usize, i: usize| -> Expr<T> {
        if k == 0 {
            Expr::c(p.x0[i])
        } else {
            Expr::zp(3 * (k - 1) + i)
        }
    };

    let mut d = Vec::with_capacity(3 * n);
    for k in 0..n {
        for i in 0..3 {
            // x_{k+1} = x_k + u_k + w_k
            d.push(state(k + 1, i) - state(k, i) - Expr::theta(3 * k + i) - Expr::w(3 * k + i));
        }
    }

    let mut g = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(3 * n);
    for k in 1..=n {
        let sbase = 3 * (k - 1);
        let cylinder = Expr::c(1.0) - state(k, 0).squared() - state(k, 1).squared();
        let above = Expr::c(1.0) - state(k, 2);
        let below = state(k, 2) + Expr::c(1.0);
        g.push(
            Expr::s(sbase) * cylinder + Expr::s(sbase + 1) * above + Expr::s(sbase + 2) * below,
        );
        q.push(Expr::s(sbase) + Expr::s(sbase + 1) + Expr::s(sbase + 2) - Expr::c(1.0));
        for j in 0..3 {
            r.push(-Expr::s(sbase + j));
        }
    }

    let input_cost = Expr::sum(
        (0..3 * n).map(|j| Expr::c(p.r_weight) * Expr::theta(j).squared()),
    );
    let terminal_cost = Expr::sum(
        (0..3).map(|i| Expr::c(p.q_weight) * (state(n, i) - Expr::c(p.xref[i])).squared()),
    );
    let f = input_cost + terminal_cost;

    SipProblem {
        name: "obstacle".to_string(),
        dims: Dims {
            theta: 3 * n,
            w: 3 * n,
            zp: 3 * n,
            zm: 0,
            s: 3 * n,
        },
        bounds: Bounds {
            theta_lo: vec![sc(-p.u_bound); 3 * n],
            theta_hi: vec![sc(p.u_bound); 3 * n],
            w_lo: vec![sc(-p.w_bound); 3 * n],
            w_hi: vec![sc(p.w_bound); 3 * n],
            s_lo: Some(vec![T::zero(); 3 * n]),
            s_hi: Some(vec![T::one(); 3 * n]),
            gamma: Bounds::default_gamma(),
        },
        f,
        g,
        d,
        e: vec![],
        q,
        r,
    }
}

/// Forward simulation of the obstacle dynamics; returns the states at steps
/// `1..=n`, step-major.
pub fn simulate_obstacle<T: Scalar>(p: &ObstacleParams, u: &[T], w: &[T]) -> Vec<T> {
    let n = p.n_steps;
    let mut x = [sc::<T>(p.x0[0]), sc(p.x0[1]), sc(p.x0[2])];
    let mut out = Vec::with_capacity(3 * n);
    for k in 0..n {
        for i in 0..3 {
            x[i] = x[i] + u[3 * k + i] + w[3 * k + i];
        }
        out.extend_from_slice(&x);
    }
    out
}

/// Cost of an obstacle trajectory (inputs plus terminal miss).
pub fn obstacle_cost<T: Scalar>(p: &ObstacleParams, u: &[T], states: &[T]) -> T {
    let n = p.n_steps;
    let mut cost = T::zero();
    for uj in &u[..3 * n] {
        cost += sc::<T>(p.r_weight) * *uj * *uj;
    }
    for i in 0..3 {
        let miss = states[3 * (n - 1) + i] - sc(p.xref[i]);
        cost += sc::<T>(p.q_weight) * miss * miss;
    }
    cost
}

/// The three obstacle disjunct values at one state.
pub fn obstacle_terms<T: Scalar>(x: &[T; 3]) -> [T; 3] {
    [
        T::one() - x[0] * x[0] - x[1] * x[1],
        T::one() - x[2],
        x[2] + T::one(),
    ]
}

/// Brute-force nominal (disturbance-free) obstacle optimum by enumerating
/// the per-step disjunct choices (`3^n` smooth programs). Independent of the
/// smoothing encoding; used to cross-check the master construction.
pub fn oracle_obstacle_nominal<T: Scalar>(
    p: &ObstacleParams,
    restarts: usize,
    seed: u64,
) -> (T, Vec<T>) {
    let n = p.n_steps;
    let n_branches = 3usize.pow(n as u32);
    let mut best_cost = T::infinity();
    let mut best_u = vec![T::zero(); 3 * n];

    let problem: SipProblem<T> = build_obstacle(p);
    let state = |k: usize, i: usize| -> Expr<T> {
        if k == 0 {
            Expr::c(p.x0[i])
        } else {
            Expr::zp(3 * (k - 1) + i)
        }
    };

    for branch in 0..n_branches {
        let map = VarMap {
            theta: GroupMap::Input { base: 0 },
            w: GroupMap::Consts(vec![T::zero(); 3 * n]),
            zp: GroupMap::Input { base: 3 * n },
            ..VarMap::absent()
        };
        let inf = T::infinity();
        let mut lower = vec![sc::<T>(-p.u_bound); 3 * n];
        lower.extend(vec![-inf; 3 * n]);
        let mut upper = vec![sc::<T>(p.u_bound); 3 * n];
        upper.extend(vec![inf; 3 * n]);
        let mut nlp = NlpProblem::new(lower, upper, map.compile(&problem.f));
        for row in &problem.d {
            nlp.eq.push(map.compile(row));
        }
        let mut code = branch;
        for k in 1..=n {
            let choice = code % 3;
            code /= 3;
            let term = match choice {
                0 => Expr::c(1.0) - state(k, 0).squared() - state(k, 1).squared(),
                1 => Expr::c(1.0) - state(k, 2),
                _ => state(k, 2) + Expr::c(1.0),
            };
            nlp.ineq.push(map.compile(&term));
        }
        let opts = SolverOptions {
            restarts,
            rng_seed: mix(seed, 0x0B57, branch as u64),
            ..Default::default()
        };
        let sol = multistart(&nlp, &opts, &[vec![T::zero(); 6 * n]]);
        if sol.is_feasible(1e-7) && sol.objective_value < best_cost {
            best_cost = sol.objective_value;
            best_u = sol.x[..3 * n].to_vec();
        }
    }
    (best_cost, best_u)
}

/// Closed-form audit support for the obstacle family.
pub struct ObstacleSimulator {
    pub params: ObstacleParams,
}

impl<T: Scalar> Simulator<T> for ObstacleSimulator {
    fn resolve(&self, theta: &[T], w: &[T]) -> Option<(Vec<T>, Vec<T>)> {
        Some((simulate_obstacle(&self.params, theta, w), Vec::new()))
    }

    fn g_row_minima(&self, _theta: &[T], _w: &[T], zp: &[T]) -> Option<Vec<T>> {
        // the smoothed row is linear in the simplex weights, so its inner
        // minimum is the smallest of the three disjunct values
        let n = self.params.n_steps;
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let x = [zp[3 * k], zp[3 * k + 1], zp[3 * k + 2]];
            let t = obstacle_terms(&x);
            out.push(t[0].min(t[1]).min(t[2]));
        }
        Some(out)
    }
}

// ---------------------------------------------------------------------
// input saturation
// ---------------------------------------------------------------------

/// Builds the saturation problem: pick the feedback gain `b` minimizing the
/// worst-case squared terminal state of `x_{k+1} = (a + w) x_k + u_k` with
/// `u_k = sat(u_lo, u_hi, -b x_k)` encoded exactly through seven smoothing
/// variables per step.
///
/// `zp[k-1]` is `x_k` for `k >= 1`, `zp[n+k]` is `u_k`; `zm[7k..7k+7]` are
/// the step-`k` smoothing variables. The scalar `w` perturbs `a` at every
/// step.
pub fn build_saturation<T: Scalar>(p: &SaturationParams) -> SipProblem<T> {
    assert!(p.n_steps >= 1, "need at least one step");
    assert!(p.a > 1.0, "a > 1 characterizes the unstable dynamics");
    assert!(p.u_lo < p.u_hi, "input interval must be nonempty");
    let n = p.n_steps;

    let x = |k: usize| -> Expr<T> {
        if k == 0 {
            Expr::c(p.x0)
        } else {
            Expr::zp(k - 1)
        }
    };
    let u = |k: usize| -> Expr<T> { Expr::zp(n + k) };
    let z = |k: usize, j: usize| -> Expr<T> { Expr::zm(7 * k + j) };
    let bx = |k: usize| -> Expr<T> { Expr::theta(0) * x(k) };

    let mut d = Vec::with_capacity(4 * n);
    let mut e = Vec::with_capacity(10 * n);
    for k in 0..n {
        // x_{k+1} = (a + w) x_k + u_k
        d.push(x(k + 1) - Expr::c(p.a) * x(k) - Expr::w(0) * x(k) - u(k));
    }
    for k in 0..n {
        d.push(z(k, 0) + z(k, 1) - Expr::c(1.0));
        d.push(z(k, 2) + z(k, 3) - Expr::c(1.0));
        d.push(z(k, 4) + z(k, 5) + z(k, 6) - Expr::c(1.0));
    }
    for k in 0..n {
        let u_hi = Expr::c(p.u_hi);
        let u_lo = Expr::c(p.u_lo);
        // not above the upper saturation branch
        e.push(z(k, 0) * (-bx(k) - u_hi.clone()) + z(k, 1) * (u(k) - u_hi.clone()).squared());
        // not below the lower saturation branch
        e.push(z(k, 2) * (bx(k) + u_lo.clone()) + z(k, 3) * (u(k) - u_lo.clone()).squared());
        // interior branch ties u to -b x
        e.push(
            z(k, 4) * (bx(k) + u_hi.clone())
                + z(k, 5) * (-bx(k) - u_lo.clone())
                + z(k, 6) * (u(k) + bx(k)).squared(),
        );
        // Valid cuts that hold identically on the graph of sat: the input
        // stays in its interval and the products (u + b x)(u - u_lo) and
        // (u + b x)(u - u_hi) are nonpositive on every branch. Without them
        // the non-strict min encoding admits spurious inputs whenever an
        // optimizer parks b x_k exactly on a saturation boundary, breaking
        // the uniqueness of the physical trajectory.
        e.push(u_lo.clone() - u(k));
        e.push(u(k) - u_hi.clone());
        e.push((u(k) + bx(k)) * (u(k) - u_lo));
        e.push((u(k) + bx(k)) * (u(k) - u_hi));
        for j in 0..7 {
            e.push(-z(k, j));
        }
    }

    let f = x(n).squared();

    SipProblem {
        name: "saturation".to_string(),
        dims: Dims {
            theta: 1,
            w: 1,
            zp: 2 * n,
            zm: 7 * n,
            s: 0,
        },
        bounds: Bounds {
            theta_lo: vec![sc(p.b_range[0])],
            theta_hi: vec![sc(p.b_range[1])],
            w_lo: vec![sc(-p.w_bound)],
            w_hi: vec![sc(p.w_bound)],
            s_lo: None,
            s_hi: None,
            gamma: Bounds::default_gamma(),
        },
        f,
        g: vec![],
        d,
        e,
        q: vec![],
        r: vec![],
    }
}

/// Exact saturation rollout: terminal cost `x_n^2` for one `(b, w)`.
pub fn simulate_saturation<T: Scalar>(p: &SaturationParams, b: T, w: T) -> T {
    let mut x = sc::<T>(p.x0);
    let a = sc::<T>(p.a);
    let (lo, hi) = (sc::<T>(p.u_lo), sc::<T>(p.u_hi));
    for _ in 0..p.n_steps {
        let u = sat(lo, hi, -b * x);
        x = (a + w) * x + u;
    }
    x * x
}

/// Exhaustive minimax reference on a `grid_b x grid_w` lattice using the
/// exact saturation (no smoothing): `argmin_b max_w x_n^2`. This is the
/// acceptance reference for the reduction run.
pub fn oracle_saturation<T: Scalar>(
    p: &SaturationParams,
    grid_b: usize,
    grid_w: usize,
) -> (T, T) {
    assert!(grid_b >= 2 && grid_w >= 2);
    let mut best_b = T::zero();
    let mut best_val = T::infinity();
    for ib in 0..grid_b {
        let t = ib as f64 / (grid_b - 1) as f64;
        let b = sc::<T>(p.b_range[0] + t * (p.b_range[1] - p.b_range[0]));
        let mut worst = T::neg_infinity();
        for iw in 0..grid_w {
            let s = iw as f64 / (grid_w - 1) as f64;
            let w = sc::<T>(-p.w_bound + s * 2.0 * p.w_bound);
            worst = worst.max(simulate_saturation(p, b, w));
        }
        if worst < best_val {
            best_val = worst;
            best_b = b;
        }
    }
    (best_b, best_val)
}

/// Closed-form audit support for the saturation family: exact rollout plus
/// the branch-consistent smoothing pattern.
pub struct SaturationSimulator {
    pub params: SaturationParams,
}

impl<T: Scalar> Simulator<T> for SaturationSimulator {
    fn resolve(&self, theta: &[T], w: &[T]) -> Option<(Vec<T>, Vec<T>)> {
        let p = &self.params;
        let n = p.n_steps;
        let b = theta[0];
        let wv = w[0];
        let a = sc::<T>(p.a);
        let (lo, hi) = (sc::<T>(p.u_lo), sc::<T>(p.u_hi));
        let mut x = sc::<T>(p.x0);
        let mut zp = vec![T::zero(); 2 * n];
        let mut zm = vec![T::zero(); 7 * n];
        for k in 0..n {
            let v = -b * x;
            let u = sat(lo, hi, v);
            let pattern: [f64; 7] = if v > hi {
                [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]
            } else if v < lo {
                [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]
            } else {
                [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
            };
            for (j, pj) in pattern.iter().enumerate() {
                zm[7 * k + j] = sc(*pj);
            }
            zp[n + k] = u;
            x = (a + wv) * x + u;
            zp[k] = x;
        }
        Some((zp, zm))
    }
}

// ---------------------------------------------------------------------
// mass estimation
// ---------------------------------------------------------------------

/// Builds the estimation problem: find the tightest mass bracket
/// `[m_lo, m_hi]` consistent with noisy position measurements of a
/// discretized double integrator with known initial velocity.
///
/// `theta = (m_lo, m_hi)`. The trajectory system carries positions
/// `zp[0..=n]`, velocities `zp[n+1..=2n+1]`, and the explaining mass
/// `zp[2n+2]` (unique given a consistent noise, hence a physical state);
/// the mass dynamics are cross-multiplied to stay polynomial. The robust
/// rows are the per-step cross-multiplied bracket conditions on the
/// measured second differences.
pub fn build_estimation<T: Scalar>(p: &EstimationParams) -> Result<SipProblem<T>, ExampleError> {
    let n = p.n_steps;
    if p.y.len() != n + 1 {
        return Err(ExampleError::BadMeasurementLength {
            expected: n + 1,
            got: p.y.len(),
        });
    }
    if p.u.len() != n {
        return Err(ExampleError::BadInputLength {
            expected: n,
            got: p.u.len(),
        });
    }
    if let Some(k) = p.u.iter().position(|&u| u == 0.0) {
        return Err(ExampleError::ZeroInput(k));
    }

    let x1 = |k: usize| -> Expr<T> { Expr::zp(k) };
    let x2 = |k: usize| -> Expr<T> { Expr::zp(n + 1 + k) };
    let mass = || -> Expr<T> { Expr::zp(2 * n + 2) };
    let m_lo = || -> Expr<T> { Expr::theta(0) };
    let m_hi = || -> Expr<T> { Expr::theta(1) };

    let mut d = Vec::new();
    // measurements: y_k = x1_k + w_k
    for k in 0..=n {
        d.push(Expr::c(p.y[k]) - x1(k) - Expr::w(k));
    }
    // position dynamics: x1_{k+1} = x1_k + dt x2_k
    for k in 0..n {
        d.push(x1(k + 1) - x1(k) - Expr::c(p.dt) * x2(k));
    }
    // known initial velocity
    d.push(x2(0) - Expr::c(p.x20));
    // velocity dynamics with the mass cross-multiplied:
    // m (x2_{k+1} - x2_k) = dt u_k
    for k in 0..n {
        d.push(mass() * (x2(k + 1) - x2(k)) - Expr::c(p.dt * p.u[k]));
    }

    // the explaining mass lives in the physical box
    let e = vec![
        Expr::c(p.m_box[0]) - mass(),
        mass() - Expr::c(p.m_box[1]),
    ];

    // bracket rows on the measured second differences, cross-multiplied to
    // avoid dividing by the decision variables:
    //   dt^2 u_k <= m_hi D_k(w)  and  m_lo D_k(w) <= dt^2 u_k   (u_k > 0)
    // with flipped directions for negative inputs.
    let mut g = Vec::with_capacity(2 * (n - 1));
    for k in 0..n.saturating_sub(1) {
        let sd_y = p.y[k + 2] - 2.0 * p.y[k + 1] + p.y[k];
        let sd_w = Expr::w(k + 2) - Expr::c(2.0) * Expr::w(k + 1) + Expr::w(k);
        let d_k = Expr::c(sd_y) - sd_w;
        let rhs = Expr::c(p.dt * p.dt * p.u[k]);
        if p.u[k] > 0.0 {
            g.push(rhs.clone() - m_hi() * d_k.clone());
            g.push(m_lo() * d_k - rhs);
        } else {
            g.push(m_hi() * d_k.clone() - rhs.clone());
            g.push(rhs - m_lo() * d_k);
        }
    }

    let f = m_hi() - m_lo();

    Ok(SipProblem {
        name: "estimation".to_string(),
        dims: Dims {
            theta: 2,
            w: n + 1,
            zp: 2 * (n + 1) + 1,
            zm: 0,
            s: 0,
        },
        bounds: Bounds {
            theta_lo: vec![sc(p.m_box[0]); 2],
            theta_hi: vec![sc(p.m_box[1]); 2],
            w_lo: vec![sc(-p.w_bound); n + 1],
            w_hi: vec![sc(p.w_bound); n + 1],
            s_lo: None,
            s_hi: None,
            gamma: Bounds::default_gamma(),
        },
        f,
        g,
        d,
        e,
        q: vec![],
        r: vec![],
    })
}

/// Per-step implied masses at zero noise: `dt^2 u_k / secdiff_k(y)`.
pub fn implied_step_masses(p: &EstimationParams) -> Vec<f64> {
    (0..p.n_steps.saturating_sub(1))
        .map(|k| {
            let sd = p.y[k + 2] - 2.0 * p.y[k + 1] + p.y[k];
            p.dt * p.dt * p.u[k] / sd
        })
        .collect()
}

/// Affine noise coefficients on the consistency manifold:
/// `w_k = alpha_k(w_0) + beta_k * sigma` with `sigma = 1/m`, derived from the
/// exact forward simulation `x2_j = x20 + dt U_j / m`,
/// `x1_k = x1_0 + dt sum x2_j`, `w_k = y_k - x1_k`.
fn estimation_noise_coefficients(p: &EstimationParams) -> (Vec<f64>, Vec<f64>) {
    let n = p.n_steps;
    // U_j: input prefix sums; V_k = sum_{j<k} U_j
    let mut prefix = vec![0.0; n + 1];
    for j in 0..n {
        prefix[j + 1] = prefix[j] + p.u[j];
    }
    let mut alpha = Vec::with_capacity(n + 1);
    let mut beta = Vec::with_capacity(n + 1);
    let mut v = 0.0;
    for k in 0..=n {
        alpha.push(p.y[k] - p.y[0] - p.dt * k as f64 * p.x20);
        beta.push(-p.dt * p.dt * v);
        if k < n {
            v += prefix[k];
        }
    }
    (alpha, beta)
}

/// Feasible `sigma = 1/m` interval at a fixed `w_0`, intersecting the box
/// conditions `|alpha_k + w_0 + beta_k sigma| <= w_bound` with the physical
/// mass box. `None` when empty.
fn estimation_sigma_interval(p: &EstimationParams, w0: f64) -> Option<(f64, f64)> {
    let (alpha, beta) = estimation_noise_coefficients(p);
    let b = p.w_bound;
    let mut lo = 1.0 / p.m_box[1];
    let mut hi = 1.0 / p.m_box[0];
    for k in 0..alpha.len() {
        let a = alpha[k] + w0;
        if beta[k] == 0.0 {
            if a.abs() > b {
                return None;
            }
            continue;
        }
        let (l, h) = if beta[k] < 0.0 {
            ((a - b) / -beta[k], (a + b) / -beta[k])
        } else {
            ((-b - a) / beta[k], (b - a) / beta[k])
        };
        lo = lo.max(l);
        hi = hi.min(h);
        if lo > hi {
            return None;
        }
    }
    Some((lo, hi))
}

/// Exact noise vector for manifold parameters `(w_0, sigma)`.
fn estimation_noise_from(p: &EstimationParams, w0: f64, sigma: f64) -> Vec<f64> {
    let (alpha, beta) = estimation_noise_coefficients(p);
    alpha
        .iter()
        .zip(&beta)
        .map(|(a, bt)| a + w0 + bt * sigma)
        .collect()
}

/// Brute-force reference for the estimation problem: scans the consistent
/// noise manifold, exact in the mass direction (the noise is affine in
/// `1/m`, so each `w_0` yields a closed-form feasible mass interval) and
/// gridded in `w_0` with the same point budget as a `grid_w`-per-axis
/// lattice over the noise box. Returns the extreme explaining masses
/// `(m_lo*, m_hi*)`, or `None` when no consistent noise exists.
pub fn oracle_estimation<T: Scalar>(p: &EstimationParams, grid_w: usize) -> Option<(T, T)> {
    assert!(grid_w >= 1);
    let points = grid_w.pow(3);
    let mut m_lo = f64::INFINITY;
    let mut m_hi = f64::NEG_INFINITY;
    for iw in 0..points {
        // a single-point grid degenerates to the box center
        let t = if points == 1 {
            0.5
        } else {
            iw as f64 / (points - 1) as f64
        };
        let w0 = -p.w_bound + t * 2.0 * p.w_bound;
        if let Some((slo, shi)) = estimation_sigma_interval(p, w0) {
            // sigma is already clamped inside the physical mass box
            m_lo = m_lo.min(1.0 / shi);
            m_hi = m_hi.max(1.0 / slo);
        }
    }
    (m_lo.is_finite() && m_hi.is_finite()).then(|| (sc(m_lo), sc(m_hi)))
}

/// Closed-form audit support for the estimation family: samples the
/// consistent manifold and reconstructs the explaining trajectory.
pub struct EstimationSimulator {
    pub params: EstimationParams,
    /// Feasible `w_0` interval, precomputed by scanning.
    w0_range: (f64, f64),
}

impl EstimationSimulator {
    pub fn new(params: EstimationParams) -> Self {
        let scan = 20_000;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=scan {
            let w0 = -params.w_bound + 2.0 * params.w_bound * i as f64 / scan as f64;
            if estimation_sigma_interval(&params, w0).is_some() {
                lo = lo.min(w0);
                hi = hi.max(w0);
            }
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 0.0;
        }
        EstimationSimulator {
            params,
            w0_range: (lo, hi),
        }
    }
}

impl<T: Scalar> Simulator<T> for EstimationSimulator {
    fn sample_w(&self, rng: &mut ChaCha8Rng) -> Option<Vec<T>> {
        let p = &self.params;
        for _ in 0..1000 {
            let w0 = rng.gen_range(self.w0_range.0..=self.w0_range.1);
            let Some((slo, shi)) = estimation_sigma_interval(p, w0) else {
                continue;
            };
            let sigma = rng.gen_range(slo..=shi);
            let w = estimation_noise_from(p, w0, sigma);
            if w.iter().all(|v| v.abs() <= p.w_bound + 1e-12) {
                return Some(w.into_iter().map(sc).collect());
            }
        }
        None
    }

    fn resolve(&self, _theta: &[T], w: &[T]) -> Option<(Vec<T>, Vec<T>)> {
        let p = &self.params;
        let n = p.n_steps;
        let dt = sc::<T>(p.dt);
        let mut zp = vec![T::zero(); 2 * (n + 1) + 1];
        // positions from measurements, velocities from position differences
        for k in 0..=n {
            zp[k] = sc::<T>(p.y[k]) - w[k];
        }
        zp[n + 1] = sc(p.x20);
        for k in 1..n {
            zp[n + 1 + k] = (zp[k + 1] - zp[k]) / dt;
        }
        // the explaining mass from the first velocity increment, final
        // velocity from its own dynamics row
        let dv = zp[n + 2] - zp[n + 1];
        if dv.abs() < sc(1e-12) {
            return None;
        }
        let m = dt * sc::<T>(p.u[0]) / dv;
        zp[2 * n + 2] = m;
        zp[n + 1 + n] = zp[n + 1 + n - 1] + dt * sc::<T>(p.u[n - 1]) / m;
        Some((zp, Vec::new()))
    }
}

/// Exact minimal violation of the one-step saturation smoothing system over
/// all admissible `z` at a pinned input `u`.
///
/// Each smoothed row is linear in its own simplex block and the blocks are
/// disjoint, so the minimum of a row over its simplex is attained at a
/// vertex and the system's minimal violation is the largest of the per-row
/// vertex minima. Feasibility (some `z` exists) is equivalent to the result
/// being `<= 0`; by the exactness of the encoding that happens precisely at
/// `u = sat(u_lo, u_hi, -b x)`.
pub fn saturation_step_min_violation(b: f64, x: f64, u_lo: f64, u_hi: f64, u: f64) -> f64 {
    let bx = b * x;
    let row1 = (-bx - u_hi).min((u - u_hi).powi(2));
    let row2 = (bx + u_lo).min((u - u_lo).powi(2));
    let row3 = (bx + u_hi).min(-bx - u_lo).min((u + bx).powi(2));
    row1.max(row2).max(row3)
}

/// Feasibility probe for one step of the saturation smoothing system at
/// fixed `(b, x, u_lo, u_hi)`: searches for `(u, z_1..z_7)` satisfying the
/// three smoothed rows, the partition equalities, and nonnegativity, via the
/// NLP solver. Pinning `fixed_u` tests whether a particular input admits any
/// smoothing certificate. Returns feasibility and the input found.
///
/// The squared terms pin the input with accuracy on the order of the square
/// root of the feasibility tolerance; [`saturation_step_min_violation`]
/// gives the exact-arithmetic companion check.
pub fn saturation_step_feasibility(
    b: f64,
    x: f64,
    u_lo: f64,
    u_hi: f64,
    fixed_u: Option<f64>,
    restarts: usize,
    seed: u64,
) -> (bool, f64) {
    let bx = b * x;
    let span = u_hi - u_lo;
    // variables: u, z1..z7 (z in [0, 1] is implied by the partition rows)
    let (u_min, u_max) = match fixed_u {
        Some(u) => (u, u),
        None => (u_lo - span, u_hi + span),
    };
    let mut lower = vec![u_min];
    lower.extend([0.0; 7]);
    let mut upper = vec![u_max];
    upper.extend([1.0; 7]);
    let mut nlp = NlpProblem::new(
        lower,
        upper,
        NlpFn::custom(|_: &[f64]| 0.0, |_, g| g.iter_mut().for_each(|v| *v = 0.0)),
    );
    let pairs: [(usize, usize); 2] = [(1, 2), (3, 4)];
    for (i, j) in pairs {
        nlp.eq.push(NlpFn::custom(
            move |z: &[f64]| z[i] + z[j] - 1.0,
            move |_, g| {
                g.iter_mut().for_each(|v| *v = 0.0);
                g[i] = 1.0;
                g[j] = 1.0;
            },
        ));
    }
    nlp.eq.push(NlpFn::custom(
        |z: &[f64]| z[5] + z[6] + z[7] - 1.0,
        |_, g| {
            g.iter_mut().for_each(|v| *v = 0.0);
            g[5] = 1.0;
            g[6] = 1.0;
            g[7] = 1.0;
        },
    ));
    nlp.ineq.push(NlpFn::custom(
        move |z: &[f64]| z[1] * (-bx - u_hi) + z[2] * (z[0] - u_hi).powi(2),
        move |z, g| {
            g.iter_mut().for_each(|v| *v = 0.0);
            g[1] = -bx - u_hi;
            g[2] = (z[0] - u_hi).powi(2);
            g[0] = 2.0 * z[2] * (z[0] - u_hi);
        },
    ));
    nlp.ineq.push(NlpFn::custom(
        move |z: &[f64]| z[3] * (bx + u_lo) + z[4] * (z[0] - u_lo).powi(2),
        move |z, g| {
            g.iter_mut().for_each(|v| *v = 0.0);
            g[3] = bx + u_lo;
            g[4] = (z[0] - u_lo).powi(2);
            g[0] = 2.0 * z[4] * (z[0] - u_lo);
        },
    ));
    nlp.ineq.push(NlpFn::custom(
        move |z: &[f64]| z[5] * (bx + u_hi) + z[6] * (-bx - u_lo) + z[7] * (z[0] + bx).powi(2),
        move |z, g| {
            g.iter_mut().for_each(|v| *v = 0.0);
            g[5] = bx + u_hi;
            g[6] = -bx - u_lo;
            g[7] = (z[0] + bx).powi(2);
            g[0] = 2.0 * z[7] * (z[0] + bx);
        },
    ));
    let opts = SolverOptions {
        restarts,
        rng_seed: seed,
        tol_feas: 1e-9,
        tol_opt: 1e-8,
        max_outer_iter: 60,
        ..Default::default()
    };
    let sat_u = sat(u_lo, u_hi, -bx);
    // seed the search at the saturated input with its branch-consistent
    // smoothing pattern; random restarts cover the rest
    let v = -bx;
    let pattern: [f64; 7] = if v > u_hi {
        [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]
    } else if v < u_lo {
        [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]
    } else {
        [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
    };
    let mut warm = vec![sat_u];
    warm.extend(pattern);
    let sol = multistart(&nlp, &opts, &[warm]);
    (sol.is_feasible(1e-7), sol.x[0])
}

/// Chooses the matching closed-form simulator for a problem by name and
/// dimensions. The audit verifies every shortcut against the trajectory
/// constraints, so a mismatching file merely falls back to the NLP path.
pub fn simulator_for<T: Scalar>(p: &SipProblem<T>) -> Option<Box<dyn Simulator<T>>> {
    match p.name.as_str() {
        "obstacle" => {
            let params = ObstacleParams::default();
            (p.dims == build_obstacle::<T>(&params).dims)
                .then(|| Box::new(ObstacleSimulator { params }) as Box<dyn Simulator<T>>)
        }
        "saturation" => {
            let params = SaturationParams::default();
            (p.dims == build_saturation::<T>(&params).dims)
                .then(|| Box::new(SaturationSimulator { params }) as Box<dyn Simulator<T>>)
        }
        "estimation" => {
            let mut params = EstimationParams::default();
            // track the file's noise box so manifold sampling matches
            if let (Some(&lo), Some(&hi)) = (p.bounds.w_lo.first(), p.bounds.w_hi.first()) {
                let b = hi.to_f64_lossy().max(-lo.to_f64_lossy());
                if b.is_finite() && b > 0.0 {
                    params.w_bound = b;
                }
            }
            match build_estimation::<T>(&params) {
                Ok(reference) if reference.dims == p.dims => {
                    Some(Box::new(EstimationSimulator::new(params)) as Box<dyn Simulator<T>>)
                }
                _ => None,
            }
        }
        _ => None,
    }
}

#[cfg(test)]
#[path = "examples_tests.rs"]
mod tests;
