//! Adversary subproblems: worst-case uncertainty search at fixed decisions.
//!
//! The objective adversary maximizes `f(theta, w, zp) - gamma` over the
//! uncertainty box and the feasible trajectory set `d = 0`, `e <= 0` (the
//! modelling variables `zm` ride along because trajectory membership
//! requires some feasible `zm`).
//!
//! Each robust constraint row `g_i` gets its own adversary. When the row has
//! existence variables (`n_s > 0`) the problem
//!
//! ```text
//! max_{w, zp, zm}  min_{s in S}  g_i(theta, w, zp, s)
//! ```
//!
//! is itself a semi-infinite program over `s`, solved by a nested local
//! reduction: maximize a bound `sigma` subject to `sigma <= g_i(.., s_j)`
//! for a growing inner set of `s_j`, then certify by minimizing
//! `g_i` over `S` at the candidate maximizer; if the inner minimum undercuts
//! `sigma` beyond `tol_inner`, the minimizer joins the inner set and the
//! outer maximization repeats.

use super::varmap::{GroupMap, VarMap};
use super::ReductionOptions;
use crate::expr::Expr;
use crate::model::SipProblem;
use crate::nlp::{multistart, NlpProblem, SolverOptions};
use crate::scalar::{sc, Scalar};

/// Bounds on the solver-introduced inner maximization variable, inherited
/// from the default epigraph bracket.
const SIGMA_BOUND: f64 = 1e6;

/// Outcome quality of one adversary call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AdversaryStatus {
    /// Maximizer found with feasible witnesses (and, for nested calls, a
    /// certified inner gap).
    Ok,
    /// Inner-set budget exhausted; the best certified bound is returned.
    InnerBudgetExceeded,
    /// No trajectory-feasible point was found from any start.
    Failed,
}

/// Certificate for a nested constraint adversary: the final inner `s` set,
/// the achieved bound, and the gap `sigma - min_{s in set} g_i` observed at
/// certification.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(bound = "")]
pub struct InnerCertificate<T: Scalar = f64> {
    pub inner_s: Vec<Vec<T>>,
    pub sigma: T,
    pub inner_gap: T,
}

/// Worst-case uncertainty found by one adversary solve.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(bound = "")]
pub struct AdversaryResult<T: Scalar = f64> {
    pub w: Vec<T>,
    /// Positive means the constraint (or epigraph) is violated.
    pub violation: T,
    pub witness_zp: Vec<T>,
    pub witness_zm: Vec<T>,
    /// Present for nested (`n_s > 0`) constraint adversaries.
    pub certificate: Option<InnerCertificate<T>>,
    pub status: AdversaryStatus,
}

/// Warm-start triple for adversary searches: a known uncertainty with a
/// trajectory witness (typically a scenario plus its master witness).
#[derive(Debug, Clone)]
pub struct AdversaryStart<T> {
    pub w: Vec<T>,
    pub zp: Vec<T>,
    pub zm: Vec<T>,
}

fn adversary_nlp_opts(opts: &ReductionOptions, seed: u64) -> SolverOptions {
    SolverOptions {
        restarts: opts.adversary_restarts,
        rng_seed: seed,
        ..opts.nlp.clone()
    }
}

/// Layout `[w | zp | zm]` shared by the adversaries; returns the bounds and
/// names.
fn trajectory_layout<T: Scalar>(p: &SipProblem<T>) -> (Vec<T>, Vec<T>, Vec<String>) {
    let inf = T::infinity();
    let n = p.dims.w + p.dims.zp + p.dims.zm;
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut names = Vec::with_capacity(n);
    lower.extend_from_slice(&p.bounds.w_lo);
    upper.extend_from_slice(&p.bounds.w_hi);
    names.extend((0..p.dims.w).map(|j| format!("w[{j}]")));
    lower.extend(std::iter::repeat(-inf).take(p.dims.zp + p.dims.zm));
    upper.extend(std::iter::repeat(inf).take(p.dims.zp + p.dims.zm));
    names.extend((0..p.dims.zp).map(|j| format!("zp[{j}]")));
    names.extend((0..p.dims.zm).map(|j| format!("zm[{j}]")));
    (lower, upper, names)
}

fn trajectory_map<T: Scalar>(p: &SipProblem<T>, theta: &[T]) -> VarMap<T> {
    VarMap {
        theta: GroupMap::Consts(theta.to_vec()),
        w: GroupMap::Input { base: 0 },
        zp: GroupMap::Input { base: p.dims.w },
        zm: GroupMap::Input {
            base: p.dims.w + p.dims.zp,
        },
        ..VarMap::absent()
    }
}

fn push_trajectory_constraints<T: Scalar>(
    p: &SipProblem<T>,
    map: &VarMap<T>,
    nlp: &mut NlpProblem<T>,
) {
    for row in &p.d {
        nlp.eq.push(map.compile(row));
    }
    for row in &p.e {
        nlp.ineq.push(map.compile(row));
    }
}

fn starts_to_vectors<T: Scalar>(p: &SipProblem<T>, starts: &[AdversaryStart<T>]) -> Vec<Vec<T>> {
    starts
        .iter()
        .map(|st| {
            let mut x = Vec::with_capacity(p.dims.w + p.dims.zp + p.dims.zm);
            x.extend_from_slice(&st.w);
            x.resize(p.dims.w, T::zero());
            x.extend_from_slice(&st.zp);
            x.resize(p.dims.w + p.dims.zp, T::zero());
            x.extend_from_slice(&st.zm);
            x.resize(p.dims.w + p.dims.zp + p.dims.zm, T::zero());
            x
        })
        .collect()
}

/// Objective adversary (epigraph row): multistart-maximizes
/// `f(theta, w, zp) - gamma` over the uncertainty box and feasible
/// trajectories.
pub fn adversary_f<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    gamma: T,
    opts: &ReductionOptions,
) -> AdversaryResult<T> {
    adversary_f_with_starts(p, theta, gamma, opts, &[], opts.rng_seed)
}

pub fn adversary_f_with_starts<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    gamma: T,
    opts: &ReductionOptions,
    starts: &[AdversaryStart<T>],
    seed: u64,
) -> AdversaryResult<T> {
    let (lower, upper, names) = trajectory_layout(p);
    let map = trajectory_map(p, theta);
    // maximize f - gamma  <=>  minimize gamma - f
    let objective_expr: Expr<T> = Expr::constant(gamma) - p.f.clone();
    let mut nlp = NlpProblem::new(lower, upper, map.compile(&objective_expr));
    nlp.names = names;
    push_trajectory_constraints(p, &map, &mut nlp);

    let extra = starts_to_vectors(p, starts);
    let sol = multistart(&nlp, &adversary_nlp_opts(opts, seed), &extra);
    let feasible = sol.is_feasible(opts.nlp.tol_feas);
    AdversaryResult {
        w: sol.x[..p.dims.w].to_vec(),
        violation: -sol.objective_value,
        witness_zp: sol.x[p.dims.w..p.dims.w + p.dims.zp].to_vec(),
        witness_zm: sol.x[p.dims.w + p.dims.zp..].to_vec(),
        certificate: None,
        status: if feasible {
            AdversaryStatus::Ok
        } else {
            AdversaryStatus::Failed
        },
    }
}

/// Constraint adversary for row `i` of `g`.
pub fn adversary_g<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    i: usize,
    opts: &ReductionOptions,
) -> AdversaryResult<T> {
    adversary_g_with_starts(p, theta, i, opts, &[], opts.rng_seed)
}

pub fn adversary_g_with_starts<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    i: usize,
    opts: &ReductionOptions,
    starts: &[AdversaryStart<T>],
    seed: u64,
) -> AdversaryResult<T> {
    assert!(i < p.g.len(), "constraint index out of range");
    if p.dims.s == 0 {
        adversary_g_direct(p, theta, i, opts, starts, seed)
    } else {
        adversary_g_nested(p, theta, i, opts, starts, seed)
    }
}

/// No existence variables: plain maximization of `g_i` over feasible
/// trajectories.
fn adversary_g_direct<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    i: usize,
    opts: &ReductionOptions,
    starts: &[AdversaryStart<T>],
    seed: u64,
) -> AdversaryResult<T> {
    let (lower, upper, names) = trajectory_layout(p);
    let map = trajectory_map(p, theta);
    let objective_expr: Expr<T> = -p.g[i].clone();
    let mut nlp = NlpProblem::new(lower, upper, map.compile(&objective_expr));
    nlp.names = names;
    push_trajectory_constraints(p, &map, &mut nlp);

    let extra = starts_to_vectors(p, starts);
    let sol = multistart(&nlp, &adversary_nlp_opts(opts, seed), &extra);
    let feasible = sol.is_feasible(opts.nlp.tol_feas);
    let sigma = -sol.objective_value;
    AdversaryResult {
        w: sol.x[..p.dims.w].to_vec(),
        violation: sigma,
        witness_zp: sol.x[p.dims.w..p.dims.w + p.dims.zp].to_vec(),
        witness_zm: sol.x[p.dims.w + p.dims.zp..].to_vec(),
        certificate: Some(InnerCertificate {
            inner_s: Vec::new(),
            sigma,
            inner_gap: T::zero(),
        }),
        status: if feasible {
            AdversaryStatus::Ok
        } else {
            AdversaryStatus::Failed
        },
    }
}

/// Nested local reduction over the existence set.
fn adversary_g_nested<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    i: usize,
    opts: &ReductionOptions,
    starts: &[AdversaryStart<T>],
    seed: u64,
) -> AdversaryResult<T> {
    let tol_inner = sc::<T>(opts.tol_inner);

    // the inner set starts from the s-box center projected to feasibility
    let Some(s0) = project_s_to_feasibility(p, opts, super::mix(seed, 0x5EED, 0)) else {
        return failed_result(p);
    };
    let mut inner_set: Vec<Vec<T>> = vec![s0];

    let sigma_idx = p.dims.w + p.dims.zp + p.dims.zm;
    let mut extra = starts_to_vectors(p, starts);
    for x in &mut extra {
        x.push(T::zero()); // sigma start
    }

    let mut last: Option<(Vec<T>, T)> = None; // (outer x, sigma)
    for round in 0..opts.inner_set_budget.max(1) {
        // outer: max sigma s.t. trajectory feasibility and
        // sigma - g_i(theta, w, zp, s_j) <= 0 for every inner point
        let (mut lower, mut upper, mut names) = trajectory_layout(p);
        lower.push(sc(-SIGMA_BOUND));
        upper.push(sc(SIGMA_BOUND));
        names.push("sigma".to_string());
        let map = trajectory_map(p, theta);
        let sigma_map = VarMap {
            aux: GroupMap::Input { base: sigma_idx },
            ..VarMap::absent()
        };
        let objective_expr: Expr<T> = -Expr::var(crate::expr::VarGroup::Aux, 0);
        let mut nlp = NlpProblem::new(lower, upper, sigma_map.compile(&objective_expr));
        nlp.names = names;
        push_trajectory_constraints(p, &map, &mut nlp);
        for s_j in &inner_set {
            let row_map = VarMap {
                theta: GroupMap::Consts(theta.to_vec()),
                w: GroupMap::Input { base: 0 },
                zp: GroupMap::Input { base: p.dims.w },
                s: GroupMap::Consts(s_j.clone()),
                aux: GroupMap::Input { base: sigma_idx },
                ..VarMap::absent()
            };
            let row: Expr<T> = Expr::var(crate::expr::VarGroup::Aux, 0) - p.g[i].clone();
            nlp.ineq.push(row_map.compile(&row));
        }

        let mut outer_starts = extra.clone();
        if let Some((x_prev, _)) = &last {
            outer_starts.insert(0, x_prev.clone());
        }
        let sol = multistart(
            &nlp,
            &adversary_nlp_opts(opts, super::mix(seed, 0x0D7E5, round as u64)),
            &outer_starts,
        );
        if !sol.is_feasible(opts.nlp.tol_feas) {
            return failed_result(p);
        }
        let sigma = sol.x[sigma_idx];
        let w = sol.x[..p.dims.w].to_vec();
        let zp = sol.x[p.dims.w..p.dims.w + p.dims.zp].to_vec();
        let zm = sol.x[p.dims.w + p.dims.zp..sigma_idx].to_vec();

        // inner certification: min over S of g_i at the candidate maximizer
        let Some((s_min, inner_min)) = inner_min_g(
            p,
            theta,
            &w,
            &zp,
            i,
            opts,
            super::mix(seed, 0x1BBE7, round as u64),
            &inner_set,
        ) else {
            return failed_result(p);
        };

        let gap = sigma - inner_min;
        if inner_min >= sigma - tol_inner {
            return AdversaryResult {
                w,
                violation: sigma,
                witness_zp: zp,
                witness_zm: zm,
                certificate: Some(InnerCertificate {
                    inner_s: inner_set,
                    sigma,
                    inner_gap: gap,
                }),
                status: AdversaryStatus::Ok,
            };
        }

        // duplicate minimizers indicate solver noise rather than a new
        // active point; accept the certified bound instead of looping
        let duplicate = inner_set
            .iter()
            .any(|s| inf_dist(s, &s_min) < sc::<T>(1e-9));
        if duplicate {
            return AdversaryResult {
                w,
                violation: inner_min,
                witness_zp: zp,
                witness_zm: zm,
                certificate: Some(InnerCertificate {
                    inner_s: inner_set,
                    sigma,
                    inner_gap: gap,
                }),
                status: AdversaryStatus::Ok,
            };
        }
        inner_set.push(s_min);
        last = Some((sol.x.clone(), sigma));
    }

    // budget exhausted: report the most recent bound
    let (x_last, sigma) = last.expect("at least one outer round");
    AdversaryResult {
        w: x_last[..p.dims.w].to_vec(),
        violation: sigma,
        witness_zp: x_last[p.dims.w..p.dims.w + p.dims.zp].to_vec(),
        witness_zm: x_last[p.dims.w + p.dims.zp..sigma_idx].to_vec(),
        certificate: Some(InnerCertificate {
            inner_s: inner_set,
            sigma,
            inner_gap: T::nan(),
        }),
        status: AdversaryStatus::InnerBudgetExceeded,
    }
}

fn failed_result<T: Scalar>(p: &SipProblem<T>) -> AdversaryResult<T> {
    AdversaryResult {
        w: vec![T::zero(); p.dims.w],
        violation: T::neg_infinity(),
        witness_zp: vec![T::zero(); p.dims.zp],
        witness_zm: vec![T::zero(); p.dims.zm],
        certificate: None,
        status: AdversaryStatus::Failed,
    }
}

fn inf_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
}

/// `min_{s in S} g_i(theta, w, zp, s)`; returns the minimizer and value,
/// or `None` when no `q/r`-feasible point is found.
#[allow(clippy::too_many_arguments)]
pub fn inner_min_g<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    w: &[T],
    zp: &[T],
    i: usize,
    opts: &ReductionOptions,
    seed: u64,
    warm_s: &[Vec<T>],
) -> Option<(Vec<T>, T)> {
    let (Some(lo), Some(hi)) = (&p.bounds.s_lo, &p.bounds.s_hi) else {
        return None;
    };
    let map = VarMap {
        theta: GroupMap::Consts(theta.to_vec()),
        w: GroupMap::Consts(w.to_vec()),
        zp: GroupMap::Consts(zp.to_vec()),
        s: GroupMap::Input { base: 0 },
        ..VarMap::absent()
    };
    let mut nlp = NlpProblem::new(lo.clone(), hi.clone(), map.compile(&p.g[i]));
    nlp.names = (0..p.dims.s).map(|j| format!("s[{j}]")).collect();
    let s_map = VarMap {
        s: GroupMap::Input { base: 0 },
        ..VarMap::absent()
    };
    for row in &p.q {
        nlp.eq.push(s_map.compile(row));
    }
    for row in &p.r {
        nlp.ineq.push(s_map.compile(row));
    }
    let sol = multistart(&nlp, &adversary_nlp_opts(opts, seed), warm_s);
    if !sol.is_feasible(opts.nlp.tol_feas) {
        return None;
    }
    Some((sol.x.clone(), sol.objective_value))
}

/// Projects the `s`-box center onto the existence set `q = 0`, `r <= 0`.
pub fn project_s_to_feasibility<T: Scalar>(
    p: &SipProblem<T>,
    opts: &ReductionOptions,
    seed: u64,
) -> Option<Vec<T>> {
    let (Some(lo), Some(hi)) = (&p.bounds.s_lo, &p.bounds.s_hi) else {
        return None;
    };
    let center = super::master::s_box_center(p);
    // min ||s - center||^2
    let objective = Expr::sum((0..p.dims.s).map(|j| {
        (Expr::s(j) - Expr::constant(center[j])).squared()
    }));
    let map = VarMap {
        s: GroupMap::Input { base: 0 },
        ..VarMap::absent()
    };
    let mut nlp = NlpProblem::new(lo.clone(), hi.clone(), map.compile(&objective));
    nlp.names = (0..p.dims.s).map(|j| format!("s[{j}]")).collect();
    for row in &p.q {
        nlp.eq.push(map.compile(row));
    }
    for row in &p.r {
        nlp.ineq.push(map.compile(row));
    }
    let sol = multistart(
        &nlp,
        &adversary_nlp_opts(opts, seed),
        &[center.clone()],
    );
    sol.is_feasible(opts.nlp.tol_feas).then(|| sol.x)
}

/// Finds the initial scenario: the all-zero uncertainty clipped into the
/// box and, when that admits no trajectory witness for any admissible
/// `theta`, projected onto trajectory consistency by minimizing
/// `||w - w0||^2` over `d = 0`, `e <= 0`.
pub fn initial_scenario<T: Scalar>(
    p: &SipProblem<T>,
    opts: &ReductionOptions,
    seed: u64,
) -> Option<(Vec<T>, Vec<T>, Vec<T>)> {
    let w0: Vec<T> = p
        .bounds
        .w_lo
        .iter()
        .zip(&p.bounds.w_hi)
        .map(|(&lo, &hi)| T::zero().max(lo).min(hi))
        .collect();

    // first try w0 exactly
    if let Some((zp, zm)) = resolve_trajectory_any_theta(p, &w0, opts, super::mix(seed, 0xF1, 0)) {
        return Some((w0, zp, zm));
    }

    // project onto the consistent uncertainty manifold
    let inf = T::infinity();
    let nd = p.dims.theta + p.dims.w + p.dims.zp + p.dims.zm;
    let mut lower = Vec::with_capacity(nd);
    let mut upper = Vec::with_capacity(nd);
    lower.extend_from_slice(&p.bounds.theta_lo);
    upper.extend_from_slice(&p.bounds.theta_hi);
    lower.extend_from_slice(&p.bounds.w_lo);
    upper.extend_from_slice(&p.bounds.w_hi);
    lower.extend(std::iter::repeat(-inf).take(p.dims.zp + p.dims.zm));
    upper.extend(std::iter::repeat(inf).take(p.dims.zp + p.dims.zm));

    let w_base = p.dims.theta;
    let map = VarMap {
        theta: GroupMap::Input { base: 0 },
        w: GroupMap::Input { base: w_base },
        zp: GroupMap::Input {
            base: w_base + p.dims.w,
        },
        zm: GroupMap::Input {
            base: w_base + p.dims.w + p.dims.zp,
        },
        ..VarMap::absent()
    };
    let objective = Expr::sum(
        (0..p.dims.w).map(|j| (Expr::w(j) - Expr::constant(w0[j])).squared()),
    );
    let mut nlp = NlpProblem::new(lower, upper, map.compile(&objective));
    for row in &p.d {
        nlp.eq.push(map.compile(row));
    }
    for row in &p.e {
        nlp.ineq.push(map.compile(row));
    }
    let sol = multistart(
        &nlp,
        &adversary_nlp_opts(opts, super::mix(seed, 0xF2, 0)),
        &[],
    );
    if !sol.is_feasible(opts.nlp.tol_feas) {
        return None;
    }
    let w = sol.x[w_base..w_base + p.dims.w].to_vec();
    let zp = sol.x[w_base + p.dims.w..w_base + p.dims.w + p.dims.zp].to_vec();
    let zm = sol.x[w_base + p.dims.w + p.dims.zp..].to_vec();
    Some((w, zp, zm))
}

/// Variable map for resolving `(zp, zm)` at fixed `(theta, w)`, laid out as
/// `[zp | zm]`. Used by the audit's NLP fallback.
pub fn trajectory_resolve_map<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    w: &[T],
) -> VarMap<T> {
    VarMap {
        theta: GroupMap::Consts(theta.to_vec()),
        w: GroupMap::Consts(w.to_vec()),
        zp: GroupMap::Input { base: 0 },
        zm: GroupMap::Input { base: p.dims.zp },
        ..VarMap::absent()
    }
}

/// Feasibility resolve at fixed `w`, with `theta` free inside its box:
/// returns a `(zp, zm)` witness if one exists.
fn resolve_trajectory_any_theta<T: Scalar>(
    p: &SipProblem<T>,
    w: &[T],
    opts: &ReductionOptions,
    seed: u64,
) -> Option<(Vec<T>, Vec<T>)> {
    let inf = T::infinity();
    let nd = p.dims.theta + p.dims.zp + p.dims.zm;
    let mut lower = Vec::with_capacity(nd);
    let mut upper = Vec::with_capacity(nd);
    lower.extend_from_slice(&p.bounds.theta_lo);
    upper.extend_from_slice(&p.bounds.theta_hi);
    lower.extend(std::iter::repeat(-inf).take(p.dims.zp + p.dims.zm));
    upper.extend(std::iter::repeat(inf).take(p.dims.zp + p.dims.zm));
    let map = VarMap {
        theta: GroupMap::Input { base: 0 },
        w: GroupMap::Consts(w.to_vec()),
        zp: GroupMap::Input { base: p.dims.theta },
        zm: GroupMap::Input {
            base: p.dims.theta + p.dims.zp,
        },
        ..VarMap::absent()
    };
    let zero: Expr<T> = Expr::constant(T::zero());
    let mut nlp = NlpProblem::new(lower, upper, map.compile(&zero));
    for row in &p.d {
        nlp.eq.push(map.compile(row));
    }
    for row in &p.e {
        nlp.ineq.push(map.compile(row));
    }
    let sol = multistart(&nlp, &adversary_nlp_opts(opts, seed), &[]);
    if !sol.is_feasible(opts.nlp.tol_feas) {
        return None;
    }
    let zp = sol.x[p.dims.theta..p.dims.theta + p.dims.zp].to_vec();
    let zm = sol.x[p.dims.theta + p.dims.zp..].to_vec();
    Some((zp, zm))
}
