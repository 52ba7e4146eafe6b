//! Post-solution validation: Monte-Carlo sampling of uncertainties with
//! feasible-trajectory reconstruction, violation counting, and a worst-case
//! cost comparison against the certified bound.
//!
//! For the built-in examples a closed-form [`Simulator`] resolves each
//! sample (linear dynamics, exact saturation, manifold-consistent noise)
//! instead of the generic NLP fallback; every shortcut resolve is still
//! verified against the trajectory constraints by direct evaluation, so a
//! mismatched simulator degrades to the honest path rather than corrupting
//! the audit.

use crate::model::{ModelError, SipProblem};
use crate::nlp::{multistart, NlpProblem, SolverOptions};
use crate::reduction::{
    adversary_f_with_starts, adversary_g_with_starts, inner_min_g, mix, AdversaryStatus,
    ReductionOptions, ReductionReport,
};
use crate::scalar::{sc, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Closed-form shortcuts for a specific problem family. All methods default
/// to `None`, which routes the audit through the generic machinery.
pub trait Simulator<T: Scalar>: Send + Sync {
    /// Draws one uncertainty sample; `None` means uniform over the box.
    /// Problems whose trajectory constraints prune the uncertainty set
    /// sample the consistent manifold here.
    fn sample_w(&self, _rng: &mut ChaCha8Rng) -> Option<Vec<T>> {
        None
    }

    /// Reconstructs a `(zp, zm)` witness at `(theta, w)`.
    fn resolve(&self, _theta: &[T], _w: &[T]) -> Option<(Vec<T>, Vec<T>)> {
        None
    }

    /// Per-row inner minimum of `g` over the existence set at fixed
    /// `(theta, w, zp)`.
    fn g_row_minima(&self, _theta: &[T], _w: &[T], _zp: &[T]) -> Option<Vec<T>> {
        None
    }
}

/// Simulator that always falls back to the generic path.
pub struct NoSimulator;
impl<T: Scalar> Simulator<T> for NoSimulator {}

/// Options for [`monte_carlo`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditOptions {
    /// A sample counts as violating when some robust row's inner minimum
    /// exceeds this.
    pub tol_viol: f64,
    /// Feasibility tolerance for witness verification and NLP resolution.
    pub tol_feas: f64,
    /// Multistarts for the per-sample NLP fallback (kept small; the audit
    /// runs at 1e5..1e6 scale).
    pub resolve_restarts: usize,
    /// Absolute tolerance for the `worst_cost <= gamma` comparison.
    pub cost_tol: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            tol_viol: 1e-6,
            tol_feas: 1e-7,
            resolve_restarts: 3,
            cost_tol: 1e-6,
        }
    }
}

/// Monte-Carlo audit outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AuditReport<T: Scalar = f64> {
    pub samples: usize,
    pub violations: usize,
    pub worst_cost: T,
    pub worst_w: Vec<T>,
    pub gamma: T,
    /// `gamma - worst_cost`; negative means the certificate is broken.
    pub margin: T,
    /// Samples where no feasible `(zp, zm)` could be found.
    pub infeasible_samples: usize,
    pub seed: u64,
}

/// Per-sample record for the optional CSV stream.
#[derive(Debug, Clone, Copy)]
pub struct SampleRecord<T> {
    pub index: usize,
    pub cost: T,
    pub max_g_violation: T,
    pub resolved: bool,
}

/// Draws `n` uncertainties, resolves each to a feasible trajectory,
/// evaluates the cost and the robust rows, and tallies violations and the
/// worst cost. Deterministic per seed; samples form prefix-consistent
/// sequences as `n` grows.
pub fn monte_carlo<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    gamma: T,
    n: usize,
    seed: u64,
    sim: Option<&dyn Simulator<T>>,
    opts: &AuditOptions,
) -> AuditReport<T> {
    monte_carlo_detailed(p, theta, gamma, n, seed, sim, opts, |_| {})
}

/// [`monte_carlo`] with a per-sample callback (drives the histogram CSV).
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_detailed<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    gamma: T,
    n: usize,
    seed: u64,
    sim: Option<&dyn Simulator<T>>,
    opts: &AuditOptions,
    mut on_sample: impl FnMut(SampleRecord<T>),
) -> AuditReport<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol_viol = sc::<T>(opts.tol_viol);
    let mut violations = 0usize;
    let mut infeasible = 0usize;
    let mut worst_cost = T::neg_infinity();
    let mut worst_w: Vec<T> = Vec::new();

    for index in 0..n {
        let w = sample_w(p, sim, &mut rng);
        let outcome = evaluate_sample(p, theta, &w, sim, opts, mix(seed, 0x5A9B1E, index as u64));
        match outcome {
            SampleOutcome::Infeasible => {
                infeasible += 1;
                on_sample(SampleRecord {
                    index,
                    cost: T::nan(),
                    max_g_violation: T::nan(),
                    resolved: false,
                });
            }
            SampleOutcome::Resolved {
                cost,
                max_g_violation,
            } => {
                if cost > worst_cost {
                    worst_cost = cost;
                    worst_w = w.clone();
                }
                if max_g_violation > tol_viol {
                    violations += 1;
                }
                on_sample(SampleRecord {
                    index,
                    cost,
                    max_g_violation,
                    resolved: true,
                });
            }
        }
    }

    AuditReport {
        samples: n,
        violations,
        worst_cost,
        worst_w,
        gamma,
        margin: gamma - worst_cost,
        infeasible_samples: infeasible,
        seed,
    }
}

fn sample_w<T: Scalar>(
    p: &SipProblem<T>,
    sim: Option<&dyn Simulator<T>>,
    rng: &mut ChaCha8Rng,
) -> Vec<T> {
    if let Some(sim) = sim {
        if let Some(w) = sim.sample_w(rng) {
            return w;
        }
    }
    p.bounds
        .w_lo
        .iter()
        .zip(&p.bounds.w_hi)
        .map(|(&lo, &hi)| {
            let u: f64 = rng.gen_range(0.0..=1.0);
            lo + (hi - lo) * sc(u)
        })
        .collect()
}

/// Outcome of a single audited uncertainty.
pub enum SampleOutcome<T> {
    Infeasible,
    Resolved { cost: T, max_g_violation: T },
}

/// Resolves one uncertainty to a witness (simulator first, verified by
/// evaluation; NLP fallback otherwise), then evaluates the cost and the
/// worst robust-row inner minimum.
pub fn evaluate_sample<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    w: &[T],
    sim: Option<&dyn Simulator<T>>,
    opts: &AuditOptions,
    seed: u64,
) -> SampleOutcome<T> {
    let witness = sim
        .and_then(|s| s.resolve(theta, w))
        .filter(|(zp, zm)| verify_witness(p, theta, w, zp, zm, opts.tol_feas))
        .or_else(|| nlp_resolve(p, theta, w, opts, seed));
    let Some((zp, zm)) = witness else {
        return SampleOutcome::Infeasible;
    };
    let _ = zm;

    let mut b = p.zero_bindings();
    b.theta = theta.to_vec();
    b.w = w.to_vec();
    b.zp = zp.clone();
    let cost = match p.f.eval(&b) {
        Ok(v) => v,
        Err(_) => return SampleOutcome::Infeasible,
    };

    let mut max_g = T::neg_infinity();
    if p.dims.s == 0 {
        for row in &p.g {
            if let Ok(v) = row.eval(&b) {
                max_g = max_g.max(v);
            }
        }
    } else {
        let minima = sim.and_then(|s| s.g_row_minima(theta, w, &zp));
        match minima {
            Some(mins) => {
                for v in mins {
                    max_g = max_g.max(v);
                }
            }
            None => {
                // generic inner minimization per row
                let r_opts = ReductionOptions {
                    adversary_restarts: opts.resolve_restarts.max(1),
                    nlp: SolverOptions {
                        restarts: opts.resolve_restarts.max(1),
                        tol_feas: opts.tol_feas,
                        ..Default::default()
                    },
                    ..Default::default()
                };
                for i in 0..p.g.len() {
                    match inner_min_g(p, theta, w, &zp, i, &r_opts, mix(seed, 0x16, i as u64), &[])
                    {
                        Some((_, v)) => max_g = max_g.max(v),
                        None => return SampleOutcome::Infeasible,
                    }
                }
            }
        }
    }

    SampleOutcome::Resolved {
        cost,
        max_g_violation: max_g,
    }
}

/// Direct evaluation check that a witness satisfies `d = 0`, `e <= 0`.
pub fn verify_witness<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    w: &[T],
    zp: &[T],
    zm: &[T],
    tol: f64,
) -> bool {
    let tol = sc::<T>(tol);
    let mut b = p.zero_bindings();
    b.theta = theta.to_vec();
    b.w = w.to_vec();
    b.zp = zp.to_vec();
    b.zm = zm.to_vec();
    for row in &p.d {
        match row.eval(&b) {
            Ok(v) if v.abs() <= tol => {}
            _ => return false,
        }
    }
    for row in &p.e {
        match row.eval(&b) {
            Ok(v) if v <= tol => {}
            _ => return false,
        }
    }
    true
}

/// NLP feasibility resolution of `(zp, zm)` at fixed `(theta, w)`.
fn nlp_resolve<T: Scalar>(
    p: &SipProblem<T>,
    theta: &[T],
    w: &[T],
    opts: &AuditOptions,
    seed: u64,
) -> Option<(Vec<T>, Vec<T>)> {
    use crate::expr::Expr;
    if p.dims.zp + p.dims.zm == 0 {
        return Some((Vec::new(), Vec::new()));
    }
    let inf = T::infinity();
    let n = p.dims.zp + p.dims.zm;
    let map = crate::reduction::trajectory_resolve_map(p, theta, w);
    let zero: Expr<T> = Expr::constant(T::zero());
    let mut nlp = NlpProblem::new(vec![-inf; n], vec![inf; n], map.compile(&zero));
    for row in &p.d {
        nlp.eq.push(map.compile(row));
    }
    for row in &p.e {
        nlp.ineq.push(map.compile(row));
    }
    let sol = multistart(
        &nlp,
        &SolverOptions {
            restarts: opts.resolve_restarts.max(1),
            rng_seed: seed,
            tol_feas: opts.tol_feas,
            ..Default::default()
        },
        &[],
    );
    if !sol.is_feasible(opts.tol_feas) {
        return None;
    }
    Some((
        sol.x[..p.dims.zp].to_vec(),
        sol.x[p.dims.zp..].to_vec(),
    ))
}

/// Re-runs the objective adversary and every constraint adversary at the
/// report's `(theta, gamma)` with a fresh seed and returns the maximum
/// violation found (at most `tol_viol` re-confirms the certificate).
pub fn certify<T: Scalar>(
    p: &SipProblem<T>,
    report: &ReductionReport<T>,
    opts: &ReductionOptions,
) -> T {
    let mut worst = T::neg_infinity();
    let mut all_failed = true;
    let fres = adversary_f_with_starts(
        p,
        &report.theta,
        report.gamma,
        opts,
        &[],
        mix(opts.rng_seed, 0xCE47, 0),
    );
    if fres.status != AdversaryStatus::Failed {
        all_failed = false;
        worst = worst.max(fres.violation);
    }
    for i in 0..p.g.len() {
        let gres = adversary_g_with_starts(
            p,
            &report.theta,
            i,
            opts,
            &[],
            mix(opts.rng_seed, 0xCE47, 1 + i as u64),
        );
        if gres.status != AdversaryStatus::Failed {
            all_failed = false;
            worst = worst.max(gres.violation);
        }
    }
    if all_failed {
        T::infinity()
    } else {
        worst
    }
}

impl<T: Scalar> AuditReport<T> {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), ModelError> {
        crate::model::write_json(path, self)
    }
}

/// Rebuilds adversary options for certification with a fresh seed.
pub fn certify_opts(base: &ReductionOptions, seed: u64) -> ReductionOptions {
    let mut o = base.clone();
    o.rng_seed = seed;
    o.nlp.rng_seed = seed;
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bindings_cover_groups() {
        // compile-time-ish sanity that Bindings default sizes follow dims
        let p: SipProblem = crate::model::SipProblem {
            name: "b".into(),
            dims: crate::model::Dims {
                theta: 1,
                w: 2,
                zp: 3,
                zm: 0,
                s: 0,
            },
            bounds: crate::model::Bounds {
                theta_lo: vec![0.0],
                theta_hi: vec![1.0],
                w_lo: vec![0.0; 2],
                w_hi: vec![1.0; 2],
                s_lo: None,
                s_hi: None,
                gamma: crate::model::Bounds::default_gamma(),
            },
            f: crate::expr::parse("theta[0]").unwrap(),
            g: vec![],
            d: vec![],
            e: vec![],
            q: vec![],
            r: vec![],
        };
        let b: crate::expr::Bindings = p.zero_bindings();
        assert_eq!(b.w.len(), 2);
        assert_eq!(b.zp.len(), 3);
    }
}
