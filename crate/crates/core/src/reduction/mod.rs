//! Local reduction: alternate a finite-scenario master problem with
//! adversary maximizations until no violating uncertainty can be found.
//!
//! The loop starts from a single scenario (all-zero uncertainty, clipped
//! into the box and projected to trajectory consistency when needed), then
//! repeats: solve the master for `(theta, gamma)` plus per-scenario
//! witnesses; run the objective adversary and one constraint adversary per
//! robust row; append the violating uncertainties (dedup-filtered) to the
//! scenario set. Termination is `Optimal` when a full adversary pass finds
//! no violation above `tol_viol`, or a budget status otherwise. Witnesses
//! found by adversaries are discarded from the model (only their `w`
//! matters) but reused as master warm starts.

mod adversary;
mod master;
mod varmap;

pub use adversary::{
    adversary_f, adversary_f_with_starts, adversary_g, adversary_g_with_starts, inner_min_g,
    project_s_to_feasibility, trajectory_resolve_map, AdversaryResult, AdversaryStart,
    AdversaryStatus, InnerCertificate,
};
pub use master::{build_master, s_box_center, Master, MasterLayout};
pub use varmap::{GroupMap, VarMap};

use crate::model::{
    Scenario, ScenarioOrigin, SipProblem, SolutionBundle, SolutionFile, Witness,
};
use crate::nlp::{multistart, SolveStatus, SolverOptions};
use crate::scalar::{sc, Scalar};
use serde::{Deserialize, Serialize};

/// Scenario addition policy after an adversary pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AddPolicy {
    /// Add only the worst violating uncertainty.
    WorstOnly,
    /// Add every violating uncertainty found in the pass (deduplicated).
    #[default]
    AllViolating,
}

/// Options for [`run`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionOptions {
    /// A constraint counts as violated above this threshold.
    pub tol_viol: f64,
    /// Certification gap for the nested inner reduction over `s`.
    pub tol_inner: f64,
    /// Scenario budget; exceeding it returns a suboptimal robust point.
    pub max_scenarios: usize,
    /// Outer iteration cap.
    pub max_outer: usize,
    /// Random restarts per adversary solve.
    pub adversary_restarts: usize,
    pub add_policy: AddPolicy,
    /// Inner-set growth budget of one nested adversary call.
    pub inner_set_budget: usize,
    /// Scenarios closer than this (infinity norm) are considered duplicates.
    pub dedup_radius: f64,
    /// Local-solver options (restarts apply to the master).
    pub nlp: SolverOptions,
    pub rng_seed: u64,
}

impl Default for ReductionOptions {
    fn default() -> Self {
        ReductionOptions {
            tol_viol: 1e-6,
            tol_inner: 1e-7,
            max_scenarios: 100,
            max_outer: 50,
            adversary_restarts: 10,
            add_policy: AddPolicy::AllViolating,
            inner_set_budget: 50,
            dedup_radius: 1e-6,
            nlp: SolverOptions::default(),
            rng_seed: 0,
        }
    }
}

impl ReductionOptions {
    /// Enforces `tol_inner < tol_viol`.
    fn normalized(&self) -> Self {
        let mut o = self.clone();
        if o.tol_inner >= o.tol_viol {
            o.tol_inner = o.tol_viol * 0.1;
        }
        o
    }
}

/// Ordered, grow-only scenario set with duplicate filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScenarioSet<T: Scalar = f64> {
    pub scenarios: Vec<Scenario<T>>,
    pub dedup_radius: f64,
}

impl<T: Scalar> ScenarioSet<T> {
    pub fn new(dedup_radius: f64) -> Self {
        ScenarioSet {
            scenarios: Vec::new(),
            dedup_radius,
        }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Appends unless a scenario within `dedup_radius` (infinity norm)
    /// already exists; returns the new scenario id on success.
    pub fn try_add(&mut self, w: Vec<T>, origin: ScenarioOrigin, violation: T) -> Option<usize> {
        let radius = sc::<T>(self.dedup_radius);
        if self
            .scenarios
            .iter()
            .any(|s| inf_dist(&s.w, &w) < radius)
        {
            return None;
        }
        let id = self.scenarios.len();
        self.scenarios.push(Scenario {
            id,
            w,
            origin,
            violation,
        });
        Some(id)
    }

    pub fn contains_near(&self, w: &[T], radius: f64) -> bool {
        let radius = sc::<T>(radius);
        self.scenarios.iter().any(|s| inf_dist(&s.w, w) <= radius)
    }
}

fn inf_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
}

/// Terminal status of a reduction run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionStatus {
    /// A full adversary pass found no violation above `tol_viol`.
    Optimal,
    /// Scenario or outer-iteration budget was hit with violations left; the
    /// returned point is robust to every scenario in the set.
    ScenarioBudgetExceeded,
    /// The master never reached feasibility across restarts.
    MasterInfeasible,
    /// An adversary could not produce a trajectory-feasible point and no
    /// violating scenario was available to make progress with.
    AdversaryFailed,
}

impl std::fmt::Display for ReductionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ReductionStatus::Optimal => "optimal",
            ReductionStatus::ScenarioBudgetExceeded => "scenario_budget_exceeded",
            ReductionStatus::MasterInfeasible => "master_infeasible",
            ReductionStatus::AdversaryFailed => "adversary_failed",
        };
        f.write_str(s)
    }
}

/// One outer iteration record; `wall_ms` is the only timing field and stays
/// out of the solution file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct IterationRecord<T: Scalar = f64> {
    pub iter: usize,
    pub gamma: T,
    pub n_scenarios: usize,
    pub scenarios_added: usize,
    pub worst_violation: T,
    pub wall_ms: u64,
}

/// Full outcome of a reduction run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ReductionReport<T: Scalar = f64> {
    pub theta: Vec<T>,
    pub gamma: T,
    pub scenario_set: ScenarioSet<T>,
    pub witnesses: Vec<Witness<T>>,
    pub iterations: Vec<IterationRecord<T>>,
    pub status: ReductionStatus,
    /// Diagnostic events (LOCAL_DIP, STALL, adversary failures).
    pub events: Vec<String>,
}

impl<T: Scalar> ReductionReport<T> {
    /// Solution-file view (no timing fields, deterministic given seeds).
    pub fn to_solution_file(&self) -> SolutionFile<T> {
        SolutionFile {
            theta: self.theta.clone(),
            gamma: self.gamma,
            scenarios: self.scenario_set.scenarios.clone(),
            witnesses: self.witnesses.clone(),
            status: self.status.to_string(),
            iterations: self.iterations.len(),
        }
    }
}

/// splitmix64 step, used to derive independent deterministic seeds for
/// every subsolve from the run seed.
pub fn mix(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the full local-reduction loop.
///
/// Solver failures are statuses, not errors: the only `Err` is a problem
/// that fails validation.
pub fn run<T: Scalar>(
    p: &SipProblem<T>,
    opts: &ReductionOptions,
) -> Result<ReductionReport<T>, crate::model::ModelError> {
    let diags = p.validate();
    if !diags.is_empty() {
        return Err(crate::model::ModelError::Invalid(diags));
    }
    let opts = opts.normalized();
    let seed = opts.rng_seed;
    let tol_viol = sc::<T>(opts.tol_viol);

    let mut set = ScenarioSet::new(opts.dedup_radius);
    let mut events: Vec<String> = Vec::new();
    let mut iterations: Vec<IterationRecord<T>> = Vec::new();

    let empty_report = |status: ReductionStatus,
                        set: ScenarioSet<T>,
                        events: Vec<String>,
                        iterations: Vec<IterationRecord<T>>| {
        ReductionReport {
            theta: vec![T::zero(); p.dims.theta],
            gamma: T::zero(),
            scenario_set: set,
            witnesses: Vec::new(),
            iterations,
            status,
            events,
        }
    };

    // initial scenario: zero uncertainty, projected to consistency if needed
    let Some((w0, zp0, zm0)) = adversary::initial_scenario(p, &opts, mix(seed, 0xA110, 0)) else {
        events.push("INITIAL_SCENARIO_INFEASIBLE: no trajectory-consistent uncertainty".into());
        return Ok(empty_report(
            ReductionStatus::MasterInfeasible,
            set,
            events,
            iterations,
        ));
    };
    set.try_add(w0, ScenarioOrigin::Initial, T::zero());

    let s_center = master::s_box_center(p);
    let mut warm: Option<SolutionBundle<T>> = Some(SolutionBundle {
        theta: vec![T::zero(); p.dims.theta],
        gamma: T::zero(),
        witnesses: vec![Witness {
            zp: zp0,
            zm: zm0,
            s: s_center.clone(),
        }],
    });
    // the synthetic first bundle only seeds witnesses, not (theta, gamma)
    let mut have_real_warm = false;
    let mut prev_gamma: Option<T> = None;

    let status = loop {
        let iter = iterations.len() + 1;
        if iter > opts.max_outer {
            events.push(format!("OUTER_LIMIT: {} iterations", opts.max_outer));
            break ReductionStatus::ScenarioBudgetExceeded;
        }
        let t_iter = std::time::Instant::now();

        // master solve
        let m = master::build_master(p, &set, warm.as_ref());
        let mut master_opts = opts.nlp.clone();
        master_opts.rng_seed = mix(seed, 0x3A57E4, iter as u64);
        if have_real_warm {
            // a good warm start carries most of the work; keep a couple of
            // fresh starts for basin escape
            master_opts.restarts = master_opts.restarts.min(4).max(1);
        }
        let msol = multistart(&m.nlp, &master_opts, &m.warm_starts());
        if !msol.is_feasible(opts.nlp.tol_feas) {
            events.push(format!(
                "MASTER_INFEASIBLE: violation {:e} at iteration {iter}",
                msol.max_violation().to_f64_lossy()
            ));
            break ReductionStatus::MasterInfeasible;
        }
        let bundle = m.extract_bundle(&msol.x);
        let gamma = bundle.gamma;

        if let (Some(prev), SolveStatus::Converged) = (prev_gamma, msol.status) {
            if gamma < prev - sc(1e-6) {
                events.push(format!(
                    "LOCAL_DIP: gamma fell from {} to {} at iteration {iter}",
                    prev.to_f64_lossy(),
                    gamma.to_f64_lossy()
                ));
            }
        }
        prev_gamma = Some(gamma);

        // adversary pass: objective adversary plus one per constraint row
        let adv_starts = adversary_starts(&set, &bundle);
        let fres = adversary::adversary_f_with_starts(
            p,
            &bundle.theta,
            gamma,
            &opts,
            &adv_starts,
            mix(seed, 0xADF0, iter as u64),
        );
        let mut results: Vec<(ScenarioOrigin, AdversaryResult<T>)> =
            vec![(ScenarioOrigin::FObjective, fres)];
        for i in 0..p.g.len() {
            let gres = adversary::adversary_g_with_starts(
                p,
                &bundle.theta,
                i,
                &opts,
                &adv_starts,
                mix(seed, 0xAD60 + i as u64, iter as u64),
            );
            results.push((ScenarioOrigin::GConstraint(i), gres));
        }

        let mut any_failed = false;
        let mut worst = T::neg_infinity();
        for (origin, res) in &results {
            match res.status {
                AdversaryStatus::Failed => {
                    any_failed = true;
                    events.push(format!("ADVERSARY_FAILED: {origin:?} at iteration {iter}"));
                }
                AdversaryStatus::InnerBudgetExceeded => {
                    events.push(format!(
                        "INNER_BUDGET_EXCEEDED: {origin:?} at iteration {iter}"
                    ));
                    worst = worst.max(res.violation);
                }
                AdversaryStatus::Ok => worst = worst.max(res.violation),
            }
        }

        // collect violating candidates, worst first for budget truncation
        let mut candidates: Vec<(ScenarioOrigin, AdversaryResult<T>)> = results
            .into_iter()
            .filter(|(_, r)| r.status != AdversaryStatus::Failed && r.violation > tol_viol)
            .collect();
        candidates.sort_by(|a, b| {
            b.1.violation
                .partial_cmp(&a.1.violation)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        if matches!(opts.add_policy, AddPolicy::WorstOnly) {
            candidates.truncate(1);
        }

        let mut added = 0usize;
        let mut budget_hit = false;
        let mut new_witnesses: Vec<Witness<T>> = Vec::new();
        for (origin, res) in &candidates {
            if set.len() >= opts.max_scenarios {
                budget_hit = true;
                break;
            }
            if set
                .try_add(res.w.clone(), *origin, res.violation)
                .is_some()
            {
                added += 1;
                new_witnesses.push(Witness {
                    zp: res.witness_zp.clone(),
                    zm: res.witness_zm.clone(),
                    s: s_center.clone(),
                });
            }
        }

        iterations.push(IterationRecord {
            iter,
            gamma,
            n_scenarios: set.len(),
            scenarios_added: added,
            worst_violation: worst,
            wall_ms: t_iter.elapsed().as_millis() as u64,
        });

        // warm start for the next master: this solution plus adversary
        // witnesses for the scenarios just added
        let mut next_warm = bundle.clone();
        next_warm.witnesses.extend(new_witnesses);
        warm = Some(next_warm);
        have_real_warm = true;

        if candidates.is_empty() {
            if any_failed {
                break ReductionStatus::AdversaryFailed;
            }
            break ReductionStatus::Optimal;
        }
        if added == 0 {
            if budget_hit {
                events.push(format!(
                    "SCENARIO_BUDGET: {} scenarios with violations outstanding",
                    set.len()
                ));
                break ReductionStatus::ScenarioBudgetExceeded;
            }
            events.push("STALL: all violating scenarios were duplicates".into());
            break ReductionStatus::AdversaryFailed;
        }
    };

    // final decisions come from the last solved master
    let bundle = warm.expect("at least one master attempt");
    let witnesses = bundle
        .witnesses
        .iter()
        .take(set.len())
        .cloned()
        .collect::<Vec<_>>();
    Ok(ReductionReport {
        theta: bundle.theta,
        gamma: bundle.gamma,
        scenario_set: set,
        witnesses,
        iterations,
        status,
        events,
    })
}

/// Warm starts for adversary searches: the first scenario plus the most
/// recent few, each with its current master witness.
fn adversary_starts<T: Scalar>(
    set: &ScenarioSet<T>,
    bundle: &SolutionBundle<T>,
) -> Vec<AdversaryStart<T>> {
    let k = set.len();
    let mut picks: Vec<usize> = Vec::new();
    picks.push(0);
    let recent = 4usize;
    for i in k.saturating_sub(recent)..k {
        if !picks.contains(&i) {
            picks.push(i);
        }
    }
    picks
        .into_iter()
        .filter_map(|i| {
            let w = set.scenarios.get(i)?.w.clone();
            let wit = bundle.witnesses.get(i)?;
            Some(AdversaryStart {
                w,
                zp: wit.zp.clone(),
                zm: wit.zm.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
