use super::*;
use crate::expr::parse;
use crate::model::{Bounds, Dims};
use approx::assert_abs_diff_eq;

/// min over theta of max over w of (theta - w)^2, w in [-1, 1]:
/// optimum theta* = 0, gamma* = 1, critical scenarios w = +-1.
fn scalar_tracking_problem() -> SipProblem {
    SipProblem {
        name: "tracking".to_string(),
        dims: Dims {
            theta: 1,
            w: 1,
            zp: 1,
            zm: 0,
            s: 0,
        },
        bounds: Bounds {
            theta_lo: vec![-5.0],
            theta_hi: vec![5.0],
            w_lo: vec![-1.0],
            w_hi: vec![1.0],
            s_lo: None,
            s_hi: None,
            gamma: Bounds::default_gamma(),
        },
        // zp mirrors w through d so the trajectory machinery is exercised
        f: parse("(theta[0] - zp[0])^2").unwrap(),
        g: vec![],
        d: vec![parse("zp[0] - w[0]").unwrap()],
        e: vec![],
        q: vec![],
        r: vec![],
    }
}

/// Problem with an existence constraint: g(theta, s) = theta - s <= 0 must
/// hold for some s in [0, 1] with r: s >= 1/2 (so min_s g = theta - 1).
fn existence_problem() -> SipProblem {
    SipProblem {
        name: "existence".to_string(),
        dims: Dims {
            theta: 1,
            w: 1,
            zp: 0,
            zm: 0,
            s: 1,
        },
        bounds: Bounds {
            theta_lo: vec![-2.0],
            theta_hi: vec![2.0],
            w_lo: vec![-1.0],
            w_hi: vec![1.0],
            s_lo: Some(vec![0.0]),
            s_hi: Some(vec![1.0]),
            gamma: Bounds::default_gamma(),
        },
        // maximize -theta so the master pushes theta down; robust row wants
        // theta + w - s <= 0 for some s in [1/2, 1]
        f: parse("-theta[0]").unwrap(),
        g: vec![parse("theta[0] + w[0] - s[0]").unwrap()],
        d: vec![],
        e: vec![],
        q: vec![],
        r: vec![parse("0.5 - s[0]").unwrap()],
    }
}

fn quick_opts(seed: u64) -> ReductionOptions {
    ReductionOptions {
        adversary_restarts: 6,
        rng_seed: seed,
        nlp: crate::nlp::SolverOptions {
            restarts: 6,
            rng_seed: seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn master_counts_match_construction() {
    let p = scalar_tracking_problem();
    let mut set = ScenarioSet::new(1e-6);
    set.try_add(vec![0.0], crate::model::ScenarioOrigin::Initial, 0.0);
    set.try_add(vec![1.0], crate::model::ScenarioOrigin::FObjective, 0.1);
    set.try_add(vec![-1.0], crate::model::ScenarioOrigin::FObjective, 0.1);
    let m = build_master(&p, &set, None);
    // theta + gamma + k * (zp + zm + s)
    assert_eq!(m.nlp.n(), 1 + 1 + 3 * 1);
    // equality rows: k * (|d| + |q|)
    assert_eq!(m.nlp.eq.len(), 3 * (1 + 0));
    // inequality rows: k * (|g| + 1 + |e| + |r|)
    assert_eq!(m.nlp.ineq.len(), 3 * (0 + 1 + 0 + 0));
}

#[test]
fn master_solves_nominal_scenario() {
    let p = scalar_tracking_problem();
    let mut set = ScenarioSet::new(1e-6);
    set.try_add(vec![0.0], crate::model::ScenarioOrigin::Initial, 0.0);
    let m = build_master(&p, &set, None);
    let sol = multistart(&m.nlp, &quick_opts(3).nlp, &[]);
    assert!(sol.is_feasible(1e-7));
    // with only w = 0, theta* = 0 and gamma* = 0
    let b = m.extract_bundle(&sol.x);
    assert_abs_diff_eq!(b.theta[0], 0.0, epsilon = 1e-4);
    assert_abs_diff_eq!(b.gamma, 0.0, epsilon = 1e-5);
}

#[test]
fn adversary_f_epigraph_slack_means_no_violation() {
    let p = scalar_tracking_problem();
    let opts = quick_opts(5);
    let res = adversary_f(&p, &[0.0], 1e6, &opts);
    assert_eq!(res.status, AdversaryStatus::Ok);
    assert!(res.violation < 0.0);
}

#[test]
fn adversary_f_finds_worst_uncertainty() {
    let p = scalar_tracking_problem();
    let opts = quick_opts(7);
    // at theta = 0, gamma = 0: worst w is +-1 with violation 1
    let res = adversary_f(&p, &[0.0], 0.0, &opts);
    assert_eq!(res.status, AdversaryStatus::Ok);
    assert_abs_diff_eq!(res.violation, 1.0, epsilon = 1e-5);
    assert_abs_diff_eq!(res.w[0].abs(), 1.0, epsilon = 1e-5);
    // the witness satisfies d: zp = w
    assert_abs_diff_eq!(res.witness_zp[0], res.w[0], epsilon = 1e-6);
}

#[test]
fn adversary_g_constant_row_certifies_immediately() {
    let mut p = existence_problem();
    p.g = vec![parse("-1").unwrap()];
    let opts = quick_opts(11);
    let res = adversary_g(&p, &[0.0], 0, &opts);
    assert_eq!(res.status, AdversaryStatus::Ok);
    assert_abs_diff_eq!(res.violation, -1.0, epsilon = 1e-6);
    let cert = res.certificate.unwrap();
    assert_eq!(cert.inner_s.len(), 1);
    assert!(cert.inner_gap.abs() <= opts.tol_inner + 1e-9);
}

#[test]
fn adversary_g_nested_reaches_inner_optimum() {
    let p = existence_problem();
    let opts = quick_opts(13);
    // at theta = 1.2: min over s in [1/2, 1] of 1.2 + w - s is 1.2 + w - 1;
    // worst w = 1 gives violation 1.2
    let res = adversary_g(&p, &[1.2], 0, &opts);
    assert_eq!(res.status, AdversaryStatus::Ok);
    assert_abs_diff_eq!(res.violation, 1.2, epsilon = 1e-4);
    assert_abs_diff_eq!(res.w[0], 1.0, epsilon = 1e-4);
    let cert = res.certificate.unwrap();
    // sigma agrees with the inner-set minimum
    assert!(cert.inner_gap.abs() <= opts.tol_inner + 1e-6);
}

#[test]
fn run_tracking_to_optimality() {
    let p = scalar_tracking_problem();
    let report = run(&p, &quick_opts(17)).unwrap();
    assert_eq!(report.status, ReductionStatus::Optimal);
    assert_abs_diff_eq!(report.theta[0], 0.0, epsilon = 1e-3);
    assert_abs_diff_eq!(report.gamma, 1.0, epsilon = 1e-4);
    // both extremes must have been discovered
    assert!(report.scenario_set.contains_near(&[1.0], 1e-3));
    assert!(report.scenario_set.contains_near(&[-1.0], 1e-3));
    // scenario ids are consecutive and the list only grew
    for (i, s) in report.scenario_set.scenarios.iter().enumerate() {
        assert_eq!(s.id, i);
    }
}

#[test]
fn run_existence_to_optimality() {
    let p = existence_problem();
    let report = run(&p, &quick_opts(19)).unwrap();
    assert_eq!(report.status, ReductionStatus::Optimal);
    // robust constraint: theta + 1 - 1 <= 0 => theta <= 0; objective -theta
    // pushes gamma to its minimum at theta = 0
    assert_abs_diff_eq!(report.theta[0], 0.0, epsilon = 1e-3);
}

#[test]
fn run_respects_scenario_budget() {
    let p = scalar_tracking_problem();
    let mut opts = quick_opts(23);
    opts.max_scenarios = 1;
    let report = run(&p, &opts).unwrap();
    assert_eq!(report.status, ReductionStatus::ScenarioBudgetExceeded);
    assert_eq!(report.scenario_set.len(), 1);
}

#[test]
fn run_is_deterministic() {
    let p = scalar_tracking_problem();
    let a = run(&p, &quick_opts(29)).unwrap();
    let b = run(&p, &quick_opts(29)).unwrap();
    assert_eq!(
        serde_json::to_string(&a.to_solution_file()).unwrap(),
        serde_json::to_string(&b.to_solution_file()).unwrap()
    );
}

#[test]
fn scenario_dedup_by_infinity_norm() {
    let mut set = ScenarioSet::<f64>::new(1e-6);
    assert!(set
        .try_add(vec![0.0, 0.0], crate::model::ScenarioOrigin::Initial, 0.0)
        .is_some());
    assert!(set
        .try_add(
            vec![1e-8, -1e-8],
            crate::model::ScenarioOrigin::FObjective,
            0.0
        )
        .is_none());
    assert!(set
        .try_add(vec![1e-5, 0.0], crate::model::ScenarioOrigin::FObjective, 0.0)
        .is_some());
    assert_eq!(set.len(), 2);
}

#[test]
fn master_warm_start_maps_witnesses() {
    let p = existence_problem();
    let mut set = ScenarioSet::new(1e-6);
    set.try_add(vec![0.0], crate::model::ScenarioOrigin::Initial, 0.0);
    set.try_add(vec![1.0], crate::model::ScenarioOrigin::GConstraint(0), 0.5);
    let warm = crate::model::SolutionBundle {
        theta: vec![0.25],
        gamma: -0.25,
        witnesses: vec![crate::model::Witness {
            zp: vec![],
            zm: vec![],
            s: vec![0.75],
        }],
    };
    let m = build_master(&p, &set, Some(&warm));
    let start = m.start.unwrap();
    assert_abs_diff_eq!(start[0], 0.25, epsilon = 0.0);
    assert_abs_diff_eq!(start[m.layout.gamma_index()], -0.25, epsilon = 0.0);
    // first scenario keeps its witness, second gets the s-box center
    assert_abs_diff_eq!(start[m.layout.s_base(0)], 0.75, epsilon = 0.0);
    assert_abs_diff_eq!(start[m.layout.s_base(1)], 0.5, epsilon = 0.0);
}
