use super::*;
use approx::assert_abs_diff_eq;

fn inf() -> f64 {
    f64::INFINITY
}

/// min (x-3)^2 on [-10, 10]
fn shifted_quadratic() -> NlpProblem {
    NlpProblem::new(
        vec![-10.0],
        vec![10.0],
        NlpFn::custom(
            |x: &[f64]| (x[0] - 3.0).powi(2),
            |x, g| g[0] = 2.0 * (x[0] - 3.0),
        ),
    )
}

#[test]
fn unconstrained_quadratic() {
    let p = shifted_quadratic();
    let sol = solve(&p, &SolverOptions::default(), None);
    assert_eq!(sol.status, SolveStatus::Converged);
    assert_abs_diff_eq!(sol.x[0], 3.0, epsilon = 1e-6);
    assert!(sol.objective_value < 1e-10);
}

#[test]
fn active_inequality() {
    // min x^2 s.t. 1 - x <= 0
    let mut p = NlpProblem::new(
        vec![-10.0],
        vec![10.0],
        NlpFn::custom(|x| x[0] * x[0], |x, g| g[0] = 2.0 * x[0]),
    );
    p.ineq.push(NlpFn::custom(|x| 1.0 - x[0], |_, g| g[0] = -1.0));
    let sol = solve(&p, &SolverOptions::default(), Some(&[5.0]));
    assert_eq!(sol.status, SolveStatus::Converged);
    assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-5);
    assert_abs_diff_eq!(sol.objective_value, 1.0, epsilon = 1e-5);
}

/// min x1+x2 on the unit circle. The frozen expected value -sqrt(2) at
/// (-sqrt(2)/2, -sqrt(2)/2) is confirmed by a dense sweep of the circle.
#[test]
fn equality_constrained_linear_on_circle() {
    // independent oracle: angle sweep
    let mut grid_best = f64::INFINITY;
    let n = 1_000_000;
    for k in 0..n {
        let t = 2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
        grid_best = grid_best.min(t.cos() + t.sin());
    }
    let analytic = -(2.0f64).sqrt();
    assert_abs_diff_eq!(grid_best, analytic, epsilon = 1e-9);

    let mut p = NlpProblem::new(
        vec![-2.0, -2.0],
        vec![2.0, 2.0],
        NlpFn::custom(
            |x| x[0] + x[1],
            |_, g| {
                g[0] = 1.0;
                g[1] = 1.0;
            },
        ),
    );
    p.eq.push(NlpFn::custom(
        |x| x[0] * x[0] + x[1] * x[1] - 1.0,
        |x, g| {
            g[0] = 2.0 * x[0];
            g[1] = 2.0 * x[1];
        },
    ));
    let opts = SolverOptions {
        restarts: 8,
        rng_seed: 3,
        ..Default::default()
    };
    let sol = multistart(&p, &opts, &[]);
    assert_eq!(sol.status, SolveStatus::Converged);
    assert_abs_diff_eq!(sol.objective_value, analytic, epsilon = 1e-5);
    assert_abs_diff_eq!(sol.x[0], -0.5 * (2.0f64).sqrt(), epsilon = 1e-4);
    assert_abs_diff_eq!(sol.x[1], -0.5 * (2.0f64).sqrt(), epsilon = 1e-4);
}

fn rastrigin_1d() -> NlpProblem {
    let tau = 2.0 * std::f64::consts::PI;
    NlpProblem::new(
        vec![-5.0],
        vec![5.0],
        NlpFn::custom(
            move |x: &[f64]| x[0] * x[0] + 10.0 * (1.0 - (tau * x[0]).cos()),
            move |x, g| g[0] = 2.0 * x[0] + 10.0 * tau * (tau * x[0]).sin(),
        ),
    )
}

#[test]
fn multistart_finds_rastrigin_global() {
    let p = rastrigin_1d();
    let opts = SolverOptions {
        restarts: 30,
        rng_seed: 7,
        ..Default::default()
    };
    let sol = multistart(&p, &opts, &[]);
    assert!(sol.objective_value <= 1e-6, "f* = {}", sol.objective_value);
    assert_abs_diff_eq!(sol.x[0], 0.0, epsilon = 1e-4);
}

#[test]
fn infeasible_problem_reports_least_infeasible() {
    // x <= -1 and x >= 1 simultaneously: empty feasible set
    let mut p = NlpProblem::new(
        vec![-10.0],
        vec![10.0],
        NlpFn::custom(|_| 0.0, |_, g| g[0] = 0.0),
    );
    p.ineq.push(NlpFn::custom(|x| x[0] + 1.0, |_, g| g[0] = 1.0)); // x <= -1
    p.ineq.push(NlpFn::custom(|x| 1.0 - x[0], |_, g| g[0] = -1.0)); // x >= 1
    let opts = SolverOptions {
        restarts: 4,
        rng_seed: 1,
        ..Default::default()
    };
    let sol = multistart(&p, &opts, &[]);
    assert_ne!(sol.status, SolveStatus::Converged);
    // least-infeasible point is x = 0 with violation 1
    assert!(sol.max_ineq_violation >= 0.5);
    assert!(sol.max_ineq_violation <= 1.0 + 1e-6);
}

#[test]
fn multistart_is_deterministic() {
    let p = rastrigin_1d();
    let opts = SolverOptions {
        restarts: 12,
        rng_seed: 99,
        ..Default::default()
    };
    let a = multistart(&p, &opts, &[]);
    let b = multistart(&p, &opts, &[]);
    assert_eq!(a, b);
    assert_eq!(a.x[0].to_bits(), b.x[0].to_bits());
}

#[test]
fn multistart_objective_monotone_in_restarts() {
    let p = rastrigin_1d();
    let mut prev = f64::INFINITY;
    for restarts in [2, 5, 10, 20] {
        let opts = SolverOptions {
            restarts,
            rng_seed: 5,
            ..Default::default()
        };
        let sol = multistart(&p, &opts, &[]);
        assert!(
            sol.objective_value <= prev + 1e-12,
            "restarts={restarts}: {} > {prev}",
            sol.objective_value
        );
        prev = sol.objective_value;
    }
}

#[test]
fn bounds_respected_on_all_paths() {
    // objective pushes hard toward +inf outside the box
    let mut p = NlpProblem::new(
        vec![-1.0, 0.0],
        vec![1.0, inf()],
        NlpFn::custom(
            |x| -10.0 * x[0] - x[1],
            |_, g| {
                g[0] = -10.0;
                g[1] = -1.0;
            },
        ),
    );
    // make it infeasible so we also exercise non-converged paths
    p.eq.push(NlpFn::custom(|x| x[0] - 5.0, |_, g| g[0] = 1.0));
    let opts = SolverOptions {
        restarts: 3,
        rng_seed: 2,
        max_outer_iter: 12,
        ..Default::default()
    };
    let sol = multistart(&p, &opts, &[]);
    assert!(sol.x[0] >= -1.0 - 1e-9 && sol.x[0] <= 1.0 + 1e-9);
    assert!(sol.x[1] >= -1e-9);
}

#[test]
fn diverges_when_penalty_explodes() {
    // equality x = 20 unreachable inside [-1, 1]
    let mut p = NlpProblem::new(
        vec![-1.0],
        vec![1.0],
        NlpFn::custom(|x| x[0], |_, g| g[0] = 1.0),
    );
    p.eq.push(NlpFn::custom(|x| x[0] - 20.0, |_, g| g[0] = 1.0));
    let sol = solve(&p, &SolverOptions::default(), None);
    assert_eq!(sol.status, SolveStatus::Diverged);
    assert!(sol.x[0] >= -1.0 && sol.x[0] <= 1.0);
}

#[test]
fn warm_start_is_clipped() {
    let p = shifted_quadratic();
    let sol = solve(&p, &SolverOptions::default(), Some(&[1e9]));
    assert_eq!(sol.status, SolveStatus::Converged);
    assert_abs_diff_eq!(sol.x[0], 3.0, epsilon = 1e-6);
}

/// Local-minimum spot check: perturbing a converged solution along random
/// feasible directions of norm 1e-4 never improves the objective by more
/// than 1e-6 while staying feasible.
#[test]
fn converged_points_are_local_minima() {
    use rand::{Rng, SeedableRng};
    let mut p = NlpProblem::new(
        vec![-2.0, -2.0],
        vec![2.0, 2.0],
        NlpFn::custom(
            |x| x[0] + x[1],
            |_, g| {
                g[0] = 1.0;
                g[1] = 1.0;
            },
        ),
    );
    p.eq.push(NlpFn::custom(
        |x| x[0] * x[0] + x[1] * x[1] - 1.0,
        |x, g| {
            g[0] = 2.0 * x[0];
            g[1] = 2.0 * x[1];
        },
    ));
    let opts = SolverOptions {
        restarts: 8,
        rng_seed: 3,
        ..Default::default()
    };
    let sol = multistart(&p, &opts, &[]);
    assert_eq!(sol.status, SolveStatus::Converged);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let f0 = sol.objective_value;
    let mut checked = 0;
    let mut draws = 0u64;
    while checked < 100 && draws < 20_000_000 {
        draws += 1;
        let dir: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        if norm < 1e-12 {
            continue;
        }
        let xp: Vec<f64> = sol
            .x
            .iter()
            .zip(&dir)
            .map(|(xi, di)| xi + 1e-4 * di / norm)
            .collect();
        let (veq, vineq) = p.violations(&xp);
        if veq.max(vineq) > 1e-7 {
            continue; // direction leaves the feasible set
        }
        checked += 1;
        let fp = xp[0] + xp[1];
        assert!(fp >= f0 - 1e-6, "descent direction found: {fp} < {f0}");
    }
    assert!(checked >= 20, "too few feasible directions sampled: {checked}");
}
