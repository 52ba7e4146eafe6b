use super::*;
use crate::audit::{verify_witness, Simulator};
use crate::model::SipProblem;
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn obstacle_dimensions() {
    let p: SipProblem = build_obstacle(&ObstacleParams::default());
    assert_eq!(
        (p.dims.theta, p.dims.w, p.dims.zp, p.dims.zm, p.dims.s),
        (15, 15, 15, 0, 15)
    );
    assert_eq!(p.g.len(), 5);
    assert_eq!(p.d.len(), 15);
    assert_eq!(p.q.len(), 5);
    assert_eq!(p.r.len(), 15);
    assert!(p.validate().is_empty());
}

#[test]
fn saturation_dimensions() {
    let p: SipProblem = build_saturation(&SaturationParams::default());
    assert_eq!(
        (p.dims.theta, p.dims.w, p.dims.zp, p.dims.zm, p.dims.s),
        (1, 1, 10, 35, 0)
    );
    assert_eq!(p.d.len(), 5 + 15);
    assert_eq!(p.e.len(), 15 + 20 + 35);
    assert!(p.g.is_empty());
    assert!(p.validate().is_empty());
}

#[test]
fn estimation_dimensions() {
    let p: SipProblem = build_estimation(&EstimationParams::default()).unwrap();
    // positions, velocities, and the explaining mass as a 13th state
    assert_eq!(
        (p.dims.theta, p.dims.w, p.dims.zp, p.dims.zm, p.dims.s),
        (2, 6, 13, 0, 0)
    );
    assert_eq!(p.d.len(), 6 + 5 + 1 + 5);
    assert_eq!(p.g.len(), 8);
    assert!(p.validate().is_empty());
}

#[test]
fn estimation_rejects_zero_input() {
    let mut params = EstimationParams::default();
    params.u[2] = 0.0;
    assert!(matches!(
        build_estimation::<f64>(&params),
        Err(ExampleError::ZeroInput(2))
    ));
}

#[test]
fn obstacle_straight_through_violates_for_every_simplex_point() {
    // steering straight along the first axis crosses the cylinder; at the
    // midpoint step the state is near the origin where all three disjuncts
    // are positive, so no simplex weighting can rescue the row
    let params = ObstacleParams::default();
    let u: Vec<f64> = (0..15)
        .map(|j| if j % 3 == 0 { 0.8 } else { 0.0 })
        .collect();
    let w = vec![0.0; 15];
    let states = simulate_obstacle(&params, &u, &w);
    // step 2 state: x1 = -2 + 1.6 = -0.4, inside the cylinder
    let x = [states[3], states[4], states[5]];
    let terms = obstacle_terms(&x);
    let min_term = terms[0].min(terms[1]).min(terms[2]);
    assert!(min_term > 0.0, "disjuncts at midpoint: {terms:?}");

    // the smoothed row equals the convex combination, so it is positive for
    // every simplex point; check vertices and random interior points
    let p: SipProblem = build_obstacle(&params);
    let mut b = p.zero_bindings();
    b.theta = u;
    b.zp = states;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..50 {
        let (s0, s1) = if trial < 3 {
            ((trial == 0) as u8 as f64, (trial == 1) as u8 as f64)
        } else {
            let a: f64 = rng.gen_range(0.0..1.0);
            let c: f64 = rng.gen_range(0.0..(1.0 - a));
            (a, c)
        };
        b.s[3] = s0;
        b.s[4] = s1;
        b.s[5] = 1.0 - s0 - s1;
        let row = p.g[1].eval(&b).unwrap();
        assert!(row > 0.0, "row should be violated, got {row}");
        assert!(row >= min_term - 1e-12);
    }
}

#[test]
fn saturation_unsaturated_branch_pattern_is_feasible() {
    // b = 0, w = 0: u = 0 never saturates; the interior pattern must
    // satisfy every trajectory constraint exactly
    let params = SaturationParams::default();
    let p: SipProblem = build_saturation(&params);
    let sim = SaturationSimulator {
        params: params.clone(),
    };
    let (zp, zm) = Simulator::<f64>::resolve(&sim, &[0.0], &[0.0]).unwrap();
    for k in 0..5 {
        assert_eq!(
            &zm[7 * k..7 * k + 7],
            &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            "interior smoothing pattern at step {k}"
        );
    }
    assert!(verify_witness(&p, &[0.0], &[0.0], &zp, &zm, 1e-9));
    // unstable open loop: x_k = 1.3^k
    assert_abs_diff_eq!(zp[4], 1.3f64.powi(5), epsilon = 1e-12);
}

#[test]
fn saturation_saturated_branch_patterns_are_feasible() {
    let params = SaturationParams::default();
    let p: SipProblem = build_saturation(&params);
    let sim = SaturationSimulator {
        params: params.clone(),
    };
    for (b, w) in [(2.5, 0.2), (1.339, -0.2), (3.0, 0.0)] {
        let (zp, zm) = Simulator::<f64>::resolve(&sim, &[b], &[w]).unwrap();
        assert!(
            verify_witness(&p, &[b], &[w], &zp, &zm, 1e-9),
            "witness rejected at b={b}, w={w}"
        );
    }
}

#[test]
fn estimation_second_differences_and_implied_masses() {
    let params = EstimationParams::default();
    let sd: Vec<f64> = (0..4)
        .map(|k| params.y[k + 2] - 2.0 * params.y[k + 1] + params.y[k])
        .collect();
    for (got, want) in sd.iter().zip([0.8, 1.2, 1.0, 1.0]) {
        assert_abs_diff_eq!(got, &want, epsilon = 1e-12);
    }
    let masses = implied_step_masses(&params);
    assert_abs_diff_eq!(masses[0], 1.25, epsilon = 1e-12);
    assert_abs_diff_eq!(masses[1], 1.0 / 1.2, epsilon = 1e-12);
    assert_abs_diff_eq!(masses[2], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(masses[3], 1.0, epsilon = 1e-12);
}

#[test]
fn saturation_oracle_zero_uncertainty_cancels_dynamics() {
    // with w = 0 the gain b = a cancels the dynamics after the first
    // saturated step, so the minimax cost collapses to (numerically) zero
    let params = SaturationParams {
        w_bound: 0.0,
        ..Default::default()
    };
    let (b, value) = oracle_saturation::<f64>(&params, 2000, 2);
    assert_abs_diff_eq!(b, 1.3, epsilon = 2e-3);
    assert!(value < 1e-12, "value = {value}");
}

#[test]
fn estimation_oracle_zero_noise_is_infeasible() {
    // the measured second differences disagree (0.8 vs 1.2), so no single
    // mass explains the data without noise
    let params = EstimationParams {
        w_bound: 0.0,
        ..Default::default()
    };
    assert_eq!(oracle_estimation::<f64>(&params, 5), None);
}

#[test]
fn estimation_oracle_single_point_grid_matches_hand_derivation() {
    // only w_0 = 0 on the grid; the sigma interval intersects to
    // [1.01, 1.05], giving masses [20/21, 100/101]
    let params = EstimationParams::default();
    let (m_lo, m_hi) = oracle_estimation::<f64>(&params, 1).unwrap();
    assert_abs_diff_eq!(m_lo, 1.0 / 1.05, epsilon = 1e-9);
    assert_abs_diff_eq!(m_hi, 1.0 / 1.01, epsilon = 1e-9);
}

#[test]
fn estimation_oracle_defaults_match_reported_bounds() {
    // full manifold scan under the derived defaults reproduces the
    // reference pair (0.943, 1.01) to printed precision
    let params = EstimationParams::default();
    let (m_lo, m_hi) = oracle_estimation::<f64>(&params, 5).unwrap();
    assert_abs_diff_eq!(m_lo, 0.9434, epsilon = 5e-4);
    assert_abs_diff_eq!(m_hi, 1.0101, epsilon = 5e-4);
}

#[test]
fn estimation_simulator_samples_lie_on_the_manifold() {
    let params = EstimationParams::default();
    let p: SipProblem = build_estimation(&params).unwrap();
    let sim = EstimationSimulator::new(params.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let w = Simulator::<f64>::sample_w(&sim, &mut rng).unwrap();
        assert!(w.iter().all(|v| v.abs() <= params.w_bound + 1e-9));
        let (zp, zm) = sim.resolve(&[1.0, 1.0], &w).unwrap();
        assert!(
            verify_witness(&p, &[1.0, 1.0], &w, &zp, &zm, 1e-8),
            "sampled noise inconsistent: {w:?}"
        );
    }
}

#[test]
fn obstacle_simulator_matches_constraint_system() {
    let params = ObstacleParams::default();
    let p: SipProblem = build_obstacle(&params);
    let sim = ObstacleSimulator {
        params: params.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let u: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..15).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let (zp, zm) = sim.resolve(&u, &w).unwrap();
        assert!(verify_witness(&p, &u, &w, &zp, &zm, 1e-9));
        // the g-row minima shortcut agrees with evaluating the smoothed row
        // at the three simplex vertices
        let minima = sim.g_row_minima(&u, &w, &zp).unwrap();
        let mut b = p.zero_bindings();
        b.theta = u.clone();
        b.w = w.clone();
        b.zp = zp.clone();
        for (k, row) in p.g.iter().enumerate() {
            let mut vertex_min = f64::INFINITY;
            for v in 0..3 {
                for j in 0..3 {
                    b.s[3 * k + j] = if j == v { 1.0 } else { 0.0 };
                }
                vertex_min = vertex_min.min(row.eval(&b).unwrap());
            }
            assert_abs_diff_eq!(minima[k], vertex_min, epsilon = 1e-12);
        }
    }
}

/// Smoothing-equivalence spot check (the acceptance suite runs the full
/// 1e3-instance version): a feasible `(u, z)` for the step system exists
/// iff `u = sat(u_lo, u_hi, -b x)`, with uniqueness certified at the 1e-6
/// scale by the exact vertex-minimum violation.
#[test]
fn saturation_smoothing_equivalence_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..25 {
        let b: f64 = rng.gen_range(-3.0..3.0);
        let x: f64 = rng.gen_range(-3.0..3.0);
        let lo: f64 = rng.gen_range(-2.0..0.0);
        let hi: f64 = rng.gen_range(0.1..2.0);
        let expected = sat(lo, hi, -b * x);

        // exact route: feasible at sat, infeasible 1e-6 away
        assert!(saturation_step_min_violation(b, x, lo, hi, expected) <= 1e-12);
        for delta in [1.1e-6, -1.1e-6, 1e-3, -1e-3] {
            let v = saturation_step_min_violation(b, x, lo, hi, expected + delta);
            assert!(
                v > 1e-13,
                "off-sat input u = sat + {delta} has violation {v} at case {case}"
            );
        }

        // NLP route, both directions at robust tolerances
        let (feasible, u) = saturation_step_feasibility(b, x, lo, hi, None, 4, 1000 + case);
        assert!(feasible, "system must be feasible at case {case}");
        assert_abs_diff_eq!(u, expected, epsilon = 1e-3);

        let off = expected + 0.3 * (hi - lo);
        let (feasible, _) = saturation_step_feasibility(b, x, lo, hi, Some(off), 4, 2000 + case);
        assert!(!feasible, "pinned input {off} should be infeasible");
    }
}
