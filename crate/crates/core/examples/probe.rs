use sipred::examples::*;
use sipred::nlp::SolverOptions;
use sipred::reduction::{run, ReductionOptions};

fn main() {
    let t0 = std::time::Instant::now();
    let params = ObstacleParams::default();
    let p: sipred::model::SipProblem = build_obstacle(&params);
    let opts = ReductionOptions {
        tol_viol: 2e-7,
        tol_inner: 2e-8,
        adversary_restarts: 6,
        max_scenarios: 100,
        rng_seed: 7,
        nlp: SolverOptions {
            restarts: 6,
            tol_feas: 1e-7,
            tol_opt: 1e-6,
            max_inner_iter: 800,
            rng_seed: 7,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = run(&p, &opts).unwrap();
    println!("status: {:?}, gamma* = {}, scenarios {}", report.status, report.gamma, report.scenario_set.len());
    for it in &report.iterations {
        println!("  iter {}: gamma {:.6}, {} scen (+{}), worst {:.3e}, {} ms", it.iter, it.gamma, it.n_scenarios, it.scenarios_added, it.worst_violation, it.wall_ms);
    }
    for e in &report.events { println!("  event: {e}"); }
    println!("elapsed: {:?}", t0.elapsed());
}
