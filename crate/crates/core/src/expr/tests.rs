use super::*;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn var(group: VarGroup, index: usize) -> Expr<f64> {
    Expr::var(group, index)
}

#[test]
fn parse_linear_combination() {
    let e: Expr<f64> = parse("theta[0] + 2*w[1]").unwrap();
    let expected = Expr::Binary(
        BinOp::Add,
        Box::new(var(VarGroup::Theta, 0)),
        Box::new(Expr::Binary(
            BinOp::Mul,
            Box::new(Expr::Constant(2.0)),
            Box::new(var(VarGroup::W, 1)),
        )),
    );
    assert_eq!(e, expected);
}

#[test]
fn parse_unbalanced_bracket_reports_offset() {
    let err = parse::<f64>("w[0").unwrap_err();
    assert_eq!(err.offset, 3);
}

#[test]
fn parse_obstacle_cylinder_term() {
    // sign-corrected first obstacle term: 1 - x1^2 - x2^2
    let e: Expr<f64> = parse("1 - zp[0]^2 - zp[1]^2").unwrap();
    let expected = Expr::Binary(
        BinOp::Sub,
        Box::new(Expr::Binary(
            BinOp::Sub,
            Box::new(Expr::Constant(1.0)),
            Box::new(Expr::Binary(
                BinOp::Pow,
                Box::new(var(VarGroup::Zp, 0)),
                Box::new(Expr::Constant(2.0)),
            )),
        )),
        Box::new(Expr::Binary(
            BinOp::Pow,
            Box::new(var(VarGroup::Zp, 1)),
            Box::new(Expr::Constant(2.0)),
        )),
    );
    assert_eq!(e, expected);
}

#[test]
fn parse_rejects_unknown_identifier() {
    let err = parse::<f64>("foo[0] + 1").unwrap_err();
    assert!(err.message.contains("unknown identifier"));
    assert_eq!(err.offset, 0);
}

#[test]
fn parse_rejects_nonconstant_exponent() {
    let err = parse::<f64>("theta[0]^w[0]").unwrap_err();
    assert!(err.message.contains("exponent"));
}

#[test]
fn parse_folds_constant_exponent_expression() {
    let e: Expr<f64> = parse("theta[0]^(1 + 1)").unwrap();
    assert_eq!(
        e,
        Expr::Binary(
            BinOp::Pow,
            Box::new(var(VarGroup::Theta, 0)),
            Box::new(Expr::Constant(2.0))
        )
    );
}

#[test]
fn parse_precedence_and_associativity() {
    // ^ binds tighter than unary minus; ^ is right-associative
    let e: Expr<f64> = parse("-theta[0]^2").unwrap();
    assert_eq!(
        e,
        Expr::Unary(
            UnaryOp::Neg,
            Box::new(Expr::Binary(
                BinOp::Pow,
                Box::new(var(VarGroup::Theta, 0)),
                Box::new(Expr::Constant(2.0)),
            ))
        )
    );
    let e: Expr<f64> = parse("2^3^2").unwrap();
    assert_eq!(e, Expr::Constant(512.0));
    let e: Expr<f64> = parse("8 - 3 - 2").unwrap();
    assert_eq!(e, Expr::Constant(3.0));
}

#[test]
fn eval_spec_examples() {
    let mut b = Bindings::<f64>::new();
    b.theta = vec![2.0];
    b.w = vec![1.0];
    let e: Expr<f64> = parse("theta[0]^2 + w[0]").unwrap();
    assert_eq!(e.eval(&b).unwrap(), 5.0);

    let mut b = Bindings::<f64>::new();
    b.set_gamma(0.714);
    let e: Expr<f64> = parse("gamma").unwrap();
    assert_eq!(e.eval(&b).unwrap(), 0.714);

    // Eq.-5 left side at s = (1,0,0), x = (0,0,0): inside the cylinder
    let e: Expr<f64> =
        parse("s[0]*(1 - zp[0]^2 - zp[1]^2) + s[1]*(1 - zp[2]) + s[2]*(zp[2] + 1)").unwrap();
    let mut b = Bindings::<f64>::new();
    b.s = vec![1.0, 0.0, 0.0];
    b.zp = vec![0.0, 0.0, 0.0];
    assert_eq!(e.eval(&b).unwrap(), 1.0);
}

#[test]
fn eval_domain_errors_carry_node() {
    let mut b = Bindings::<f64>::new();
    b.theta = vec![-1.0];
    let e: Expr<f64> = parse("log(theta[0])").unwrap();
    match e.eval(&b) {
        Err(EvalError::Domain { op, node, .. }) => {
            assert_eq!(op, "log");
            assert!(node.contains("log(theta[0])"));
        }
        other => panic!("expected domain error, got {other:?}"),
    }

    let e: Expr<f64> = parse("1/theta[0]").unwrap();
    b.theta = vec![0.0];
    assert!(matches!(e.eval(&b), Err(EvalError::Domain { op: "/", .. })));

    let e: Expr<f64> = parse("sqrt(theta[0])").unwrap();
    b.theta = vec![-4.0];
    assert!(matches!(e.eval(&b), Err(EvalError::Domain { op: "sqrt", .. })));
}

#[test]
fn eval_unbound_variable() {
    let e: Expr<f64> = parse("zm[3]").unwrap();
    let b = Bindings::<f64>::new();
    assert_eq!(
        e.eval(&b),
        Err(EvalError::Unbound {
            var: VarRef::new(VarGroup::Zm, 3)
        })
    );
}

#[test]
fn gradient_spec_examples() {
    let mut b = Bindings::<f64>::new();
    b.theta = vec![2.0];
    let e: Expr<f64> = parse("theta[0]^2").unwrap();
    assert_eq!(e.gradient(&b, VarGroup::Theta).unwrap(), vec![4.0]);

    let mut b = Bindings::<f64>::new();
    b.w = vec![3.0, 5.0];
    let e: Expr<f64> = parse("w[0]*w[1]").unwrap();
    assert_eq!(e.gradient(&b, VarGroup::W).unwrap(), vec![5.0, 3.0]);
}

#[test]
fn printer_emits_spec_style() {
    let roundtrip = |s: &str| parse::<f64>(s).unwrap().to_text();
    assert_eq!(roundtrip("theta[0] + 2*w[1]"), "theta[0] + 2*w[1]");
    assert_eq!(roundtrip("1 - zp[0]^2 - zp[1]^2"), "1 - zp[0]^2 - zp[1]^2");
    assert_eq!(roundtrip("(theta[0] + 1)*w[0]"), "(theta[0] + 1)*w[0]");
    assert_eq!(roundtrip("theta[0] - (w[0] - w[1])"), "theta[0] - (w[0] - w[1])");
    assert_eq!(roundtrip("(theta[0]^2)^3"), "(theta[0]^2)^3");
    assert_eq!(roundtrip("theta[0]^-2"), "theta[0]^(-2)");
    assert_eq!(roundtrip("-(theta[0]*w[0])"), "-(theta[0]*w[0])");
    assert_eq!(roundtrip("gamma - theta[0]"), "gamma - theta[0]");
}

/// Central finite difference for the gradient oracle.
fn fd_gradient(e: &Expr<f64>, b: &Bindings<f64>, group: VarGroup, h: f64) -> Vec<f64> {
    let dim = b.group(group).len();
    (0..dim)
        .map(|i| {
            let mut bp = b.clone();
            bp.group_mut(group)[i] += h;
            let mut bm = b.clone();
            bm.group_mut(group)[i] -= h;
            (e.eval(&bp).unwrap() - e.eval(&bm).unwrap()) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences_per_op() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let cases = [
        "exp(theta[0]*w[0]) + sin(theta[1])",
        "log(3 + theta[0]^2) * cos(w[0])",
        "sqrt(4 + theta[0]^2) - theta[1]/(2 + w[0]^2)",
        "theta[0]^3*w[0] - (theta[1] - w[0])^4",
        "(theta[0] + theta[1])^2 / (1 + exp(-w[0]))",
    ];
    for text in cases {
        let e: Expr<f64> = parse(text).unwrap();
        for _ in 0..20 {
            let mut b = Bindings::<f64>::new();
            b.theta = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            b.w = vec![rng.gen_range(-2.0..2.0)];
            for group in [VarGroup::Theta, VarGroup::W] {
                let ad = e.gradient(&b, group).unwrap();
                let fd = fd_gradient(&e, &b, group, 1e-6);
                for (a, f) in ad.iter().zip(&fd) {
                    let tol = (1e-5f64).max(1e-5 * a.abs());
                    assert_abs_diff_eq!(a, f, epsilon = tol);
                }
            }
        }
    }
}

#[test]
fn eval_is_deterministic() {
    let e: Expr<f64> = parse("sin(theta[0])*exp(w[0]) - theta[0]^3/7").unwrap();
    let mut b = Bindings::<f64>::new();
    b.theta = vec![0.731];
    b.w = vec![-1.25];
    let v1 = e.eval(&b).unwrap();
    let v2 = e.eval(&b).unwrap();
    assert_eq!(v1.to_bits(), v2.to_bits());
}

// --- randomized structural properties ---------------------------------

/// Random smooth expression trees over safe operations (no log/sqrt/div so
/// that any bindings in [-10, 10] stay in-domain).
fn arb_smooth_expr() -> impl Strategy<Value = Expr<f64>> {
    let leaf = prop_oneof![
        (-4.0..4.0f64).prop_map(|v| Expr::Constant((v * 100.0).round() / 100.0)),
        (0..3usize).prop_map(|i| Expr::var(VarGroup::Theta, i)),
        (0..2usize).prop_map(|i| Expr::var(VarGroup::W, i)),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), 1..4i32).prop_map(|(a, n)| a.pow(n as f64)),
            inner.clone().prop_map(|a| -a),
            inner.clone().prop_map(Expr::sin),
            inner.prop_map(Expr::cos),
        ]
    })
}

/// Polynomial-only trees for the finite-difference property: trig over huge
/// polynomial intermediates would move the argument by much more than 2*pi
/// across the FD step, making the oracle itself meaningless.
fn arb_poly_expr() -> impl Strategy<Value = Expr<f64>> {
    let leaf = prop_oneof![
        (-4.0..4.0f64).prop_map(|v| Expr::Constant((v * 100.0).round() / 100.0)),
        (0..3usize).prop_map(|i| Expr::var(VarGroup::Theta, i)),
        (0..2usize).prop_map(|i| Expr::var(VarGroup::W, i)),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), 1..4i32).prop_map(|(a, n)| a.pow(n as f64)),
            inner.prop_map(|a| -a),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn print_parse_roundtrip(e in arb_smooth_expr()) {
        let folded = e.fold();
        let text = folded.to_text();
        let reparsed: Expr<f64> = parse(&text).unwrap();
        prop_assert_eq!(reparsed, folded);
    }

    #[test]
    fn gradient_agrees_with_fd(e in arb_poly_expr(), seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut b = Bindings::<f64>::new();
        b.theta = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
        b.w = (0..2).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let ad = e.gradient(&b, VarGroup::Theta).unwrap();
        let fd = fd_gradient(&e, &b, VarGroup::Theta, 1e-6);
        for (a, f) in ad.iter().zip(&fd) {
            // FD truncation scales with the magnitude of nearby values, so
            // widen the floor for huge intermediates
            let scale = a.abs().max(f.abs()).max(1.0);
            let tol = (1e-5f64).max(1e-5 * scale);
            prop_assert!((a - f).abs() <= tol, "ad={a} fd={f} expr={}", e.to_text());
        }
    }
}
