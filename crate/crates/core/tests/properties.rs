use std::sync::Arc;

use diffprog_core::ir::{parse_ir, print_ir};
use diffprog_core::runtime::NullSink;
use diffprog_core::{adjoint_module, compile, Engine, Value};
use proptest::prelude::*;

fn expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x".to_string()),
        Just("y".to_string()),
        (-20i32..20).prop_map(|c| format!("{:.1}", c as f64 / 10.0)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("tanh({a})")),
            inner.clone().prop_map(|a| format!("exp(tanh({a}))")),
        ]
    })
}

/// A two-argument program with a data-dependent branch and a loop.
fn program() -> impl Strategy<Value = String> {
    (expr(), expr(), expr(), 0i64..4).prop_map(|(a, b, c, n)| {
        format!(
            "fn f(x, y) {{\n  let t = {a};\n  if t > 0.0 {{\n    t = t * {b};\n  }} else {{\n    t = t - {c};\n  }}\n  \
             let i = 0;\n  while i < {n} {{\n    t = sin(t) + y * 0.5;\n    i = i + 1;\n  }}\n  return t;\n}}\n"
        )
    })
}

fn engine(src: &str) -> Engine {
    Engine::from_source(src)
        .unwrap_or_else(|e| panic!("{e}\n{src}"))
        .with_sink(Arc::new(NullSink))
}

fn real(v: &Value) -> f64 {
    v.scalar().unwrap()
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pullback_is_linear_in_the_cotangent(
        src in program(),
        x in -2.0f64..2.0, y in -2.0f64..2.0,
        z1 in -3.0f64..3.0, z2 in -3.0f64..3.0,
        a in -2.0f64..2.0, b in -2.0f64..2.0,
    ) {
        let e = engine(&src);
        let aug = e.vjp("f", &[Value::Real(x), Value::Real(y)]).unwrap();
        let p1 = aug.pull(&Value::Real(z1)).unwrap();
        let p2 = aug.pull(&Value::Real(z2)).unwrap();
        let pc = aug.pull(&Value::Real(a * z1 + b * z2)).unwrap();
        for i in 0..2 {
            let expect = a * real(&p1[i]) + b * real(&p2[i]);
            prop_assert!(near(real(&pc[i]), expect), "{} vs {expect}\n{src}", real(&pc[i]));
        }
    }

    #[test]
    fn jvp_and_vjp_are_adjoint(
        src in program(),
        x in -2.0f64..2.0, y in -2.0f64..2.0,
        tx in -1.0f64..1.0, ty in -1.0f64..1.0,
        z in -3.0f64..3.0,
    ) {
        let e = engine(&src);
        let args = [Value::Real(x), Value::Real(y)];
        let (_, jt) = e.pushforward("f", &args, &[Value::Real(tx), Value::Real(ty)]).unwrap();
        let ct = e.vjp("f", &args).unwrap().pull(&Value::Real(z)).unwrap();
        let lhs = real(&jt) * z;
        let rhs = tx * real(&ct[0]) + ty * real(&ct[1]);
        prop_assert!(near(lhs, rhs), "{lhs} vs {rhs}\n{src}");
    }

    #[test]
    fn reverse_matches_forward(src in program(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let e = engine(&src);
        let args = [Value::Real(x), Value::Real(y)];
        let rev = e.gradient("f", &args).unwrap();
        let fwd = e.forward_gradient("f", &args).unwrap();
        for i in 0..2 {
            prop_assert!(near(real(&rev[i]), real(&fwd[i])), "{:?} vs {:?}\n{src}", rev, fwd);
        }
    }

    #[test]
    fn ir_text_round_trips(src in program()) {
        let module = compile(&src).unwrap();
        for m in [module.clone(), adjoint_module(&module, None).unwrap()] {
            let text = print_ir(&m);
            let back = parse_ir(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
            prop_assert_eq!(print_ir(&back), text);
        }
    }

    #[test]
    fn vector_duality(
        a in -2.0f64..2.0,
        u in prop::collection::vec(-2.0f64..2.0, 1..12),
        seed in -1.0f64..1.0,
        z in -3.0f64..3.0,
    ) {
        let e = engine("fn g(a, u: vec) { let v = u * a; return dot(v, u) + dot(v, v) * 0.1 + tanh(sum(u)); }");
        let n = u.len();
        let du: Vec<f64> = (0..n).map(|i| seed * (i as f64 * 0.7).cos()).collect();
        let args = [Value::Real(a), Value::Vec(u)];
        let (_, jt) = e.pushforward("g", &args, &[Value::Real(seed), Value::Vec(du.clone())]).unwrap();
        let ct = e.vjp("g", &args).unwrap().pull(&Value::Real(z)).unwrap();
        let cu = ct[1].as_vec().unwrap();
        let rhs = seed * real(&ct[0]) + du.iter().zip(cu).map(|(d, c)| d * c).sum::<f64>();
        prop_assert!(near(real(&jt) * z, rhs));
    }
}
