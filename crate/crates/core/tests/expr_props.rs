use std::collections::HashMap;

use liesym::expr::{differentiate, eval, parse, simplify, Expr};
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        Just(Expr::var("x")),
        Just(Expr::var("y")),
        Just(Expr::var("z")),
        (-3i64..=3).prop_map(Expr::int),
        (1i64..=4, 2i64..=5).prop_map(|(n, d)| Expr::rational(n, d)),
    ]
}

fn tree() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a / (Expr::int(2) + b.clone() * b)),
            (inner.clone(), 0i64..=3).prop_map(|(a, k)| liesym::expr::pow(a, Expr::int(k))),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner.prop_map(|a| Expr::exp(Expr::sin(a))),
        ]
    })
}

fn point() -> impl Strategy<Value = HashMap<String, f64>> {
    (0.3f64..1.7, 0.3f64..1.7, 0.3f64..1.7).prop_map(|(x, y, z)| {
        [("x", x), ("y", y), ("z", z)].into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn simplify_is_idempotent(e in tree()) {
        let s = simplify(&e);
        prop_assert_eq!(simplify(&s), s);
    }

    #[test]
    fn simplify_preserves_value(e in tree(), env in point()) {
        let a = eval(&e, &env).unwrap();
        let b = eval(&simplify(&e), &env).unwrap();
        prop_assert!(close(a, b, 1e-9), "{} vs {}", a, b);
    }

    #[test]
    fn derivative_matches_central_difference(e in tree(), env in point()) {
        let d = eval(&differentiate(&e, "x"), &env).unwrap();
        let h = 1e-5;
        let at = |dx: f64| {
            let mut p = env.clone();
            *p.get_mut("x").unwrap() += dx;
            eval(&e, &p).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        prop_assert!(close(d, fd, 1e-5), "{} vs {}", d, fd);
    }

    #[test]
    fn print_parse_round_trip(e in tree(), env in point()) {
        let text = e.to_string();
        let back = parse(&text).unwrap();
        prop_assert!(close(eval(&e, &env).unwrap(), eval(&back, &env).unwrap(), 1e-12));
        let s = simplify(&e).to_string();
        prop_assert_eq!(parse(&s).unwrap().to_string(), s);
    }
}
