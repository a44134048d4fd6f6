use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;

fn xy() -> (VariableSpace, Polynomial, Polynomial) {
    let s = VariableSpace::with_vars(&["x", "y"]);
    let x = Polynomial::var(s.id(), VarId(0));
    let y = Polynomial::var(s.id(), VarId(1));
    (s, x, y)
}

fn p(text: &str, s: &VariableSpace) -> Polynomial {
    Polynomial::parse(text, s).unwrap()
}

#[test]
fn addition_examples() {
    let (s, x, y) = xy();
    assert_eq!(p("x^2 + 1", &s) + p("2*x^2", &s), p("3*x^2 + 1", &s));
    let q = p("x*y - 4", &s);
    assert_eq!(&q + &Polynomial::zero(s.id()), q);
    let cancel = (&x - &y) + (&y - &x);
    assert!(cancel.is_zero());
    assert_eq!(cancel.len(), 0);
}

#[test]
fn multiplication_examples() {
    let (s, x, y) = xy();
    assert_eq!((&x + &y) * (&x - &y), p("x^2 - y^2", &s));
    let q = p("3*x*y^2 - x + 2", &s);
    assert_eq!(&q * &Polynomial::constant(s.id(), 1.0), q);
    let sq = (&x + &y).pow(2);
    assert_eq!(sq, p("x^2 + 2*x*y + y^2", &s));
    assert_eq!(sq.degree(), 2);
}

#[test]
fn space_mismatch_is_an_error() {
    let (_, x, _) = xy();
    let other = VariableSpace::with_vars(&["x"]);
    let xo = Polynomial::var(other.id(), VarId(0));
    assert!(matches!(x.try_add(&xo), Err(PolyError::SpaceMismatch(..))));
    assert!(matches!(x.try_mul(&xo), Err(PolyError::SpaceMismatch(..))));
}

#[test]
fn derivative_examples() {
    let s = VariableSpace::with_vars(&["z1", "z2"]);
    let (z1, z2) = (VarId(0), VarId(1));
    assert_eq!(p("z1^3", &s).differentiate(z1), p("3*z1^2", &s));
    assert!(p("z2", &s).differentiate(z1).is_zero());
    // rotational field conserves the circle
    let v = p("z1^2 + z2^2", &s);
    let f = [p("z2", &s), p("-z1", &s)];
    let vdot = &v.differentiate(z1) * &f[0] + &v.differentiate(z2) * &f[1];
    assert!(vdot.is_zero());
    assert!(matches!(v.try_differentiate(&s, VarId(7)), Err(PolyError::UnknownVariable(7))));
}

#[test]
fn evaluation_examples() {
    let s = VariableSpace::with_vars(&["z1"]);
    assert_eq!(p("z1^2 + 2", &s).evaluate(&[3.0]).unwrap(), 11.0);
    assert_eq!(Polynomial::zero(s.id()).evaluate(&[]).unwrap(), 0.0);
    let s2 = VariableSpace::with_vars(&["x", "y"]);
    let motzkin = p("x^4*y^2 + x^2*y^4 - 3*x^2*y^2 + 1", &s2);
    assert_eq!(motzkin.evaluate(&[1.0, 1.0]).unwrap(), 0.0);
    assert!(matches!(motzkin.evaluate(&[1.0]), Err(PolyError::MissingAssignment(1))));
}

#[test]
fn substitution_examples() {
    let s = VariableSpace::with_vars(&["u", "w", "z1", "z3", "s"]);
    let u = s.get("u").unwrap();
    let z3 = s.get("z3").unwrap();
    assert_eq!(p("u^2", &s).substitute(u, &p("w + 1", &s)).unwrap(), p("w^2 + 2*w + 1", &s));
    assert_eq!(p("z3", &s).substitute(z3, &p("z1 - s", &s)).unwrap(), p("z1 - s", &s));
    let zero = Polynomial::zero(s.id());
    assert_eq!(p("z1 - z3", &s).substitute(z3, &zero).unwrap(), p("z1", &s));
}

#[test]
fn parse_errors_carry_position() {
    let s = VariableSpace::with_vars(&["z1", "z2"]);
    let e = Polynomial::parse("z1 + z3", &s).unwrap_err();
    assert_eq!((e.line, e.column), (1, 6));
    assert!(e.message.contains("z3"));
    let e = Polynomial::parse("z1 +\n  *z2", &s).unwrap_err();
    assert_eq!(e.line, 2);
    assert!(Polynomial::parse("", &s).is_err());
    assert!(Polynomial::parse("(z1 + 1", &s).is_err());
    assert!(Polynomial::parse("z1^-1", &s).is_err());
}

#[test]
fn printing_is_readable() {
    let s = VariableSpace::with_vars(&["z1", "z2", "u"]);
    let q = p("3*z1^2*z2 - 0.5*u + 1", &s);
    assert_eq!(q.display(&s).to_string(), "3*z1^2*z2 - 0.5*u + 1");
    assert_eq!(p("-z1 - 1e-9", &s).display(&s).to_string(), "-z1 - 1e-9");
    assert_eq!(Polynomial::zero(s.id()).display(&s).to_string(), "0");
}

#[test]
fn tiny_coefficients_are_dropped() {
    let s = VariableSpace::with_vars(&["x"]);
    let q = p("x + 1e-13", &s);
    assert_eq!(q.len(), 1);
}

// ---- property tests -------------------------------------------------------

const NV: usize = 3;

fn space3() -> &'static VariableSpace {
    static SPACE: std::sync::OnceLock<VariableSpace> = std::sync::OnceLock::new();
    SPACE.get_or_init(|| VariableSpace::with_vars(&["a", "b", "c"]))
}

fn arb_poly() -> impl Strategy<Value = Polynomial> {
    // small integer coefficients keep ring identities exact in f64
    prop::collection::vec((prop::collection::vec(0u32..3, NV), -4i32..5), 0..6).prop_map(|terms| {
        Polynomial::from_terms(
            space3().id(),
            terms.into_iter().map(|(e, c)| (Monomial::from_exponents(&e), f64::from(c))),
        )
    })
}

fn arb_point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, NV)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn ring_axioms(a in arb_poly(), b in arb_poly(), c in arb_poly()) {
        prop_assert_eq!(&a + &b, &b + &a);
        prop_assert_eq!(&a * &b, &b * &a);
        prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
    }

    #[test]
    fn product_rule(a in arb_poly(), b in arb_poly()) {
        for v in 0..NV as u32 {
            let v = VarId(v);
            let lhs = (&a * &b).differentiate(v);
            let rhs = &a * &b.differentiate(v) + &b * &a.differentiate(v);
            prop_assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn evaluation_is_a_homomorphism(a in arb_poly(), b in arb_poly(), c in arb_poly(), pt in arb_point()) {
        let lhs = (&(&a * &b) + &c).evaluate(&pt).unwrap();
        let rhs = a.evaluate(&pt).unwrap() * b.evaluate(&pt).unwrap() + c.evaluate(&pt).unwrap();
        prop_assert!(rel_close(lhs, rhs, 1e-9), "{lhs} vs {rhs}");
    }

    #[test]
    fn substitute_then_evaluate(a in arb_poly(), pt in arb_point()) {
        let expr = Polynomial::parse("b*c - 0.5*a + 1", space3()).unwrap();
        let v = VarId(0);
        let substituted = a.substitute(v, &expr).unwrap();
        let mut composed = pt.clone();
        composed[0] = expr.evaluate(&pt).unwrap();
        let lhs = substituted.evaluate(&pt).unwrap();
        let rhs = a.evaluate(&composed).unwrap();
        prop_assert!(rel_close(lhs, rhs, 1e-9), "{lhs} vs {rhs}");
        let mut subs = BTreeMap::new();
        subs.insert(v, expr);
        prop_assert!(a.substitute_many(&subs).unwrap().max_abs_diff(&substituted) < 1e-9);
    }

    #[test]
    fn print_parse_round_trip(
        terms in prop::collection::vec((prop::collection::vec(0u32..4, NV), -1e6f64..1e6), 0..8)
    ) {
        let s = space3();
        let q = Polynomial::from_terms(
            s.id(),
            terms.into_iter().map(|(e, c)| (Monomial::from_exponents(&e), c)),
        );
        let text = q.display(s).to_string();
        let back = Polynomial::parse(&text, s).unwrap();
        prop_assert_eq!(back, q, "text was {}", text);
    }
}
