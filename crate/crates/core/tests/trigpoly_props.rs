mod common;

use common::{check_invariants, poly_from_raw, RawTerm};
use isores_core::trigpoly::{TrigPoly, Var};
use proptest::prelude::*;

fn raw_terms() -> impl Strategy<Value = Vec<RawTerm>> {
    prop::collection::vec((-2.0..2.0f64, -1i32..4, 0u8..3, -3i32..4, -4i32..5), 1..7)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn algebra_calculus_and_averaging(
        denom in 1u32..4,
        a in raw_terms(),
        b in raw_terms(),
        r in 0.2..2.5f64,
        psi in -3.0..3.0f64,
        s in -10.0..10.0f64,
    ) {
        let p = poly_from_raw(denom, &a);
        let q = poly_from_raw(denom, &b);
        if let Err(msg) = check_invariants(&p, &q, r, psi, s) {
            prop_assert!(false, "{}", msg);
        }
    }

    #[test]
    fn product_rule(denom in 1u32..3, a in raw_terms(), b in raw_terms()) {
        let p = poly_from_raw(denom, &a);
        let q = poly_from_raw(denom, &b);
        for var in [Var::R, Var::Psi, Var::S] {
            let lhs = p.mul(&q).unwrap().diff(var);
            let rhs = p.diff(var).mul(&q).unwrap().add(&p.mul(&q.diff(var)).unwrap()).unwrap();
            let scale = 1.0 + lhs.max_abs_coeff();
            prop_assert!(lhs.max_coeff_diff(&rhs).unwrap() <= 1e-12 * scale);
        }
    }

    #[test]
    fn serde_round_trip(denom in 1u32..4, a in raw_terms()) {
        let p = poly_from_raw(denom, &a);
        let text = serde_json::to_string(&p).unwrap();
        let back: TrigPoly = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn averages_are_projections(denom in 1u32..4, a in raw_terms()) {
        let p = poly_from_raw(denom, &a);
        let s = p.average_s();
        prop_assert_eq!(s.average_s(), s.clone());
        let sp = s.average_psi().unwrap();
        prop_assert_eq!(sp.average_psi().unwrap(), sp.clone());
        prop_assert!(sp.is_psi_free() && sp.is_s_free());
    }
}
