//! Randomized invariants. Each property here is a statement the library is
//! supposed to satisfy for *all* inputs, so shrunk counterexamples from this
//! file are bugs by definition, never tolerance issues.

use std::collections::BTreeSet;

use evlab::adjuster::{adjuster_value, elift, AdjusterSpec, AdjusterTable};
use evlab::ebh::{bh, compound_from_rejection, ebh, fdp, EValueVector, NullIndicator, RejectionSet};
use evlab::eprocess::{catoni_phi, EProcessState};
use proptest::prelude::*;

fn evalue_entry() -> impl Strategy<Value = f64> {
    prop_oneof![
        1 => Just(0.0),
        1 => Just(f64::INFINITY),
        8 => (-3.0..4.0f64).prop_map(f64::exp),
    ]
}

fn evalue_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(evalue_entry(), 1..12)
}

fn alpha() -> impl Strategy<Value = f64> {
    0.01..0.5f64
}

/// A rejection set together with its hypothesis count.
fn rejection_set() -> impl Strategy<Value = (usize, BTreeSet<usize>)> {
    (1..=10usize)
        .prop_flat_map(|g| (Just(g), prop::collection::btree_set(1..=g, 0..=g)))
}

fn adjuster_spec() -> impl Strategy<Value = AdjusterSpec> {
    prop_oneof![
        Just(AdjusterSpec::SqrtMinusOne),
        (0.05..0.95f64).prop_map(|k| AdjusterSpec::Power { k }),
        adjuster_table().prop_map(AdjusterSpec::Custom),
    ]
}

/// Structurally valid tables: abscissas strictly increasing from 1, values
/// nonnegative and non-decreasing.
fn adjuster_table() -> impl Strategy<Value = AdjusterTable> {
    prop::collection::vec((0.01..2.0f64, 0.0..1.0f64), 1..8).prop_map(|increments| {
        let mut x = 1.0;
        let mut a = 0.0;
        let knots = increments
            .into_iter()
            .map(|(dx, da)| {
                let knot = (x, a);
                x += dx;
                a += da;
                knot
            })
            .collect();
        AdjusterTable::new(knots).unwrap()
    })
}

proptest! {
    /// e-BH on e-values and BH on their reciprocals reject the same set.
    #[test]
    fn duality(values in evalue_vec(), alpha in alpha()) {
        let e = EValueVector::new(values.clone()).unwrap();
        let p: Vec<f64> = values.iter().map(|&v| 1.0 / v).collect();
        prop_assert_eq!(ebh(&e, alpha).unwrap(), bh(&p, alpha).unwrap());
    }

    /// Raising one e-value never shrinks the rejection set.
    #[test]
    fn ebh_monotone_in_each_coordinate(
        values in evalue_vec(),
        alpha in alpha(),
        index in any::<prop::sample::Index>(),
        bump in 1.0..50.0f64,
    ) {
        let base = ebh(&EValueVector::new(values.clone()).unwrap(), alpha).unwrap();
        let mut raised = values;
        let i = index.index(raised.len());
        raised[i] *= bump;
        let raised = ebh(&EValueVector::new(raised).unwrap(), alpha).unwrap();
        prop_assert!(base.iter().all(|g| raised.contains(g)));
    }

    /// The false discovery proportion is always a proportion.
    #[test]
    fn fdp_lies_in_unit_interval(
        (g, members) in rejection_set(),
        is_null in prop::collection::vec(any::<bool>(), 10),
    ) {
        let set = RejectionSet::new(g, members).unwrap();
        let truth = NullIndicator::new(is_null[..g].to_vec()).unwrap();
        let value = fdp(&set, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&value));
        if set.is_empty() {
            prop_assert_eq!(value, 0.0);
        }
    }

    /// Compound e-values built from any rejection set are recovered exactly.
    #[test]
    fn compound_round_trip((g, members) in rejection_set(), alpha in alpha()) {
        let set = RejectionSet::new(g, members).unwrap();
        let compound = compound_from_rejection(&set, alpha).unwrap();
        prop_assert_eq!(ebh(&compound, alpha).unwrap(), set);
    }

    /// Product-form state agrees with a direct absorbed product and tracks
    /// the prefix maximum.
    #[test]
    fn product_state_matches_direct_product(
        factors in prop::collection::vec(
            prop_oneof![1 => Just(0.0), 9 => (-2.0..2.0f64).prop_map(f64::exp)],
            0..20,
        ),
    ) {
        let mut state = EProcessState::new();
        let mut product = 1.0f64;
        let mut running_max = 1.0f64;
        for &f in &factors {
            state.apply_factor(f).unwrap();
            if product != 0.0 {
                product = if f == 0.0 { 0.0 } else { product * f };
            }
            running_max = running_max.max(product);
        }
        prop_assert_eq!(state.n(), factors.len() as u64);
        if product == 0.0 {
            prop_assert_eq!(state.value(), 0.0);
        } else {
            prop_assert!((state.log_value() - product.ln()).abs() <= 1e-9);
        }
        prop_assert!((state.log_running_max() - running_max.ln()).abs() <= 1e-9);
    }

    /// The Catoni influence function is odd and non-decreasing.
    #[test]
    fn catoni_phi_odd_and_monotone(x in -50.0..50.0f64, y in -50.0..50.0f64) {
        prop_assert_eq!(catoni_phi(-x), -catoni_phi(x));
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(catoni_phi(lo) <= catoni_phi(hi));
    }

    /// E-lifting returns 1 before any observation and is monotone in the
    /// running maximum afterwards.
    #[test]
    fn elift_unit_at_start_and_monotone(
        spec in adjuster_spec(),
        factor in 1.0..40.0f64,
        extra in 1.0..40.0f64,
    ) {
        let fresh = EProcessState::new();
        prop_assert_eq!(elift(&fresh, &spec).unwrap(), 1.0);

        let mut small = EProcessState::new();
        small.apply_factor(factor).unwrap();
        let mut large = EProcessState::new();
        large.apply_factor(factor * extra).unwrap();
        prop_assert!(elift(&small, &spec).unwrap() <= elift(&large, &spec).unwrap());
    }

    /// Table adjusters evaluate to non-decreasing functions, including the
    /// extrapolated tail beyond the last knot.
    #[test]
    fn adjuster_table_eval_monotone(
        table in adjuster_table(),
        x in 1.0..40.0f64,
        y in 1.0..40.0f64,
    ) {
        let spec = AdjusterSpec::Custom(table);
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(adjuster_value(&spec, lo).unwrap() <= adjuster_value(&spec, hi).unwrap());
    }
}
