use oddshts::hierarchy::{aggregate, validate, Hierarchy, Level, MidNode, SeriesFrame};
use proptest::prelude::*;

fn build(sizes: &[usize], len: usize, seed: u64) -> (Hierarchy, SeriesFrame) {
    let mut mids = Vec::new();
    let mut cols = Vec::new();
    let mut k = 0u64;
    for (i, &n) in sizes.iter().enumerate() {
        let children: Vec<String> = (0..n).map(|j| format!("b{i}_{j}")).collect();
        for c in &children {
            k += 1;
            let col = (0..len as u64)
                .map(|t| ((seed.wrapping_mul(31).wrapping_add(k * 17 + t * 13)) % 97) as f64 * 0.25)
                .collect();
            cols.push((c.clone(), col));
        }
        mids.push(MidNode::new(format!("M{i}"), children));
    }
    (Hierarchy::new(mids).unwrap(), SeriesFrame::new(cols).unwrap())
}

proptest! {
    #[test]
    fn aggregates_always_validate(sizes in prop::collection::vec(1usize..6, 1..6), len in 1usize..20, seed: u64) {
        let (h, frame) = build(&sizes, len, seed);
        let lv = aggregate(&h, &frame).unwrap();
        prop_assert!(validate(&h, &lv).is_consistent());
        // direct sums, independent of the aggregation code
        for t in 0..len {
            let total: f64 = frame.iter().map(|(_, c)| c[t]).sum();
            prop_assert!((lv.top()[t] - total).abs() <= 1e-9);
        }
    }

    #[test]
    fn mid_order_does_not_change_top(sizes in prop::collection::vec(1usize..6, 2..6), seed: u64, rot in 0usize..6) {
        let (h, frame) = build(&sizes, 12, seed);
        let n = h.mids().len();
        let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).rev().collect();
        let permuted = h.with_mid_order(&order).unwrap();
        let a = aggregate(&h, &frame).unwrap();
        let b = aggregate(&permuted, &frame).unwrap();
        for (x, y) in a.top().iter().zip(b.top()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        for m in h.mids() {
            prop_assert_eq!(a.node(Level::Mid, &m.id), b.node(Level::Mid, &m.id));
        }
    }

    #[test]
    fn perturbing_a_mid_is_detected(sizes in prop::collection::vec(1usize..5, 1..5), seed: u64, t in 0usize..8, bump in 0.01f64..10.0) {
        let (h, frame) = build(&sizes, 8, seed);
        let mut lv = aggregate(&h, &frame).unwrap();
        let id = h.mids()[0].id.clone();
        lv.mid_mut(&id).unwrap()[t] += bump;
        let report = validate(&h, &lv);
        prop_assert!(!report.is_consistent());
        prop_assert!(report.violations.iter().any(|v| v.t == t));
    }
}
