use proptest::prelude::*;
use tinycd::metrics::{confusion, derive_metrics, f1_from_pr, iou_from_f1, threshold};
use tinycd::{ConfusionCounts, Tensor};

/// Counts whose precision and recall are exactly `p/10000` and `r/10000`.
fn counts_for(p: u64, r: u64) -> ConfusionCounts {
    let tp = p * r;
    ConfusionCounts { tp, fp: r * 10_000 - tp, fn_: p * 10_000 - tp, tn: 10u64.pow(10) }
}

#[test]
fn reference_score_arithmetic() {
    // (precision, recall, f1, iou) in percent
    for (p, r, f1, iou) in [(9268, 8947, 91.05, 83.57), (9172, 9176, 91.74, 84.74)] {
        let m = derive_metrics(counts_for(p, r)).unwrap();
        let (pf, rf) = (p as f64 / 1e4, r as f64 / 1e4);
        assert_eq!(m.precision, pf);
        assert_eq!(m.recall, rf);
        assert!((100.0 * m.f1 - f1).abs() <= 0.005, "{}", 100.0 * m.f1);
        assert!((m.iou - pf * rf / (pf + rf - pf * rf)).abs() < 1e-15);
        let via_pr = f1_from_pr(m.precision, m.recall);
        assert!((via_pr - m.f1).abs() < 1e-12);
        assert!((iou_from_f1(via_pr) - m.iou).abs() < 1e-12);

        // The reference precision and recall are rounded to 0.01 points;
        // somewhere in that box the reference IoU is reproduced to 0.005.
        let hit = (0..=10).any(|i| {
            (0..=10).any(|j| {
                let p = (p as f64 - 0.5 + 0.1 * i as f64) / 1e4;
                let r = (r as f64 - 0.5 + 0.1 * j as f64) / 1e4;
                let f = f1_from_pr(p, r);
                (100.0 * f - f1).abs() <= 0.005 && (100.0 * iou_from_f1(f) - iou).abs() <= 0.005
            })
        });
        assert!(hit, "{p}/{r}");
    }
    // Taken literally, 92.68/89.47 gives an IoU just outside 0.005 of 83.57.
    let m = derive_metrics(counts_for(9268, 8947)).unwrap();
    assert!((100.0 * m.iou - 83.5649).abs() < 1e-4);
}

fn arb_counts() -> impl Strategy<Value = ConfusionCounts> {
    (0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000)
        .prop_filter("some pixels", |&(a, b, c, d)| a + b + c + d > 0)
        .prop_map(|(tp, tn, fp, fn_)| ConfusionCounts { tp, tn, fp, fn_ })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn f1_and_iou_agree(c in arb_counts()) {
        let m = derive_metrics(c).unwrap();
        prop_assert!((m.f1 - 2.0 * m.iou / (1.0 + m.iou)).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn scores_are_bounded(c in arb_counts()) {
        let m = derive_metrics(c).unwrap();
        for v in [m.precision, m.recall, m.f1, m.iou, m.oa] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.iou <= m.f1);
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
        prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-15);
    }

    #[test]
    fn counts_add_over_disjoint_batches(
        a in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..64),
        b in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..64),
    ) {
        let tensors = |v: &[(bool, bool)]| {
            let p = v.iter().map(|&(p, _)| if p { 1.0 } else { 0.0 }).collect();
            let g = v.iter().map(|&(_, g)| if g { 1.0 } else { 0.0 }).collect();
            (Tensor::<f64>::from_vec([1, 1, 1, v.len()], p).unwrap(), Tensor::from_vec([1, 1, 1, v.len()], g).unwrap())
        };
        let (pa, ga) = tensors(&a);
        let (pb, gb) = tensors(&b);
        let joined: Vec<_> = a.iter().chain(&b).copied().collect();
        let (pj, gj) = tensors(&joined);
        let sum = confusion(&pa, &ga).unwrap() + confusion(&pb, &gb).unwrap();
        prop_assert_eq!(sum, confusion(&pj, &gj).unwrap());
        prop_assert_eq!(sum.total(), joined.len() as u64);
    }

    #[test]
    fn recovering_a_missed_pixel_never_lowers_recall(c in arb_counts()) {
        prop_assume!(c.fn_ > 0);
        let before = derive_metrics(c).unwrap();
        let after = derive_metrics(ConfusionCounts { tp: c.tp + 1, fn_: c.fn_ - 1, ..c }).unwrap();
        prop_assert!(after.recall >= before.recall);
        prop_assert!(after.f1 >= before.f1);
    }
}

proptest! {
    #[test]
    fn lowering_the_threshold_never_lowers_recall(
        px in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..100),
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
    ) {
        // With no positives recall is 1 only when nothing is predicted, so
        // the property needs at least one.
        prop_assume!(px.iter().any(|&(_, g)| g));
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let n = px.len();
        let p = Tensor::<f64>::from_vec([1, 1, 1, n], px.iter().map(|&(p, _)| p).collect()).unwrap();
        let g = Tensor::from_vec([1, 1, 1, n], px.iter().map(|&(_, g)| if g { 1.0 } else { 0.0 }).collect()).unwrap();
        let recall = |t| derive_metrics(confusion(&threshold(&p, t), &g).unwrap()).unwrap().recall;
        prop_assert!(recall(lo) >= recall(hi));
    }
}
