use proptest::prelude::*;
use threatlens::eval::{confusion, f1_score, metrics, ConfusionMatrix};
use threatlens::Label;

fn labels() -> impl Strategy<Value = Vec<Label>> {
    prop::collection::vec(any::<bool>().prop_map(Label::from_bool), 1..200)
}

#[test]
fn hand_computed_confusion() {
    use Label::{Irrelevant as N, Relevant as R};
    let pred = [R, R, N, N, R, N];
    let gold = [R, N, R, N, R, N];
    let cm = confusion(&pred, &gold).unwrap();
    assert_eq!((cm.tp, cm.fp, cm.fn_, cm.tn), (2, 1, 1, 2));
    let m = metrics(&cm);
    assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn length_mismatch_is_an_error() {
    assert!(confusion(&[Label::Relevant], &[]).is_err());
}

proptest! {
    #[test]
    fn perfect_predictions_score_one(g in labels()) {
        prop_assume!(g.contains(&Label::Relevant));
        let m = metrics(&confusion(&g, &g).unwrap());
        prop_assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn harmonic_mean_sandwich(p in 0.001f64..=1.0, r in 0.001f64..=1.0) {
        let f = f1_score(p, r);
        let lo = p.min(r);
        prop_assert!(f <= 2.0 * lo + 1e-12);
        prop_assert!(f >= lo - 1e-12);
        prop_assert!(f <= p.max(r) + 1e-12);
    }

    #[test]
    fn swapping_fp_and_fn_swaps_precision_and_recall(
        tp in 0usize..500, fp in 0usize..500, fn_ in 0usize..500, tn in 0usize..500,
    ) {
        let a = metrics(&ConfusionMatrix { tp, fp, fn_, tn });
        let b = metrics(&ConfusionMatrix { tp, fp: fn_, fn_: fp, tn });
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert_eq!(a.f1, b.f1);
    }
}
