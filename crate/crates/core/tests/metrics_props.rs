mod common;

use common::brute_force_metrics;
use paaconv::metrics::ConfusionMatrix;
use proptest::prelude::*;

fn labelings() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..=13).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c, 0..c), 1..400)))
}

fn matrix(c: usize, pairs: &[(usize, usize)]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(c);
    let truth: Vec<Option<usize>> = pairs.iter().map(|p| Some(p.0)).collect();
    let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    cm.accumulate(&truth, &pred).unwrap();
    cm
}

proptest! {
    #[test]
    fn matches_point_by_point_count((c, pairs) in labelings()) {
        let cm = matrix(c, &pairs);
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let (oa, macc, miou) = brute_force_metrics(&truth, &pred, c);
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        prop_assert_eq!(cm.overall_accuracy().unwrap(), oa);
        prop_assert_eq!(cm.mean_class_accuracy().unwrap().value, macc);
        prop_assert_eq!(cm.mean_iou().unwrap().value, miou);
    }

    #[test]
    fn permuting_pairs_changes_nothing((c, pairs) in labelings(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(matrix(c, &pairs), matrix(c, &shuffled));
    }

    #[test]
    fn iou_bounded_by_accuracy((c, pairs) in labelings()) {
        let cm = matrix(c, &pairs);
        for (acc, iou) in cm.class_accuracies().into_iter().zip(cm.class_ious()) {
            if let (Some(a), Some(i)) = (acc, iou) {
                prop_assert!((0.0..=a).contains(&i));
            }
        }
        let miou = cm.mean_iou().unwrap().value;
        prop_assert!((0.0..=1.0).contains(&miou));
    }

    #[test]
    fn merging_halves_equals_whole((c, pairs) in labelings(), cut in 0usize..400) {
        let cut = cut.min(pairs.len());
        let mut left = matrix(c, &pairs[..cut]);
        left.merge(&matrix(c, &pairs[cut..])).unwrap();
        prop_assert_eq!(left, matrix(c, &pairs));
    }
}
