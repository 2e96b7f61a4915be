//! Confusion matrix and IoU metrics.

use fastscnn::eval::*;
use fastscnn::LabelMap;
use proptest::prelude::*;

/// Independent IoU: count pixels directly from the label pairs.
fn pixel_iou(pred: &[u8], gt: &[u8], k: usize) -> Vec<Option<f64>> {
    (0..k as u8)
        .map(|c| {
            let pairs = pred.iter().zip(gt).filter(|(_, &g)| g != 255);
            let (mut inter, mut union) = (0u64, 0u64);
            for (&p, &g) in pairs {
                inter += (p == c && g == c) as u64;
                union += (p == c || g == c) as u64;
            }
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect()
}

#[test]
fn two_class_example() {
    let cm = ConfusionMatrix::from_counts(&[vec![1, 1], vec![0, 2]]).unwrap();
    let r = miou(&cm);
    assert_eq!(r.per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
    assert!((r.mean - 0.58333).abs() < 1e-5);
    assert!((r.mean - 7.0 / 12.0).abs() < 1e-12);
}

#[test]
fn ignore_pixels_change_nothing() {
    let mut cm = ConfusionMatrix::from_counts(&[vec![4, 1], vec![2, 3]]).unwrap();
    let before = cm.clone();
    let pred = LabelMap::new(1, 2, 3, vec![0, 1, 1, 0, 0, 1]).unwrap();
    cm.accumulate(&pred, &LabelMap::filled(1, 2, 3, 255)).unwrap();
    assert_eq!(cm, before);
}

#[test]
fn perfect_prediction_scores_one() {
    let gt = LabelMap::new(1, 2, 4, vec![0, 1, 2, 3, 3, 2, 1, 0]).unwrap();
    let mut cm = ConfusionMatrix::new(4);
    cm.accumulate(&gt, &gt).unwrap();
    assert_eq!(cm.trace(), cm.total());
    assert_eq!(miou(&cm).mean, 1.0);
    assert_eq!(cm.pixel_accuracy(), 1.0);
}

#[test]
fn out_of_range_prediction_is_rejected() {
    let mut cm = ConfusionMatrix::new(3);
    let gt = LabelMap::new(1, 1, 2, vec![0, 1]).unwrap();
    let pred = LabelMap::new(1, 1, 2, vec![0, 7]).unwrap();
    assert!(cm.accumulate(&pred, &gt).is_err());
}

#[test]
fn single_category_is_perfect() {
    let cm = ConfusionMatrix::from_counts(&[vec![5, 2, 1], vec![3, 4, 0], vec![0, 6, 2]]).unwrap();
    let map = CategoryMap { names: vec!["all".into()], class_to_category: vec![Some(0); 3] };
    assert_eq!(category_miou(&cm, &map).unwrap(), 1.0);
}

#[test]
fn four_classes_into_two_categories() {
    let rows = [vec![3, 1, 2, 0], vec![0, 4, 1, 1], vec![2, 0, 5, 1], vec![1, 1, 0, 6]];
    let cm = ConfusionMatrix::from_counts(&rows).unwrap();
    let map = CategoryMap { names: vec!["a".into(), "b".into()], class_to_category: vec![Some(0), Some(0), Some(1), Some(1)] };
    // by hand: a→a = 3+1+0+4 = 8, a→b = 2+0+1+1 = 4, b→a = 2+0+1+1 = 4, b→b = 5+1+0+6 = 12
    assert_eq!(map.collapse(&cm).unwrap().rows(), vec![vec![8, 4], vec![4, 12]]);
    let want = (8.0 / 16.0 + 12.0 / 20.0) / 2.0;
    assert!((category_miou(&cm, &map).unwrap() - want).abs() < 1e-12);
}

#[test]
fn cityscapes_groups() {
    let m = CategoryMap::cityscapes();
    let of = |name: &str| m.class_to_category[CITYSCAPES_CLASSES.iter().position(|c| *c == name).unwrap()].unwrap();
    assert_eq!(m.names[of("road")], "flat");
    assert_eq!(m.names[of("traffic sign")], "object");
    assert_eq!(m.names[of("terrain")], "nature");
    assert_eq!(m.names[of("rider")], "human");
    assert_eq!(m.names[of("bicycle")], "vehicle");
}

#[test]
fn report_has_summary_keys() {
    let cm = ConfusionMatrix::from_counts(&[vec![1, 1], vec![0, 2]]).unwrap();
    let names = vec!["a".to_string(), "b".to_string()];
    let text = format_report(&cm, &names, Some(&CategoryMap::identity(2))).unwrap();
    assert!(text.contains("miou_class=0.583333"), "{text}");
    assert!(text.contains("miou_category=0.583333"));
    assert!(text.contains("pixel_accuracy=0.750000"));
}

fn label_pair(k: u8) -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (1usize..120).prop_flat_map(move |n| {
        let gt = prop::collection::vec(prop_oneof![9 => 0..k, 1 => Just(255u8)], n);
        (prop::collection::vec(0..k, n), gt)
    })
}

fn matrix(k: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
    prop::collection::vec(prop::collection::vec(0u64..50, k), k)
}

fn acc(pred: &[u8], gt: &[u8], k: usize) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(k);
    let n = pred.len();
    cm.accumulate(&LabelMap::new(1, 1, n, pred.to_vec()).unwrap(), &LabelMap::new(1, 1, n, gt.to_vec()).unwrap()).unwrap();
    cm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// The matrix route agrees with direct pixel counting.
    #[test]
    fn matches_pixel_counting((pred, gt) in label_pair(5)) {
        let r = miou(&acc(&pred, &gt, 5));
        let want = pixel_iou(&pred, &gt, 5);
        for (a, b) in r.per_class.iter().zip(&want) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false, "{:?} vs {:?}", r.per_class, want),
            }
        }
    }

    /// Relabelling classes permutes per-class IoU and keeps the mean.
    #[test]
    fn permutation_equivariance((pred, gt) in label_pair(4), perm in Just(vec![0u8, 1, 2, 3]).prop_shuffle()) {
        let map = |v: &[u8]| v.iter().map(|&l| if l == 255 { 255 } else { perm[l as usize] }).collect::<Vec<_>>();
        let a = miou(&acc(&pred, &gt, 4));
        let b = miou(&acc(&map(&pred), &map(&gt), 4));
        for c in 0..4 {
            prop_assert_eq!(a.per_class[c], b.per_class[perm[c] as usize]);
        }
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
    }

    /// Accumulating in pieces equals accumulating at once.
    #[test]
    fn accumulation_splits((pred, gt) in label_pair(6), cut in 0.0f64..1.0) {
        let at = (pred.len() as f64 * cut) as usize;
        let whole = acc(&pred, &gt, 6);
        if at > 0 && at < pred.len() {
            let mut parts = acc(&pred[..at], &gt[..at], 6);
            parts.merge(&acc(&pred[at..], &gt[at..], 6)).unwrap();
            prop_assert_eq!(parts, whole);
        }
    }

    /// One category per class reproduces the class metric.
    #[test]
    fn identity_categories(rows in matrix(6)) {
        let cm = ConfusionMatrix::from_counts(&rows).unwrap();
        prop_assert_eq!(category_miou(&cm, &CategoryMap::identity(6)).unwrap(), miou(&cm).mean);
    }

    /// IoU values stay in [0, 1].
    #[test]
    fn bounded(rows in matrix(5)) {
        let r = miou(&ConfusionMatrix::from_counts(&rows).unwrap());
        prop_assert!(r.per_class.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((0.0..=1.0).contains(&r.mean));
    }
}
