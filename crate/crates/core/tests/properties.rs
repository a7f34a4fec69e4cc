use std::collections::BTreeSet;

use inpaint_aug::cam::{cam_to_mask, union_masks, ActivationMap, InpaintMask};
use inpaint_aug::lkg::{select_inpaint_targets, PairScores, SelectionMode};
use inpaint_aug::pil::{epoch_view, pil_fraction, pil_included_count, PilSchedule};
use inpaint_aug::stats::HeadTailPartition;
use inpaint_aug::types::LabelVector;
use proptest::prelude::*;

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = InpaintMask> {
    proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| InpaintMask::new(h, w, bits).unwrap())
}

proptest! {
    #[test]
    fn pil_fraction_is_bounded_and_monotone(beta in 1e-4f64..5.0, n in 0i64..500) {
        let a = pil_fraction(n, beta).unwrap();
        let b = pil_fraction(n + 1, beta).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
    }

    #[test]
    fn epoch_views_form_a_prefix_chain(beta in 0.01f64..3.0, total in 0usize..300, seed in any::<u64>()) {
        let s = PilSchedule::new(beta, total, seed).unwrap();
        let mut prev = epoch_view(10, 0, &s).unwrap();
        prop_assert!(prev.augmented.is_empty());
        for n in 1..12 {
            let cur = epoch_view(10, n, &s).unwrap();
            prop_assert_eq!(cur.augmented.len(), pil_included_count(n, &s).unwrap());
            prop_assert_eq!(&cur.augmented[..prev.augmented.len()], &prev.augmented[..]);
            prev = cur;
        }
        let distinct: BTreeSet<usize> = prev.augmented.iter().copied().collect();
        prop_assert_eq!(distinct.len(), prev.augmented.len());
    }

    #[test]
    fn union_is_pixelwise_or(masks in proptest::collection::vec(mask_strategy(8, 8), 1..6)) {
        let u = union_masks(&masks).unwrap();
        for i in 0..64 {
            prop_assert_eq!(u.bits()[i], masks.iter().any(|m| m.bits()[i]));
        }
    }

    #[test]
    fn higher_cam_threshold_gives_smaller_mask(
        values in proptest::collection::vec(0.0f32..=1.0, 36),
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
        radius in 0usize..3,
    ) {
        let map = ActivationMap::new(6, 6, values, 0).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = cam_to_mask(&map, lo, radius).unwrap();
        let b = cam_to_mask(&map, hi, radius).unwrap();
        prop_assert!(b.bits().iter().zip(a.bits()).all(|(x, y)| !*x || *y));
    }

    #[test]
    fn targets_and_retained_partition_present_heads(
        labels in proptest::collection::vec(any::<bool>(), 6),
        grid in proptest::collection::vec(0usize..4, 36),
        threshold in 0.0f64..=1.0,
        argmax in any::<bool>(),
    ) {
        let partition = HeadTailPartition::from_tail(6, [4, 5].into()).unwrap();
        let values = [0.0, 0.3, 0.7, 1.0];
        let mut scores = PairScores::new();
        for (i, g) in grid.iter().enumerate() {
            scores.insert((i / 6, i % 6), values[*g]);
        }
        let mode = if argmax { SelectionMode::Argmax } else { SelectionMode::Threshold };
        let lv = LabelVector::new(labels.clone());
        let d = select_inpaint_targets(&lv, &partition, &scores, threshold, mode).unwrap();
        let heads: BTreeSet<usize> = (0..4).filter(|i| labels[*i]).collect();
        prop_assert!(d.inpaint_targets.is_disjoint(&d.retained_heads));
        let all: BTreeSet<usize> = d.inpaint_targets.union(&d.retained_heads).copied().collect();
        prop_assert_eq!(all, heads);
        if argmax {
            prop_assert!(d.retained_heads.len() <= 1);
        }
    }
}
