mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diqa_core::metrics::{
    average_precision, distortion_map, image_quality_accuracy, key_distortion_accuracy,
    mean_average_precision, perception_accuracy, region_map, MapMode,
};
use diqa_core::{DistortionBox, QualityWord};

fn bx(label: &str, x1: u32, y1: u32, x2: u32, y2: u32) -> DistortionBox {
    DistortionBox::new(label, x1, y1, x2, y2)
}

#[test]
fn region_map_on_crafted_images_matches_the_oracle() {
    let gts = vec![
        vec![bx("blur", 0, 0, 400, 400), bx("noise", 500, 500, 900, 900)],
        vec![bx("haze", 100, 100, 300, 300)],
        vec![bx("blur", 0, 0, 1000, 500), bx("blur", 0, 500, 1000, 1000)],
    ];
    let preds = vec![
        // one exact hit, one miss ranked first
        vec![bx("noise", 0, 600, 100, 700), bx("blur", 0, 0, 400, 400)],
        // label is wrong but region mAP ignores labels
        vec![bx("noise", 100, 100, 300, 300)],
        // duplicate on the same ground truth, then the other half
        vec![
            bx("blur", 0, 0, 1000, 500),
            bx("blur", 0, 0, 1000, 450),
            bx("blur", 0, 500, 1000, 1000),
        ],
    ];
    for threshold in [0.5, 0.75] {
        let want: f64 = preds
            .iter()
            .zip(&gts)
            .map(|(p, g)| common::oracle_ap(p, g, threshold, true))
            .sum::<f64>()
            / 3.0;
        let got = region_map(&preds, &gts, &[threshold]).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    // image 1: [miss, hit] of 2 gt -> 0.25; image 2: 1; image 3: [hit, dup, hit] -> 5/6
    let got = region_map(&preds, &gts, &[0.5]).unwrap();
    assert!((got - (0.25 + 1.0 + 5.0 / 6.0) / 3.0).abs() < 1e-12);
}

#[test]
fn region_map_is_at_least_label_aware_map_when_gts_are_separated() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..300 {
        // ground truths on disjoint columns so no prediction can match two
        let n = rng.random_range(1..=4u32);
        let gts: Vec<DistortionBox> = (0..n)
            .map(|i| {
                bx(
                    common::LABELS[rng.random_range(0..3)],
                    i * 250,
                    0,
                    i * 250 + 200,
                    1000,
                )
            })
            .collect();
        let preds: Vec<DistortionBox> = gts
            .iter()
            .filter(|_| rng.random_bool(0.8))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|g| {
                let label = if rng.random_bool(0.4) {
                    common::LABELS[rng.random_range(0..3)]
                } else {
                    &g.label
                };
                bx(label, g.x1, g.y1 + rng.random_range(0..300), g.x2, g.y2)
            })
            .collect();
        let agnostic = average_precision(&preds, &gts, 0.5, true);
        let aware = mean_average_precision(
            std::slice::from_ref(&preds),
            std::slice::from_ref(&gts),
            &[0.5],
            false,
            MapMode::PerImage,
        )
        .unwrap()
        .0;
        assert!(
            agnostic + 1e-12 >= aware,
            "{agnostic} < {aware} for {preds:?} / {gts:?}"
        );
    }
}

#[test]
fn distortion_map_averages_over_classes() {
    let gts = vec![
        vec![bx("blur", 0, 0, 500, 500)],
        vec![bx("noise", 0, 0, 500, 500)],
    ];
    // blur found, noise predicted with the wrong label
    let preds = vec![
        vec![bx("blur", 0, 0, 500, 500)],
        vec![bx("haze", 0, 0, 500, 500)],
    ];
    assert_eq!(distortion_map(&preds, &gts, &[0.5]).unwrap(), 0.5);
    let (value, per_class) =
        mean_average_precision(&preds, &gts, &[0.5], false, MapMode::Pooled).unwrap();
    assert_eq!(value, 0.5);
    assert_eq!(per_class["blur"], 1.0);
    assert_eq!(per_class["noise"], 0.0);
    assert!(!per_class.contains_key("haze"));
}

#[test]
fn key_distortion_needs_the_threshold_overlap() {
    let gt = vec![vec![bx("blur", 0, 0, 100, 100)]];
    // IoU 0.4: 40 x 100 overlap / (100 x 100)
    let near = vec![vec![bx("blur", 60, 0, 100, 100)]];
    let (acc, skipped) = key_distortion_accuracy(&near, &gt, 0.5).unwrap();
    assert_eq!((acc, skipped.len()), (0.0, 0));
    let (acc, _) = key_distortion_accuracy(&gt, &gt, 0.5).unwrap();
    assert_eq!(acc, 1.0);
    let (_, skipped) = key_distortion_accuracy(&[vec![]], &[vec![]], 0.5).unwrap();
    assert_eq!(skipped, [0]);
}

#[test]
fn accuracies_and_alignment() {
    assert_eq!(
        perception_accuracy(&[Some(1), None, Some(0)], &[1, 2, 2]).unwrap(),
        1.0 / 3.0
    );
    assert!(perception_accuracy(&[Some(1)], &[1, 2]).is_err());
    let words = [QualityWord::Good, QualityWord::Bad];
    assert_eq!(
        image_quality_accuracy(&[Some(QualityWord::Good), None], &words).unwrap(),
        0.5
    );
    assert!(region_map(&[vec![]], &[], &[0.5]).is_err());
}

#[test]
fn empty_ground_truth_conventions() {
    assert_eq!(average_precision(&[], &[], 0.5, true), 1.0);
    assert_eq!(
        average_precision(&[bx("blur", 0, 0, 10, 10)], &[], 0.5, true),
        0.0
    );
    assert_eq!(distortion_map(&[], &[], &[0.5]).unwrap(), 0.0);
}
