//! The six leaderboard metrics and their sum.
//!
//! Model responses carry no confidences, so a prediction's rank is its
//! position in the response. Matching is greedy in rank order: each
//! prediction takes the still-unmatched ground-truth box with the highest IoU
//! at or above the threshold (ties go to the earlier box). AP is the area
//! under the all-point interpolated precision/recall curve.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levels::{QualityScale, QualityWord};
use crate::model::DistortionBox;

/// Intersection over union of two valid boxes.
pub fn iou(a: &DistortionBox, b: &DistortionBox) -> f64 {
    let iw = a.x2.min(b.x2).saturating_sub(a.x1.max(b.x1));
    let ih = a.y2.min(b.y2).saturating_sub(a.y1.max(b.y1));
    let inter = u64::from(iw) * u64::from(ih);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Greedy rank-order matching. Entry `i` is the ground-truth index matched by
/// prediction `i`, if any.
pub fn match_predictions(
    preds: &[DistortionBox],
    gts: &[DistortionBox],
    iou_threshold: f64,
    class_agnostic: bool,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    preds
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || (!class_agnostic && gt.label != p.label) {
                    continue;
                }
                let overlap = iou(p, gt);
                if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            let (g, _) = best?;
            taken[g] = true;
            Some(g)
        })
        .collect()
}

/// All-point interpolated AP from a ranked hit sequence.
pub fn ap_from_hits(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if hits.is_empty() { 1.0 } else { 0.0 };
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (rank, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    // monotone envelope, right to left
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

pub fn average_precision(
    preds: &[DistortionBox],
    gts: &[DistortionBox],
    iou_threshold: f64,
    class_agnostic: bool,
) -> f64 {
    let hits: Vec<bool> = match_predictions(preds, gts, iou_threshold, class_agnostic)
        .iter()
        .map(Option::is_some)
        .collect();
    ap_from_hits(&hits, gts.len())
}

/// How per-record detections are aggregated into a mean AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapMode {
    /// AP per record, averaged over records.
    PerImage,
    /// Predictions pooled across records (ordered by rank, then record), AP
    /// per distortion class, averaged over classes present in ground truth.
    Pooled,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn check_aligned<A, B>(preds: &[A], gts: &[B]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Alignment(format!(
            "{} prediction sets for {} ground-truth sets",
            preds.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Mean AP over thresholds with an explicit aggregation mode. Returns the
/// score and, for pooled label-aware scoring, the per-class AP averaged over
/// thresholds.
pub fn mean_average_precision(
    pred_sets: &[Vec<DistortionBox>],
    gt_sets: &[Vec<DistortionBox>],
    thresholds: &[f64],
    class_agnostic: bool,
    mode: MapMode,
) -> Result<(f64, BTreeMap<String, f64>)> {
    check_aligned(pred_sets, gt_sets)?;
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one IoU threshold is required".into(),
        ));
    }
    let mut per_class: BTreeMap<String, f64> = BTreeMap::new();
    let mut by_threshold = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let score = match mode {
            MapMode::PerImage => {
                let aps: Vec<f64> = pred_sets
                    .par_iter()
                    .zip(gt_sets)
                    .map(|(p, g)| average_precision(p, g, t, class_agnostic))
                    .collect();
                mean(&aps)
            }
            MapMode::Pooled => {
                let classes = pooled_class_ap(pred_sets, gt_sets, t, class_agnostic);
                if gt_sets.is_empty() {
                    0.0
                } else if classes.is_empty() {
                    let any_pred = pred_sets.iter().any(|p| !p.is_empty());
                    if any_pred {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    let values: Vec<f64> = classes.values().copied().collect();
                    if !class_agnostic {
                        for (c, ap) in classes {
                            *per_class.entry(c).or_default() += ap / thresholds.len() as f64;
                        }
                    }
                    mean(&values)
                }
            }
        };
        by_threshold.push(score);
    }
    Ok((mean(&by_threshold), per_class))
}

fn pooled_class_ap(
    pred_sets: &[Vec<DistortionBox>],
    gt_sets: &[Vec<DistortionBox>],
    threshold: f64,
    class_agnostic: bool,
) -> BTreeMap<String, f64> {
    const ALL: &str = "*";
    let class_of = |b: &DistortionBox| -> String {
        if class_agnostic {
            ALL.to_string()
        } else {
            b.label.clone()
        }
    };
    let classes: BTreeSet<String> = gt_sets.iter().flatten().map(class_of).collect();
    classes
        .into_par_iter()
        .map(|class| {
            // (rank, record, hit)
            let mut ranked: Vec<(usize, usize, bool)> = Vec::new();
            let mut num_gt = 0;
            for (record, (preds, gts)) in pred_sets.iter().zip(gt_sets).enumerate() {
                let p: Vec<(usize, DistortionBox)> = preds
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| class_of(b) == class)
                    .map(|(rank, b)| (rank, b.clone()))
                    .collect();
                let g: Vec<DistortionBox> = gts
                    .iter()
                    .filter(|b| class_of(b) == class)
                    .cloned()
                    .collect();
                num_gt += g.len();
                let boxes: Vec<DistortionBox> = p.iter().map(|(_, b)| b.clone()).collect();
                let matches = match_predictions(&boxes, &g, threshold, class_agnostic);
                for ((rank, _), m) in p.iter().zip(matches) {
                    ranked.push((*rank, record, m.is_some()));
                }
            }
            ranked.sort_by_key(|&(rank, record, _)| (rank, record));
            let hits: Vec<bool> = ranked.iter().map(|&(_, _, h)| h).collect();
            (class, ap_from_hits(&hits, num_gt))
        })
        .collect()
}

/// Class-agnostic AP per image, averaged over images, then thresholds.
pub fn region_map(
    pred_sets: &[Vec<DistortionBox>],
    gt_sets: &[Vec<DistortionBox>],
    thresholds: &[f64],
) -> Result<f64> {
    mean_average_precision(pred_sets, gt_sets, thresholds, true, MapMode::PerImage).map(|r| r.0)
}

/// Label-aware AP per class over the pooled dataset, macro-averaged over
/// classes present in ground truth, then over thresholds.
pub fn distortion_map(
    pred_sets: &[Vec<DistortionBox>],
    gt_sets: &[Vec<DistortionBox>],
    thresholds: &[f64],
) -> Result<f64> {
    mean_average_precision(pred_sets, gt_sets, thresholds, false, MapMode::Pooled).map(|r| r.0)
}

pub fn perception_accuracy(choices: &[Option<usize>], gold: &[usize]) -> Result<f64> {
    check_aligned(choices, gold)?;
    let correct = choices
        .iter()
        .zip(gold)
        .filter(|(c, g)| **c == Some(**g))
        .count();
    Ok(if gold.is_empty() {
        0.0
    } else {
        correct as f64 / gold.len() as f64
    })
}

/// Mean per-record fraction of ground-truth key distortions recovered by a
/// same-label prediction with IoU at or above the threshold. Records without
/// ground-truth keys are skipped; their indices are returned.
pub fn key_distortion_accuracy(
    pred_keys: &[Vec<DistortionBox>],
    gt_keys: &[Vec<DistortionBox>],
    iou_threshold: f64,
) -> Result<(f64, Vec<usize>)> {
    check_aligned(pred_keys, gt_keys)?;
    let mut skipped = Vec::new();
    let mut scores = Vec::new();
    for (i, (p, g)) in pred_keys.iter().zip(gt_keys).enumerate() {
        if g.is_empty() {
            skipped.push(i);
            continue;
        }
        let matched = match_predictions(p, g, iou_threshold, false)
            .iter()
            .filter(|m| m.is_some())
            .count();
        scores.push(matched as f64 / g.len() as f64);
    }
    Ok((mean(&scores), skipped))
}

pub fn image_quality_accuracy(
    pred_words: &[Option<QualityWord>],
    gt_words: &[QualityWord],
) -> Result<f64> {
    check_aligned(pred_words, gt_words)?;
    let correct = pred_words
        .iter()
        .zip(gt_words)
        .filter(|(p, g)| **p == Some(**g))
        .count();
    Ok(if gt_words.is_empty() {
        0.0
    } else {
        correct as f64 / gt_words.len() as f64
    })
}

/// Converts raw predicted level strings to quality words. Labels of a finer
/// scale are refused: they must be mapped back before scoring.
pub fn quality_words_from_labels(
    labels: &[Option<String>],
) -> (Vec<Option<QualityWord>>, Vec<String>) {
    let mut diagnostics = Vec::new();
    let words = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let l = l.as_deref()?;
            match l.parse::<QualityWord>() {
                Ok(w) => Some(w),
                Err(_) => {
                    diagnostics.push(format!(
                        "prediction {i}: {l:?} is not a five-level quality word; map it back first"
                    ));
                    None
                }
            }
        })
        .collect();
    (words, diagnostics)
}

/// Maps ground-truth labels of `scale` back to quality words.
pub fn map_back_labels(labels: &[String], scale: &QualityScale) -> Result<Vec<QualityWord>> {
    labels.iter().map(|l| scale.map_back(l)).collect()
}

/// The six component metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub perception_accuracy: f64,
    pub region_map: f64,
    pub distortion_map: f64,
    pub description_map: f64,
    pub key_distortion_acc: f64,
    pub image_quality_accuracy: f64,
}

impl ScoreComponents {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.perception_accuracy,
            self.region_map,
            self.distortion_map,
            self.description_map,
            self.key_distortion_acc,
            self.image_quality_accuracy,
        ]
    }
}

/// Unweighted sum of the six components.
pub fn final_score(components: &ScoreComponents) -> f64 {
    components.as_array().iter().sum()
}

/// Record tallies behind a report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub region_records: usize,
    pub distortion_records: usize,
    pub perception_records: usize,
    pub description_records: usize,
    pub key_distortion_skipped: usize,
    pub missing_predictions: usize,
    pub unmatched_predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    #[serde(flatten)]
    pub components: ScoreComponents,
    pub final_score: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    pub counts: ScoreCounts,
}

impl ScoreReport {
    pub fn new(
        components: ScoreComponents,
        per_class_ap: BTreeMap<String, f64>,
        counts: ScoreCounts,
    ) -> Self {
        Self {
            final_score: final_score(&components),
            components,
            per_class_ap,
            counts,
        }
    }

    /// Fixed-width text table, one metric per row.
    pub fn to_table(&self) -> String {
        let c = &self.components;
        let rows = [
            ("Final Score", self.final_score),
            ("Perception Accuracy", c.perception_accuracy),
            ("Region mAP", c.region_map),
            ("Distortion mAP", c.distortion_map),
            ("Description mAP", c.description_map),
            ("Key Distortion Accuracy", c.key_distortion_acc),
            ("Image Quality Accuracy", c.image_quality_accuracy),
        ];
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name:<24} {value:>8.4}\n"));
        }
        if !self.per_class_ap.is_empty() {
            out.push_str("\nDistortion AP per class\n");
            for (label, ap) in &self.per_class_ap {
                out.push_str(&format!("  {label:<22} {ap:>8.4}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(label: &str, x1: u32, y1: u32, x2: u32, y2: u32) -> DistortionBox {
        DistortionBox::new(label, x1, y1, x2, y2)
    }

    #[test]
    fn iou_examples() {
        let a = b("blur", 0, 0, 100, 100);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b("blur", 200, 0, 300, 100)), 0.0);
        assert_eq!(iou(&a, &b("blur", 100, 0, 200, 100)), 0.0); // touching edge
        assert!((iou(&a, &b("blur", 50, 0, 150, 100)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ap_examples() {
        let gt = vec![b("blur", 0, 0, 100, 100)];
        assert_eq!(average_precision(&gt, &gt, 0.5, false), 1.0);
        let preds = vec![b("blur", 500, 500, 600, 600), gt[0].clone()];
        assert_eq!(average_precision(&preds, &gt, 0.5, false), 0.5);
        assert_eq!(average_precision(&[], &gt, 0.5, false), 0.0);
        assert_eq!(average_precision(&[], &[], 0.5, false), 1.0);
        assert_eq!(average_precision(&gt, &[], 0.5, false), 0.0);
        // wrong label only matches when class agnostic
        let noise = vec![b("noise", 0, 0, 100, 100)];
        assert_eq!(average_precision(&noise, &gt, 0.5, false), 0.0);
        assert_eq!(average_precision(&noise, &gt, 0.5, true), 1.0);
    }

    #[test]
    fn greedy_prefers_highest_iou() {
        let gts = vec![b("blur", 0, 0, 100, 100), b("blur", 10, 0, 110, 100)];
        let m = match_predictions(&[b("blur", 10, 0, 110, 100)], &gts, 0.5, false);
        assert_eq!(m, [Some(1)]);
    }

    #[test]
    fn region_map_examples() {
        let gts = vec![
            vec![b("blur", 0, 0, 100, 100)],
            vec![b("noise", 5, 5, 50, 50)],
        ];
        assert_eq!(region_map(&gts, &gts, &[0.5]).unwrap(), 1.0);
        assert_eq!(region_map(&[vec![], vec![]], &gts, &[0.5]).unwrap(), 0.0);
        assert!(matches!(
            region_map(&[vec![]], &gts, &[0.5]),
            Err(Error::Alignment(_))
        ));
        assert!(region_map(&gts, &gts, &[]).is_err());
    }

    #[test]
    fn distortion_map_examples() {
        let gts = vec![
            vec![b("blur", 0, 0, 100, 100)],
            vec![b("noise", 5, 5, 50, 50)],
        ];
        let relabeled: Vec<Vec<DistortionBox>> = gts
            .iter()
            .map(|s| {
                s.iter()
                    .map(|x| DistortionBox {
                        label: "haze".into(),
                        ..x.clone()
                    })
                    .collect()
            })
            .collect();
        assert_eq!(distortion_map(&relabeled, &gts, &[0.5]).unwrap(), 0.0);
        let single = vec![
            vec![b("blur", 0, 0, 100, 100)],
            vec![b("blur", 5, 5, 50, 50)],
        ];
        assert_eq!(distortion_map(&single, &single, &[0.5]).unwrap(), 1.0);
        let half = vec![gts[0].clone(), vec![]];
        assert_eq!(distortion_map(&half, &gts, &[0.5]).unwrap(), 0.5);
        let (_, per_class) =
            mean_average_precision(&half, &gts, &[0.5], false, MapMode::Pooled).unwrap();
        assert_eq!(per_class["blur"], 1.0);
        assert_eq!(per_class["noise"], 0.0);
    }

    #[test]
    fn map_modes_agree_on_perfect_input() {
        let gts = vec![vec![
            b("blur", 0, 0, 100, 100),
            b("noise", 200, 200, 300, 300),
        ]];
        for agnostic in [true, false] {
            for mode in [MapMode::PerImage, MapMode::Pooled] {
                let (s, _) =
                    mean_average_precision(&gts, &gts, &[0.5, 0.75], agnostic, mode).unwrap();
                assert_eq!(s, 1.0);
            }
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(
            perception_accuracy(&[Some(1), Some(0)], &[1, 0]).unwrap(),
            1.0
        );
        assert_eq!(perception_accuracy(&[None, None], &[1, 0]).unwrap(), 0.0);
        assert!(perception_accuracy(&[None], &[1, 0]).is_err());

        let fair = [QualityWord::Fair; 3];
        assert_eq!(
            image_quality_accuracy(&[Some(QualityWord::Fair); 3], &fair).unwrap(),
            1.0
        );
        assert!(image_quality_accuracy(&[], &fair).is_err());
        let (words, diags) =
            quality_words_from_labels(&[Some("c".into()), Some("Fair".into()), None]);
        assert_eq!(words, [None, Some(QualityWord::Fair), None]);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].contains("map it back"));
    }

    #[test]
    fn key_distortion_examples() {
        let gt = vec![vec![b("blur", 0, 0, 100, 100)]];
        assert_eq!(key_distortion_accuracy(&gt, &gt, 0.5).unwrap().0, 1.0);
        let wrong_label = vec![vec![b("noise", 0, 0, 100, 100)]];
        assert_eq!(
            key_distortion_accuracy(&wrong_label, &gt, 0.5).unwrap().0,
            0.0
        );
        // 0..100 vs 0..40 on a full-height strip: IoU 0.4
        let strip = vec![vec![b("blur", 0, 0, 100, 1000)]];
        let pred = vec![vec![b("blur", 0, 0, 40, 1000)]];
        assert!((iou(&pred[0][0], &strip[0][0]) - 0.4).abs() < 1e-15);
        assert_eq!(key_distortion_accuracy(&pred, &strip, 0.5).unwrap().0, 0.0);
        let (acc, skipped) =
            key_distortion_accuracy(&[vec![], gt[0].clone()], &[vec![], gt[0].clone()], 0.5)
                .unwrap();
        assert_eq!((acc, skipped), (1.0, vec![0]));
    }

    #[test]
    fn final_score_is_sum() {
        assert_eq!(final_score(&ScoreComponents::default()), 0.0);
        let c = ScoreComponents {
            perception_accuracy: 0.72,
            region_map: 0.14,
            distortion_map: 0.11,
            description_map: 0.14,
            key_distortion_acc: 0.37,
            image_quality_accuracy: 0.78,
        };
        assert!((final_score(&c) - 2.26).abs() < 1e-12);
        let report = ScoreReport::new(c, BTreeMap::new(), ScoreCounts::default());
        assert!(report.to_table().starts_with("Final Score"));
    }
}
