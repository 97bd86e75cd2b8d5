//! Scores a prediction file against a ground-truth corpus.
//!
//! Predictions are `{"id": ..., "response": ...}` lines keyed by the id of
//! the ground-truth record they answer. The region task is read from
//! `reg-grounding.jsonl`, the distortion task from `dist_detect.jsonl`,
//! perception from `mcq.jsonl`, and the three description metrics from
//! `assess.jsonl`.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    CorpusBundle, Diagnostic, ASSESS_FILE, DIST_DETECT_FILE, MCQ_FILE, REG_GROUNDING_FILE,
};
use crate::error::{Error, Result};
use crate::levels::{QualityScale, QualityWord};
use crate::metrics::{
    image_quality_accuracy, key_distortion_accuracy, map_back_labels, mean_average_precision,
    perception_accuracy, MapMode, ScoreComponents, ScoreCounts, ScoreReport,
};
use crate::model::{DistortionBox, DistortionTaxonomy, GroundingRecord};
use crate::parser::{parse_description, parse_mcq_choice, serialize_detections, DetectionParser};

/// One model response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub response: String,
}

/// Canonical description response for the given parts.
pub fn description_response(
    text: &str,
    detections: &[DistortionBox],
    keys: &[DistortionBox],
    quality: QualityWord,
) -> String {
    format!(
        "{text}\nDistortions: {}\nKey distortions: {}\nQuality: {quality}",
        serialize_detections(detections),
        serialize_detections(keys)
    )
}

/// The ground truth of `bundle` written as perfect model responses.
/// Description labels are read on `scale` and mapped back to quality words.
pub fn export_predictions(
    bundle: &CorpusBundle,
    scale: &QualityScale,
) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (_, records) in bundle.grounding_files() {
        out.extend(records.iter().map(|r| PredictionRecord {
            id: r.id.clone(),
            response: serialize_detections(&r.boxes),
        }));
    }
    for q in &bundle.mcq {
        let letter = char::from(b'A' + q.answer_index as u8);
        out.push(PredictionRecord {
            id: q.id.clone(),
            response: letter.to_string(),
        });
    }
    for d in &bundle.assess {
        out.push(PredictionRecord {
            id: d.id.clone(),
            response: description_response(
                &d.assessment_text,
                &d.detections,
                &d.key_distortions,
                scale.map_back(&d.quality_label)?,
            ),
        });
    }
    Ok(out)
}

/// How to read and aggregate predictions.
#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub taxonomy: DistortionTaxonomy,
    /// Scale of the ground-truth quality labels.
    pub scale: QualityScale,
    pub iou_thresholds: Vec<f64>,
    pub key_iou_threshold: f64,
    /// Forces one aggregation mode on all three mAP metrics. By default the
    /// region metric is per image and the label-aware ones are pooled.
    pub map_mode: Option<MapMode>,
    pub strict_parse: bool,
}

impl ScoreOptions {
    pub fn new(taxonomy: DistortionTaxonomy, scale: QualityScale) -> Self {
        Self {
            taxonomy,
            scale,
            iou_thresholds: vec![0.5],
            key_iou_threshold: 0.5,
            map_mode: None,
            strict_parse: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome {
    pub report: ScoreReport,
    pub diagnostics: Vec<Diagnostic>,
}

struct Aligner<'a> {
    responses: HashMap<&'a str, &'a str>,
    used: BTreeSet<&'a str>,
    missing: usize,
    diagnostics: Vec<Diagnostic>,
}

impl<'a> Aligner<'a> {
    fn new(predictions: &'a [PredictionRecord]) -> Result<Self> {
        let mut responses = HashMap::with_capacity(predictions.len());
        for p in predictions {
            if responses
                .insert(p.id.as_str(), p.response.as_str())
                .is_some()
            {
                return Err(Error::Alignment(format!(
                    "duplicate prediction id {:?}",
                    p.id
                )));
            }
        }
        Ok(Self {
            responses,
            used: BTreeSet::new(),
            missing: 0,
            diagnostics: Vec::new(),
        })
    }

    /// Responses for `ids` in order; a missing one becomes an empty response.
    fn take<'b>(&mut self, file: &str, ids: impl Iterator<Item = &'b str>) -> Vec<&'a str> {
        ids.enumerate()
            .map(|(i, id)| match self.responses.get_key_value(id) {
                Some((&key, &response)) => {
                    self.used.insert(key);
                    response
                }
                None => {
                    self.missing += 1;
                    self.diagnostics.push(Diagnostic::new(
                        file,
                        i + 1,
                        format!("no prediction for {id}; scored as empty"),
                    ));
                    ""
                }
            })
            .collect()
    }

    fn unmatched(&self) -> Vec<&'a str> {
        let mut ids: Vec<&str> = self
            .responses
            .keys()
            .filter(|id| !self.used.contains(*id))
            .copied()
            .collect();
        ids.sort_unstable();
        ids
    }
}

fn parse_grounding(responses: &[&str], parser: &DetectionParser) -> Vec<Vec<DistortionBox>> {
    responses
        .par_iter()
        .map(|r| parser.parse(r).boxes)
        .collect()
}

fn gt_boxes(records: &[GroundingRecord]) -> Vec<Vec<DistortionBox>> {
    records.iter().map(|r| r.boxes.clone()).collect()
}

fn note_parse(
    diagnostics: &mut Vec<Diagnostic>,
    file: &str,
    line: usize,
    id: &str,
    messages: &[String],
) {
    for m in messages {
        diagnostics.push(Diagnostic::new(file, line, format!("{id}: {m}")));
    }
}

/// Computes all six metrics. Fails only on ambiguous alignment (duplicate
/// prediction ids) or ground-truth labels outside `options.scale`.
pub fn score_corpus(
    gt: &CorpusBundle,
    predictions: &[PredictionRecord],
    options: &ScoreOptions,
) -> Result<ScoreOutcome> {
    let parser = DetectionParser::new(&options.taxonomy, options.strict_parse);
    let thresholds = &options.iou_thresholds;
    let mode = |default| options.map_mode.unwrap_or(default);
    let mut align = Aligner::new(predictions)?;
    let mut diagnostics = Vec::new();

    let region_responses = align.take(
        REG_GROUNDING_FILE,
        gt.reg_grounding.iter().map(|r| r.id.as_str()),
    );
    let region_preds = parse_grounding(&region_responses, &parser);
    let (region_map, _) = mean_average_precision(
        &region_preds,
        &gt_boxes(&gt.reg_grounding),
        thresholds,
        true,
        mode(MapMode::PerImage),
    )?;

    let dist_responses = align.take(
        DIST_DETECT_FILE,
        gt.dist_detect.iter().map(|r| r.id.as_str()),
    );
    let dist_preds = parse_grounding(&dist_responses, &parser);
    let (distortion_map, per_class_ap) = mean_average_precision(
        &dist_preds,
        &gt_boxes(&gt.dist_detect),
        thresholds,
        false,
        mode(MapMode::Pooled),
    )?;

    let mcq_responses = align.take(MCQ_FILE, gt.mcq.iter().map(|q| q.id.as_str()));
    let choices: Vec<Option<usize>> = gt
        .mcq
        .par_iter()
        .zip(&mcq_responses)
        .map(|(q, r)| parse_mcq_choice(r, &q.options, options.strict_parse))
        .collect();
    for (i, (q, c)) in gt.mcq.iter().zip(&choices).enumerate() {
        if c.is_none() {
            note_parse(
                &mut diagnostics,
                MCQ_FILE,
                i + 1,
                &q.id,
                &["no option recognized".into()],
            );
        }
    }
    let gold: Vec<usize> = gt.mcq.iter().map(|q| q.answer_index).collect();
    let perception = perception_accuracy(&choices, &gold)?;

    let desc_responses = align.take(ASSESS_FILE, gt.assess.iter().map(|d| d.id.as_str()));
    let parsed: Vec<_> = desc_responses
        .par_iter()
        .map(|r| parse_description(r, &parser))
        .collect();
    for (i, (d, p)) in gt.assess.iter().zip(&parsed).enumerate() {
        note_parse(&mut diagnostics, ASSESS_FILE, i + 1, &d.id, &p.diagnostics);
    }
    let desc_preds: Vec<Vec<DistortionBox>> = parsed.iter().map(|p| p.detections.clone()).collect();
    let desc_gts: Vec<Vec<DistortionBox>> =
        gt.assess.iter().map(|d| d.detections.clone()).collect();
    let (description_map, _) = mean_average_precision(
        &desc_preds,
        &desc_gts,
        thresholds,
        false,
        mode(MapMode::Pooled),
    )?;

    let key_preds: Vec<Vec<DistortionBox>> =
        parsed.iter().map(|p| p.key_distortions.clone()).collect();
    let key_gts: Vec<Vec<DistortionBox>> = gt
        .assess
        .iter()
        .map(|d| d.key_distortions.clone())
        .collect();
    let (key_acc, skipped) =
        key_distortion_accuracy(&key_preds, &key_gts, options.key_iou_threshold)?;
    for &i in &skipped {
        diagnostics.push(Diagnostic::new(
            ASSESS_FILE,
            i + 1,
            format!("{} has no key distortions; skipped", gt.assess[i].id),
        ));
    }

    let labels: Vec<String> = gt.assess.iter().map(|d| d.quality_label.clone()).collect();
    let gt_words = map_back_labels(&labels, &options.scale)?;
    let pred_words: Vec<Option<QualityWord>> = parsed.iter().map(|p| p.quality_word).collect();
    let quality = image_quality_accuracy(&pred_words, &gt_words)?;

    let unmatched = align.unmatched();
    for id in &unmatched {
        diagnostics.push(Diagnostic::new(
            "predictions",
            0,
            format!("prediction {id} matches no ground-truth record"),
        ));
    }

    let components = ScoreComponents {
        perception_accuracy: perception,
        region_map,
        distortion_map,
        description_map,
        key_distortion_acc: key_acc,
        image_quality_accuracy: quality,
    };
    let counts = ScoreCounts {
        region_records: gt.reg_grounding.len(),
        distortion_records: gt.dist_detect.len(),
        perception_records: gt.mcq.len(),
        description_records: gt.assess.len(),
        key_distortion_skipped: skipped.len(),
        missing_predictions: align.missing,
        unmatched_predictions: unmatched.len(),
    };
    let mut all = align.diagnostics;
    all.extend(diagnostics);
    Ok(ScoreOutcome {
        report: ScoreReport::new(components, per_class_ap, counts),
        diagnostics: all,
    })
}
