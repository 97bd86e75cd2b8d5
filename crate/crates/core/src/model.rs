//! Domain types shared across the toolkit.
//!
//! Boxes live in a single canonical space: integer corners on a `[0, 1000]`
//! grid that is independent of the pixel resolution of the image. Conversions
//! between that grid and pixels happen only through the helpers in this module.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound of the normalized coordinate grid.
pub const NORM_MAX: u32 = 1000;

/// A typed distortion region in normalized `[0, 1000]` coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistortionBox {
    pub label: String,
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl DistortionBox {
    pub fn new(label: impl Into<String>, x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Self {
            label: label.into(),
            x1,
            y1,
            x2,
            y2,
        }
    }

    /// Checks the geometric invariant `0 <= x1 < x2 <= 1000` (same for y).
    pub fn check_geometry(&self) -> std::result::Result<(), String> {
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(format!(
                "box invariant violated (need x1 < x2 and y1 < y2): [{}, {}, {}, {}]",
                self.x1, self.y1, self.x2, self.y2
            ));
        }
        if self.x2 > NORM_MAX || self.y2 > NORM_MAX {
            return Err(format!(
                "box invariant violated (coordinates must lie in [0, {NORM_MAX}]): [{}, {}, {}, {}]",
                self.x1, self.y1, self.x2, self.y2
            ));
        }
        Ok(())
    }

    /// Full validation: geometry plus taxonomy membership.
    pub fn check(&self, taxonomy: &DistortionTaxonomy) -> std::result::Result<(), String> {
        self.check_geometry()?;
        if !taxonomy.contains(&self.label) {
            return Err(format!(
                "label {:?} is not in the distortion taxonomy",
                self.label
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn coords(&self) -> [u32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Corner coordinates in source pixels, rounded half-up.
    pub fn to_pixels(&self, width_px: u32, height_px: u32) -> [u32; 4] {
        [
            norm_to_px(self.x1, width_px),
            norm_to_px(self.y1, height_px),
            norm_to_px(self.x2, width_px),
            norm_to_px(self.y2, height_px),
        ]
    }
}

impl fmt::Display for DistortionBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: [{}, {}, {}, {}]",
            self.label, self.x1, self.y1, self.x2, self.y2
        )
    }
}

/// `round_half_up(numerator / denominator)` for non-negative integers.
pub(crate) fn div_round_half_up(numerator: u128, denominator: u128) -> u128 {
    (2 * numerator + denominator) / (2 * denominator)
}

/// Splits a finite non-negative double into `(digits, scale)` with
/// `value == digits / 10^scale` on its shortest round-trip decimal form.
pub(crate) fn decimal_parts(value: f64) -> (u128, u32) {
    let text = format!("{value}");
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let digits: u128 = format!("{int_part}{frac_part}")
        .parse()
        .expect("finite values print as plain decimals");
    (digits, frac_part.len() as u32)
}

/// `floor(fraction * n)` with `fraction` read as its shortest decimal form,
/// so that e.g. `0.29 * 100` gives 29 rather than the 28 of float arithmetic.
pub fn floor_fraction(fraction: f64, n: usize) -> usize {
    if fraction.is_nan() || fraction <= 0.0 {
        return 0;
    }
    let (digits, scale) = decimal_parts(fraction);
    (digits * n as u128 / 10u128.pow(scale)) as usize
}

/// Normalized coordinate to pixel coordinate.
pub fn norm_to_px(value: u32, extent_px: u32) -> u32 {
    div_round_half_up(
        u128::from(value) * u128::from(extent_px),
        u128::from(NORM_MAX),
    ) as u32
}

/// Pixel coordinate to normalized coordinate.
pub fn px_to_norm(value: u32, extent_px: u32) -> u32 {
    div_round_half_up(
        u128::from(value) * u128::from(NORM_MAX),
        u128::from(extent_px.max(1)),
    ) as u32
}

/// Ordered set of distortion-type labels accepted by a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistortionTaxonomy {
    labels: Vec<String>,
}

impl DistortionTaxonomy {
    pub const DEFAULT_LABELS: [&'static str; 10] = [
        "blur",
        "motion blur",
        "noise",
        "overexposure",
        "underexposure",
        "low contrast",
        "compression artifacts",
        "color distortion",
        "haze",
        "banding",
    ];

    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for label in labels {
            let label = normalize_label(label.as_ref());
            if label.is_empty() {
                return Err(Error::InvalidConfig("empty distortion label".into()));
            }
            if out.contains(&label) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate distortion label {label:?}"
                )));
            }
            out.push(label);
        }
        if out.is_empty() {
            return Err(Error::InvalidConfig("distortion taxonomy is empty".into()));
        }
        Ok(Self { labels: out })
    }

    /// Parses a taxonomy config: one label per line, `#` starts a comment.
    pub fn from_config(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

impl Default for DistortionTaxonomy {
    fn default() -> Self {
        Self::new(Self::DEFAULT_LABELS).expect("default taxonomy is valid")
    }
}

pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Mean opinion score on the closed interval `[1, 5]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MosScore(f64);

impl MosScore {
    pub const MIN: f64 = 1.0;
    pub const MAX: f64 = 5.0;

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::OutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for MosScore {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<MosScore> for f64 {
    fn from(mos: MosScore) -> f64 {
        mos.0
    }
}

/// One conversation turn of an instruction-tuning record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: String,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            text: text.into(),
        }
    }
}

/// A record of `reg-grounding.jsonl` or `dist_detect.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRecord {
    pub id: String,
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub conversations: Vec<Turn>,
    pub boxes: Vec<DistortionBox>,
}

impl GroundingRecord {
    pub fn check(&self, taxonomy: &DistortionTaxonomy) -> std::result::Result<(), String> {
        check_id(&self.id)?;
        if self.width == 0 || self.height == 0 {
            return Err(format!(
                "image dimensions must be positive, got {}x{}",
                self.width, self.height
            ));
        }
        for b in &self.boxes {
            b.check(taxonomy)?;
        }
        Ok(())
    }
}

/// A multiple-choice perception question (`mcq.jsonl`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqSample {
    pub id: String,
    #[serde(rename = "image")]
    pub image_id: String,
    pub question: String,
    pub options: Vec<String>,
    #[serde(rename = "answer")]
    pub answer_index: usize,
}

impl McqSample {
    pub fn check(&self) -> std::result::Result<(), String> {
        check_id(&self.id)?;
        if self.options.len() < 2 {
            return Err(format!(
                "a question needs at least 2 options, got {}",
                self.options.len()
            ));
        }
        if self.answer_index >= self.options.len() {
            return Err(format!(
                "answer index {} out of range for {} options",
                self.answer_index,
                self.options.len()
            ));
        }
        for (i, a) in self.options.iter().enumerate() {
            if self.options[..i].contains(a) {
                return Err(format!("duplicate option {a:?}"));
            }
        }
        Ok(())
    }

    pub fn gold(&self) -> &str {
        &self.options[self.answer_index]
    }
}

/// A quality-description record (`assess.jsonl`, `brief_assess.jsonl`, `scores.jsonl`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionSample {
    pub id: String,
    #[serde(rename = "image")]
    pub image_id: String,
    #[serde(rename = "text")]
    pub assessment_text: String,
    pub detections: Vec<DistortionBox>,
    pub key_distortions: Vec<DistortionBox>,
    pub quality_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos: Option<MosScore>,
}

impl DescriptionSample {
    pub fn check(
        &self,
        taxonomy: &DistortionTaxonomy,
        quality_labels: &[String],
    ) -> std::result::Result<(), String> {
        check_id(&self.id)?;
        for b in self.detections.iter().chain(&self.key_distortions) {
            b.check(taxonomy)?;
        }
        if self.key_distortions.is_empty() {
            return Err("key_distortions must not be empty".into());
        }
        if !quality_labels.iter().any(|l| l == &self.quality_label) {
            return Err(format!(
                "quality label {:?} is not one of {:?}",
                self.quality_label, quality_labels
            ));
        }
        Ok(())
    }
}

fn check_id(id: &str) -> std::result::Result<(), String> {
    if id.is_empty() {
        Err("record id must not be empty".into())
    } else {
        Ok(())
    }
}

/// Ground truth for one image, assembled from the corpus records.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub id: String,
    pub path: String,
    pub width_px: u32,
    pub height_px: u32,
    pub mos: Option<MosScore>,
    pub boxes: Vec<DistortionBox>,
}

/// Image index keyed by image path.
pub type ImageIndex = BTreeMap<String, AnnotatedImage>;
