//! MOS quantization at configurable granularity and the map back to the
//! canonical five quality words.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusBundle, Diagnostic};
use crate::error::{Error, Result};
use crate::model::{decimal_parts, DescriptionSample, MosScore};

/// The canonical five-level quality vocabulary, worst to best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityWord {
    Bad,
    Poor,
    Fair,
    Good,
    Excellent,
}

impl QualityWord {
    pub const ALL: [QualityWord; 5] = [
        QualityWord::Bad,
        QualityWord::Poor,
        QualityWord::Fair,
        QualityWord::Good,
        QualityWord::Excellent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QualityWord::Bad => "bad",
            QualityWord::Poor => "poor",
            QualityWord::Fair => "fair",
            QualityWord::Good => "good",
            QualityWord::Excellent => "excellent",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for QualityWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityWord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_lowercase();
        QualityWord::ALL
            .into_iter()
            .find(|w| w.as_str() == lower)
            .ok_or(Error::UnknownLabel {
                label: s.to_string(),
                levels: 5,
            })
    }
}

/// A `k`-level partition of the MOS range with one label per interval.
///
/// `k = 5` uses the quality words themselves; finer scales use consecutive
/// letters starting at `a`, so that each block of `k / 5` letters maps back to
/// one word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QualityScale {
    labels: Vec<String>,
}

impl QualityScale {
    pub const SUPPORTED: [usize; 4] = [5, 10, 15, 20];

    pub fn new(k: usize) -> Result<Self> {
        if !Self::SUPPORTED.contains(&k) {
            return Err(Error::InvalidConfig(format!(
                "quality levels must be one of {:?}, got {k}",
                Self::SUPPORTED
            )));
        }
        let labels = if k == 5 {
            QualityWord::ALL
                .iter()
                .map(|w| w.as_str().to_string())
                .collect()
        } else {
            (b'a'..)
                .take(k)
                .map(|c| char::from(c).to_string())
                .collect()
        };
        Ok(Self { labels })
    }

    pub fn five() -> Self {
        Self::new(5).expect("5 is supported")
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn block(&self) -> usize {
        self.k() / 5
    }

    /// Position of `s` on the scale: the number of interior interval bounds
    /// `1 + i * 4 / k` that `s` reaches, clamped so that `s = 5` lands on the
    /// top level.
    pub fn level_index(&self, s: MosScore) -> usize {
        let k = self.k() as u64;
        let passed = (1..=k)
            .filter(|&i| reaches_bound(s.value(), 4 * i, k))
            .count();
        passed.min(self.k() - 1)
    }

    /// `quantize` on an already validated score.
    pub fn label_for(&self, s: MosScore) -> &str {
        &self.labels[self.level_index(s)]
    }

    pub fn quantize(&self, s: f64) -> Result<&str> {
        let s = MosScore::new(s)?;
        Ok(self.label_for(s))
    }

    pub fn map_back(&self, label: &str) -> Result<QualityWord> {
        let idx =
            self.labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::UnknownLabel {
                    label: label.to_string(),
                    levels: self.k(),
                })?;
        Ok(QualityWord::ALL[idx / self.block()])
    }
}

/// Exact test of `s >= 1 + num / den`, where `s` is read as the shortest
/// decimal that round-trips to the stored double (the value as written in
/// the corpus).
fn reaches_bound(s: f64, num: u64, den: u64) -> bool {
    let (digits, scale) = decimal_parts(s);
    // digits / 10^scale >= (den + num) / den
    let lhs = digits * u128::from(den);
    let rhs = u128::from(den + num) * 10u128.pow(scale);
    lhs >= rhs
}

/// Rewrites the quality label of every description record to its level on
/// `scale`. Records without a MOS pass through unchanged with a diagnostic.
pub fn refine_description_files(
    bundle: &CorpusBundle,
    scale: &QualityScale,
) -> (CorpusBundle, Vec<Diagnostic>) {
    let mut out = bundle.clone();
    let mut diagnostics = Vec::new();
    for (file, records) in out.description_files_mut() {
        for (line, record) in records.iter_mut().enumerate() {
            match record.mos {
                Some(mos) => record.quality_label = scale.label_for(mos).to_string(),
                None => diagnostics.push(Diagnostic::new(
                    file,
                    line + 1,
                    format!(
                        "record {} has no MOS; quality label left unchanged",
                        record.id
                    ),
                )),
            }
        }
    }
    (out, diagnostics)
}

/// Prompt/response pair used to build score-only training records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOnlyTemplate {
    pub prompt: String,
    pub response: String,
}

impl ScoreOnlyTemplate {
    pub const PLACEHOLDER: &'static str = "{quality}";

    pub fn new(prompt: impl Into<String>, response: impl Into<String>) -> Result<Self> {
        let t = Self {
            prompt: prompt.into(),
            response: response.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.response.contains(Self::PLACEHOLDER) {
            return Err(Error::InvalidConfig(format!(
                "score-only response template must contain {}",
                Self::PLACEHOLDER
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let t: Self = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("score template: {e}")))?;
        t.validate()?;
        Ok(t)
    }
}

impl Default for ScoreOnlyTemplate {
    fn default() -> Self {
        Self {
            prompt: "Rate the overall quality of this image. Answer with a single quality level."
                .into(),
            response: "The quality of this image is {quality}.".into(),
        }
    }
}

/// Training record that asks only for the global quality level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOnlyRecord {
    pub id: String,
    pub image: String,
    pub prompt: String,
    pub response: String,
}

pub fn make_score_only_records(
    descriptions: &[DescriptionSample],
    template: &ScoreOnlyTemplate,
) -> Vec<ScoreOnlyRecord> {
    descriptions
        .iter()
        .map(|d| ScoreOnlyRecord {
            id: format!("{}_score", d.id),
            image: d.image_id.clone(),
            prompt: template.prompt.clone(),
            response: template
                .response
                .replace(ScoreOnlyTemplate::PLACEHOLDER, &d.quality_label),
        })
        .collect()
}
