//! Multiple-choice question augmentation: option shuffling, option expansion,
//! and regeneration of questions from per-image metadata with question
//! templates that follow the evaluation phrasing.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Diagnostic, Metadata, METADATA_FILE};
use crate::error::{Error, Result};
use crate::model::McqSample;
use crate::rng::record_rng;

/// Permutes the options uniformly; the answer index follows its option.
pub fn shuffle_options<R: Rng + ?Sized>(sample: &McqSample, rng: &mut R) -> McqSample {
    let mut order: Vec<usize> = (0..sample.options.len()).collect();
    order.shuffle(rng);
    permute(sample, &order)
}

/// Reorders options so that new position `i` holds old option `order[i]`.
pub fn permute(sample: &McqSample, order: &[usize]) -> McqSample {
    let options = order.iter().map(|&i| sample.options[i].clone()).collect();
    let answer_index = order
        .iter()
        .position(|&i| i == sample.answer_index)
        .expect("order is a permutation");
    McqSample {
        options,
        answer_index,
        ..sample.clone()
    }
}

/// Result of [`expand_options`]; `shortfall` counts options the pool could
/// not supply.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub sample: McqSample,
    pub shortfall: usize,
}

/// Adds distinct distractors from `pool` until the question has
/// `target_count` options, then shuffles.
pub fn expand_options<R: Rng + ?Sized>(
    sample: &McqSample,
    pool: &[String],
    target_count: usize,
    rng: &mut R,
) -> Expansion {
    let mut candidates: Vec<&String> = pool
        .iter()
        .filter(|p| !sample.options.contains(p))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    candidates.shuffle(rng);
    let wanted = target_count.saturating_sub(sample.options.len());
    let mut expanded = sample.clone();
    expanded
        .options
        .extend(candidates.iter().take(wanted).map(|s| (*s).clone()));
    let shortfall = wanted.saturating_sub(candidates.len());
    Expansion {
        sample: shuffle_options(&expanded, rng),
        shortfall,
    }
}

/// Question category used to pool distractors: the normalized question text.
pub fn question_category(question: &str) -> String {
    question
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Union of option strings per question category, sorted.
pub fn distractor_pools(samples: &[McqSample]) -> BTreeMap<String, Vec<String>> {
    let mut pools: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for s in samples {
        pools
            .entry(question_category(&s.question))
            .or_default()
            .extend(s.options.iter().cloned());
    }
    pools
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect()
}

/// Where a template's distractors come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptionSource {
    /// Other values of the same attribute seen anywhere in the metadata.
    Attribute,
    /// A fixed candidate list.
    Fixed { values: Vec<String> },
}

/// A test-style question pattern for one metadata attribute.
///
/// `category` names the attribute whose value is the gold answer. In
/// `pattern`, `{category}` expands to that name and any other `{key}` is
/// filled from the image's attributes. `{value}` is rejected since it would
/// state the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub category: String,
    pub pattern: String,
    #[serde(default = "default_option_source")]
    pub option_source: OptionSource,
    #[serde(default = "default_distractors")]
    pub distractors: usize,
}

fn default_option_source() -> OptionSource {
    OptionSource::Attribute
}

fn default_distractors() -> usize {
    3
}

impl QuestionTemplate {
    pub fn new(category: impl Into<String>, pattern: impl Into<String>) -> Self {
        Self {
            category: category.into(),
            pattern: pattern.into(),
            option_source: OptionSource::Attribute,
            distractors: default_distractors(),
        }
    }

    pub fn placeholders(&self) -> Vec<String> {
        placeholders(&self.pattern)
    }
}

fn placeholders(pattern: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) => {
                out.push(after[..end].to_string());
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

#[derive(Deserialize)]
struct TemplateFile {
    template: Vec<QuestionTemplate>,
}

/// Validated, ordered set of question templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateTable(Vec<QuestionTemplate>);

impl TemplateTable {
    pub fn new(templates: Vec<QuestionTemplate>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for t in &templates {
            let ph = t.placeholders();
            if ph.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "template {:?} has no placeholder",
                    t.category
                )));
            }
            if ph.iter().any(|p| p == "value") {
                return Err(Error::InvalidConfig(format!(
                    "template {:?} must not reveal the answer through {{value}}",
                    t.category
                )));
            }
            if !seen.insert(t.category.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate template category {:?}",
                    t.category
                )));
            }
            if t.distractors == 0 {
                return Err(Error::InvalidConfig(format!(
                    "template {:?} needs at least one distractor",
                    t.category
                )));
            }
        }
        Ok(Self(templates))
    }

    /// Parses a TOML file made of `[[template]]` entries.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: TemplateFile =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("templates: {e}")))?;
        Self::new(file.template)
    }

    pub fn templates(&self) -> &[QuestionTemplate] {
        &self.0
    }
}

impl Default for TemplateTable {
    fn default() -> Self {
        Self::new(vec![
            QuestionTemplate::new(
                "blur severity",
                "How severe is the {category} of this image?",
            ),
            QuestionTemplate::new("noise level", "What is the {category} in this image?"),
            QuestionTemplate::new(
                "exposure",
                "How would you describe the {category} of this image?",
            ),
            QuestionTemplate::new(
                "dominant distortion",
                "Which distortion is most noticeable in this image? ({category})",
            ),
        ])
        .expect("default templates are valid")
    }
}

/// Builds one question per (image, applicable template) from the metadata.
///
/// Images are visited in sorted path order and templates in table order, so
/// the output depends only on the inputs and `seed`. A template whose
/// attribute or placeholders are missing for an image is skipped with a
/// diagnostic.
pub fn regenerate_mcq(
    metadata: &Metadata,
    templates: &TemplateTable,
    seed: u64,
) -> (Vec<McqSample>, Vec<Diagnostic>) {
    let images = metadata.images();
    let attributes: BTreeMap<&str, BTreeMap<String, String>> = images
        .iter()
        .map(|img| (*img, metadata.image_attributes(img)))
        .collect();
    let mut observed: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for attrs in attributes.values() {
        for (k, v) in attrs {
            observed.entry(k.as_str()).or_default().insert(v.as_str());
        }
    }

    let mut samples = Vec::new();
    let mut diagnostics = Vec::new();
    for image in &images {
        let attrs = &attributes[image];
        for template in templates.templates() {
            let Some(gold) = attrs.get(&template.category) else {
                diagnostics.push(Diagnostic::new(
                    METADATA_FILE,
                    0,
                    format!("image {image} has no attribute {:?}", template.category),
                ));
                continue;
            };
            let question = match fill_pattern(template, attrs) {
                Ok(q) => q,
                Err(key) => {
                    diagnostics.push(Diagnostic::new(
                        METADATA_FILE,
                        0,
                        format!(
                            "template {:?} references missing key {key:?} for image {image}",
                            template.category
                        ),
                    ));
                    continue;
                }
            };
            let pool: Vec<&str> = match &template.option_source {
                OptionSource::Attribute => observed
                    .get(template.category.as_str())
                    .map(|s| s.iter().copied().collect())
                    .unwrap_or_default(),
                OptionSource::Fixed { values } => values.iter().map(String::as_str).collect(),
            };
            let mut pool: Vec<&str> = pool
                .into_iter()
                .filter(|v| *v != gold)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if pool.is_empty() {
                diagnostics.push(Diagnostic::new(
                    METADATA_FILE,
                    0,
                    format!(
                        "no distractors available for {:?} on image {image}",
                        template.category
                    ),
                ));
                continue;
            }
            if pool.len() < template.distractors {
                diagnostics.push(Diagnostic::new(
                    METADATA_FILE,
                    0,
                    format!(
                        "only {} of {} distractors available for {:?} on image {image}",
                        pool.len(),
                        template.distractors,
                        template.category
                    ),
                ));
            }
            let mut rng = record_rng(
                seed,
                "selfmade",
                &format!("{image}\u{0}{}", template.category),
            );
            pool.shuffle(&mut rng);
            let mut options = vec![gold.clone()];
            options.extend(
                pool.iter()
                    .take(template.distractors)
                    .map(|s| s.to_string()),
            );
            let sample = McqSample {
                id: format!("mcq_sm_{:06}", samples.len()),
                image_id: image.to_string(),
                question,
                options,
                answer_index: 0,
            };
            samples.push(shuffle_options(&sample, &mut rng));
        }
    }
    (samples, diagnostics)
}

fn fill_pattern(
    template: &QuestionTemplate,
    attrs: &BTreeMap<String, String>,
) -> std::result::Result<String, String> {
    let mut out = template.pattern.clone();
    for key in template.placeholders() {
        let value = if key == "category" {
            template.category.clone()
        } else {
            attrs.get(&key).cloned().ok_or(key.clone())?
        };
        out = out.replace(&format!("{{{key}}}"), &value);
    }
    Ok(out)
}
