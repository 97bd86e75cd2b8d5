//! Turns free-text model responses into structured predictions.
//!
//! Canonical detection grammar (what [`serialize_detections`] emits):
//!
//! ```text
//! detections := "none" | entry ( "; " entry )*
//! entry      := label ": [" group ( ", " group )* "]"
//! group      := "[" int ", " int ", " int ", " int "]"
//! ```
//!
//! Labels are taxonomy labels. In lenient mode a label may be followed by any
//! text containing `[a, b, c, d]` or `(a, b, c, d)` groups up to the next
//! label. Parsing never fails; problems become diagnostics.
//!
//! Canonical description response:
//!
//! ```text
//! <assessment text>
//! Distortions: <detections>
//! Key distortions: <detections>
//! Quality: <bad|poor|fair|good|excellent>
//! ```

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::levels::QualityWord;
use crate::model::{DistortionBox, DistortionTaxonomy, NORM_MAX};

/// Structured view of one response.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub detections: Vec<DistortionBox>,
    pub key_distortions: Vec<DistortionBox>,
    pub mcq_choice: Option<usize>,
    pub quality_word: Option<QualityWord>,
    pub diagnostics: Vec<String>,
}

/// Boxes found in a text plus what went wrong along the way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedDetections {
    pub boxes: Vec<DistortionBox>,
    pub diagnostics: Vec<String>,
}

static GROUP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[\[(]\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*[\])]")
        .expect("valid regex")
});

static CANONICAL_SEGMENT: LazyLock<Regex> = LazyLock::new(|| {
    let group = r"\[\d+, \d+, \d+, \d+\]";
    Regex::new(&format!(r"^: \[{group}(?:, {group})*\];?$")).expect("valid regex")
});

static QUALITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(bad|poor|fair|good|excellent)\b").expect("valid regex"));

static LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b([A-Za-z])\b").expect("valid regex"));

/// Detection parser bound to one taxonomy.
#[derive(Debug, Clone)]
pub struct DetectionParser {
    labels: Regex,
    strict: bool,
}

impl DetectionParser {
    pub fn new(taxonomy: &DistortionTaxonomy, strict: bool) -> Self {
        let mut labels: Vec<&String> = taxonomy.labels().iter().collect();
        // longer labels first so "motion blur" wins over "blur"
        labels.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let alternation = labels
            .iter()
            .map(|l| regex::escape(l).replace(' ', r"\s+"))
            .collect::<Vec<_>>()
            .join("|");
        let labels =
            Regex::new(&format!(r"(?i)\b({alternation})\b")).expect("escaped labels form a regex");
        Self { labels, strict }
    }

    pub fn parse(&self, text: &str) -> ParsedDetections {
        let mut out = ParsedDetections::default();
        let hits: Vec<_> = self.labels.find_iter(text).collect();
        for (i, hit) in hits.iter().enumerate() {
            let end = hits.get(i + 1).map_or(text.len(), |next| next.start());
            let segment = &text[hit.end()..end];
            let label = crate::model::normalize_label(hit.as_str());
            if self.strict && !CANONICAL_SEGMENT.is_match(segment.trim_end()) {
                if GROUP.is_match(segment) {
                    out.diagnostics.push(format!(
                        "non-canonical entry for {label:?} ignored in strict mode"
                    ));
                }
                continue;
            }
            for caps in GROUP.captures_iter(segment) {
                let mut coords = [0u32; 4];
                for (slot, c) in coords.iter_mut().zip(1..=4) {
                    *slot = clamp_coord(&caps[c], &label, &mut out.diagnostics);
                }
                let [x1, y1, x2, y2] = coords;
                if x1 >= x2 || y1 >= y2 {
                    out.diagnostics.push(format!(
                        "dropped degenerate box for {label:?}: [{x1}, {y1}, {x2}, {y2}]"
                    ));
                    continue;
                }
                out.boxes
                    .push(DistortionBox::new(label.clone(), x1, y1, x2, y2));
            }
        }
        if out.boxes.is_empty() {
            out.diagnostics.push("no detections".into());
        }
        out
    }
}

fn clamp_coord(raw: &str, label: &str, diagnostics: &mut Vec<String>) -> u32 {
    let value: i128 = raw.parse().unwrap_or(if raw.starts_with('-') {
        i128::MIN
    } else {
        i128::MAX
    });
    let clamped = value.clamp(0, i128::from(NORM_MAX));
    if clamped != value {
        diagnostics.push(format!(
            "clamped coordinate {raw} of {label:?} to {clamped}"
        ));
    }
    clamped as u32
}

pub fn parse_detections(text: &str, taxonomy: &DistortionTaxonomy) -> ParsedDetections {
    DetectionParser::new(taxonomy, false).parse(text)
}

/// Canonical text form of a detection list. Consecutive boxes sharing a label
/// are grouped, so listed order survives a parse.
pub fn serialize_detections(boxes: &[DistortionBox]) -> String {
    if boxes.is_empty() {
        return "none".into();
    }
    let mut entries: Vec<(String, Vec<String>)> = Vec::new();
    for b in boxes {
        let group = format!("[{}, {}, {}, {}]", b.x1, b.y1, b.x2, b.y2);
        match entries.last_mut() {
            Some((label, groups)) if *label == b.label => groups.push(group),
            _ => entries.push((b.label.clone(), vec![group])),
        }
    }
    entries
        .into_iter()
        .map(|(label, groups)| format!("{label}: [{}]", groups.join(", ")))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Picks the answer option from a response.
///
/// The first standalone option letter in range wins. Uppercase letters count
/// anywhere; lowercase ones only when marked as a choice (`b)`, `(b`, `b.`,
/// `b:`) or when the whole response is that letter. Otherwise, unless
/// `strict`, the longest option text contained in the response is used.
pub fn parse_mcq_choice<S: AsRef<str>>(text: &str, options: &[S], strict: bool) -> Option<usize> {
    let count = options.len();
    let trimmed = text.trim();
    for caps in LETTER.captures_iter(text) {
        let m = caps.get(1).expect("group 1 always participates");
        let letter = m.as_str().chars().next().expect("one char");
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        if before == Some('\'') || after == Some('\'') {
            continue;
        }
        let marked = matches!(after, Some(')' | '.' | ':')) || before == Some('(');
        if letter.is_ascii_lowercase() && !marked && trimmed.len() != 1 {
            continue;
        }
        let index = (letter.to_ascii_uppercase() as u8 - b'A') as usize;
        if index < count {
            return Some(index);
        }
    }
    if strict {
        return None;
    }
    let lower = text.to_lowercase();
    options
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            let o = o.as_ref().trim().to_lowercase();
            !o.is_empty() && lower.contains(&o)
        })
        .max_by(|a, b| {
            a.1.as_ref()
                .trim()
                .len()
                .cmp(&b.1.as_ref().trim().len())
                .then(b.0.cmp(&a.0))
        })
        .map(|(i, _)| i)
}

/// Last whole-word quality term in the text, case-insensitive.
pub fn parse_quality_word(text: &str) -> Option<QualityWord> {
    QUALITY
        .find_iter(text)
        .last()
        .and_then(|m| m.as_str().parse().ok())
}

/// Parses a description response (detections, key distortions, quality).
pub fn parse_description(text: &str, parser: &DetectionParser) -> ParsedPrediction {
    let mut out = ParsedPrediction::default();
    let mut detections = None;
    let mut keys = None;
    let mut quality = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = strip_header(trimmed, &["key distortions:", "key distortion:"]) {
            keys = Some(rest);
        } else if let Some(rest) = strip_header(trimmed, &["distortions:", "detections:"]) {
            detections = Some(rest);
        } else if let Some(rest) = strip_header(trimmed, &["quality:"]) {
            quality = Some(rest);
        }
    }
    let mut take = |section: Option<&str>, name: &str| match section {
        Some(s) if s.trim().eq_ignore_ascii_case("none") => Vec::new(),
        Some(s) => {
            let parsed = parser.parse(s);
            out.diagnostics.extend(
                parsed
                    .diagnostics
                    .into_iter()
                    .map(|d| format!("{name}: {d}")),
            );
            parsed.boxes
        }
        None => {
            out.diagnostics.push(format!("missing {name} section"));
            Vec::new()
        }
    };
    let no_sections = detections.is_none() && keys.is_none();
    if no_sections && !parser.strict {
        let parsed = parser.parse(text);
        out.diagnostics
            .push("no section headers; parsed whole response".into());
        out.diagnostics.extend(parsed.diagnostics);
        out.detections = parsed.boxes;
    } else {
        out.detections = take(detections, "distortions");
        out.key_distortions = take(keys, "key distortions");
    }
    out.quality_word = match quality {
        Some(q) => parse_quality_word(q),
        None if !parser.strict => parse_quality_word(text),
        None => None,
    };
    if out.quality_word.is_none() {
        out.diagnostics.push("no quality level found".into());
    }
    out
}

fn strip_header<'a>(line: &'a str, headers: &[&str]) -> Option<&'a str> {
    headers.iter().find_map(|h| {
        line.get(..h.len())
            .filter(|p| p.eq_ignore_ascii_case(h))
            .map(|_| &line[h.len()..])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> DistortionTaxonomy {
        DistortionTaxonomy::default()
    }

    #[test]
    fn canonical_single_box() {
        let p = parse_detections("blur: [[120, 340, 560, 780]]", &tax());
        assert_eq!(p.boxes, [DistortionBox::new("blur", 120, 340, 560, 780)]);
        assert!(p.diagnostics.is_empty());
    }

    #[test]
    fn empty_text() {
        let p = parse_detections("", &tax());
        assert!(p.boxes.is_empty());
        assert_eq!(p.diagnostics, ["no detections"]);
    }

    #[test]
    fn longest_label_and_case_folding() {
        let p = parse_detections(
            "Motion Blur: [[1, 2, 3, 4]]; BLUR (10, 20, 30, 40) and noise [5,5,6,6]",
            &tax(),
        );
        let labels: Vec<&str> = p.boxes.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, ["motion blur", "blur", "noise"]);
    }

    #[test]
    fn clamping_and_dropping() {
        let p = parse_detections("noise: [[-5, 10, 2000, 20], [50, 50, 40, 60]]", &tax());
        assert_eq!(p.boxes, [DistortionBox::new("noise", 0, 10, 1000, 20)]);
        assert_eq!(p.diagnostics.len(), 3);
        let p = parse_detections(
            "noise: [[1, 2, 99999999999999999999999999999999999999999, 3]]",
            &tax(),
        );
        assert_eq!(p.boxes[0].x2, 1000);
    }

    #[test]
    fn strict_mode_requires_canonical_entries() {
        let strict = DetectionParser::new(&tax(), true);
        assert_eq!(
            strict
                .parse("blur: [[1, 2, 3, 4]]; noise: [[5, 6, 7, 8]]")
                .boxes
                .len(),
            2
        );
        let p = strict.parse("blur (1, 2, 3, 4)");
        assert!(p.boxes.is_empty());
        assert!(p.diagnostics[0].contains("strict"));
    }

    #[test]
    fn serialize_groups_consecutive_labels() {
        let boxes = vec![
            DistortionBox::new("blur", 1, 2, 3, 4),
            DistortionBox::new("blur", 5, 6, 7, 8),
            DistortionBox::new("noise", 0, 0, 1000, 1000),
            DistortionBox::new("blur", 9, 9, 10, 10),
        ];
        let text = serialize_detections(&boxes);
        assert_eq!(
            text,
            "blur: [[1, 2, 3, 4], [5, 6, 7, 8]]; noise: [[0, 0, 1000, 1000]]; blur: [[9, 9, 10, 10]]"
        );
        assert_eq!(DetectionParser::new(&tax(), true).parse(&text).boxes, boxes);
        assert_eq!(serialize_detections(&[]), "none");
    }

    #[test]
    fn mcq_examples() {
        let opts = ["blur", "noise", "haze", "banding"];
        assert_eq!(parse_mcq_choice("The answer is B.", &opts, false), Some(1));
        assert_eq!(parse_mcq_choice("b)", &opts, false), Some(1));
        assert_eq!(parse_mcq_choice("c", &opts, false), Some(2));
        assert_eq!(parse_mcq_choice("E", &opts, false), None);
        assert_eq!(parse_mcq_choice("E, then D", &opts, false), Some(3));
        assert_eq!(
            parse_mcq_choice("there is a haze over it", &opts, false),
            Some(2)
        );
        assert_eq!(
            parse_mcq_choice("there is a haze over it", &opts, true),
            None
        );
        assert_eq!(parse_mcq_choice("I don't know", &opts, false), None);
        assert_eq!(parse_mcq_choice("", &opts, false), None);
        // longest matching option text wins
        let opts = ["blur", "motion blur"];
        assert_eq!(
            parse_mcq_choice("looks like motion blur", &opts, false),
            Some(1)
        );
    }

    #[test]
    fn quality_word_examples() {
        assert_eq!(
            parse_quality_word("overall quality is fair"),
            Some(QualityWord::Fair)
        );
        assert_eq!(
            parse_quality_word("not bad, in fact good"),
            Some(QualityWord::Good)
        );
        assert_eq!(
            parse_quality_word("EXCELLENT!"),
            Some(QualityWord::Excellent)
        );
        assert_eq!(parse_quality_word("goodness"), None);
        assert_eq!(parse_quality_word(""), None);
    }

    #[test]
    fn description_sections() {
        let parser = DetectionParser::new(&tax(), false);
        let text = "The sky is noisy but good overall.\n\
                    Distortions: noise: [[0, 0, 500, 300]]; blur: [[600, 600, 700, 700]]\n\
                    Key distortions: noise: [[0, 0, 500, 300]]\n\
                    Quality: poor";
        let p = parse_description(text, &parser);
        assert_eq!(p.detections.len(), 2);
        assert_eq!(
            p.key_distortions,
            [DistortionBox::new("noise", 0, 0, 500, 300)]
        );
        assert_eq!(p.quality_word, Some(QualityWord::Poor));
        assert!(p.diagnostics.is_empty(), "{:?}", p.diagnostics);

        let p = parse_description(
            "Distortions: none\nKey distortions: none\nQuality: bad",
            &parser,
        );
        assert!(p.detections.is_empty() && p.key_distortions.is_empty());
        assert!(p.diagnostics.is_empty());

        let loose = parse_description("blur at [1, 2, 3, 4], looks fair", &parser);
        assert_eq!(loose.detections.len(), 1);
        assert_eq!(loose.quality_word, Some(QualityWord::Fair));
    }
}
