//! Reading and writing the on-disk training corpus.
//!
//! A corpus root holds six JSONL record streams plus `train_metadata.json`.
//! Output is deterministic: struct field order fixes key order, records keep
//! their in-memory order, one object per line, LF endings.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::levels::QualityScale;
use crate::model::{
    AnnotatedImage, DescriptionSample, DistortionTaxonomy, GroundingRecord, ImageIndex, McqSample,
};

pub const REG_GROUNDING_FILE: &str = "reg-grounding.jsonl";
pub const DIST_DETECT_FILE: &str = "dist_detect.jsonl";
pub const MCQ_FILE: &str = "mcq.jsonl";
pub const ASSESS_FILE: &str = "assess.jsonl";
pub const BRIEF_ASSESS_FILE: &str = "brief_assess.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const METADATA_FILE: &str = "train_metadata.json";

pub const RECORD_FILES: [&str; 6] = [
    REG_GROUNDING_FILE,
    DIST_DETECT_FILE,
    MCQ_FILE,
    ASSESS_FILE,
    BRIEF_ASSESS_FILE,
    SCORES_FILE,
];

/// A non-fatal problem found while reading or transforming records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

impl Diagnostic {
    pub fn new(file: impl Into<String>, line: usize, reason: impl Into<String>) -> Self {
        Self {
            file: file.into(),
            line,
            reason: reason.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.reason)
    }
}

/// `train_metadata.json`, kept as an arbitrary JSON document.
#[derive(Debug, Clone, PartialEq)]
pub struct Metadata(Value);

impl Default for Metadata {
    fn default() -> Self {
        Metadata(Value::Object(Default::default()))
    }
}

impl Metadata {
    pub fn new(value: Value) -> Self {
        Metadata(value)
    }

    pub fn as_value(&self) -> &Value {
        &self.0
    }

    /// Nested lookup by explicit key segments (image paths contain dots).
    pub fn get(&self, path: &[&str]) -> Option<&Value> {
        path.iter().try_fold(&self.0, |v, key| v.get(key))
    }

    fn image_table(&self) -> Option<&serde_json::Map<String, Value>> {
        match self.0.get("images") {
            Some(Value::Object(map)) => Some(map),
            _ => self.0.as_object(),
        }
    }

    /// Image paths that carry attribute tables, in sorted order.
    pub fn images(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .image_table()
            .map(|m| {
                m.iter()
                    .filter(|(_, v)| v.is_object())
                    .map(|(k, _)| k.as_str())
                    .collect()
            })
            .unwrap_or_default();
        out.sort_unstable();
        out
    }

    /// Attribute values of one image; scalar values are rendered as strings.
    pub fn image_attributes(&self, image: &str) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        if let Some(Value::Object(attrs)) = self.image_table().and_then(|m| m.get(image)) {
            for (key, value) in attrs {
                let rendered = match value {
                    Value::String(s) => s.clone(),
                    Value::Number(n) => n.to_string(),
                    Value::Bool(b) => b.to_string(),
                    _ => continue,
                };
                out.insert(key.clone(), rendered);
            }
        }
        out
    }
}

/// All record streams of one corpus root.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusBundle {
    pub reg_grounding: Vec<GroundingRecord>,
    pub dist_detect: Vec<GroundingRecord>,
    pub mcq: Vec<McqSample>,
    pub assess: Vec<DescriptionSample>,
    pub brief_assess: Vec<DescriptionSample>,
    pub scores: Vec<DescriptionSample>,
    pub metadata: Metadata,
}

impl CorpusBundle {
    pub fn grounding_files(&self) -> [(&'static str, &Vec<GroundingRecord>); 2] {
        [
            (REG_GROUNDING_FILE, &self.reg_grounding),
            (DIST_DETECT_FILE, &self.dist_detect),
        ]
    }

    pub fn description_files(&self) -> [(&'static str, &Vec<DescriptionSample>); 3] {
        [
            (ASSESS_FILE, &self.assess),
            (BRIEF_ASSESS_FILE, &self.brief_assess),
            (SCORES_FILE, &self.scores),
        ]
    }

    pub fn description_files_mut(&mut self) -> [(&'static str, &mut Vec<DescriptionSample>); 3] {
        [
            (ASSESS_FILE, &mut self.assess),
            (BRIEF_ASSESS_FILE, &mut self.brief_assess),
            (SCORES_FILE, &mut self.scores),
        ]
    }

    /// Record count per file, keyed by file name.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (file, records) in self.grounding_files() {
            out.insert(file.to_string(), records.len());
        }
        out.insert(MCQ_FILE.to_string(), self.mcq.len());
        for (file, records) in self.description_files() {
            out.insert(file.to_string(), records.len());
        }
        out
    }

    /// Ground-truth image table derived from the grounding records (size and
    /// boxes) and `assess.jsonl` (MOS).
    pub fn image_index(&self) -> ImageIndex {
        let mut index = ImageIndex::new();
        for (_, records) in self.grounding_files() {
            for r in records {
                let entry = index
                    .entry(r.image.clone())
                    .or_insert_with(|| AnnotatedImage {
                        id: r.image.clone(),
                        path: r.image.clone(),
                        width_px: r.width,
                        height_px: r.height,
                        mos: None,
                        boxes: Vec::new(),
                    });
                for b in &r.boxes {
                    if !entry.boxes.contains(b) {
                        entry.boxes.push(b.clone());
                    }
                }
            }
        }
        for d in &self.assess {
            if let Some(img) = index.get_mut(&d.image_id) {
                if img.mos.is_none() {
                    img.mos = d.mos;
                }
            }
        }
        index
    }
}

/// Settings for [`load_corpus_with`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub taxonomy: DistortionTaxonomy,
    pub scale: QualityScale,
    /// Fail on the first invalid record instead of collecting diagnostics.
    pub strict: bool,
}

impl LoadOptions {
    pub fn new(taxonomy: DistortionTaxonomy) -> Self {
        Self {
            taxonomy,
            scale: QualityScale::five(),
            strict: false,
        }
    }
}

/// Loads a corpus with the 5-level quality scale and lenient diagnostics.
pub fn load_corpus(
    root: &Path,
    taxonomy: &DistortionTaxonomy,
) -> Result<(CorpusBundle, Vec<Diagnostic>)> {
    load_corpus_with(root, &LoadOptions::new(taxonomy.clone()))
}

pub fn load_corpus_with(
    root: &Path,
    options: &LoadOptions,
) -> Result<(CorpusBundle, Vec<Diagnostic>)> {
    let mut loader = Loader {
        root,
        options,
        diagnostics: Vec::new(),
        seen_ids: HashSet::new(),
    };
    let tax = &options.taxonomy;
    let labels = options.scale.labels();

    let reg_grounding = loader.stream(REG_GROUNDING_FILE, |r: &GroundingRecord| {
        (r.id.clone(), r.check(tax))
    })?;
    let dist_detect = loader.stream(DIST_DETECT_FILE, |r: &GroundingRecord| {
        (r.id.clone(), r.check(tax))
    })?;
    let mcq = loader.stream(MCQ_FILE, |r: &McqSample| (r.id.clone(), r.check()))?;
    let desc = |r: &DescriptionSample| (r.id.clone(), r.check(tax, labels));
    let assess = loader.stream(ASSESS_FILE, desc)?;
    let brief_assess = loader.stream(BRIEF_ASSESS_FILE, desc)?;
    let scores = loader.stream(SCORES_FILE, desc)?;

    let metadata_path = root.join(METADATA_FILE);
    let text = read_required(&metadata_path)?;
    let metadata = Metadata(
        serde_json::from_str(&text).map_err(|e| Error::InvalidRecord {
            file: METADATA_FILE.into(),
            line: e.line(),
            reason: e.to_string(),
        })?,
    );

    let bundle = CorpusBundle {
        reg_grounding,
        dist_detect,
        mcq,
        assess,
        brief_assess,
        scores,
        metadata,
    };
    loader.check_image_references(&bundle)?;
    Ok((bundle, loader.diagnostics))
}

struct Loader<'a> {
    root: &'a Path,
    options: &'a LoadOptions,
    diagnostics: Vec<Diagnostic>,
    seen_ids: HashSet<String>,
}

impl Loader<'_> {
    fn reject(&mut self, file: &str, line: usize, reason: String) -> Result<()> {
        if self.options.strict {
            return Err(Error::InvalidRecord {
                file: file.to_string(),
                line,
                reason,
            });
        }
        self.diagnostics.push(Diagnostic::new(file, line, reason));
        Ok(())
    }

    fn stream<T, F>(&mut self, file: &str, check: F) -> Result<Vec<T>>
    where
        T: DeserializeOwned,
        F: Fn(&T) -> (String, std::result::Result<(), String>),
    {
        let text = read_required(&self.root.join(file))?;
        let mut out = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: T = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(e) => {
                    self.reject(file, line_no, format!("malformed JSON: {e}"))?;
                    continue;
                }
            };
            let (id, verdict) = check(&record);
            if let Err(reason) = verdict {
                self.reject(file, line_no, reason)?;
                continue;
            }
            if !self.seen_ids.insert(id.clone()) {
                self.reject(file, line_no, format!("duplicate record id {id:?}"))?;
                continue;
            }
            out.push(record);
        }
        Ok(out)
    }

    fn check_image_references(&mut self, bundle: &CorpusBundle) -> Result<()> {
        let mut sizes: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
        for (file, records) in bundle.grounding_files() {
            for (i, r) in records.iter().enumerate() {
                let size = *sizes.entry(&r.image).or_insert((r.width, r.height));
                if size != (r.width, r.height) {
                    self.reject(
                        file,
                        i + 1,
                        format!(
                            "image {} declared as {}x{} but earlier as {}x{}",
                            r.image, r.width, r.height, size.0, size.1
                        ),
                    )?;
                }
            }
        }
        let mut unresolved = Vec::new();
        for (i, r) in bundle.mcq.iter().enumerate() {
            if !sizes.contains_key(r.image_id.as_str()) {
                unresolved.push((MCQ_FILE, i + 1, r.image_id.clone()));
            }
        }
        for (file, records) in bundle.description_files() {
            for (i, r) in records.iter().enumerate() {
                if !sizes.contains_key(r.image_id.as_str()) {
                    unresolved.push((file, i + 1, r.image_id.clone()));
                }
            }
        }
        for (file, line, image) in unresolved {
            self.reject(
                file,
                line,
                format!("image {image} does not resolve to any grounding record"),
            )?;
        }
        Ok(())
    }
}

fn read_required(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingCorpusFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Serializes records as JSON Lines (one object per line, LF endings).
pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_file(path, to_jsonl(records)?.as_bytes())
}

/// Reads a JSON Lines file, failing on the first malformed line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::InvalidRecord {
                file: name.clone(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Pretty JSON document with a trailing newline.
pub fn to_json_document<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn save_corpus(bundle: &CorpusBundle, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (file, records) in bundle.grounding_files() {
        write_jsonl(&root.join(file), records)?;
    }
    write_jsonl(&root.join(MCQ_FILE), &bundle.mcq)?;
    for (file, records) in bundle.description_files() {
        write_jsonl(&root.join(file), records)?;
    }
    write_file(
        &root.join(METADATA_FILE),
        to_json_document(bundle.metadata.as_value())?.as_bytes(),
    )
}

/// Paths of every file `save_corpus` writes under `root`.
pub fn corpus_files(root: &Path) -> Vec<PathBuf> {
    RECORD_FILES
        .iter()
        .chain(std::iter::once(&METADATA_FILE))
        .map(|f| root.join(f))
        .collect()
}
