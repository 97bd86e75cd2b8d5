//! Task-aware data mixing: augmented grounding records injected at a ratio,
//! the perception file transformed or regenerated, and description labels
//! refined to a finer quality scale, all in one deterministic pass.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use image::DynamicImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    save_corpus, to_json_document, write_file, CorpusBundle, Diagnostic, MCQ_FILE,
};
use crate::error::{Error, Result};
use crate::levels::{refine_description_files, QualityScale};
use crate::model::{floor_fraction, GroundingRecord};
use crate::perception::{
    distractor_pools, expand_options, question_category, regenerate_mcq, shuffle_options,
    TemplateTable,
};
use crate::rng::{derive_key, record_rng};
use crate::spatial::{
    augment_grounding_record, augment_record_geometry, decode_image, encode_image,
    resize_to_token_budget, AugmentPolicy,
};

pub const MANIFEST_FILE: &str = "mix_manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundingMode {
    /// Augmented copies are appended to the originals.
    Add,
    /// Selected originals are substituted by their augmented versions.
    Replace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerceptionStrategy {
    Selfmade,
    Shuffle,
    MoreOptions,
    None,
}

impl FromStr for PerceptionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selfmade" => Ok(Self::Selfmade),
            "shuffle" => Ok(Self::Shuffle),
            "more-options" => Ok(Self::MoreOptions),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidConfig(format!(
                "unknown perception strategy {other:?}"
            ))),
        }
    }
}

impl fmt::Display for PerceptionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Selfmade => "selfmade",
            Self::Shuffle => "shuffle",
            Self::MoreOptions => "more-options",
            Self::None => "none",
        })
    }
}

/// Full description of one mixing run.
///
/// `seed` drives every random choice; `augmentation.seed` is not consulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub grounding_ratio: f64,
    pub grounding_mode: GroundingMode,
    /// Augmented copies per selected record (add mode only).
    pub copies: usize,
    pub augmentation: AugmentPolicy,
    pub perception_strategy: PerceptionStrategy,
    /// Option count targeted by the `more-options` strategy.
    pub target_options: usize,
    pub description_levels: usize,
    pub seed: u64,
}

impl Default for MixPlan {
    fn default() -> Self {
        Self {
            grounding_ratio: 0.0,
            grounding_mode: GroundingMode::Add,
            copies: 1,
            augmentation: AugmentPolicy::default(),
            perception_strategy: PerceptionStrategy::None,
            target_options: 5,
            description_levels: 5,
            seed: 0,
        }
    }
}

impl MixPlan {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.grounding_ratio) {
            return Err(Error::InvalidConfig(format!(
                "grounding ratio must lie in [0, 1], got {}",
                self.grounding_ratio
            )));
        }
        if self.copies == 0 {
            return Err(Error::InvalidConfig("copies must be at least 1".into()));
        }
        if self.grounding_mode == GroundingMode::Replace && self.copies != 1 {
            return Err(Error::InvalidConfig(
                "replace mode takes exactly one copy".into(),
            ));
        }
        if self.target_options < 2 {
            return Err(Error::InvalidConfig(
                "target option count must be at least 2".into(),
            ));
        }
        self.augmentation.validate()?;
        QualityScale::new(self.description_levels)?;
        Ok(())
    }

    pub fn selected_count(&self, n: usize) -> usize {
        floor_fraction(self.grounding_ratio, n)
    }
}

/// Supplies decoded images for augmentation.
pub trait ImageSource: Sync {
    fn load(&self, path: &str) -> Result<DynamicImage>;
}

/// Images stored under a corpus root.
#[derive(Debug, Clone)]
pub struct DirImages(pub PathBuf);

impl ImageSource for DirImages {
    fn load(&self, path: &str) -> Result<DynamicImage> {
        decode_image(&self.0.join(path))
    }
}

/// Result of [`mix`].
#[derive(Debug, Clone)]
pub struct MixOutput {
    pub bundle: CorpusBundle,
    /// Newly created images keyed by corpus-relative path.
    pub images: BTreeMap<String, DynamicImage>,
    pub diagnostics: Vec<Diagnostic>,
    pub manifest: MixManifest,
}

/// Indices of the records chosen for augmentation: ranked by a seeded hash
/// of the record id, ties broken by id, returned in file order.
pub fn select_records(
    records: &[GroundingRecord],
    count: usize,
    seed: u64,
    file: &str,
) -> Vec<usize> {
    let mut ranked: Vec<(u64, &str, usize)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                derive_key(seed, &format!("select:{file}"), &r.id),
                r.id.as_str(),
                i,
            )
        })
        .collect();
    ranked.sort_unstable();
    let mut chosen: Vec<usize> = ranked.into_iter().take(count).map(|(_, _, i)| i).collect();
    chosen.sort_unstable();
    chosen
}

type Augmented = (GroundingRecord, Option<DynamicImage>);

fn augment_one(
    record: &GroundingRecord,
    plan: &MixPlan,
    copy: usize,
    images: Option<&dyn ImageSource>,
) -> Result<Augmented> {
    let mut rng = record_rng(plan.seed, &format!("augment:{copy}"), &record.id);
    match images {
        Some(source) => {
            let image = source.load(&record.image)?;
            let (out, pixels) =
                augment_grounding_record(record, &image, &plan.augmentation, &mut rng, copy)?;
            Ok((out, Some(pixels)))
        }
        None => {
            let (out, _) = augment_record_geometry(record, &plan.augmentation, &mut rng, copy)?;
            Ok((out, None))
        }
    }
}

fn mix_grounding(
    records: &[GroundingRecord],
    file: &str,
    plan: &MixPlan,
    images: Option<&dyn ImageSource>,
    new_images: &mut BTreeMap<String, DynamicImage>,
) -> Result<Vec<GroundingRecord>> {
    let selected = select_records(records, plan.selected_count(records.len()), plan.seed, file);
    let jobs: Vec<(usize, usize)> = selected
        .iter()
        .flat_map(|&i| (0..plan.copies).map(move |c| (i, c)))
        .collect();
    let augmented: Vec<Augmented> = jobs
        .par_iter()
        .map(|&(i, copy)| augment_one(&records[i], plan, copy, images))
        .collect::<Result<_>>()?;

    let mut out = records.to_vec();
    for ((i, _), (record, pixels)) in jobs.iter().zip(augmented) {
        if let Some(pixels) = pixels {
            new_images.insert(record.image.clone(), pixels);
        }
        match plan.grounding_mode {
            GroundingMode::Add => out.push(record),
            GroundingMode::Replace => out[*i] = record,
        }
    }
    Ok(out)
}

/// Applies `plan` to `bundle`. Pixels are produced only when `images` is
/// given; otherwise only record geometry is augmented.
pub fn mix(
    bundle: &CorpusBundle,
    plan: &MixPlan,
    templates: &TemplateTable,
    images: Option<&dyn ImageSource>,
) -> Result<MixOutput> {
    plan.validate()?;
    let mut diagnostics = Vec::new();
    let mut new_images = BTreeMap::new();

    let mut out = bundle.clone();
    out.reg_grounding = mix_grounding(
        &bundle.reg_grounding,
        crate::corpus::REG_GROUNDING_FILE,
        plan,
        images,
        &mut new_images,
    )?;
    out.dist_detect = mix_grounding(
        &bundle.dist_detect,
        crate::corpus::DIST_DETECT_FILE,
        plan,
        images,
        &mut new_images,
    )?;

    match plan.perception_strategy {
        PerceptionStrategy::None => {}
        PerceptionStrategy::Selfmade => {
            let (samples, diags) = regenerate_mcq(&bundle.metadata, templates, plan.seed);
            out.mcq = samples;
            diagnostics.extend(diags);
        }
        PerceptionStrategy::Shuffle => {
            out.mcq = bundle
                .mcq
                .par_iter()
                .map(|s| shuffle_options(s, &mut record_rng(plan.seed, "shuffle", &s.id)))
                .collect();
        }
        PerceptionStrategy::MoreOptions => {
            let pools = distractor_pools(&bundle.mcq);
            let expanded: Vec<_> = bundle
                .mcq
                .par_iter()
                .map(|s| {
                    let pool = &pools[&question_category(&s.question)];
                    let mut rng = record_rng(plan.seed, "more-options", &s.id);
                    expand_options(s, pool, plan.target_options, &mut rng)
                })
                .collect();
            for (line, e) in expanded.iter().enumerate() {
                if e.shortfall > 0 {
                    diagnostics.push(Diagnostic::new(
                        MCQ_FILE,
                        line + 1,
                        format!(
                            "distractor pool exhausted for {}: {} option(s) short of {}",
                            e.sample.id, e.shortfall, plan.target_options
                        ),
                    ));
                }
            }
            out.mcq = expanded.into_iter().map(|e| e.sample).collect();
        }
    }

    let scale = QualityScale::new(plan.description_levels)?;
    let (refined, diags) = refine_description_files(&out, &scale);
    out = refined;
    diagnostics.extend(diags);

    let manifest = describe_plan(plan, bundle, &out);
    Ok(MixOutput {
        bundle: out,
        images: new_images,
        diagnostics,
        manifest,
    })
}

/// Record count of one file before and after mixing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDelta {
    pub before: usize,
    pub after: usize,
    pub delta: i64,
}

/// Reproducibility manifest written next to a mixed corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub grounding_ratio: f64,
    pub grounding_mode: GroundingMode,
    pub copies: usize,
    pub augmentation: String,
    pub augmentation_policy: AugmentPolicy,
    pub perception_strategy: PerceptionStrategy,
    pub target_options: usize,
    pub description_levels: usize,
    pub files: BTreeMap<String, FileDelta>,
    /// Effective configuration of the run that produced the corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

pub fn describe_plan(plan: &MixPlan, before: &CorpusBundle, after: &CorpusBundle) -> MixManifest {
    let after_counts = after.counts();
    let files = before
        .counts()
        .into_iter()
        .map(|(file, b)| {
            let a = after_counts.get(&file).copied().unwrap_or(0);
            let delta = FileDelta {
                before: b,
                after: a,
                delta: a as i64 - b as i64,
            };
            (file, delta)
        })
        .collect();
    MixManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: plan.seed,
        grounding_ratio: plan.grounding_ratio,
        grounding_mode: plan.grounding_mode,
        copies: plan.copies,
        augmentation: plan.augmentation.kind().to_string(),
        augmentation_policy: AugmentPolicy {
            seed: plan.seed,
            ..plan.augmentation.clone()
        },
        perception_strategy: plan.perception_strategy,
        target_options: plan.target_options,
        description_levels: plan.description_levels,
        files,
        config: None,
    }
}

impl MixManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "seed {}\ngrounding: {:.0}% {} ({:?} mode, {} cop{})\nperception: {}\ndescription: {} levels\n",
            self.seed,
            self.grounding_ratio * 100.0,
            self.augmentation,
            self.grounding_mode,
            self.copies,
            if self.copies == 1 { "y" } else { "ies" },
            self.perception_strategy,
            self.description_levels,
        );
        for (file, d) in &self.files {
            out.push_str(&format!(
                "  {file:<22} {:>6} -> {:>6} ({:+})\n",
                d.before, d.after, d.delta
            ));
        }
        out
    }

    /// Reads the manifest of a mixed corpus, if the root has one.
    pub fn read(root: &Path) -> Result<Option<Self>> {
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }
}

/// Writes the mixed corpus, its new images, copies of the source images it
/// still references, and the manifest.
pub fn write_mix_output(
    output: &MixOutput,
    source_root: Option<&Path>,
    out_root: &Path,
) -> Result<()> {
    save_corpus(&output.bundle, out_root)?;
    for (path, image) in &output.images {
        encode_image(image, &out_root.join(path))?;
    }
    if let Some(src) = source_root {
        for path in output.bundle.image_index().keys() {
            if output.images.contains_key(path) {
                continue;
            }
            let from = src.join(path);
            if from.is_file() {
                let to = out_root.join(path);
                if let Some(parent) = to.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                std::fs::copy(&from, &to).map_err(|e| Error::io(&from, e))?;
            }
        }
    }
    write_file(
        &out_root.join(MANIFEST_FILE),
        to_json_document(&output.manifest)?.as_bytes(),
    )
}

/// Downscales every image of the tree under `root` whose patch grid exceeds
/// `max_tokens`, and updates the sizes declared by grounding records.
/// Returns the number of resized images. Images missing on disk are skipped.
pub fn apply_token_budget(
    bundle: &mut CorpusBundle,
    root: &Path,
    max_tokens: u64,
    patch_px: u32,
) -> Result<usize> {
    let paths: Vec<String> = bundle.image_index().into_keys().collect();
    let resized: Vec<Option<(String, (u32, u32))>> = paths
        .par_iter()
        .map(|path| {
            let file = root.join(path);
            if !file.is_file() {
                return Ok(None);
            }
            let image = decode_image(&file)?;
            let (w, h) = (image.width(), image.height());
            let target = resize_to_token_budget(w, h, max_tokens, patch_px);
            if target == (w, h) {
                return Ok(None);
            }
            let scaled = image.resize_exact(target.0, target.1, FilterType::Lanczos3);
            encode_image(&scaled, &file)?;
            Ok(Some((path.clone(), target)))
        })
        .collect::<Result<_>>()?;
    let resized: BTreeMap<String, (u32, u32)> = resized.into_iter().flatten().collect();
    for records in [&mut bundle.reg_grounding, &mut bundle.dist_detect] {
        for r in records.iter_mut() {
            if let Some(&(w, h)) = resized.get(&r.image) {
                r.width = w;
                r.height = h;
            }
        }
    }
    Ok(resized.len())
}
