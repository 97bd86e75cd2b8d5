mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use diqa_core::corpus::{
    load_corpus_with, read_jsonl, save_corpus, to_json_document, write_file, write_jsonl,
    CorpusBundle, Diagnostic, LoadOptions,
};
use diqa_core::fixture::synth_corpus_with;
use diqa_core::levels::{make_score_only_records, ScoreOnlyTemplate};
use diqa_core::metrics::MapMode;
use diqa_core::mixer::{
    apply_token_budget, describe_plan, mix, write_mix_output, DirImages, GroundingMode,
    ImageSource, MixManifest, MixOutput, MixPlan, PerceptionStrategy,
};
use diqa_core::perception::TemplateTable;
use diqa_core::scoring::{export_predictions, score_corpus, PredictionRecord, ScoreOptions};
use diqa_core::spatial::AugmentPolicy;
use diqa_core::{DistortionTaxonomy, Error, QualityScale};

use settings::Settings;

const RUN_MANIFEST_FILE: &str = "run_manifest.json";
const RUN_MANIFEST_SCHEMA_VERSION: u32 = 1;
const SCORE_ONLY_FILE: &str = "score_only.jsonl";
const PREDICTIONS_FILE: &str = "predictions.jsonl";
const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INVALID_RECORD: u8 = 3;
const EXIT_ALIGNMENT: u8 = 4;
const EXIT_IO: u8 = 5;

/// Corpus tooling for explainable image quality assessment: box-aware
/// augmentation, question augmentation, quality-level refinement, data
/// mixing and leaderboard scoring.
///
/// Every flag can also be set through a `DIQA_<FLAG>` environment variable
/// (for example DIQA_SEED, DIQA_ALPHA_MIN) or a `--config` TOML file whose
/// keys are flag names with underscores, optionally inside a table named
/// after the subcommand. Precedence: flag > environment > config > default.
///
/// Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
/// 3 invalid record, 4 prediction alignment error, 5 I/O error.
#[derive(Debug, Parser)]
#[command(name = "diqa", version, max_term_width = 100)]
struct Cli {
    /// TOML file with default settings.
    #[arg(long, global = true, env = "DIQA_CONFIG", value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for record-level parallelism [default: all cores].
    /// Outputs do not depend on it.
    #[arg(long, global = true, env = "DIQA_WORKERS", value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a corpus and report every invalid record.
    Validate {
        #[command(flatten)]
        input: CorpusIn,
        /// Quality scale of the description labels (5, 10, 15 or 20)
        /// [default: from mix_manifest.json, else 5].
        #[arg(long, env = "DIQA_LEVELS")]
        levels: Option<usize>,
        /// Also write the diagnostics and a run manifest here.
        #[arg(long, env = "DIQA_OUT", value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Add flipped and cropped copies of grounding records and their images.
    AugmentGrounding {
        #[command(flatten)]
        input: CorpusIn,
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        grounding: GroundingArgs,
        #[command(flatten)]
        augment: AugmentArgs,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Shuffle, extend or regenerate the multiple-choice questions.
    AugmentPerception {
        #[command(flatten)]
        input: CorpusIn,
        #[command(flatten)]
        out: OutDir,
        /// Question augmentation: `shuffle` permutes options, `more-options`
        /// adds distractors, `selfmade` rebuilds questions from metadata with
        /// test-style templates [default: shuffle].
        #[arg(long, env = "DIQA_STRATEGY", value_parser = ["selfmade", "shuffle", "more-options"])]
        strategy: Option<String>,
        #[command(flatten)]
        perception: PerceptionArgs,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Rewrite description quality labels on a finer MOS scale.
    RefineLevels {
        #[command(flatten)]
        input: CorpusIn,
        #[command(flatten)]
        out: OutDir,
        /// Number of equal MOS intervals: 5 uses bad..excellent, 10/15/20 use
        /// letters from `a` that map back to the five words [default: 10].
        #[arg(long, env = "DIQA_LEVELS")]
        levels: Option<usize>,
        /// Also write score-only records (global quality level as the only
        /// target) built from scores.jsonl.
        #[arg(long, env = "DIQA_SCORE_ONLY")]
        score_only: bool,
        /// TOML file with `prompt` and `response` (containing `{quality}`)
        /// for score-only records.
        #[arg(long, env = "DIQA_SCORE_TEMPLATE", value_name = "FILE")]
        score_template: Option<PathBuf>,
    },
    /// Apply grounding, perception and description augmentation in one pass.
    Mix {
        #[command(flatten)]
        input: CorpusIn,
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        grounding: GroundingArgs,
        #[command(flatten)]
        augment: AugmentArgs,
        /// Perception strategy, or `none` to keep mcq.jsonl [default: none].
        #[arg(long, env = "DIQA_PERCEPTION", value_parser = ["selfmade", "shuffle", "more-options", "none"])]
        perception: Option<String>,
        #[command(flatten)]
        perception_args: PerceptionArgs,
        /// Quality scale written to the description files [default: 5].
        #[arg(long, env = "DIQA_LEVELS")]
        levels: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Score a prediction file against a ground-truth corpus.
    Score {
        #[command(flatten)]
        input: CorpusIn,
        /// JSONL file of {"id", "response"} records.
        predictions: PathBuf,
        /// Quality scale of the ground-truth labels
        /// [default: from mix_manifest.json, else 5].
        #[arg(long, env = "DIQA_LEVELS")]
        levels: Option<usize>,
        /// IoU thresholds averaged by the mAP metrics, comma separated
        /// [default: 0.5].
        #[arg(long, env = "DIQA_IOU_THRESHOLDS", value_delimiter = ',')]
        iou_thresholds: Option<Vec<f64>>,
        /// Force one mAP aggregation for all detection metrics. Default:
        /// region mAP per image, distortion and description mAP pooled per
        /// class.
        #[arg(long, env = "DIQA_MAP_MODE", value_parser = ["per-image", "pooled"])]
        map_mode: Option<String>,
        /// Accept only canonical response formats.
        #[arg(long, env = "DIQA_STRICT_PARSE")]
        strict_parse: bool,
        /// Write score_report.json, score_report.txt, diagnostics.jsonl and a
        /// run manifest here.
        #[arg(long, env = "DIQA_OUT", value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with images.
    Synth {
        #[command(flatten)]
        out: OutDir,
        /// Number of images [default: 100].
        #[arg(long, env = "DIQA_IMAGES")]
        images: Option<usize>,
        /// Distortion label file, one label per line.
        #[arg(long, env = "DIQA_TAXONOMY", value_name = "FILE")]
        taxonomy: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Write the ground truth of a corpus as a perfect prediction file.
    ExportPredictions {
        #[command(flatten)]
        input: CorpusIn,
        #[command(flatten)]
        out: OutDir,
        /// Quality scale of the ground-truth labels
        /// [default: from mix_manifest.json, else 5].
        #[arg(long, env = "DIQA_LEVELS")]
        levels: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct CorpusIn {
    /// Corpus root holding the JSONL record files and train_metadata.json.
    root: PathBuf,
    /// Distortion label file, one label per line [default: built-in list].
    #[arg(long, env = "DIQA_TAXONOMY", value_name = "FILE")]
    taxonomy: Option<PathBuf>,
    /// Fail on the first invalid record instead of skipping it.
    #[arg(long, env = "DIQA_STRICT")]
    strict: bool,
}

#[derive(Debug, Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "DIQA_OUT", value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeedArg {
    /// Seed for every random choice [default: 0].
    #[arg(long, env = "DIQA_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GroundingArgs {
    /// Fraction of grounding records per file that receive augmented versions
    /// (the mixing ratio, typically 0.15, 0.30 or 0.45).
    #[arg(long, env = "DIQA_RATIO")]
    ratio: Option<f64>,
    /// `add` appends augmented versions, `replace` substitutes them for the
    /// originals [default: add].
    #[arg(long, env = "DIQA_MODE", value_parser = ["add", "replace"])]
    mode: Option<String>,
    /// Augmented versions per selected record, add mode only [default: 1].
    #[arg(long, env = "DIQA_COPIES")]
    copies: Option<usize>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Smallest crop ratio alpha; the crop keeps alpha*W x alpha*H pixels
    /// [default: 0.7].
    #[arg(long, env = "DIQA_ALPHA_MIN")]
    alpha_min: Option<f64>,
    /// Largest crop ratio alpha; 1 disables cropping when alpha-min is 1 too
    /// [default: 1.0].
    #[arg(long, env = "DIQA_ALPHA_MAX")]
    alpha_max: Option<f64>,
    /// Probability of a horizontal flip [default: 0.5].
    #[arg(long, env = "DIQA_FLIP_PROB")]
    flip_prob: Option<f64>,
    /// Minimum fraction of a box's area that must survive the crop for the
    /// box to be kept [default: 0.3].
    #[arg(long, env = "DIQA_RETENTION")]
    retention: Option<f64>,
    /// Pixel-token budget of the vision encoder; larger images are
    /// downscaled to fit. Unset keeps the resolution.
    #[arg(long, env = "DIQA_MAX_TOKENS")]
    max_tokens: Option<u64>,
    /// Side of one vision patch in pixels, used with --max-tokens
    /// [default: 28].
    #[arg(long, env = "DIQA_PATCH_PX")]
    patch_px: Option<u32>,
    /// Transform records only; no images are read or written.
    #[arg(long, env = "DIQA_GEOMETRY_ONLY")]
    geometry_only: bool,
}

#[derive(Debug, Args)]
struct PerceptionArgs {
    /// Option count reached by `more-options` [default: 5].
    #[arg(long, env = "DIQA_TARGET_OPTIONS")]
    target_options: Option<usize>,
    /// TOML file of `[[template]]` entries for `selfmade`
    /// [default: built-in templates].
    #[arg(long, env = "DIQA_TEMPLATES", value_name = "FILE")]
    templates: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::InvalidRecord { .. } => EXIT_INVALID_RECORD,
                Error::Alignment(_) => EXIT_ALIGNMENT,
                Error::Io { .. } | Error::MissingCorpusFile(_) => EXIT_IO,
                Error::InvalidConfig(_) => EXIT_USAGE,
                _ => EXIT_OTHER,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_OTHER
}

fn section(command: &Command) -> &'static str {
    match command {
        Command::Validate { .. } => "validate",
        Command::AugmentGrounding { .. } => "augment-grounding",
        Command::AugmentPerception { .. } => "augment-perception",
        Command::RefineLevels { .. } => "refine-levels",
        Command::Mix { .. } => "mix",
        Command::Score { .. } => "score",
        Command::Synth { .. } => "synth",
        Command::ExportPredictions { .. } => "export-predictions",
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let name = section(&cli.command);
    let mut s = Settings::load(cli.config.as_deref(), name)?;
    if let Some(n) = s.pick_unrecorded(cli.workers, "workers")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Validate { input, levels, out } => validate(&mut s, input, levels, out),
        Command::AugmentGrounding {
            input,
            out,
            grounding,
            augment,
            seed,
        } => {
            let k = source_levels(&input.root)?;
            let (bundle, _) = load(&mut s, &input, k)?;
            let plan = MixPlan {
                grounding_ratio: s.pick(grounding.ratio, "ratio", 1.0)?,
                grounding_mode: grounding_mode(&mut s, grounding.mode)?,
                copies: s.pick(grounding.copies, "copies", 1)?,
                augmentation: augment_policy(&mut s, &augment)?,
                description_levels: k,
                seed: s.pick(seed.seed, "seed", 0)?,
                ..MixPlan::default()
            };
            let budget = token_budget(&mut s, &augment)?;
            let geometry_only = s.switch(augment.geometry_only, "geometry_only")?;
            let out = out_dir(&s, out)?;
            let templates = TemplateTable::default();
            run_mix(
                s,
                name,
                &input.root,
                &out,
                &bundle,
                &plan,
                &templates,
                geometry_only,
                budget,
                true,
            )
        }
        Command::AugmentPerception {
            input,
            out,
            strategy,
            perception,
            seed,
        } => {
            let k = source_levels(&input.root)?;
            let (bundle, _) = load(&mut s, &input, k)?;
            let strategy: String = s.pick(strategy, "strategy", "shuffle".into())?;
            let strategy: PerceptionStrategy = strategy.parse()?;
            if strategy == PerceptionStrategy::None {
                return Err(Error::InvalidConfig("strategy must not be `none`".into()).into());
            }
            let plan = MixPlan {
                perception_strategy: strategy,
                target_options: s.pick(perception.target_options, "target_options", 5)?,
                description_levels: k,
                seed: s.pick(seed.seed, "seed", 0)?,
                ..MixPlan::default()
            };
            let templates = templates(&mut s, perception.templates)?;
            let out = out_dir(&s, out)?;
            run_mix(
                s,
                name,
                &input.root,
                &out,
                &bundle,
                &plan,
                &templates,
                true,
                None,
                true,
            )
        }
        Command::RefineLevels {
            input,
            out,
            levels,
            score_only,
            score_template,
        } => {
            let (bundle, _) = load(&mut s, &input, source_levels(&input.root)?)?;
            let plan = MixPlan {
                description_levels: s.pick(levels, "levels", 10)?,
                ..MixPlan::default()
            };
            let score_only = s.switch(score_only, "score_only")?;
            let template = match s.pick_opt(score_template, "score_template")? {
                Some(path) => ScoreOnlyTemplate::from_toml(&read_text(&path)?)?,
                None => ScoreOnlyTemplate::default(),
            };
            let out = out_dir(&s, out)?;
            let output = mix(&bundle, &plan, &TemplateTable::default(), None)?;
            if score_only {
                let records = make_score_only_records(&output.bundle.scores, &template);
                write_jsonl(&out.join(SCORE_ONLY_FILE), &records)?;
                println!("wrote {} score-only records", records.len());
            }
            finish_mix(s, name, &input.root, &out, output, None)
        }
        Command::Mix {
            input,
            out,
            grounding,
            augment,
            perception,
            perception_args,
            levels,
            seed,
        } => {
            let (bundle, _) = load(&mut s, &input, source_levels(&input.root)?)?;
            let strategy: String = s.pick(perception, "perception", "none".into())?;
            let plan = MixPlan {
                grounding_ratio: s.pick(grounding.ratio, "ratio", 0.0)?,
                grounding_mode: grounding_mode(&mut s, grounding.mode)?,
                copies: s.pick(grounding.copies, "copies", 1)?,
                augmentation: augment_policy(&mut s, &augment)?,
                perception_strategy: strategy.parse()?,
                target_options: s.pick(perception_args.target_options, "target_options", 5)?,
                description_levels: s.pick(levels, "levels", 5)?,
                seed: s.pick(seed.seed, "seed", 0)?,
            };
            let templates = templates(&mut s, perception_args.templates)?;
            let budget = token_budget(&mut s, &augment)?;
            let geometry_only = s.switch(augment.geometry_only, "geometry_only")?;
            let out = out_dir(&s, out)?;
            run_mix(
                s,
                name,
                &input.root,
                &out,
                &bundle,
                &plan,
                &templates,
                geometry_only,
                budget,
                false,
            )
        }
        Command::Score {
            input,
            predictions,
            levels,
            iou_thresholds,
            map_mode,
            strict_parse,
            out,
        } => {
            let k = input_levels(&mut s, &input.root, levels)?;
            let (bundle, _) = load(&mut s, &input, k)?;
            let mut options = ScoreOptions::new(
                taxonomy(&mut s, input.taxonomy.clone())?,
                QualityScale::new(k)?,
            );
            options.iou_thresholds = s.pick(iou_thresholds, "iou_thresholds", vec![0.5])?;
            options.map_mode = match s.pick_opt(map_mode, "map_mode")?.as_deref() {
                None => None,
                Some("per-image") => Some(MapMode::PerImage),
                Some("pooled") => Some(MapMode::Pooled),
                Some(other) => {
                    return Err(Error::InvalidConfig(format!("unknown map mode {other:?}")).into())
                }
            };
            options.strict_parse = s.switch(strict_parse, "strict_parse")?;
            let preds: Vec<PredictionRecord> = read_jsonl(&predictions)?;
            let outcome = score_corpus(&bundle, &preds, &options)?;
            print!("{}", outcome.report.to_table());
            eprintln!("{} diagnostic(s)", outcome.diagnostics.len());
            if let Some(out) = s.pick_unrecorded(out, "out")? {
                write_file(
                    &out.join("score_report.json"),
                    to_json_document(&outcome.report)?.as_bytes(),
                )?;
                write_file(
                    &out.join("score_report.txt"),
                    outcome.report.to_table().as_bytes(),
                )?;
                write_jsonl(&out.join(DIAGNOSTICS_FILE), &outcome.diagnostics)?;
                write_run_manifest(&out, name, s.effective)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            out,
            images,
            taxonomy: tax,
            seed,
        } => {
            let n = s.pick(images, "images", 100)?;
            let seed = s.pick(seed.seed, "seed", 0)?;
            let tax = taxonomy(&mut s, tax)?;
            let out = out_dir(&s, out)?;
            let fixture = synth_corpus_with(n, seed, &tax);
            fixture.write(&out)?;
            write_run_manifest(&out, name, s.effective)?;
            println!("wrote {n} synthetic images to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportPredictions { input, out, levels } => {
            let k = input_levels(&mut s, &input.root, levels)?;
            let (bundle, _) = load(&mut s, &input, k)?;
            let out = out_dir(&s, out)?;
            let preds = export_predictions(&bundle, &QualityScale::new(k)?)?;
            write_jsonl(&out.join(PREDICTIONS_FILE), &preds)?;
            write_run_manifest(&out, name, s.effective)?;
            println!("wrote {} predictions", preds.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn out_dir(s: &Settings, out: OutDir) -> Result<PathBuf> {
    s.pick_unrecorded(out.out, "out")?
        .ok_or_else(|| Error::InvalidConfig("--out is required".into()).into())
}

fn taxonomy(s: &mut Settings, flag: Option<PathBuf>) -> Result<DistortionTaxonomy> {
    match s.pick_opt(flag, "taxonomy")? {
        Some(path) => Ok(DistortionTaxonomy::from_config(&read_text(&path)?)?),
        None => Ok(DistortionTaxonomy::default()),
    }
}

fn templates(s: &mut Settings, flag: Option<PathBuf>) -> Result<TemplateTable> {
    match s.pick_opt(flag, "templates")? {
        Some(path) => Ok(TemplateTable::from_toml(&read_text(&path)?)?),
        None => Ok(TemplateTable::default()),
    }
}

fn grounding_mode(s: &mut Settings, flag: Option<String>) -> Result<GroundingMode> {
    match s.pick(flag, "mode", "add".into())?.as_str() {
        "add" => Ok(GroundingMode::Add),
        "replace" => Ok(GroundingMode::Replace),
        other => Err(Error::InvalidConfig(format!("unknown grounding mode {other:?}")).into()),
    }
}

fn augment_policy(s: &mut Settings, a: &AugmentArgs) -> Result<AugmentPolicy> {
    let d = AugmentPolicy::default();
    Ok(AugmentPolicy {
        alpha_min: s.pick(a.alpha_min, "alpha_min", d.alpha_min)?,
        alpha_max: s.pick(a.alpha_max, "alpha_max", d.alpha_max)?,
        flip_probability: s.pick(a.flip_prob, "flip_prob", d.flip_probability)?,
        min_box_retention: s.pick(a.retention, "retention", d.min_box_retention)?,
        seed: d.seed,
    })
}

fn token_budget(s: &mut Settings, a: &AugmentArgs) -> Result<Option<(u64, u32)>> {
    let max_tokens = s.pick_opt(a.max_tokens, "max_tokens")?;
    let patch_px = s.pick(a.patch_px, "patch_px", 28)?;
    match max_tokens {
        Some(0) => Err(Error::InvalidConfig("--max-tokens must be positive".into()).into()),
        _ if patch_px == 0 => {
            Err(Error::InvalidConfig("--patch-px must be positive".into()).into())
        }
        Some(t) => Ok(Some((t, patch_px))),
        None => Ok(None),
    }
}

/// Quality scale of a corpus: `levels` (flag, environment or config), else
/// the root's mix manifest, else 5.
fn input_levels(s: &mut Settings, root: &Path, levels: Option<usize>) -> Result<usize> {
    let k = match s.pick_opt(levels, "levels")? {
        Some(k) => k,
        None => MixManifest::read(root)?.map_or(5, |m| m.description_levels),
    };
    s.effective.insert("levels".into(), k.into());
    Ok(k)
}

/// Quality scale of an input corpus whose `levels` setting names the output
/// scale: the root's mix manifest, else 5.
fn source_levels(root: &Path) -> Result<usize> {
    Ok(MixManifest::read(root)?.map_or(5, |m| m.description_levels))
}

fn load(s: &mut Settings, input: &CorpusIn, k: usize) -> Result<(CorpusBundle, Vec<Diagnostic>)> {
    let mut options = LoadOptions::new(taxonomy(s, input.taxonomy.clone())?);
    options.scale = QualityScale::new(k)?;
    options.strict = s.switch(input.strict, "strict")?;
    let (bundle, diagnostics) = load_corpus_with(&input.root, &options)?;
    report(&diagnostics);
    Ok((bundle, diagnostics))
}

fn report(diagnostics: &[Diagnostic]) {
    for d in diagnostics {
        eprintln!("warning: {d}");
    }
}

fn validate(
    s: &mut Settings,
    input: CorpusIn,
    levels: Option<usize>,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let k = input_levels(s, &input.root, levels)?;
    let (bundle, diagnostics) = load(s, &input, k)?;
    for (file, count) in bundle.counts() {
        println!("{file:<22} {count:>8}");
    }
    println!("{} diagnostic(s)", diagnostics.len());
    if let Some(out) = s.pick_unrecorded(out, "out")? {
        write_jsonl(&out.join(DIAGNOSTICS_FILE), &diagnostics)?;
        write_run_manifest(&out, "validate", std::mem::take(&mut s.effective))?;
    }
    Ok(if diagnostics.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVALID_RECORD)
    })
}

#[allow(clippy::too_many_arguments)]
fn run_mix(
    s: Settings,
    name: &str,
    root: &Path,
    out: &Path,
    bundle: &CorpusBundle,
    plan: &MixPlan,
    templates: &TemplateTable,
    geometry_only: bool,
    budget: Option<(u64, u32)>,
    keep_descriptions: bool,
) -> Result<ExitCode> {
    let source = DirImages(root.to_path_buf());
    let images: Option<&dyn ImageSource> = if geometry_only { None } else { Some(&source) };
    let mut output = mix(bundle, plan, templates, images)?;
    if keep_descriptions {
        output.bundle.assess = bundle.assess.clone();
        output.bundle.brief_assess = bundle.brief_assess.clone();
        output.bundle.scores = bundle.scores.clone();
        output
            .diagnostics
            .retain(|d| !d.reason.contains("has no MOS"));
        output.manifest = describe_plan(plan, bundle, &output.bundle);
    }
    finish_mix(s, name, root, out, output, budget)
}

fn finish_mix(
    mut s: Settings,
    name: &str,
    root: &Path,
    out: &Path,
    mut output: MixOutput,
    budget: Option<(u64, u32)>,
) -> Result<ExitCode> {
    report(&output.diagnostics);
    let config = std::mem::take(&mut s.effective);
    output.manifest.config = Some(Value::Object(config.clone()));
    write_mix_output(&output, Some(root), out)?;
    if let Some((max_tokens, patch_px)) = budget {
        let resized = apply_token_budget(&mut output.bundle, out, max_tokens, patch_px)?;
        save_corpus(&output.bundle, out)?;
        println!("resized {resized} image(s) to the token budget");
    }
    write_run_manifest(out, name, config)?;
    print!("{}", output.manifest.to_text());
    Ok(ExitCode::SUCCESS)
}

fn write_run_manifest(out: &Path, command: &str, config: Map<String, Value>) -> Result<()> {
    let manifest = json!({
        "schema_version": RUN_MANIFEST_SCHEMA_VERSION,
        "tool": "diqa",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
    });
    write_file(
        &out.join(RUN_MANIFEST_FILE),
        to_json_document(&manifest)?.as_bytes(),
    )?;
    Ok(())
}
