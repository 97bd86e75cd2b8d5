//! The ten acceptance criteria, each reported on its own PASS/FAIL line.

mod common;

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use image::DynamicImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diqa_core::corpus::{
    load_corpus_with, read_jsonl, to_json_document, write_file, write_jsonl, CorpusBundle,
    LoadOptions,
};
use diqa_core::fixture::synth_corpus;
use diqa_core::metrics::{average_precision, final_score, iou, ScoreComponents};
use diqa_core::mixer::{
    mix, write_mix_output, DirImages, GroundingMode, MixPlan, PerceptionStrategy,
};
use diqa_core::parser::{
    parse_description, parse_detections, parse_mcq_choice, parse_quality_word,
    serialize_detections, DetectionParser,
};
use diqa_core::perception::TemplateTable;
use diqa_core::scoring::{export_predictions, score_corpus, PredictionRecord, ScoreOptions};
use diqa_core::spatial::{augment_grounding_record, crop_box, flip_box, AugmentPolicy, CropSpec};
use diqa_core::{DistortionBox, DistortionTaxonomy, GroundingRecord, QualityScale, QualityWord};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(detail.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(
        elapsed < limit,
        format!("took {elapsed:?}, limit {limit:?}"),
    )
}

fn quantization_composition() -> Outcome {
    let start = Instant::now();
    let five = QualityScale::five();
    let mut mismatches = 0;
    let mut evaluated = 0;
    for k in [10, 15, 20] {
        let scale = QualityScale::new(k).map_err(|e| e.to_string())?;
        for i in 0..=10_000u32 {
            let s = 1.0 + 4.0 * f64::from(i) / 10_000.0;
            let fine = scale.quantize(s).map_err(|e| e.to_string())?;
            let back = scale.map_back(fine).map_err(|e| e.to_string())?;
            let direct: QualityWord = five
                .quantize(s)
                .map_err(|e| e.to_string())?
                .parse()
                .unwrap();
            mismatches += usize::from(back != direct);
            evaluated += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "{evaluated} points, 0 mismatches in {:?}",
        start.elapsed()
    ))
}

fn anchor_values() -> Outcome {
    let s10 = QualityScale::new(10).map_err(|e| e.to_string())?;
    let alphabet: Vec<&str> = s10.labels().iter().map(String::as_str).collect();
    check(
        alphabet == ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"],
        format!("alphabet {alphabet:?}"),
    )?;
    check(
        s10.map_back("c").ok() == Some(QualityWord::Poor),
        "c must map to poor",
    )?;
    check(
        s10.map_back("d").ok() == Some(QualityWord::Poor),
        "d must map to poor",
    )?;
    check(
        s10.map_back("i").ok() == Some(QualityWord::Excellent),
        "i must map to excellent",
    )?;
    check(
        s10.map_back("j").ok() == Some(QualityWord::Excellent),
        "j must map to excellent",
    )?;
    check(s10.quantize(1.0).ok() == Some("a"), "1.0 -> a")?;
    check(s10.quantize(3.0).ok() == Some("f"), "3.0 -> f")?;
    check(s10.quantize(2.0).ok() == Some("c"), "2.0 -> c")?;
    Ok("a..j; c -> poor, j -> excellent".into())
}

fn flip_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let a = common::any_box(&mut rng, &common::LABELS);
        let b = common::any_box(&mut rng, &common::LABELS);
        violations += usize::from(flip_box(&flip_box(&a)) != a);
        worst = worst.max((iou(&a, &b) - iou(&flip_box(&a), &flip_box(&b))).abs());
    }
    check(
        violations == 0,
        format!("{violations} involution violations"),
    )?;
    check(worst <= 1e-12, format!("IoU drift {worst:e}"))?;
    Ok(format!("1e5 boxes, 0 violations, max IoU drift {worst:e}"))
}

fn in_range(b: &DistortionBox) -> bool {
    b.x1 < b.x2 && b.y1 < b.y2 && b.x2 <= 1000 && b.y2 <= 1000
}

fn crop_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let b = common::any_box(&mut rng, &common::LABELS);
        let (w, h) = (rng.random_range(1..4000), rng.random_range(1..4000));
        let out = crop_box(&b, &CropSpec::identity(), w, h, 1.0);
        check(
            out.as_ref() == Some(&b),
            format!("alpha=1 changed {b} on {w}x{h}: {out:?}"),
        )?;
    }

    let spec = CropSpec {
        alpha: 0.5,
        offset_x_px: 0,
        offset_y_px: 0,
    };
    let worked = crop_box(
        &DistortionBox::new("blur", 100, 100, 300, 300),
        &spec,
        1000,
        1000,
        0.3,
    );
    check(
        worked == Some(DistortionBox::new("blur", 200, 200, 600, 600)),
        format!("worked example gave {worked:?}"),
    )?;

    let policy = AugmentPolicy::default();
    let mut emitted = 0;
    for run in 0..1000 {
        let (w, h) = (rng.random_range(16..64), rng.random_range(16..64));
        let n = rng.random_range(1..=4);
        let boxes: Vec<DistortionBox> = (0..n)
            .map(|_| common::any_box(&mut rng, &common::LABELS))
            .collect();
        let record = GroundingRecord {
            id: format!("r{run}"),
            image: format!("img{run}.png"),
            width: w,
            height: h,
            conversations: Vec::new(),
            boxes,
        };
        let image = DynamicImage::new_rgb8(w, h);
        let Ok((out, pixels)) = augment_grounding_record(&record, &image, &policy, &mut rng, 0)
        else {
            // every crop dropped the boxes: nothing emitted, nothing to check
            continue;
        };
        check(
            (pixels.width(), pixels.height()) == (out.width, out.height),
            format!("run {run}: image and record sizes differ"),
        )?;
        for b in &out.boxes {
            check(in_range(b), format!("run {run}: emitted {b}"))?;
            emitted += 1;
        }
    }
    Ok(format!(
        "identity on 1e4 boxes, worked example exact, {emitted} emitted boxes in range"
    ))
}

fn ap_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels = &common::LABELS[..2];
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let preds = common::boxes(&mut rng, 5, labels);
        let gts = common::boxes(&mut rng, 5, labels);
        let threshold = [0.1, 0.3, 0.5, 0.75][rng.random_range(0..4)];
        for agnostic in [false, true] {
            let got = average_precision(&preds, &gts, threshold, agnostic);
            let want = common::oracle_ap(&preds, &gts, threshold, agnostic);
            worst = worst.max((got - want).abs());
        }
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("1000 instances x 2 modes, max deviation {worst:e}"))
}

fn final_score_rows() -> Outcome {
    let rows: [(f64, [f64; 6]); 6] = [
        (2.80, [0.81, 0.40, 0.12, 0.20, 0.43, 0.83]),
        (2.43, [0.72, 0.33, 0.11, 0.15, 0.37, 0.76]),
        (2.43, [0.72, 0.33, 0.11, 0.15, 0.37, 0.76]),
        (2.26, [0.72, 0.14, 0.11, 0.14, 0.37, 0.78]),
        (1.67, [0.52, 0.08, 0.02, 0.05, 0.38, 0.61]),
        (0.70, [0.70, 0.00, 0.00, 0.00, 0.00, 0.00]),
    ];
    let mut worst: f64 = 0.0;
    for (reported, c) in rows {
        let components = ScoreComponents {
            perception_accuracy: c[0],
            region_map: c[1],
            distortion_map: c[2],
            description_map: c[3],
            key_distortion_acc: c[4],
            image_quality_accuracy: c[5],
        };
        let diff = (final_score(&components) - reported).abs();
        check(diff <= 0.015, format!("row {reported}: off by {diff}"))?;
        worst = worst.max(diff);
    }
    Ok(format!("6 rows, max deviation {worst:.3}"))
}

/// Fixture -> mix (0.45, selfmade, k=10) -> self-predictions -> score, all
/// under `root`.
fn desk_run(root: &Path) -> Result<ScoreComponents, String> {
    let err = |e: diqa_core::Error| e.to_string();
    let source = root.join("fixture");
    let mixed = root.join("mixed");
    synth_corpus(100, 11).write(&source).map_err(err)?;

    let tax = DistortionTaxonomy::default();
    let (bundle, diags) = load_corpus_with(&source, &LoadOptions::new(tax.clone())).map_err(err)?;
    check(diags.is_empty(), format!("fixture diagnostics: {diags:?}"))?;

    let plan = MixPlan {
        grounding_ratio: 0.45,
        grounding_mode: GroundingMode::Add,
        perception_strategy: PerceptionStrategy::Selfmade,
        description_levels: 10,
        seed: 7,
        ..MixPlan::default()
    };
    let images = DirImages(source.clone());
    let output = mix(&bundle, &plan, &TemplateTable::default(), Some(&images)).map_err(err)?;
    write_mix_output(&output, Some(&source), &mixed).map_err(err)?;

    let scale = QualityScale::new(10).map_err(err)?;
    let mut options = LoadOptions::new(tax.clone());
    options.scale = scale.clone();
    options.strict = true;
    let (gt, _) = load_corpus_with(&mixed, &options).map_err(err)?;
    check(
        gt.reg_grounding.len() == 145,
        format!("{} region records", gt.reg_grounding.len()),
    )?;

    let predictions = root.join("predictions.jsonl");
    write_jsonl(&predictions, &export_predictions(&gt, &scale).map_err(err)?).map_err(err)?;
    let preds: Vec<PredictionRecord> = read_jsonl(&predictions).map_err(err)?;
    let outcome = score_corpus(&gt, &preds, &ScoreOptions::new(tax, scale)).map_err(err)?;
    let report = to_json_document(&outcome.report).map_err(err)?;
    write_file(&root.join("score_report.json"), report.as_bytes()).map_err(err)?;
    check(
        outcome.report.final_score == 6.0,
        format!("final score {}", outcome.report.final_score),
    )?;
    Ok(outcome.report.components)
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = desk_run(dir.path())?;
    check(
        c.as_array() == [1.0; 6],
        format!("components {:?}", c.as_array()),
    )?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "six metrics 1.0, final 6.0 in {:?}",
        start.elapsed()
    ))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    desk_run(a.path())?;
    desk_run(b.path())?;
    let (ta, tb) = (common::tree(a.path()), common::tree(b.path()));
    check(
        ta.keys().collect::<Vec<_>>() == tb.keys().collect::<Vec<_>>(),
        "file lists differ",
    )?;
    let differing: Vec<&String> = ta
        .iter()
        .filter(|(k, v)| tb[*k] != **v)
        .map(|(k, _)| k)
        .collect();
    check(
        differing.is_empty(),
        format!("differing files: {differing:?}"),
    )?;
    check(
        ta.contains_key("mixed/mix_manifest.json"),
        "manifest missing",
    )?;
    Ok(format!("{} files byte-identical", ta.len()))
}

const FUZZ_PIECES: [&str; 24] = [
    "blur",
    "Motion Blur",
    "noise",
    "haze",
    ": ",
    "[",
    "]",
    "(",
    ")",
    ", ",
    "; ",
    "[[",
    "]]",
    "Distortions:",
    "Key distortions:",
    "Quality:",
    "none",
    "\n",
    "-",
    "excellent",
    "B)",
    "é",
    "99999999999999999999",
    "\u{0}",
];

fn fuzz_string<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(0..40);
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => FUZZ_PIECES[rng.random_range(0..FUZZ_PIECES.len())].to_string(),
            1 => rng.random_range(0..1500).to_string(),
            _ => char::from_u32(rng.random_range(0..0x3000))
                .unwrap_or('?')
                .to_string(),
        })
        .collect()
}

fn parser_totality() -> Outcome {
    let tax = DistortionTaxonomy::default();
    let lenient = DetectionParser::new(&tax, false);
    let strict = DetectionParser::new(&tax, true);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let options = ["a", "b", "c", "d"];
    let mut failures = 0;
    for _ in 0..10_000 {
        let text = fuzz_string(&mut rng);
        let ok = std::panic::catch_unwind(|| {
            let boxes = lenient.parse(&text).boxes;
            let _ = strict.parse(&text);
            let _ = parse_description(&text, &lenient);
            let _ = parse_description(&text, &strict);
            let _ = parse_mcq_choice(&text, &options, false);
            let _ = parse_quality_word(&text);
            boxes.iter().all(in_range)
        });
        failures += usize::from(!matches!(ok, Ok(true)));
    }
    check(failures == 0, format!("{failures} fuzzed inputs failed"))?;

    let labels: Vec<&str> = tax.labels().iter().map(String::as_str).collect();
    for _ in 0..1000 {
        let n = rng.random_range(0..6);
        let set: Vec<DistortionBox> = (0..n).map(|_| common::any_box(&mut rng, &labels)).collect();
        let text = serialize_detections(&set);
        for parser in [&lenient, &strict] {
            let back = parser.parse(&text).boxes;
            check(back == set, format!("{text:?} parsed as {back:?}"))?;
        }
        check(
            parse_detections(&text, &tax).boxes == set,
            format!("{text:?}"),
        )?;
    }
    Ok("1e4 fuzzed strings total, 1e3 detection sets round-trip".into())
}

fn grounding(n: usize) -> Vec<GroundingRecord> {
    (0..n)
        .map(|i| GroundingRecord {
            id: format!("g{i}"),
            image: format!("g{i}.png"),
            width: 40,
            height: 30,
            conversations: Vec::new(),
            boxes: vec![DistortionBox::new("noise", 250, 250, 750, 750)],
        })
        .collect()
}

fn mixing_counts() -> Outcome {
    let mut cases = 0;
    for n in [1usize, 7, 200] {
        let bundle = CorpusBundle {
            reg_grounding: grounding(n),
            dist_detect: grounding(n)
                .into_iter()
                .map(|mut r| {
                    r.id = format!("d{}", r.id);
                    r
                })
                .collect(),
            ..CorpusBundle::default()
        };
        for percent in [0usize, 15, 30, 45] {
            let expected_add = n + percent * n / 100;
            for mode in [GroundingMode::Add, GroundingMode::Replace] {
                let plan = MixPlan {
                    grounding_ratio: percent as f64 / 100.0,
                    grounding_mode: mode,
                    seed: 1,
                    ..MixPlan::default()
                };
                let out = mix(&bundle, &plan, &TemplateTable::default(), None)
                    .map_err(|e| e.to_string())?;
                let want = match mode {
                    GroundingMode::Add => expected_add,
                    GroundingMode::Replace => n,
                };
                for (file, got) in [
                    ("reg-grounding", out.bundle.reg_grounding.len()),
                    ("dist_detect", out.bundle.dist_detect.len()),
                ] {
                    check(
                        got == want,
                        format!("N={n} ratio={percent}% {mode:?} {file}: {got} != {want}"),
                    )?;
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} (N, ratio, mode) cases exact"))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("quantization composition", quantization_composition),
        ("anchor values", anchor_values),
        ("flip geometry", flip_geometry),
        ("crop correctness", crop_correctness),
        ("AP oracle equivalence", ap_oracle),
        ("final score arithmetic", final_score_rows),
        ("end-to-end desk run", end_to_end),
        ("determinism", determinism),
        ("parser totality and round-trip", parser_totality),
        ("mixing count laws", mixing_counts),
    ];
    let mut failed = Vec::new();
    let mut stdout = std::io::stdout().lock();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let line = match run() {
            Ok(detail) => format!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed.push(i + 1);
                format!("FAIL {:>2} {name}: {detail}", i + 1)
            }
        };
        // written past the test harness capture so every line is visible
        writeln!(stdout, "{line}").unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
