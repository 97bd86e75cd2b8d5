//! Deterministic synthetic corpora: small images with random distortion
//! boxes and every record stream filled consistently. Used by the test
//! suites and by `diqa synth` for desk runs.

use std::collections::BTreeMap;
use std::path::Path;

use image::{DynamicImage, RgbImage};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde_json::{json, Map, Value};

use crate::corpus::{save_corpus, CorpusBundle, Metadata};
use crate::error::Result;
use crate::levels::QualityScale;
use crate::model::{
    DescriptionSample, DistortionBox, DistortionTaxonomy, GroundingRecord, McqSample, MosScore,
    Turn,
};
use crate::parser::serialize_detections;
use crate::rng::record_rng;
use crate::spatial::encode_image;

const SIDE_MIN: u32 = 48;
const SIDE_MAX: u32 = 96;
const BOX_LO: u32 = 150;
const BOX_HI: u32 = 850;
const BOX_MIN: u32 = 100;

const SEVERITY: [&str; 4] = ["none", "low", "medium", "high"];
const EXPOSURE: [&str; 4] = ["under-exposed", "well-exposed", "bright", "over-exposed"];

/// A generated corpus and the pixels of every image it references.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub bundle: CorpusBundle,
    pub images: BTreeMap<String, DynamicImage>,
}

impl Fixture {
    pub fn write(&self, root: &Path) -> Result<()> {
        save_corpus(&self.bundle, root)?;
        for (path, image) in &self.images {
            encode_image(image, &root.join(path))?;
        }
        Ok(())
    }
}

/// A valid box inside the central band of the grid, at least 100 units wide
/// and tall.
pub fn random_box<R: Rng + ?Sized>(rng: &mut R, taxonomy: &DistortionTaxonomy) -> DistortionBox {
    let label = taxonomy
        .labels()
        .choose(rng)
        .expect("taxonomy is never empty")
        .clone();
    let mut side = || {
        let lo = rng.random_range(BOX_LO..BOX_HI - BOX_MIN);
        let hi = rng.random_range(lo + BOX_MIN..=BOX_HI);
        (lo, hi)
    };
    let (x1, x2) = side();
    let (y1, y2) = side();
    DistortionBox::new(label, x1, y1, x2, y2)
}

fn hull(boxes: &[DistortionBox]) -> [u32; 4] {
    boxes.iter().fold([u32::MAX, u32::MAX, 0, 0], |h, b| {
        [
            h[0].min(b.x1),
            h[1].min(b.y1),
            h[2].max(b.x2),
            h[3].max(b.y2),
        ]
    })
}

fn render(width: u32, height: u32, key: u64) -> DynamicImage {
    let [a, b, c, ..] = key.to_le_bytes();
    DynamicImage::ImageRgb8(RgbImage::from_fn(width, height, |x, y| {
        image::Rgb([
            (x * 255 / width) as u8 ^ a,
            (y * 255 / height) as u8 ^ b,
            (((x + y) % 32) as u8 * 8) ^ c,
        ])
    }))
}

/// Builds an `n`-image corpus with the default taxonomy.
pub fn synth_corpus(n: usize, seed: u64) -> Fixture {
    synth_corpus_with(n, seed, &DistortionTaxonomy::default())
}

pub fn synth_corpus_with(n: usize, seed: u64, taxonomy: &DistortionTaxonomy) -> Fixture {
    let five = QualityScale::five();
    let mut bundle = CorpusBundle::default();
    let mut images = BTreeMap::new();
    let mut attributes = Map::new();

    for i in 0..n {
        let image = format!("images/img_{i:04}.png");
        let mut rng = record_rng(seed, "fixture", &image);
        let width = rng.random_range(SIDE_MIN..=SIDE_MAX);
        let height = rng.random_range(SIDE_MIN..=SIDE_MAX);
        let count = rng.random_range(1..=3);
        let boxes: Vec<DistortionBox> =
            (0..count).map(|_| random_box(&mut rng, taxonomy)).collect();
        let mos = MosScore::new(f64::from(rng.random_range(100u32..=500)) / 100.0)
            .expect("value lies in [1, 5]");
        let dominant = boxes[0].label.clone();
        images.insert(image.clone(), render(width, height, rng.random()));

        let [hx1, hy1, hx2, hy2] = hull(&boxes);
        let answer = serialize_detections(&boxes);
        bundle.reg_grounding.push(GroundingRecord {
            id: format!("rg_{i:04}"),
            image: image.clone(),
            width,
            height,
            conversations: vec![
                Turn::user(format!(
                    "Which distortions appear in the region [{hx1}, {hy1}, {hx2}, {hy2}]?"
                )),
                Turn::assistant(answer.clone()),
            ],
            boxes: boxes.clone(),
        });
        bundle.dist_detect.push(GroundingRecord {
            id: format!("dd_{i:04}"),
            image: image.clone(),
            width,
            height,
            conversations: vec![
                Turn::user("Detect every distortion in this image."),
                Turn::assistant(answer),
            ],
            boxes: boxes.clone(),
        });

        let mut options: Vec<String> = taxonomy
            .labels()
            .iter()
            .filter(|l| **l != dominant)
            .cloned()
            .collect();
        options.shuffle(&mut rng);
        options.truncate(3);
        options.push(dominant.clone());
        options.shuffle(&mut rng);
        let answer_index = options
            .iter()
            .position(|o| *o == dominant)
            .expect("pushed above");
        bundle.mcq.push(McqSample {
            id: format!("mcq_{i:04}"),
            image_id: image.clone(),
            question: "Which distortion is most noticeable in this image?".into(),
            options,
            answer_index,
        });

        let quality = five.label_for(mos).to_string();
        let plural = if count == 1 { "" } else { "s" };
        let description = |id: String, text: String| DescriptionSample {
            id,
            image_id: image.clone(),
            assessment_text: text,
            detections: boxes.clone(),
            key_distortions: vec![boxes[0].clone()],
            quality_label: quality.clone(),
            mos: Some(mos),
        };
        bundle.assess.push(description(
            format!("as_{i:04}"),
            format!("The image shows {count} distortion{plural}; {dominant} affects it most."),
        ));
        bundle.brief_assess.push(description(
            format!("ba_{i:04}"),
            format!("Mainly {dominant}."),
        ));
        bundle.scores.push(description(
            format!("sc_{i:04}"),
            format!("Overall the image is {quality}."),
        ));

        attributes.insert(
            image.clone(),
            json!({
                "blur severity": SEVERITY[rng.random_range(0..SEVERITY.len())],
                "noise level": SEVERITY[rng.random_range(0..SEVERITY.len())],
                "exposure": EXPOSURE[rng.random_range(0..EXPOSURE.len())],
                "dominant distortion": dominant,
            }),
        );
    }
    bundle.metadata = Metadata::new(json!({ "images": Value::Object(attributes) }));
    Fixture { bundle, images }
}
