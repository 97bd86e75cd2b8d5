//! Random cropping and horizontal flipping of images together with the
//! matching re-projection of every box, plus the token-budget resize.
//!
//! Box arithmetic never rounds boxes to pixels. A normalized coordinate `x`
//! on an image of width `W` sits at `x * W / 1000` pixels, so comparing and
//! intersecting in units of `1/1000` pixel keeps everything in exact integers.
//! Only the crop window size `round(alpha * W)` is rounded (half-up).

use std::path::Path;
use std::sync::LazyLock;

use image::{DynamicImage, RgbImage, RgbaImage};
use rand::Rng;
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{div_round_half_up, DistortionBox, GroundingRecord, NORM_MAX};

/// Number of crop samples tried per record before giving up.
pub const MAX_CROP_ATTEMPTS: usize = 32;

/// A crop of relative size `alpha` anchored at a pixel offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub alpha: f64,
    pub offset_x_px: u32,
    pub offset_y_px: u32,
}

impl CropSpec {
    pub fn identity() -> Self {
        Self {
            alpha: 1.0,
            offset_x_px: 0,
            offset_y_px: 0,
        }
    }

    /// Crop window size in pixels: `round_half_up(alpha * extent)`, at least 1.
    pub fn window(&self, width_px: u32, height_px: u32) -> (u32, u32) {
        (
            scaled_extent(self.alpha, width_px),
            scaled_extent(self.alpha, height_px),
        )
    }

    pub fn check(&self, width_px: u32, height_px: u32) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "crop alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        let (cw, ch) = self.window(width_px, height_px);
        if u64::from(self.offset_x_px) + u64::from(cw) > u64::from(width_px)
            || u64::from(self.offset_y_px) + u64::from(ch) > u64::from(height_px)
        {
            return Err(Error::InvalidDimensions(format!(
                "crop window {cw}x{ch} at ({}, {}) exceeds {width_px}x{height_px}",
                self.offset_x_px, self.offset_y_px
            )));
        }
        Ok(())
    }
}

fn scaled_extent(alpha: f64, extent: u32) -> u32 {
    ((alpha * f64::from(extent) + 0.5).floor() as u32).clamp(1, extent.max(1))
}

/// Parameters of the spatial augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub flip_probability: f64,
    /// Fraction of a box's area that must remain inside the crop window.
    pub min_box_retention: f64,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            alpha_min: 0.7,
            alpha_max: 1.0,
            flip_probability: 0.5,
            min_box_retention: 0.3,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha_max && self.alpha_max <= 1.0) {
            return bad(format!(
                "need 0 < alpha_min <= alpha_max <= 1, got [{}, {}]",
                self.alpha_min, self.alpha_max
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!(
                "flip probability must lie in [0, 1], got {}",
                self.flip_probability
            ));
        }
        if !(self.min_box_retention > 0.0 && self.min_box_retention <= 1.0) {
            return bad(format!(
                "box retention must lie in (0, 1], got {}",
                self.min_box_retention
            ));
        }
        Ok(())
    }

    /// Short name of the augmentation this policy performs.
    pub fn kind(&self) -> &'static str {
        let crops = self.alpha_min < 1.0;
        let flips = self.flip_probability > 0.0;
        match (flips, crops) {
            (true, true) => "horizontal flip + random crop",
            (true, false) => "horizontal flip",
            (false, true) => "random crop",
            (false, false) => "identity",
        }
    }
}

/// Mirrors a box about the vertical axis of the normalized grid.
pub fn flip_box(b: &DistortionBox) -> DistortionBox {
    DistortionBox {
        label: b.label.clone(),
        x1: NORM_MAX - b.x2,
        y1: b.y1,
        x2: NORM_MAX - b.x1,
        y2: b.y2,
    }
}

/// Column-mirrors an interleaved pixel buffer: output pixel `(x, y)` is input
/// pixel `(W - x - 1, y)`.
pub fn flip_image(
    pixels: &[u8],
    width_px: u32,
    height_px: u32,
    channels: usize,
) -> Result<Vec<u8>> {
    check_buffer(pixels, width_px, height_px, channels)?;
    let row = width_px as usize * channels;
    let mut out = Vec::with_capacity(pixels.len());
    for src_row in pixels.chunks_exact(row) {
        for px in src_row.chunks_exact(channels).rev() {
            out.extend_from_slice(px);
        }
    }
    Ok(out)
}

/// Copies the crop window of an interleaved pixel buffer.
pub fn crop_image(
    pixels: &[u8],
    width_px: u32,
    height_px: u32,
    channels: usize,
    spec: &CropSpec,
) -> Result<(Vec<u8>, u32, u32)> {
    check_buffer(pixels, width_px, height_px, channels)?;
    spec.check(width_px, height_px)?;
    let (cw, ch) = spec.window(width_px, height_px);
    let row = width_px as usize * channels;
    let x0 = spec.offset_x_px as usize * channels;
    let span = cw as usize * channels;
    let mut out = Vec::with_capacity(span * ch as usize);
    for y in spec.offset_y_px..spec.offset_y_px + ch {
        let start = y as usize * row + x0;
        out.extend_from_slice(&pixels[start..start + span]);
    }
    Ok((out, cw, ch))
}

fn check_buffer(pixels: &[u8], width_px: u32, height_px: u32, channels: usize) -> Result<()> {
    let expected = width_px as usize * height_px as usize * channels;
    if width_px == 0 || height_px == 0 || channels == 0 || pixels.len() != expected {
        return Err(Error::InvalidDimensions(format!(
            "buffer of {} bytes does not hold {width_px}x{height_px} pixels with {channels} channels",
            pixels.len()
        )));
    }
    Ok(())
}

/// Draws a crop: `alpha` uniform on `[alpha_min, alpha_max]`, then an offset
/// uniform over every position where the window fits.
pub fn sample_crop<R: Rng + ?Sized>(
    policy: &AugmentPolicy,
    rng: &mut R,
    width_px: u32,
    height_px: u32,
) -> CropSpec {
    let alpha = if policy.alpha_min < policy.alpha_max {
        rng.random_range(policy.alpha_min..=policy.alpha_max)
    } else {
        policy.alpha_max
    };
    let mut spec = CropSpec {
        alpha,
        offset_x_px: 0,
        offset_y_px: 0,
    };
    let (cw, ch) = spec.window(width_px, height_px);
    spec.offset_x_px = rng.random_range(0..=width_px - cw);
    spec.offset_y_px = rng.random_range(0..=height_px - ch);
    spec
}

/// Re-projects a box into the crop window.
///
/// Returns `None` when less than `retention` of the box area survives the
/// crop or when the surviving box rounds to zero width or height.
pub fn crop_box(
    b: &DistortionBox,
    spec: &CropSpec,
    width_px: u32,
    height_px: u32,
    retention: f64,
) -> Option<DistortionBox> {
    let (cw, ch) = spec.window(width_px, height_px);
    let x = clip_axis(b.x1, b.x2, width_px, spec.offset_x_px, cw)?;
    let y = clip_axis(b.y1, b.y2, height_px, spec.offset_y_px, ch)?;

    let original = u128::from(b.x2 - b.x1)
        * u128::from(width_px)
        * u128::from(b.y2 - b.y1)
        * u128::from(height_px);
    let surviving = u128::from(x.hi - x.lo) * u128::from(y.hi - y.lo);
    if (surviving as f64) < retention * original as f64 {
        return None;
    }

    let out = DistortionBox {
        label: b.label.clone(),
        x1: x.norm_lo,
        y1: y.norm_lo,
        x2: x.norm_hi,
        y2: y.norm_hi,
    };
    (out.x1 < out.x2 && out.y1 < out.y2).then_some(out)
}

struct ClippedAxis {
    // intersection in 1/1000-pixel units
    lo: u64,
    hi: u64,
    // re-normalized to the crop window
    norm_lo: u32,
    norm_hi: u32,
}

fn clip_axis(lo: u32, hi: u32, extent: u32, offset: u32, window: u32) -> Option<ClippedAxis> {
    let scale = u64::from(NORM_MAX);
    let win_lo = u64::from(offset) * scale;
    let win_hi = u64::from(offset + window) * scale;
    let lo = (u64::from(lo) * u64::from(extent)).max(win_lo);
    let hi = (u64::from(hi) * u64::from(extent)).min(win_hi);
    if lo >= hi {
        return None;
    }
    // (v - win_lo) / (window * 1000) * 1000 == (v - win_lo) / window
    let renorm = |v: u64| div_round_half_up(u128::from(v - win_lo), u128::from(window)) as u32;
    Some(ClippedAxis {
        lo,
        hi,
        norm_lo: renorm(lo),
        norm_hi: renorm(hi),
    })
}

/// The spatial transform applied to one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialTransform {
    pub flipped: bool,
    pub crop: CropSpec,
}

impl SpatialTransform {
    /// Applies flip then crop to a box.
    pub fn apply_box(
        &self,
        b: &DistortionBox,
        width_px: u32,
        height_px: u32,
        retention: f64,
    ) -> Option<DistortionBox> {
        let b = if self.flipped { flip_box(b) } else { b.clone() };
        crop_box(&b, &self.crop, width_px, height_px, retention)
    }

    /// Applies flip then crop to decoded pixels.
    pub fn apply_image(&self, image: &DynamicImage) -> Result<DynamicImage> {
        let (w, h) = (image.width(), image.height());
        if image.color().has_alpha() {
            let (buf, cw, ch) = self.apply_pixels(image.to_rgba8().as_raw(), w, h, 4)?;
            let out = RgbaImage::from_raw(cw, ch, buf)
                .ok_or_else(|| Error::InvalidDimensions("crop produced a short buffer".into()))?;
            Ok(DynamicImage::ImageRgba8(out))
        } else {
            let (buf, cw, ch) = self.apply_pixels(image.to_rgb8().as_raw(), w, h, 3)?;
            let out = RgbImage::from_raw(cw, ch, buf)
                .ok_or_else(|| Error::InvalidDimensions("crop produced a short buffer".into()))?;
            Ok(DynamicImage::ImageRgb8(out))
        }
    }

    fn apply_pixels(
        &self,
        pixels: &[u8],
        w: u32,
        h: u32,
        channels: usize,
    ) -> Result<(Vec<u8>, u32, u32)> {
        if self.flipped {
            let flipped = flip_image(pixels, w, h, channels)?;
            crop_image(&flipped, w, h, channels, &self.crop)
        } else {
            crop_image(pixels, w, h, channels, &self.crop)
        }
    }
}

static BOX_GROUP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[\s*(\d{1,9})\s*,\s*(\d{1,9})\s*,\s*(\d{1,9})\s*,\s*(\d{1,9})\s*\]")
        .expect("valid regex")
});

/// Rewrites every valid `[x1, y1, x2, y2]` group embedded in `text`.
/// Returns `None` if any embedded box does not survive the transform.
fn transform_text_boxes(
    text: &str,
    transform: &SpatialTransform,
    width_px: u32,
    height_px: u32,
    retention: f64,
) -> Option<String> {
    let mut dropped = false;
    let out = BOX_GROUP.replace_all(text, |caps: &Captures<'_>| {
        let c: Vec<u32> = (1..=4)
            .map(|i| caps[i].parse().unwrap_or(u32::MAX))
            .collect();
        let b = DistortionBox::new("", c[0], c[1], c[2], c[3]);
        if b.check_geometry().is_err() {
            return caps[0].to_string();
        }
        match transform.apply_box(&b, width_px, height_px, retention) {
            Some(t) => format!("[{}, {}, {}, {}]", t.x1, t.y1, t.x2, t.y2),
            None => {
                dropped = true;
                caps[0].to_string()
            }
        }
    });
    (!dropped).then(|| out.into_owned())
}

/// Appends `_aug{copy}` to a record id or to the stem of an image path.
pub fn augmented_name(name: &str, copy: usize) -> String {
    with_suffix(name, &format!("_aug{copy}"))
}

/// Path of the image produced for one augmented record. The source record
/// id is part of the name, since records of different files may share an
/// image but draw different transforms.
pub fn augmented_image_name(image: &str, record_id: &str, copy: usize) -> String {
    let id: String = record_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    with_suffix(image, &format!("_{id}_aug{copy}"))
}

fn with_suffix(name: &str, suffix: &str) -> String {
    let file_start = name.rfind('/').map_or(0, |i| i + 1);
    match name[file_start..].rfind('.') {
        Some(dot) if dot > 0 => {
            let dot = file_start + dot;
            format!("{}{}{}", &name[..dot], suffix, &name[dot..])
        }
        _ => format!("{name}{suffix}"),
    }
}

/// Geometry half of [`augment_grounding_record`]: picks a transform and
/// rewrites the record's boxes, size, id and image path. Pixels are untouched.
pub fn augment_record_geometry<R: Rng + ?Sized>(
    record: &GroundingRecord,
    policy: &AugmentPolicy,
    rng: &mut R,
    copy: usize,
) -> Result<(GroundingRecord, SpatialTransform)> {
    policy.validate()?;
    let (w, h) = (record.width, record.height);
    let flipped = rng.random::<f64>() < policy.flip_probability;
    for _ in 0..MAX_CROP_ATTEMPTS {
        let transform = SpatialTransform {
            flipped,
            crop: sample_crop(policy, rng, w, h),
        };
        if let Some(out) = apply_to_record(record, &transform, policy.min_box_retention, copy) {
            return Ok((out, transform));
        }
    }
    Err(Error::AugmentationFailed {
        id: record.id.clone(),
        reason: format!("no crop kept the boxes after {MAX_CROP_ATTEMPTS} attempts"),
    })
}

fn apply_to_record(
    record: &GroundingRecord,
    transform: &SpatialTransform,
    retention: f64,
    copy: usize,
) -> Option<GroundingRecord> {
    let (w, h) = (record.width, record.height);
    let boxes: Vec<DistortionBox> = record
        .boxes
        .iter()
        .filter_map(|b| transform.apply_box(b, w, h, retention))
        .collect();
    if boxes.is_empty() && !record.boxes.is_empty() {
        return None;
    }
    let mut conversations = Vec::with_capacity(record.conversations.len());
    for turn in &record.conversations {
        let mut turn = turn.clone();
        turn.text = transform_text_boxes(&turn.text, transform, w, h, retention)?;
        conversations.push(turn);
    }
    let (cw, ch) = transform.crop.window(w, h);
    Some(GroundingRecord {
        id: augmented_name(&record.id, copy),
        image: augmented_image_name(&record.image, &record.id, copy),
        width: cw,
        height: ch,
        conversations,
        boxes,
    })
}

/// Flips and crops a grounding record and its decoded image consistently.
pub fn augment_grounding_record<R: Rng + ?Sized>(
    record: &GroundingRecord,
    image: &DynamicImage,
    policy: &AugmentPolicy,
    rng: &mut R,
    copy: usize,
) -> Result<(GroundingRecord, DynamicImage)> {
    if (image.width(), image.height()) != (record.width, record.height) {
        return Err(Error::InvalidDimensions(format!(
            "record {} declares {}x{} but image {} is {}x{}",
            record.id,
            record.width,
            record.height,
            record.image,
            image.width(),
            image.height()
        )));
    }
    let (out, transform) = augment_record_geometry(record, policy, rng, copy)?;
    let pixels = transform.apply_image(image)?;
    Ok((out, pixels))
}

pub fn decode_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn encode_image(image: &DynamicImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image.save(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: format!("encode failed: {e}"),
    })
}

/// Largest patch-aligned size whose patch grid fits in `max_tokens`, keeping
/// the aspect ratio. Images already within budget are returned unchanged.
pub fn resize_to_token_budget(
    width_px: u32,
    height_px: u32,
    max_tokens: u64,
    patch_px: u32,
) -> (u32, u32) {
    let patch = u64::from(patch_px.max(1));
    let max_tokens = max_tokens.max(1);
    let (w, h) = (u64::from(width_px.max(1)), u64::from(height_px.max(1)));
    if w.div_ceil(patch) * h.div_ceil(patch) <= max_tokens {
        return (width_px, height_px);
    }
    let scale = ((max_tokens * patch * patch) as f64 / (w * h) as f64).sqrt();
    let mut cols = ((w as f64 * scale / patch as f64).floor() as u64).max(1);
    let mut rows = ((h as f64 * scale / patch as f64).floor() as u64).max(1);
    // floating error or the one-patch minimum can overshoot
    while cols * rows > max_tokens {
        if cols >= rows {
            cols -= 1;
        } else {
            rows -= 1;
        }
    }
    ((cols * patch) as u32, (rows * patch) as u32)
}
