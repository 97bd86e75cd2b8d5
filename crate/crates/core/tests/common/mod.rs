//! Helpers shared by the integration suites: random instances, a brute-force
//! AP oracle written without the library's matching code, and tree equality.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use diqa_core::DistortionBox;
use rand::Rng;

pub const LABELS: [&str; 3] = ["blur", "noise", "haze"];

/// Box on a coarse grid so overlaps and exact ties are common.
pub fn grid_box<R: Rng>(rng: &mut R, labels: &[&str]) -> DistortionBox {
    let step = 100;
    let x1 = rng.random_range(0..9) * step;
    let y1 = rng.random_range(0..9) * step;
    let x2 = x1 + rng.random_range(1..=(1000 - x1) / step) * step;
    let y2 = y1 + rng.random_range(1..=(1000 - y1) / step) * step;
    let label = labels[rng.random_range(0..labels.len())];
    DistortionBox::new(label, x1, y1, x2, y2)
}

/// Any valid box on the full grid.
pub fn any_box<R: Rng>(rng: &mut R, labels: &[&str]) -> DistortionBox {
    let x1 = rng.random_range(0..1000);
    let y1 = rng.random_range(0..1000);
    let x2 = rng.random_range(x1 + 1..=1000);
    let y2 = rng.random_range(y1 + 1..=1000);
    let label = labels[rng.random_range(0..labels.len())];
    DistortionBox::new(label, x1, y1, x2, y2)
}

pub fn boxes<R: Rng>(rng: &mut R, max: usize, labels: &[&str]) -> Vec<DistortionBox> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| grid_box(rng, labels)).collect()
}

/// IoU as an exact fraction (numerator, denominator).
pub fn iou_fraction(a: &DistortionBox, b: &DistortionBox) -> (u64, u64) {
    let ix = (a.x2.min(b.x2) as i64 - a.x1.max(b.x1) as i64).max(0) as u64;
    let iy = (a.y2.min(b.y2) as i64 - a.y1.max(b.y1) as i64).max(0) as u64;
    let inter = ix * iy;
    let area = |b: &DistortionBox| ((b.x2 - b.x1) as u64) * ((b.y2 - b.y1) as u64);
    (inter, area(a) + area(b) - inter)
}

pub fn oracle_iou(a: &DistortionBox, b: &DistortionBox) -> f64 {
    let (n, d) = iou_fraction(a, b);
    n as f64 / d as f64
}

/// Rank-greedy matching spelled out: for each prediction in rank order, list
/// the admissible unmatched ground truths, sort them by descending IoU (exact
/// fractions) then by index, and take the first.
pub fn oracle_hits(
    preds: &[DistortionBox],
    gts: &[DistortionBox],
    threshold: f64,
    class_agnostic: bool,
) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    let mut hits = Vec::new();
    for p in preds {
        let mut candidates: Vec<(usize, (u64, u64))> = gts
            .iter()
            .enumerate()
            .filter(|(g, gt)| !used[*g] && (class_agnostic || gt.label == p.label))
            .map(|(g, gt)| (g, iou_fraction(p, gt)))
            .filter(|(_, (n, d))| *n as f64 / *d as f64 >= threshold)
            .collect();
        candidates.sort_by(|(ga, (na, da)), (gb, (nb, db))| {
            // na/da > nb/db  <=>  na*db > nb*da
            (u128::from(*nb) * u128::from(*da))
                .cmp(&(u128::from(*na) * u128::from(*db)))
                .then(ga.cmp(gb))
        });
        match candidates.first() {
            Some(&(g, _)) => {
                used[g] = true;
                hits.push(true);
            }
            None => hits.push(false),
        }
    }
    hits
}

/// Exhaustive PR construction: one point per cutoff, precision at each
/// recall step replaced by the best precision at any deeper cutoff.
pub fn oracle_ap_from_hits(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if hits.is_empty() { 1.0 } else { 0.0 };
    }
    let points: Vec<(f64, f64)> = (1..=hits.len())
        .map(|k| {
            let tp = hits[..k].iter().filter(|h| **h).count() as f64;
            (tp / num_gt as f64, tp / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(recall, _)) in points.iter().enumerate() {
        if recall > prev_recall {
            let best = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
            ap += (recall - prev_recall) * best;
            prev_recall = recall;
        }
    }
    ap
}

pub fn oracle_ap(
    preds: &[DistortionBox],
    gts: &[DistortionBox],
    threshold: f64,
    class_agnostic: bool,
) -> f64 {
    oracle_ap_from_hits(
        &oracle_hits(preds, gts, threshold, class_agnostic),
        gts.len(),
    )
}

/// Relative path -> bytes for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
