//! Image segments and the mask selection policy used to build them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;

/// Integer pixel coordinate, ordered row-major (by `v`, then `u`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pixel {
    pub u: u32,
    pub v: u32,
}

impl Pixel {
    pub const fn new(u: u32, v: u32) -> Self {
        Self { u, v }
    }

    pub fn index(&self, width: usize) -> usize {
        self.v as usize * width + self.u as usize
    }

    pub fn from_index(i: usize, width: usize) -> Self {
        Self::new((i % width) as u32, (i / width) as u32)
    }
}

impl Ord for Pixel {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.v, self.u).cmp(&(other.v, other.u))
    }
}

impl PartialOrd for Pixel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A set of pixels plus the anchor pixel that carries the depth scale.
///
/// Pixels are kept sorted row-major and free of duplicates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pixels: Vec<Pixel>,
    anchor: Pixel,
}

impl Segment {
    pub fn new(mut pixels: Vec<Pixel>, anchor: Pixel) -> Result<Self> {
        pixels.sort_unstable();
        pixels.dedup();
        if pixels.is_empty() {
            return Err(Error::Domain("segment has no pixels".into()));
        }
        if pixels.binary_search(&anchor).is_err() {
            return Err(Error::Domain(format!(
                "anchor ({}, {}) is not inside the segment",
                anchor.u, anchor.v
            )));
        }
        Ok(Self { pixels, anchor })
    }

    /// Builds a segment anchored at the pixel closest to its centroid.
    pub fn with_centroid_anchor(mut pixels: Vec<Pixel>) -> Result<Self> {
        pixels.sort_unstable();
        pixels.dedup();
        let anchor = centroid_nearest(&pixels)
            .ok_or_else(|| Error::Domain("segment has no pixels".into()))?;
        Ok(Self { pixels, anchor })
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    pub fn anchor(&self) -> Pixel {
        self.anchor
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn contains(&self, p: Pixel) -> bool {
        self.pixels.binary_search(&p).is_ok()
    }

    /// Position of `p` in [`pixels`](Self::pixels).
    pub fn position(&self, p: Pixel) -> Option<usize> {
        self.pixels.binary_search(&p).ok()
    }

    pub fn anchor_position(&self) -> usize {
        self.position(self.anchor).expect("anchor is a member")
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.pixels
            .iter()
            .all(|p| (p.u as usize) < width && (p.v as usize) < height)
    }

    pub fn is_connected(&self) -> bool {
        components(&self.pixels).len() == 1
    }
}

fn centroid_nearest(pixels: &[Pixel]) -> Option<Pixel> {
    if pixels.is_empty() {
        return None;
    }
    let n = pixels.len() as f64;
    let cu = pixels.iter().map(|p| p.u as f64).sum::<f64>() / n;
    let cv = pixels.iter().map(|p| p.v as f64).sum::<f64>() / n;
    let d = |p: &Pixel| (p.u as f64 - cu).powi(2) + (p.v as f64 - cv).powi(2);
    // Strict comparison keeps the first (row-major lowest) pixel on ties.
    let mut best = pixels[0];
    let mut best_d = d(&best);
    for p in &pixels[1..] {
        let dp = d(p);
        if dp < best_d {
            best = *p;
            best_d = dp;
        }
    }
    Some(best)
}

/// 4-connected components of a sorted pixel list, each sorted, ordered by
/// their first pixel.
fn components(pixels: &[Pixel]) -> Vec<Vec<Pixel>> {
    let mut label = vec![usize::MAX; pixels.len()];
    let find = |p: Pixel| pixels.binary_search(&p).ok();
    let mut out = Vec::new();
    for start in 0..pixels.len() {
        if label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        label[start] = id;
        while let Some(i) = queue.pop_front() {
            let p = pixels[i];
            comp.push(p);
            let mut neighbours = [None; 4];
            if p.u > 0 {
                neighbours[0] = find(Pixel::new(p.u - 1, p.v));
            }
            neighbours[1] = find(Pixel::new(p.u + 1, p.v));
            if p.v > 0 {
                neighbours[2] = find(Pixel::new(p.u, p.v - 1));
            }
            neighbours[3] = find(Pixel::new(p.u, p.v + 1));
            for j in neighbours.into_iter().flatten() {
                if label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Splits a segment into its 4-connected components, dropping components
/// smaller than `min_area`. The component holding the anchor keeps it;
/// others are anchored at their centroid-nearest pixel.
pub fn split_connected(seg: &Segment, min_area: usize) -> Vec<Segment> {
    components(&seg.pixels)
        .into_iter()
        .filter(|c| c.len() >= min_area)
        .map(|c| {
            let anchor = if c.binary_search(&seg.anchor).is_ok() {
                seg.anchor
            } else {
                centroid_nearest(&c).expect("non-empty component")
            };
            Segment { pixels: c, anchor }
        })
        .collect()
}

/// A mask proposal returned by the segmentation model for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskCandidate {
    pub pixels: Vec<Pixel>,
    pub stability: f64,
    pub score: f64,
}

impl MaskCandidate {
    pub fn new(mut pixels: Vec<Pixel>, stability: f64, score: f64) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Self {
            pixels,
            stability,
            score,
        }
    }
}

fn intersection_size(a: &[Pixel], b: &[Pixel]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn mask_iou(a: &[Pixel], b: &[Pixel]) -> f64 {
    let inter = intersection_size(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Thresholds for [`select_masks`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default)]
pub struct MaskSelection {
    pub stability_min: f64,
    pub nms_iou: f64,
    pub min_area: usize,
}

impl Default for MaskSelection {
    fn default() -> Self {
        Self {
            stability_min: 0.9,
            nms_iou: 0.7,
            min_area: 16,
        }
    }
}

/// Content order used to break ties so the result does not depend on the
/// order in which candidates are listed.
fn content_cmp(a: &[Pixel], b: &[Pixel]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// Stability filtering, mask-IoU non-maximum suppression across all
/// retained masks, then the smallest surviving mask per query.
///
/// Queries left without a mask are discarded. The output is sorted by
/// anchor.
pub fn select_masks(
    candidates_per_query: &[(Pixel, Vec<MaskCandidate>)],
    params: &MaskSelection,
) -> Vec<Segment> {
    struct Entry<'a> {
        query: Pixel,
        mask: &'a MaskCandidate,
    }
    let mut entries: Vec<Entry> = candidates_per_query
        .iter()
        .flat_map(|(q, cands)| {
            cands
                .iter()
                .filter(|c| !c.pixels.is_empty() && c.stability >= params.stability_min)
                .map(move |c| Entry { query: *q, mask: c })
        })
        .collect();
    entries.sort_by(|a, b| {
        b.mask
            .score
            .total_cmp(&a.mask.score)
            .then_with(|| content_cmp(&a.mask.pixels, &b.mask.pixels))
            .then_with(|| a.query.cmp(&b.query))
    });

    let mut kept: Vec<&Entry> = Vec::new();
    for e in &entries {
        if kept
            .iter()
            .all(|k| mask_iou(&k.mask.pixels, &e.mask.pixels) <= params.nms_iou)
        {
            kept.push(e);
        }
    }

    let mut best: BTreeMap<Pixel, &MaskCandidate> = BTreeMap::new();
    for e in kept {
        best.entry(e.query)
            .and_modify(|m| {
                if content_cmp(&e.mask.pixels, &m.pixels) == Ordering::Less {
                    *m = e.mask;
                }
            })
            .or_insert(e.mask);
    }

    best.into_iter()
        .map(|(q, m)| {
            let anchor = if m.pixels.binary_search(&q).is_ok() {
                q
            } else {
                nearest_member(&m.pixels, q)
            };
            Segment {
                pixels: m.pixels.clone(),
                anchor,
            }
        })
        .collect()
}

fn nearest_member(pixels: &[Pixel], q: Pixel) -> Pixel {
    let d = |p: &Pixel| {
        (p.u as i64 - q.u as i64).pow(2) + (p.v as i64 - q.v as i64).pow(2)
    };
    let mut best = pixels[0];
    for p in &pixels[1..] {
        if d(p) < d(&best) {
            best = *p;
        }
    }
    best
}

/// Number of queries drawn in each sampling phase.
#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default)]
pub struct QuerySampling {
    pub initial: usize,
    pub active: usize,
}

impl Default for QuerySampling {
    fn default() -> Self {
        Self {
            initial: 300,
            active: 100,
        }
    }
}

/// Draws distinct query pixels.
///
/// Without a coverage mask this is the initial uniform phase; with one,
/// queries are drawn from the uncovered pixels only (fewer if not enough
/// remain).
pub fn sample_queries(
    intr: &Intrinsics,
    covered: Option<&[bool]>,
    counts: &QuerySampling,
    seed: u64,
) -> Vec<Pixel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = intr.num_pixels();
    match covered {
        None => {
            let k = counts.initial.min(n);
            sample(&mut rng, n, k)
                .into_iter()
                .map(|i| Pixel::from_index(i, intr.width))
                .collect()
        }
        Some(mask) => {
            let free: Vec<usize> = (0..n).filter(|&i| !mask.get(i).copied().unwrap_or(false)).collect();
            let k = counts.active.min(free.len());
            sample(&mut rng, free.len(), k)
                .into_iter()
                .map(|i| Pixel::from_index(free[i], intr.width))
                .collect()
        }
    }
}

/// Full query-and-select loop: uniform queries, selection, then active
/// queries in the uncovered area, with the union post-processed by
/// connectivity splitting.
pub fn primify<F>(
    intr: &Intrinsics,
    mut masks_for: F,
    selection: &MaskSelection,
    counts: &QuerySampling,
    seed: u64,
) -> Vec<Segment>
where
    F: FnMut(Pixel) -> Vec<MaskCandidate>,
{
    let mut candidates: Vec<(Pixel, Vec<MaskCandidate>)> = sample_queries(intr, None, counts, seed)
        .into_iter()
        .map(|q| (q, masks_for(q)))
        .collect();
    let first = select_masks(&candidates, selection);
    let mut covered = vec![false; intr.num_pixels()];
    for s in &first {
        for p in s.pixels() {
            covered[p.index(intr.width)] = true;
        }
    }
    let extra = sample_queries(intr, Some(&covered), counts, seed.wrapping_add(1));
    candidates.extend(extra.into_iter().map(|q| (q, masks_for(q))));
    let mut out: Vec<Segment> = select_masks(&candidates, selection)
        .iter()
        .flat_map(|s| split_connected(s, selection.min_area))
        .collect();
    out.sort_by(|a, b| a.anchor.cmp(&b.anchor).then_with(|| a.pixels.cmp(&b.pixels)));
    out
}
