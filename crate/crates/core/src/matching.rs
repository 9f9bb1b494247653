//! Local features, descriptor matching, retrieval, and candidate selection.

use std::cmp::Ordering;

use thiserror::Error;

use crate::geom::PixelPoint;
use crate::model::{Frame, FrameId, FrameStatus};

#[derive(Debug, Error, PartialEq)]
pub enum MatchingError {
    #[error("feature set is empty")]
    EmptyFeatureSet,
}

/// Unit-norm descriptor vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub Vec<f32>);

impl Descriptor {
    /// Normalizes `v`; returns `None` for a (near) zero vector.
    pub fn normalized(mut v: Vec<f32>) -> Option<Self> {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if !(n > 1e-12) {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= n);
        Some(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Descriptor) -> f32 {
        dot(&self.0, &other.0)
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Keypoints and their descriptors, stored contiguously.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    dim: usize,
    pixels: Vec<PixelPoint>,
    data: Vec<f32>,
}

impl FeatureSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, pixels: Vec::new(), data: Vec::new() }
    }

    pub fn push(&mut self, pixel: PixelPoint, descriptor: &[f32]) {
        assert_eq!(descriptor.len(), self.dim, "descriptor dimension mismatch");
        self.pixels.push(pixel);
        self.data.extend_from_slice(descriptor);
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pixel(&self, i: usize) -> PixelPoint {
        self.pixels[i]
    }

    pub fn pixels(&self) -> &[PixelPoint] {
        &self.pixels
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub query: usize,
    pub target: usize,
    pub distance: f32,
}

/// Nearest and second-nearest squared distances and the nearest index.
fn two_nearest(d: &[f32], set: &FeatureSet) -> (usize, f32, f32) {
    let mut best = (usize::MAX, f32::INFINITY);
    let mut second = f32::INFINITY;
    for j in 0..set.len() {
        let dist = sq_dist(d, set.descriptor(j));
        if dist < best.1 {
            second = best.1;
            best = (j, dist);
        } else if dist < second {
            second = dist;
        }
    }
    (best.0, best.1, second)
}

/// Nearest-neighbour matching with Lowe's ratio test on Euclidean distance
/// and an optional cross-check. Results are sorted by distance.
pub fn match_features(a: &FeatureSet, b: &FeatureSet, ratio: f32, mutual: bool) -> Vec<MatchPair> {
    assert!(ratio > 0.0 && ratio <= 1.0, "ratio must lie in (0, 1]");
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let ratio_sq = ratio * ratio;
    let mut out = Vec::new();
    // reverse nearest neighbours are computed lazily and cached
    let mut reverse: Vec<Option<usize>> = vec![None; b.len()];
    for i in 0..a.len() {
        let (j, d1, d2) = two_nearest(a.descriptor(i), b);
        if j == usize::MAX {
            continue;
        }
        // second == inf when b has a single feature; treat as passing
        if d2.is_finite() && !(d1 < ratio_sq * d2) {
            continue;
        }
        if mutual {
            let back = *reverse[j].get_or_insert_with(|| two_nearest(b.descriptor(j), a).0);
            if back != i {
                continue;
            }
        }
        out.push(MatchPair { query: i, target: j, distance: d1.sqrt() });
    }
    out.sort_by(|x, y| {
        x.distance
            .partial_cmp(&y.distance)
            .unwrap_or(Ordering::Equal)
            .then(x.query.cmp(&y.query))
    });
    out
}

/// Unit-normalized mean of the local descriptors. If the mean vanishes the
/// first descriptor is returned.
pub fn global_descriptor(f: &FeatureSet) -> Result<Descriptor, MatchingError> {
    if f.is_empty() {
        return Err(MatchingError::EmptyFeatureSet);
    }
    let mut acc = vec![0.0f64; f.dim()];
    for i in 0..f.len() {
        for (a, x) in acc.iter_mut().zip(f.descriptor(i)) {
            *a += *x as f64;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-9 * f.len() as f64 {
        return Ok(Descriptor(f.descriptor(0).to_vec()));
    }
    Ok(Descriptor(acc.iter().map(|x| (x / norm) as f32).collect()))
}

/// The `k` database entries with the largest inner product to `query`,
/// ties broken by smaller frame id.
pub fn retrieve_top_k(query: &Descriptor, database: &[(FrameId, Descriptor)], k: usize) -> Vec<FrameId> {
    assert!(k >= 1, "k must be at least 1");
    let mut scored: Vec<(f32, FrameId)> = database.iter().map(|(id, d)| (query.dot(d), *id)).collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

/// Which side of the current frame the temporal neighbours come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeDirection {
    /// Frames strictly before the current timestamp (forward pass).
    Before,
    /// Frames strictly after the current timestamp (backward pass).
    After,
}

/// The `n` registered frames closest in time to `current_ts` on the given
/// side, nearest first. Only anchor and registered frames qualify.
pub fn temporal_candidates<'a, I>(current_ts: f64, frames: I, n: usize, direction: TimeDirection) -> Vec<FrameId>
where
    I: IntoIterator<Item = &'a Frame>,
{
    let mut eligible: Vec<(f64, FrameId)> = frames
        .into_iter()
        .filter(|f| matches!(f.status, FrameStatus::Anchor | FrameStatus::Registered))
        .filter(|f| match direction {
            TimeDirection::Before => f.timestamp < current_ts,
            TimeDirection::After => f.timestamp > current_ts,
        })
        .map(|f| ((f.timestamp - current_ts).abs(), f.id))
        .collect();
    eligible.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    eligible.into_iter().take(n).map(|(_, id)| id).collect()
}

/// Order-preserving union of candidate lists.
pub fn candidate_union(lists: &[&[FrameId]], exclude: FrameId) -> Vec<FrameId> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for list in lists {
        for &id in *list {
            if id != exclude && seen.insert(id) {
                out.push(id);
            }
        }
    }
    out
}
