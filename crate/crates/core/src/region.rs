//! Unsupervised region split and random attack-region sampling.
//!
//! Each pixel becomes the feature `[s * row / H, s * col / W, (v - vmin) / (vmax - vmin)]`
//! with spatial weight `s`; k-means (k-means++ seeding, Lloyd iterations)
//! partitions the image into `k` regions. Labels are computed once per
//! sample and a fresh subset of regions forms the attack mask each step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{BinaryMask, Image2D};

pub const DEFAULT_REGIONS: usize = 20;
pub const DEFAULT_SAMPLED: usize = 5;
const MAX_LLOYD_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabels {
    height: usize,
    width: usize,
    k: usize,
    labels: Vec<u32>,
}

impl RegionLabels {
    pub fn new(height: usize, width: usize, k: usize, labels: Vec<u32>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("region count must be positive".into()));
        }
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "labels {height}x{width} needs {} values, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} outside [0, {k})")));
        }
        Ok(Self { height, width, k, labels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Pixel count per label; zero marks an empty cluster.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Which labels own at least one pixel.
    pub fn present(&self) -> Vec<bool> {
        self.sizes().into_iter().map(|s| s > 0).collect()
    }

    /// Mask of pixels whose label is in `chosen`.
    pub fn mask_of(&self, chosen: &[usize]) -> BinaryMask {
        let mut pick = vec![false; self.k];
        for &c in chosen {
            pick[c] = true;
        }
        let data = self.labels.iter().map(|&l| pick[l as usize] as u8).collect();
        BinaryMask::new(self.height, self.width, data).expect("labels and mask share geometry")
    }
}

fn features(image: &Image2D, spatial_weight: f64) -> Vec<[f64; 3]> {
    let (h, w) = (image.height(), image.width());
    let range = image.range();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let v = if range > 0.0 { (image.get(r, c) - image.vmin()) / range } else { 0.0 };
            out.push([
                spatial_weight * r as f64 / h as f64,
                spatial_weight * c as f64 / w as f64,
                v,
            ]);
        }
    }
    out
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

/// Nearest center, ties to the lowest index.
fn nearest(p: &[f64; 3], centers: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp(points: &[[f64; 3]], k: usize, rng: &mut Rng) -> Vec<[f64; 3]> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.below(points.len() as u64) as usize]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // every point already coincides with a center
            rng.below(points.len() as u64) as usize
        };
        let c = points[idx];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// k-means region split of `image` into at most `k` regions.
pub fn compute_region_labels(image: &Image2D, k: usize, spatial_weight: f64, seed: u64) -> Result<RegionLabels> {
    let n = image.height() * image.width();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must be in [1, {n}]")));
    }
    if !spatial_weight.is_finite() || spatial_weight < 0.0 {
        return Err(Error::InvalidArgument(format!("spatial weight {spatial_weight}")));
    }
    let points = features(image, spatial_weight);
    let mut rng = Rng::new(seed);
    let mut centers = kmeans_pp(&points, k, &mut rng);
    let mut assign = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];

    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centers);
            dists[i] = d;
            if assign[i] != j {
                assign[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for d in 0..3 {
                sums[a][d] += p[d];
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                centers[j] = [sums[j][0] / c, sums[j][1] / c, sums[j][2] / c];
            } else {
                // reseed from the point farthest from its own centroid
                let (far, _) = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
                centers[j] = points[far];
                dists[far] = 0.0;
            }
        }
    }
    let labels = assign.into_iter().map(|a| a as u32).collect();
    RegionLabels::new(image.height(), image.width(), k, labels)
}

/// Mask of `m` distinct regions drawn uniformly from the `k` labels.
pub fn sample_mask(labels: &RegionLabels, m: usize, rng: &mut Rng) -> Result<BinaryMask> {
    if m == 0 {
        return Err(Error::InvalidArgument("must sample at least one region".into()));
    }
    let chosen = rng.choose_k(labels.k(), m)?;
    Ok(labels.mask_of(&chosen))
}

/// Per pixel: `inside` where the mask is 1, `outside` elsewhere.
pub fn blend(mask: &BinaryMask, inside: &[f64], outside: &[f64]) -> Result<Vec<f64>> {
    if inside.len() != mask.data().len() || outside.len() != mask.data().len() {
        return Err(Error::DimMismatch("mask vs images".into()));
    }
    Ok(mask
        .data()
        .iter()
        .zip(inside.iter().zip(outside))
        .map(|(&m, (&a, &b))| if m == 1 { a } else { b })
        .collect())
}
