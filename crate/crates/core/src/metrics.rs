//! Dice and 95th-percentile Hausdorff distance (pixels), per class.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::segnet::SegNet;
use crate::tensor::Sample;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flag {
    Ok,
    OneEmpty,
    BothEmpty,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Ok => "ok",
            Flag::OneEmpty => "one_empty",
            Flag::BothEmpty => "both_empty",
        }
    }
}

impl core::fmt::Display for Flag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub dice: f64,
    pub hd95: f64,
    pub flag: Flag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub per_class: Vec<ClassMetrics>,
}

/// A binary plane borrowed as `H x W` bytes (0 or 1).
#[derive(Debug, Clone, Copy)]
pub struct Plane<'a> {
    pub height: usize,
    pub width: usize,
    pub data: &'a [u8],
}

impl<'a> Plane<'a> {
    pub fn new(height: usize, width: usize, data: &'a [u8]) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("plane {height}x{width} given {} values", data.len())));
        }
        Ok(Self { height, width, data })
    }

    fn on(&self, r: isize, c: isize) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.height
            && (c as usize) < self.width
            && self.data[r as usize * self.width + c as usize] != 0
    }

    fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Foreground pixels with a background or out-of-frame 4-neighbor.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                let (ri, ci) = (r as isize, c as isize);
                if self.on(ri, ci)
                    && !(self.on(ri - 1, ci) && self.on(ri + 1, ci) && self.on(ri, ci - 1) && self.on(ri, ci + 1))
                {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

fn same_dims(a: &Plane, b: &Plane) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::DimMismatch(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// `2|A n B| / (|A| + |B|)`; two empty masks score 1 with [`Flag::BothEmpty`].
pub fn dice(pred: &Plane, truth: &Plane) -> Result<(f64, Flag)> {
    same_dims(pred, truth)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.data.iter().zip(truth.data) {
        let (p, t) = (p != 0, t != 0);
        a += p as usize;
        b += t as usize;
        both += (p && t) as usize;
    }
    Ok(match (a, b) {
        (0, 0) => (1.0, Flag::BothEmpty),
        (0, _) | (_, 0) => (0.0, Flag::OneEmpty),
        _ => (2.0 * both as f64 / (a + b) as f64, Flag::Ok),
    })
}

/// Exact squared Euclidean distance transform to the `sites` (lower envelope
/// of parabolas, one pass per axis).
fn squared_edt(height: usize, width: usize, sites: &[(usize, usize)]) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; height * width];
    for &(r, c) in sites {
        grid[r * width + c] = 0.0;
    }
    let mut line = Vec::new();
    for r in 0..height {
        line.clear();
        line.extend_from_slice(&grid[r * width..(r + 1) * width]);
        let out = edt_1d(&line);
        grid[r * width..(r + 1) * width].copy_from_slice(&out);
    }
    for c in 0..width {
        line.clear();
        line.extend((0..height).map(|r| grid[r * width + c]));
        let out = edt_1d(&line);
        for (r, v) in out.into_iter().enumerate() {
            grid[r * width + c] = v;
        }
    }
    grid
}

fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![f64::INFINITY; n];
    let finite: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if finite.is_empty() {
        return out;
    }
    let mut v = vec![0usize; finite.len()];
    let mut z = vec![0.0f64; finite.len() + 1];
    let mut k = 0;
    v[0] = finite[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for &q in &finite[1..] {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
    out
}

/// Value at index `ceil(0.95 * len) - 1` of the ascending list.
pub fn percentile95(sorted: &[f64]) -> f64 {
    let idx = libm::ceil(0.95 * sorted.len() as f64) as usize;
    sorted[idx.max(1) - 1]
}

fn directed(from: &[(usize, usize)], to_edt: &[f64], width: usize) -> Vec<f64> {
    let mut d: Vec<f64> = from.iter().map(|&(r, c)| libm::sqrt(to_edt[r * width + c])).collect();
    d.sort_by(f64::total_cmp);
    d
}

/// Symmetric 95th-percentile boundary distance in pixels.
///
/// Both empty gives `(0, BothEmpty)`; exactly one empty gives the frame
/// diagonal with [`Flag::OneEmpty`].
pub fn hd95(pred: &Plane, truth: &Plane) -> Result<(f64, Flag)> {
    same_dims(pred, truth)?;
    match (pred.is_empty(), truth.is_empty()) {
        (true, true) => return Ok((0.0, Flag::BothEmpty)),
        (true, false) | (false, true) => {
            let (h, w) = (pred.height as f64, pred.width as f64);
            return Ok((libm::sqrt(h * h + w * w), Flag::OneEmpty));
        }
        _ => {}
    }
    let (ba, bb) = (pred.boundary(), truth.boundary());
    let ea = squared_edt(pred.height, pred.width, &ba);
    let eb = squared_edt(pred.height, pred.width, &bb);
    let ab = percentile95(&directed(&ba, &eb, pred.width));
    let ba_ = percentile95(&directed(&bb, &ea, pred.width));
    Ok((ab.max(ba_), Flag::Ok))
}

/// Threshold probabilities with `p >= threshold` as foreground.
pub fn binarize(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| (p >= threshold) as u8).collect()
}

/// Metrics for one class plane pair.
pub fn class_metrics(pred: &Plane, truth: &Plane) -> Result<ClassMetrics> {
    let (d, df) = dice(pred, truth)?;
    let (h, hf) = hd95(pred, truth)?;
    debug_assert_eq!(df, hf);
    Ok(ClassMetrics { dice: d, hd95: h, flag: hf })
}

/// Per-class metrics of the network's thresholded prediction on `sample`.
pub fn evaluate_case(net: &SegNet, sample: &Sample, threshold: f64) -> Result<CaseMetrics> {
    let pred = net.forward(&sample.image)?;
    evaluate_probs(&pred.probs, sample, threshold)
}

/// Per-class metrics of `C x H x W` probabilities against the sample's truth.
pub fn evaluate_probs(probs: &[f64], sample: &Sample, threshold: f64) -> Result<CaseMetrics> {
    let truth = &sample.truth;
    let (h, w) = (truth.height(), truth.width());
    if probs.len() != truth.channels() * h * w {
        return Err(Error::DimMismatch("prediction vs truth".into()));
    }
    let mut per_class = Vec::with_capacity(truth.channels());
    for c in 0..truth.channels() {
        let bin = binarize(&probs[c * h * w..(c + 1) * h * w], threshold);
        per_class.push(class_metrics(&Plane::new(h, w, &bin)?, &Plane::new(h, w, truth.channel(c))?)?);
    }
    Ok(CaseMetrics { per_class })
}

/// Running per-class means.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMeans {
    pub dice_sum: f64,
    pub hd95_sum: f64,
    pub count: usize,
}

impl ClassMeans {
    pub fn push(&mut self, m: &ClassMetrics) {
        self.dice_sum += m.dice;
        self.hd95_sum += m.hd95;
        self.count += 1;
    }

    pub fn dice(&self) -> f64 {
        self.dice_sum / self.count as f64
    }

    pub fn hd95(&self) -> f64 {
        self.hd95_sum / self.count as f64
    }
}

/// Per-class means over a set of cases, in case order.
pub fn aggregate(cases: &[CaseMetrics]) -> Vec<ClassMeans> {
    let classes = cases.first().map_or(0, |c| c.per_class.len());
    let mut out = vec![ClassMeans::default(); classes];
    for case in cases {
        for (acc, m) in out.iter_mut().zip(&case.per_class) {
            acc.push(m);
        }
    }
    out
}

/// Unweighted mean over cells (e.g. domain x class means).
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn plane(h: usize, w: usize, on: &[(usize, usize)]) -> Vec<u8> {
        let mut d = vec![0u8; h * w];
        for &(r, c) in on {
            d[r * w + c] = 1;
        }
        d
    }

    #[test]
    fn dice_examples() {
        let a = plane(3, 3, &[(0, 0), (0, 1)]);
        let b = plane(3, 3, &[(0, 1), (2, 2)]);
        let pa = Plane::new(3, 3, &a).unwrap();
        let pb = Plane::new(3, 3, &b).unwrap();
        assert_eq!(dice(&pa, &pb).unwrap(), (0.5, Flag::Ok));
        assert_eq!(dice(&pa, &pa).unwrap(), (1.0, Flag::Ok));
        let c = plane(3, 3, &[(2, 0)]);
        assert_eq!(dice(&pa, &Plane::new(3, 3, &c).unwrap()).unwrap().0, 0.0);
        let z = vec![0u8; 9];
        let pz = Plane::new(3, 3, &z).unwrap();
        assert_eq!(dice(&pz, &pz).unwrap(), (1.0, Flag::BothEmpty));
        assert_eq!(dice(&pz, &pa).unwrap(), (0.0, Flag::OneEmpty));
        let small = vec![0u8; 4];
        assert!(dice(&pa, &Plane::new(2, 2, &small).unwrap()).is_err());
    }

    #[test]
    fn hd95_three_four_five() {
        let a = plane(5, 5, &[(0, 0)]);
        let b = plane(5, 5, &[(3, 4)]);
        let r = hd95(&Plane::new(5, 5, &a).unwrap(), &Plane::new(5, 5, &b).unwrap()).unwrap();
        assert_eq!(r, (5.0, Flag::Ok));
    }

    #[test]
    fn hd95_empty_conventions() {
        let z = vec![0u8; 12];
        let a = plane(3, 4, &[(1, 1)]);
        let pz = Plane::new(3, 4, &z).unwrap();
        assert_eq!(hd95(&pz, &pz).unwrap(), (0.0, Flag::BothEmpty));
        assert_eq!(hd95(&Plane::new(3, 4, &a).unwrap(), &pz).unwrap(), (5.0, Flag::OneEmpty));
    }

    #[test]
    fn boundary_of_filled_square() {
        let d = vec![1u8; 16];
        let b = Plane::new(4, 4, &d).unwrap().boundary();
        assert_eq!(b.len(), 12);
    }

    #[test]
    fn percentile_index_rule() {
        let v: Vec<f64> = (0..40).map(|i| i as f64).collect();
        assert_eq!(percentile95(&v), 37.0);
        assert_eq!(percentile95(&v[..20]), 18.0);
        assert_eq!(percentile95(&v[..19]), 18.0);
        assert_eq!(percentile95(&[3.0]), 3.0);
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut rng = Rng::new(1);
        for _ in 0..50 {
            let (h, w) = (1 + rng.below(9) as usize, 1 + rng.below(9) as usize);
            let sites: Vec<(usize, usize)> = (0..h * w)
                .filter(|_| rng.uniform() < 0.15)
                .map(|i| (i / w, i % w))
                .collect();
            let e = squared_edt(h, w, &sites);
            for r in 0..h {
                for c in 0..w {
                    let brute = sites
                        .iter()
                        .map(|&(a, b)| {
                            let (dr, dc) = (r as f64 - a as f64, c as f64 - b as f64);
                            dr * dr + dc * dc
                        })
                        .fold(f64::INFINITY, f64::min);
                    assert_eq!(e[r * w + c], brute);
                }
            }
        }
    }

    #[test]
    fn binarize_tie_is_foreground() {
        assert_eq!(binarize(&[0.5, 0.4999, 0.7], 0.5), vec![1, 0, 1]);
    }
}
