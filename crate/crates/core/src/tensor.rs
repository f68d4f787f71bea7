//! Image, mask and sample value types.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::region::RegionLabels;

/// Single-channel raster with an explicitly recorded intensity range.
///
/// The range is carried rather than recomputed so that remapped images keep
/// the range of the image they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
    vmin: f64,
    vmax: f64,
}

impl Image2D {
    pub fn new(height: usize, width: usize, data: Vec<f64>, vmin: f64, vmax: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if !vmin.is_finite() || !vmax.is_finite() || data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        if vmin > vmax {
            return Err(Error::InvalidArgument(format!("vmin {vmin} > vmax {vmax}")));
        }
        if let Some(v) = data.iter().find(|&&v| v < vmin || v > vmax) {
            return Err(Error::InvalidArgument(format!(
                "pixel {v} outside recorded range [{vmin}, {vmax}]"
            )));
        }
        Ok(Self { height, width, data, vmin, vmax })
    }

    /// Image whose recorded range is the data's own min and max.
    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let (lo, hi) = data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Self::new(height, width, data, lo, hi)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn vmin(&self) -> f64 {
        self.vmin
    }

    pub fn vmax(&self) -> f64 {
        self.vmax
    }

    pub fn range(&self) -> f64 {
        self.vmax - self.vmin
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Same geometry and range, new pixels. Values are clamped into the range.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        let data = data.into_iter().map(|v| v.clamp(self.vmin, self.vmax)).collect();
        Self { height: self.height, width: self.width, data, vmin: self.vmin, vmax: self.vmax }
    }
}

impl Image2D {
    /// Copy with pixel `idx` replaced; used by finite-difference checks.
    /// The recorded range widens if needed.
    pub fn perturbed(&self, idx: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.data[idx] = value;
        out.vmin = out.vmin.min(value);
        out.vmax = out.vmax.max(value);
        out
    }
}

/// Multi-channel binary ground truth, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskChannels {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskChannels {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!("mask must be non-empty, got {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "mask {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(Self { channels, height, width, data })
    }

    /// Builds from reals that must each be exactly 0.0 or 1.0.
    pub fn from_reals(channels: usize, height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(0u8),
                v if v == 1.0 => Ok(1u8),
                v => Err(Error::InvalidArgument(format!("mask value {v} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[u8] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// Single binary plane, e.g. the attack region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self { height, width, data: alloc::vec![value as u8; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// A domain-tagged training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image2D,
    pub truth: MaskChannels,
    pub domain_id: u32,
    pub sample_id: String,
    pub region_labels: Option<RegionLabels>,
}

impl Sample {
    pub fn new(image: Image2D, truth: MaskChannels, domain_id: u32, sample_id: String) -> Result<Self> {
        if image.height() != truth.height() || image.width() != truth.width() {
            return Err(Error::DimMismatch(format!(
                "image {}x{} vs truth {}x{}",
                image.height(),
                image.width(),
                truth.height(),
                truth.width()
            )));
        }
        Ok(Self { image, truth, domain_id, sample_id, region_labels: None })
    }

    pub fn with_region_labels(mut self, labels: RegionLabels) -> Result<Self> {
        if labels.height() != self.image.height() || labels.width() != self.image.width() {
            return Err(Error::DimMismatch("region labels vs image".into()));
        }
        self.region_labels = Some(labels);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn image_rejects_bad_shapes_and_ranges() {
        assert!(Image2D::new(2, 2, vec![0.0; 3], 0.0, 1.0).is_err());
        assert!(Image2D::new(0, 2, vec![], 0.0, 1.0).is_err());
        assert!(Image2D::new(1, 2, vec![0.0, 2.0], 0.0, 1.0).is_err());
        assert!(Image2D::new(1, 2, vec![0.0, f64::NAN], 0.0, 1.0).is_err());
        assert!(Image2D::new(1, 1, vec![0.5], 1.0, 0.0).is_err());
        let img = Image2D::from_data(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!((img.vmin(), img.vmax()), (-1.0, 2.0));
    }

    #[test]
    fn masks_must_be_binary() {
        assert!(MaskChannels::new(1, 1, 2, vec![0, 2]).is_err());
        assert!(MaskChannels::from_reals(1, 1, 2, &[0.0, 0.5]).is_err());
        let m = MaskChannels::from_reals(2, 1, 2, &[0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.channel(1), &[1, 1]);
        assert!(BinaryMask::new(1, 1, vec![3]).is_err());
    }

    #[test]
    fn sample_dims_must_agree() {
        let img = Image2D::new(2, 2, vec![0.0; 4], 0.0, 1.0).unwrap();
        let truth = MaskChannels::new(1, 2, 3, vec![0; 6]).unwrap();
        assert!(Sample::new(img, truth, 0, "x".into()).is_err());
    }
}
