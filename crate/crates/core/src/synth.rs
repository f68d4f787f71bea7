//! Synthetic multi-domain segmentation data: an elliptical disc with a nested
//! cup on a smooth background, rendered under per-domain intensity styles.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Image2D, MaskChannels, Sample};

pub const MAX_DOMAINS: usize = 8;
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainStyle {
    pub gamma: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub noise_sigma: f64,
    pub bias_amp: f64,
}

impl DomainStyle {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.brightness, self.contrast, self.noise_sigma, self.bias_amp];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("domain style"));
        }
        if self.gamma <= 0.0 || self.contrast <= 0.0 || self.noise_sigma < 0.0 || self.bias_amp < 0.0 {
            return Err(Error::InvalidArgument(format!("invalid style {self:?}")));
        }
        Ok(())
    }
}

const fn style(gamma: f64, brightness: f64, contrast: f64, noise_sigma: f64, bias_amp: f64) -> DomainStyle {
    DomainStyle { gamma, brightness, contrast, noise_sigma, bias_amp }
}

/// Fixed style table; domain 0 is the canonical style.
pub const BUILTIN_STYLES: [DomainStyle; MAX_DOMAINS] = [
    style(1.0, 0.0, 1.0, 0.02, 0.0),
    style(0.6, 0.1, 1.2, 0.05, 0.2),
    style(1.8, -0.1, 0.8, 0.03, 0.1),
    style(1.0, 0.2, 0.6, 0.08, 0.3),
    style(0.8, -0.15, 1.1, 0.04, 0.15),
    style(1.4, 0.05, 0.9, 0.06, 0.25),
    style(0.5, -0.05, 0.7, 0.02, 0.05),
    style(2.2, 0.15, 1.3, 0.05, 0.2),
];

pub fn builtin_styles(n_domains: usize) -> Result<Vec<DomainStyle>> {
    if n_domains == 0 || n_domains > MAX_DOMAINS {
        return Err(Error::InvalidArgument(format!("domain count {n_domains} must be in [1, {MAX_DOMAINS}]")));
    }
    Ok(BUILTIN_STYLES[..n_domains].to_vec())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenConfig {
    pub n_domains: usize,
    pub per_domain: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { n_domains: 4, per_domain: 100, size: 64, seed: 0 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 2 != 0 {
            return Err(Error::InvalidArgument("size must be even".into()));
        }
        if self.per_domain == 0 {
            return Err(Error::InvalidArgument("per-domain count must be at least 1".into()));
        }
        builtin_styles(self.n_domains).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

/// One sample under `style`; identical `(style, size, rng state)` give
/// bit-identical output.
pub fn generate_sample(style: &DomainStyle, size: usize, rng: &mut Rng, domain_id: u32, sample_id: String) -> Result<Sample> {
    style.validate()?;
    if size == 0 || size % 2 != 0 {
        return Err(Error::InvalidArgument("size must be even".into()));
    }
    let s = size as f64;
    let disc = Ellipse {
        cy: rng.uniform_in(0.25, 0.75) * s,
        cx: rng.uniform_in(0.25, 0.75) * s,
        ry: rng.uniform_in(0.15, 0.35) * s,
        rx: rng.uniform_in(0.15, 0.35) * s,
    };
    let cup_ry = disc.ry * rng.uniform_in(0.4, 0.7);
    let cup_rx = disc.rx * rng.uniform_in(0.4, 0.7);
    let cup = Ellipse {
        cy: disc.cy + rng.uniform_in(-0.5, 0.5) * (disc.ry - cup_ry),
        cx: disc.cx + rng.uniform_in(-0.5, 0.5) * (disc.rx - cup_rx),
        ry: cup_ry,
        rx: cup_rx,
    };
    // background ramp direction and level
    let angle = rng.uniform_in(0.0, 2.0 * PI);
    let (ramp_y, ramp_x) = (libm::sin(angle), libm::cos(angle));
    let ramp_amp = rng.uniform_in(0.1, 0.3);
    // two low-frequency cosine terms for the bias field
    let (f1, p1) = (rng.uniform_in(0.5, 1.5), rng.uniform_in(0.0, 2.0 * PI));
    let (f2, p2) = (rng.uniform_in(0.5, 1.5), rng.uniform_in(0.0, 2.0 * PI));

    let n = size * size;
    let mut base = Vec::with_capacity(n);
    let mut truth = vec![0u8; CLASSES * n];
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let (u, v) = (y / s, x / s);
            let mut val = 0.2 + ramp_amp * ((u - 0.5) * ramp_y + (v - 0.5) * ramp_x);
            let in_disc = disc.contains(y, x);
            let in_cup = in_disc && cup.contains(y, x);
            if in_disc {
                val += 0.5;
                truth[r * size + c] = 1;
            }
            if in_cup {
                val += 0.3;
                truth[n + r * size + c] = 1;
            }
            let field = 0.5 * (libm::cos(PI * f1 * u + p1) + libm::cos(PI * f2 * v + p2));
            base.push(val * (1.0 + style.bias_amp * field));
        }
    }

    let lo = base.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = base.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data: Vec<f64> = base
        .into_iter()
        .map(|v| {
            let v = (v - lo) / span;
            let v = libm::pow(v, style.gamma);
            let v = style.contrast * (v - 0.5) + 0.5 + style.brightness;
            let v = (v + style.noise_sigma * rng.gaussian()).clamp(0.0, 1.0);
            2.0 * v - 1.0
        })
        .collect();
    let image = Image2D::new(size, size, data, -1.0, 1.0)?;
    let truth = MaskChannels::new(CLASSES, size, size, truth)?;
    Sample::new(image, truth, domain_id, sample_id)
}

/// Stable id of the `index`-th sample of `domain`.
pub fn sample_id(domain: usize, index: usize) -> String {
    format!("d{domain}_{index:04}")
}

/// Substream key for `(domain, index)`.
pub fn stream_key(domain: usize, index: usize) -> u64 {
    ((domain as u64) << 32) | index as u64
}

/// All samples, domain-major, each from its own `(domain, index)` substream.
pub fn generate_dataset(config: &GenConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let styles = builtin_styles(config.n_domains)?;
    let mut out = Vec::with_capacity(config.n_domains * config.per_domain);
    for (d, st) in styles.iter().enumerate() {
        for i in 0..config.per_domain {
            let mut rng = Rng::substream(config.seed, stream_key(d, i));
            out.push(generate_sample(st, config.size, &mut rng, d as u32, sample_id(d, i))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(s: &Sample) -> f64 {
        s.image.data().iter().sum::<f64>() / s.image.data().len() as f64
    }

    #[test]
    fn style_table() {
        let st = builtin_styles(4).unwrap();
        assert_eq!(st.len(), 4);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(st[i], st[j]);
            }
        }
        assert_eq!((st[0].gamma, st[0].contrast, st[0].brightness), (1.0, 1.0, 0.0));
        assert!(builtin_styles(0).is_err() && builtin_styles(9).is_err());
        assert!(BUILTIN_STYLES.iter().all(|s| s.validate().is_ok()));
    }

    #[test]
    fn samples_are_valid() {
        let cfg = GenConfig { n_domains: 4, per_domain: 10, size: 32, seed: 3 };
        let data = generate_dataset(&cfg).unwrap();
        assert_eq!(data.len(), 40);
        for s in &data {
            assert_eq!((s.image.vmin(), s.image.vmax()), (-1.0, 1.0));
            assert!(s.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            let (disc, cup) = (s.truth.channel(0), s.truth.channel(1));
            assert!(disc.iter().zip(cup).all(|(&d, &c)| c <= d));
            let frac = disc.iter().filter(|&&v| v == 1).count() as f64 / disc.len() as f64;
            assert!((0.05..=0.40).contains(&frac), "{frac}");
            assert!(cup.iter().any(|&v| v == 1));
        }
    }

    #[test]
    fn deterministic() {
        let cfg = GenConfig { n_domains: 2, per_domain: 3, size: 16, seed: 9 };
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let other = GenConfig { seed: 10, ..cfg.clone() };
        assert_ne!(generate_dataset(&cfg).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn odd_size_rejected() {
        let cfg = GenConfig { size: 63, ..GenConfig::default() };
        assert_eq!(cfg.validate(), Err(Error::InvalidArgument("size must be even".into())));
    }

    #[test]
    fn domains_shift_mean_intensity() {
        let cfg = GenConfig { n_domains: 4, per_domain: 30, size: 32, seed: 1 };
        let data = generate_dataset(&cfg).unwrap();
        let means: Vec<f64> = (0..4)
            .map(|d| {
                let v: Vec<f64> = data.iter().filter(|s| s.domain_id == d).map(mean).collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert!((means[i] - means[j]).abs() > 0.05, "{means:?}");
            }
        }
        // a midpoint threshold on mean intensity separates domains 0 and 3
        let thr = 0.5 * (means[0] + means[3]);
        let hi_is_3 = means[3] > means[0];
        let correct = data
            .iter()
            .filter(|s| s.domain_id == 0 || s.domain_id == 3)
            .filter(|s| ((mean(s) > thr) == hi_is_3) == (s.domain_id == 3))
            .count();
        assert!(correct as f64 / 60.0 > 0.8, "{correct}");
    }
}
