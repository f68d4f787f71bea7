//! One-step adversarial intensity attack and the min-max training step.
//!
//! For each sample the attacker linearizes the loss at the identity mapping
//! (`rho = 0`), takes the L2-normalized gradient direction scaled to length
//! `delta`, and remaps intensities inside a random region mask:
//!
//! ```text
//! x'      = M * f(x; rho) + (1 - M) * x
//! rho_hat = delta * g / |g|,   g = dL(S(x'), y) / drho at rho = 0
//! ```
//!
//! The network is then trained on `x'` built from `rho_hat`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::intensity::{bucket, IntensityMapper};
use crate::region::{self, sample_mask, DEFAULT_REGIONS, DEFAULT_SAMPLED};
use crate::rng::Rng;
use crate::segnet::{ParamSet, SegNet, Wants};
use crate::tensor::{BinaryMask, Image2D, Sample};

/// Gradient norms below this are treated as a vanished gradient.
pub const MIN_GRAD_NORM: f64 = 1e-12;
pub const DEFAULT_DELTA: f64 = 2.0;
pub const DEFAULT_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Step length in `rho` space. Zero collapses the attack to the identity.
    pub delta: f64,
    /// Mapper intervals `n` (`n + 1` parameters).
    pub n_points: usize,
    pub regions_total: usize,
    pub regions_sampled: usize,
    pub enabled: bool,
    /// Probability of attacking a given sample in a step.
    pub attack_prob: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            n_points: DEFAULT_POINTS,
            regions_total: DEFAULT_REGIONS,
            regions_sampled: DEFAULT_SAMPLED,
            enabled: true,
            attack_prob: 1.0,
        }
    }
}

impl AttackConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(Error::InvalidArgument(format!("delta {} must be finite and >= 0", self.delta)));
        }
        if self.n_points == 0 {
            return Err(Error::InvalidArgument("mapper needs at least one interval".into()));
        }
        if self.regions_sampled == 0 || self.regions_sampled > self.regions_total {
            return Err(Error::InvalidArgument(format!(
                "regions sampled {} must be in [1, {}]",
                self.regions_sampled, self.regions_total
            )));
        }
        if !(0.0..=1.0).contains(&self.attack_prob) {
            return Err(Error::InvalidArgument(format!("attack probability {}", self.attack_prob)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub rho_hat: Vec<f64>,
    pub attacked: Image2D,
    pub mask: BinaryMask,
    pub loss_before: f64,
    /// First-order loss increase `delta * |g|`.
    pub predicted_increase: f64,
    pub grad: Vec<f64>,
}

/// `M * f(x; rho) + (1 - M) * x`; pixels outside the mask are copied bit-exactly.
pub fn compose(image: &Image2D, mapper: &IntensityMapper, mask: &BinaryMask) -> Result<Image2D> {
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::DimMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    let mapped = mapper.apply_image(image);
    let data = region::blend(mask, mapped.data(), image.data())?;
    Ok(image.with_data(data))
}

/// Chain rule from `dL/dx'` to `dL/drho` at the identity mapper.
fn rho_grad_from_input_grad(d_input: &[f64], image: &Image2D, mask: &BinaryMask, mapper: &IntensityMapper) -> Vec<f64> {
    let n = mapper.intervals();
    let range = image.range();
    if range <= 0.0 {
        return vec![0.0; n + 1];
    }
    // collect per-knot weights first, then contract with the knot Jacobian
    let mut knot_weight = vec![0.0; n + 1];
    for ((&d, &m), &x) in d_input.iter().zip(mask.data()).zip(image.data()) {
        if m == 0 {
            continue;
        }
        let t = ((x - image.vmin()) / range).clamp(0.0, 1.0);
        let (i, frac) = bucket(t, n);
        let s = d * range;
        knot_weight[i] += s * (1.0 - frac);
        knot_weight[i + 1] += s * frac;
    }
    let jac = mapper.grad_knots();
    let mut g = vec![0.0; n + 1];
    for (row, &kw) in jac.iter().zip(&knot_weight) {
        if kw == 0.0 {
            continue;
        }
        for (gk, &j) in g.iter_mut().zip(row) {
            *gk += kw * j;
        }
    }
    g
}

/// `dL/drho` of the masked composition, evaluated at `rho = 0`.
pub fn grad_wrt_rho(
    net: &SegNet,
    image: &Image2D,
    truth: &crate::tensor::MaskChannels,
    mask: &BinaryMask,
    mapper_at_zero: &IntensityMapper,
) -> Result<Vec<f64>> {
    if !mapper_at_zero.is_zero() {
        return Err(Error::NonIdentityAttackOrigin);
    }
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::DimMismatch("mask vs image".into()));
    }
    let lg = net.loss_and_grads_with(image, truth, Wants::INPUT)?;
    let d_input = lg.d_input.expect("input gradient requested");
    Ok(rho_grad_from_input_grad(&d_input, image, mask, mapper_at_zero))
}

fn l2(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Runs the attack on one sample with a freshly sampled region mask.
pub fn attack(net: &SegNet, sample: &Sample, config: &AttackConfig, rng: &mut Rng) -> Result<AttackResult> {
    config.validate()?;
    let labels = sample
        .region_labels
        .as_ref()
        .ok_or_else(|| Error::MissingRegionLabels(sample.sample_id.clone()))?;
    let mask = sample_mask(labels, config.regions_sampled, rng)?;
    let mapper = IntensityMapper::identity(config.n_points)?;
    let lg = net.loss_and_grads_with(&sample.image, &sample.truth, Wants::INPUT)?;
    let d_input = lg.d_input.expect("input gradient requested");
    let grad = rho_grad_from_input_grad(&d_input, &sample.image, &mask, &mapper);
    let norm = l2(&grad);
    let (rho_hat, attacked) = if norm < MIN_GRAD_NORM || config.delta == 0.0 {
        (vec![0.0; config.n_points + 1], sample.image.clone())
    } else {
        let rho_hat: Vec<f64> = grad.iter().map(|g| config.delta * g / norm).collect();
        let attacked = compose(&sample.image, &IntensityMapper::new(rho_hat.clone())?, &mask)?;
        (rho_hat, attacked)
    };
    Ok(AttackResult {
        rho_hat,
        attacked,
        mask,
        loss_before: lg.loss,
        predicted_increase: config.delta * norm,
        grad,
    })
}

/// Momentum buffers for [`SegNet::sgd_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: ParamSet,
}

impl Optimizer {
    pub fn new(net: &SegNet, lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: net.theta.zeros_like() }
    }
}

/// Step outcome: mean loss over the batch (on the images actually trained on).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub attacked: usize,
}

/// One min-max step: attack each sample, then descend on the attacked batch.
///
/// With `enabled == false` this is a plain supervised step on clean images.
/// Per-sample gradients are summed in batch order and averaged.
pub fn adverin_step(
    net: &mut SegNet,
    batch: &[&Sample],
    config: &AttackConfig,
    opt: &mut Optimizer,
    rng: &mut Rng,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    config.validate()?;
    let mut total = net.theta.zeros_like();
    let mut loss = 0.0;
    let mut attacked = 0;
    for sample in batch {
        let attack_this = config.enabled && (config.attack_prob >= 1.0 || rng.uniform() < config.attack_prob);
        let lg = if attack_this {
            let result = attack(net, sample, config, rng)?;
            attacked += 1;
            net.loss_and_grads_with(&result.attacked, &sample.truth, Wants::PARAMS)?
        } else {
            net.loss_and_grads_with(&sample.image, &sample.truth, Wants::PARAMS)?
        };
        loss += lg.loss;
        total.add_assign(&lg.d_theta.expect("parameter gradient requested"));
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    net.sgd_update(&total, opt.lr, opt.momentum, &mut opt.velocity)?;
    Ok(StepStats { loss: loss * scale, attacked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::RegionLabels;
    use crate::tensor::MaskChannels;

    fn tiny_sample(rng: &mut Rng) -> Sample {
        let (h, w) = (8, 8);
        let data: Vec<f64> = (0..h * w).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let image = Image2D::new(h, w, data, -1.0, 1.0).unwrap();
        let truth: Vec<u8> = (0..h * w).map(|_| (rng.uniform() < 0.4) as u8).collect();
        let truth = MaskChannels::new(1, h, w, truth).unwrap();
        let labels: Vec<u32> = (0..h * w).map(|_| rng.below(20) as u32).collect();
        Sample::new(image, truth, 0, "s".into())
            .unwrap()
            .with_region_labels(RegionLabels::new(h, w, 20, labels).unwrap())
            .unwrap()
    }

    #[test]
    fn compose_edge_masks() {
        let mut rng = Rng::new(1);
        let s = tiny_sample(&mut rng);
        let mapper = IntensityMapper::new((0..5).map(|_| rng.uniform_in(-2.0, 2.0)).collect()).unwrap();
        let none = compose(&s.image, &mapper, &BinaryMask::filled(8, 8, false)).unwrap();
        assert_eq!(none, s.image);
        let all = compose(&s.image, &mapper, &BinaryMask::filled(8, 8, true)).unwrap();
        assert_eq!(all, mapper.apply_image(&s.image));
        let mask = s.region_labels.as_ref().unwrap().mask_of(&[1, 2, 3]);
        let id = compose(&s.image, &IntensityMapper::identity(4).unwrap(), &mask).unwrap();
        assert_eq!(id, s.image);
        assert!(compose(&s.image, &mapper, &BinaryMask::filled(4, 4, true)).is_err());
    }

    #[test]
    fn empty_mask_gives_zero_gradient() {
        let mut rng = Rng::new(2);
        let s = tiny_sample(&mut rng);
        let net = SegNet::init(&mut rng, 1).unwrap();
        let g = grad_wrt_rho(&net, &s.image, &s.truth, &BinaryMask::filled(8, 8, false), &IntensityMapper::identity(4).unwrap()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nonzero_origin_is_rejected() {
        let mut rng = Rng::new(3);
        let s = tiny_sample(&mut rng);
        let net = SegNet::init(&mut rng, 1).unwrap();
        let m = IntensityMapper::new(vec![0.0, 0.1, 0.0]).unwrap();
        assert_eq!(
            grad_wrt_rho(&net, &s.image, &s.truth, &BinaryMask::filled(8, 8, true), &m),
            Err(Error::NonIdentityAttackOrigin)
        );
    }

    #[test]
    fn constant_image_cannot_be_attacked() {
        let mut rng = Rng::new(4);
        let net = SegNet::init(&mut rng, 1).unwrap();
        let img = Image2D::new(8, 8, vec![0.2; 64], 0.2, 0.2).unwrap();
        let truth = MaskChannels::new(1, 8, 8, vec![0; 64]).unwrap();
        let g = grad_wrt_rho(&net, &img, &truth, &BinaryMask::filled(8, 8, true), &IntensityMapper::identity(3).unwrap()).unwrap();
        assert_eq!(g, vec![0.0; 4]);
    }

    #[test]
    fn attack_lands_on_delta_sphere() {
        let mut rng = Rng::new(5);
        let net = SegNet::init(&mut rng, 1).unwrap();
        for _ in 0..10 {
            let s = tiny_sample(&mut rng);
            let cfg = AttackConfig { delta: 1.7, n_points: 6, ..AttackConfig::default() };
            let r = attack(&net, &s, &cfg, &mut rng).unwrap();
            assert!((l2(&r.rho_hat) - 1.7).abs() < 1e-12);
            assert_eq!(r.rho_hat[0], 0.0);
            assert!(r.predicted_increase >= 0.0);
            for ((&a, &x), &m) in r.attacked.data().iter().zip(s.image.data()).zip(r.mask.data()) {
                if m == 0 {
                    assert_eq!(a.to_bits(), x.to_bits());
                }
                assert!((-1.0..=1.0).contains(&a));
            }
        }
    }

    #[test]
    fn missing_labels_is_an_error() {
        let mut rng = Rng::new(6);
        let mut s = tiny_sample(&mut rng);
        s.region_labels = None;
        let net = SegNet::init(&mut rng, 1).unwrap();
        assert!(matches!(
            attack(&net, &s, &AttackConfig::default(), &mut rng),
            Err(Error::MissingRegionLabels(_))
        ));
    }

    #[test]
    fn zero_delta_and_disabled_match_baseline_step() {
        let mut rng = Rng::new(7);
        let samples: Vec<Sample> = (0..4).map(|_| tiny_sample(&mut rng)).collect();
        let batch: Vec<&Sample> = samples.iter().collect();
        let net0 = SegNet::init(&mut rng, 1).unwrap();
        let run = |cfg: AttackConfig| {
            let mut net = net0.clone();
            let mut opt = Optimizer::new(&net, 0.05, 0.9);
            let mut r = Rng::new(99);
            let mut losses = Vec::new();
            for _ in 0..3 {
                losses.push(adverin_step(&mut net, &batch, &cfg, &mut opt, &mut r).unwrap().loss);
            }
            (net, losses)
        };
        let base = run(AttackConfig::disabled());
        let zero = run(AttackConfig { delta: 0.0, ..AttackConfig::default() });
        assert_eq!(base, zero);
        let real = run(AttackConfig::default());
        assert_ne!(base.0, real.0);
        assert!(real.0.theta.all_finite());
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut rng = Rng::new(8);
        let mut net = SegNet::init(&mut rng, 1).unwrap();
        let mut opt = Optimizer::new(&net, 0.1, 0.9);
        assert!(adverin_step(&mut net, &[], &AttackConfig::default(), &mut opt, &mut rng).is_err());
    }
}
