//! Small skip-connected segmentation network with exact reverse-mode gradients.
//!
//! ```text
//! x (1xHxW) -> enc1a 3x3 -> ReLU -> enc1b 3x3 -> ReLU = skip (8xHxW)
//! skip -> avgpool 2x2 -> enc2 3x3 -> ReLU (16xH/2xW/2) -> upsample x2
//! concat[skip, up] (24xHxW) -> fuse 3x3 -> ReLU -> head 1x1 -> sigmoid (CxHxW)
//! ```
//!
//! Gradients are hand-derived per layer and cover both the parameters and
//! the input image; the attacker needs the latter.

pub mod conv;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::container::{self, NamedTensor};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Image2D, MaskChannels};

pub const ENC1_CHANNELS: usize = 8;
pub const ENC2_CHANNELS: usize = 16;
pub const FUSE_CHANNELS: usize = 8;
pub const DICE_EPS: f64 = 1e-5;
pub const PROB_CLAMP: f64 = 1e-7;

pub const LAYER_NAMES: [&str; 5] = ["enc1a", "enc1b", "enc2", "fuse", "head"];

/// One convolution's weights `[cout][cin][k][k]` and biases `[cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    fn zeros(cin: usize, cout: usize, ksize: usize) -> Self {
        Self { cin, cout, ksize, weight: vec![0.0; cout * cin * ksize * ksize], bias: vec![0.0; cout] }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.ksize * self.ksize
    }

    fn same_shape(&self, other: &Conv) -> bool {
        self.cin == other.cin && self.cout == other.cout && self.ksize == other.ksize
    }
}

/// A full parameter set: weights, gradients and momentum buffers all use it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: [Conv; 5],
}

impl ParamSet {
    pub fn zeros(classes: usize) -> Self {
        Self {
            layers: [
                Conv::zeros(1, ENC1_CHANNELS, 3),
                Conv::zeros(ENC1_CHANNELS, ENC1_CHANNELS, 3),
                Conv::zeros(ENC1_CHANNELS, ENC2_CHANNELS, 3),
                Conv::zeros(ENC1_CHANNELS + ENC2_CHANNELS, FUSE_CHANNELS, 3),
                Conv::zeros(FUSE_CHANNELS, classes, 1),
            ],
        }
    }

    pub fn classes(&self) -> usize {
        self.layers[4].cout
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.classes())
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
    }

    /// All values in fixed order: per layer, weights then biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mutable access to value `idx` in [`values`](Self::values) order.
    pub fn value_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in self.layers.iter_mut() {
            if idx < l.weight.len() {
                return &mut l.weight[idx];
            }
            idx -= l.weight.len();
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// `<layer>.weight` / `<layer>.bias` tensors with their natural dims.
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::with_capacity(10);
        for (name, l) in LAYER_NAMES.iter().zip(&self.layers) {
            out.push(NamedTensor::new(
                format!("{name}.weight"),
                vec![l.cout, l.cin, l.ksize, l.ksize],
                l.weight.clone(),
            ));
            out.push(NamedTensor::new(format!("{name}.bias"), vec![l.cout], l.bias.clone()));
        }
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let head = container::find(tensors, "head.bias")?;
        let mut set = Self::zeros(head.values.len().max(1));
        for (name, l) in LAYER_NAMES.iter().zip(set.layers.iter_mut()) {
            let w = container::find(tensors, &format!("{name}.weight"))?;
            let b = container::find(tensors, &format!("{name}.bias"))?;
            let want = vec![l.cout, l.cin, l.ksize, l.ksize];
            if w.dims != want || b.dims != vec![l.cout] {
                return Err(Error::Shape(format!("{name}: expected weight {want:?}, got {:?}", w.dims)));
            }
            l.weight.copy_from_slice(&w.values);
            l.bias.copy_from_slice(&b.values);
        }
        if !set.all_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegNet {
    pub theta: ParamSet,
}

/// Per-class sigmoid probabilities, `C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.probs[c * plane..(c + 1) * plane]
    }
}

/// Which gradients [`SegNet::loss_and_grads_with`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wants {
    pub params: bool,
    pub input: bool,
}

impl Wants {
    pub const ALL: Wants = Wants { params: true, input: true };
    pub const PARAMS: Wants = Wants { params: true, input: false };
    pub const INPUT: Wants = Wants { params: false, input: true };
    pub const NONE: Wants = Wants { params: false, input: false };
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub loss: f64,
    pub dice_loss: f64,
    pub bce_loss: f64,
    pub d_theta: Option<ParamSet>,
    /// `dL/dx`, `H x W`.
    pub d_input: Option<Vec<f64>>,
}

struct Cache {
    h: usize,
    w: usize,
    x_pad: Vec<f64>,
    z1: Vec<f64>,
    r1_pad: Vec<f64>,
    z2: Vec<f64>,
    pooled_pad: Vec<f64>,
    z3: Vec<f64>,
    cat_pad: Vec<f64>,
    z4: Vec<f64>,
    r4: Vec<f64>,
    probs: Vec<f64>,
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

fn relu_backward(grad: &mut [f64], z: &[f64]) {
    for (g, &v) in grad.iter_mut().zip(z) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

impl SegNet {
    /// Weights uniform in `[-a, a]`, `a = sqrt(1 / fan_in)`; biases zero.
    pub fn init(rng: &mut Rng, classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidArgument("class count must be positive".into()));
        }
        let mut theta = ParamSet::zeros(classes);
        for l in theta.layers.iter_mut() {
            let a = libm::sqrt(1.0 / l.fan_in() as f64);
            for w in l.weight.iter_mut() {
                *w = rng.uniform_in(-a, a);
            }
        }
        Ok(Self { theta })
    }

    pub fn from_params(theta: ParamSet) -> Result<Self> {
        if !theta.all_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self { theta })
    }

    pub fn classes(&self) -> usize {
        self.theta.classes()
    }

    fn check_input(image: &Image2D) -> Result<()> {
        if image.height() % 2 != 0 || image.width() % 2 != 0 {
            return Err(Error::Shape(format!(
                "image dims must be even, got {}x{}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, image: &Image2D) -> Result<Cache> {
        Self::check_input(image)?;
        let (h, w) = (image.height(), image.width());
        let [l1a, l1b, l2, lf, lh] = &self.theta.layers;
        let x_pad = conv::pad(image.data(), 1, h, w);
        let z1 = conv::conv3x3_forward(&x_pad, 1, h, w, &l1a.weight, &l1a.bias, ENC1_CHANNELS);
        let r1_pad = conv::pad(&relu(&z1), ENC1_CHANNELS, h, w);
        let z2 = conv::conv3x3_forward(&r1_pad, ENC1_CHANNELS, h, w, &l1b.weight, &l1b.bias, ENC1_CHANNELS);
        let skip = relu(&z2);
        let (hh, hw) = (h / 2, w / 2);
        let pooled_pad = conv::pad(&conv::avg_pool2(&skip, ENC1_CHANNELS, h, w), ENC1_CHANNELS, hh, hw);
        let z3 = conv::conv3x3_forward(&pooled_pad, ENC1_CHANNELS, hh, hw, &l2.weight, &l2.bias, ENC2_CHANNELS);
        let up = conv::upsample2(&relu(&z3), ENC2_CHANNELS, hh, hw);
        let mut cat = skip;
        cat.extend_from_slice(&up);
        let cat_pad = conv::pad(&cat, ENC1_CHANNELS + ENC2_CHANNELS, h, w);
        let z4 = conv::conv3x3_forward(&cat_pad, ENC1_CHANNELS + ENC2_CHANNELS, h, w, &lf.weight, &lf.bias, FUSE_CHANNELS);
        let r4 = relu(&z4);
        let logits = conv::conv1x1_forward(&r4, FUSE_CHANNELS, h * w, &lh.weight, &lh.bias, lh.cout);
        let probs = logits.into_iter().map(sigmoid).collect();
        Ok(Cache { h, w, x_pad, z1, r1_pad, z2, pooled_pad, z3, cat_pad, z4, r4, probs })
    }

    pub fn forward(&self, image: &Image2D) -> Result<Prediction> {
        let cache = self.forward_cached(image)?;
        Ok(Prediction { classes: self.classes(), height: cache.h, width: cache.w, probs: cache.probs })
    }

    /// Loss together with the sign pattern of every ReLU pre-activation;
    /// finite-difference checks use the pattern to detect kink crossings.
    pub fn loss_and_relu_pattern(&self, image: &Image2D, truth: &MaskChannels) -> Result<(f64, Vec<bool>)> {
        self.check_truth(image, truth)?;
        let c = self.forward_cached(image)?;
        let (dice, bce, _) = dice_bce(&c.probs, truth);
        let pattern = [&c.z1, &c.z2, &c.z3, &c.z4].into_iter().flatten().map(|&v| v > 0.0).collect();
        Ok((dice + bce, pattern))
    }

    pub fn loss(&self, image: &Image2D, truth: &MaskChannels) -> Result<f64> {
        Ok(self.loss_and_grads_with(image, truth, Wants::NONE)?.loss)
    }

    /// Dice + BCE loss with gradients for both parameters and input.
    pub fn loss_and_grads(&self, image: &Image2D, truth: &MaskChannels) -> Result<LossGrads> {
        self.loss_and_grads_with(image, truth, Wants::ALL)
    }

    fn check_truth(&self, image: &Image2D, truth: &MaskChannels) -> Result<()> {
        if truth.channels() != self.classes() || truth.height() != image.height() || truth.width() != image.width() {
            return Err(Error::DimMismatch(format!(
                "truth {}x{}x{} vs net classes {} on image {}x{}",
                truth.channels(),
                truth.height(),
                truth.width(),
                self.classes(),
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    pub fn loss_and_grads_with(&self, image: &Image2D, truth: &MaskChannels, wants: Wants) -> Result<LossGrads> {
        self.check_truth(image, truth)?;
        let cache = self.forward_cached(image)?;
        let (dice_loss, bce_loss, dprobs) = dice_bce(&cache.probs, truth);
        let loss = dice_loss + bce_loss;
        if !wants.params && !wants.input {
            return Ok(LossGrads { loss, dice_loss, bce_loss, d_theta: None, d_input: None });
        }
        let dlogits: Vec<f64> = dprobs.iter().zip(&cache.probs).map(|(g, p)| g * p * (1.0 - p)).collect();
        let (d_theta, d_input) = self.backward(&cache, &dlogits, wants);
        Ok(LossGrads { loss, dice_loss, bce_loss, d_theta, d_input })
    }

    fn backward(&self, c: &Cache, dlogits: &[f64], wants: Wants) -> (Option<ParamSet>, Option<Vec<f64>>) {
        let (h, w) = (c.h, c.w);
        let (hh, hw) = (h / 2, w / 2);
        let [l1a, l1b, l2, lf, lh] = &self.theta.layers;
        let mut g = self.theta.zeros_like();
        let [g1a, g1b, g2, gf, gh] = &mut g.layers;
        let ccat = ENC1_CHANNELS + ENC2_CHANNELS;

        let mut dr4 = conv::conv1x1_backward(dlogits, &c.r4, FUSE_CHANNELS, lh.cout, h * w, &lh.weight, &mut gh.weight, &mut gh.bias);
        relu_backward(&mut dr4, &c.z4);
        if wants.params {
            conv::conv3x3_backward_params(&dr4, &c.cat_pad, ccat, FUSE_CHANNELS, h, w, &mut gf.weight, &mut gf.bias);
        }
        let dcat = conv::conv3x3_backward_input(&dr4, FUSE_CHANNELS, h, w, &lf.weight, ccat);
        let (dskip_direct, dup) = dcat.split_at(ENC1_CHANNELS * h * w);

        let mut dr3 = conv::upsample2_backward(dup, ENC2_CHANNELS, hh, hw);
        relu_backward(&mut dr3, &c.z3);
        if wants.params {
            conv::conv3x3_backward_params(&dr3, &c.pooled_pad, ENC1_CHANNELS, ENC2_CHANNELS, hh, hw, &mut g2.weight, &mut g2.bias);
        }
        let dpooled = conv::conv3x3_backward_input(&dr3, ENC2_CHANNELS, hh, hw, &l2.weight, ENC1_CHANNELS);
        let mut dskip = dskip_direct.to_vec();
        conv::avg_pool2_backward(&dpooled, ENC1_CHANNELS, h, w, &mut dskip);
        relu_backward(&mut dskip, &c.z2);
        if wants.params {
            conv::conv3x3_backward_params(&dskip, &c.r1_pad, ENC1_CHANNELS, ENC1_CHANNELS, h, w, &mut g1b.weight, &mut g1b.bias);
        }
        let mut dr1 = conv::conv3x3_backward_input(&dskip, ENC1_CHANNELS, h, w, &l1b.weight, ENC1_CHANNELS);
        relu_backward(&mut dr1, &c.z1);
        if wants.params {
            conv::conv3x3_backward_params(&dr1, &c.x_pad, 1, ENC1_CHANNELS, h, w, &mut g1a.weight, &mut g1a.bias);
        }
        let d_input = wants
            .input
            .then(|| conv::conv3x3_backward_input(&dr1, ENC1_CHANNELS, h, w, &l1a.weight, 1));
        (wants.params.then_some(g), d_input)
    }

    /// Momentum SGD: `v <- momentum * v + d`, `theta <- theta - lr * v`.
    pub fn sgd_update(&mut self, d_theta: &ParamSet, lr: f64, momentum: f64, velocity: &mut ParamSet) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        if !momentum.is_finite() {
            return Err(Error::NonFinite("momentum"));
        }
        if !self.theta.same_shape(d_theta) || !self.theta.same_shape(velocity) {
            return Err(Error::DimMismatch(String::from("gradient or velocity vs parameters")));
        }
        for ((t, v), d) in self.theta.values_mut().zip(velocity.values_mut()).zip(d_theta.values()) {
            *v = momentum * *v + d;
            *t -= lr * *v;
        }
        Ok(())
    }
}

/// Soft Dice (mean over channels) and mean BCE, plus `dL/dp`.
fn dice_bce(probs: &[f64], truth: &MaskChannels) -> (f64, f64, Vec<f64>) {
    let classes = truth.channels();
    let plane = truth.height() * truth.width();
    let n = probs.len() as f64;
    let mut dprobs = vec![0.0; probs.len()];
    let mut dice_total = 0.0;
    for c in 0..classes {
        let p = &probs[c * plane..][..plane];
        let g = truth.channel(c);
        let (mut inter, mut psum, mut gsum) = (0.0, 0.0, 0.0);
        for (&pv, &gv) in p.iter().zip(g) {
            let gv = gv as f64;
            inter += pv * gv;
            psum += pv;
            gsum += gv;
        }
        let num = 2.0 * inter + DICE_EPS;
        let den = psum + gsum + DICE_EPS;
        dice_total += 1.0 - num / den;
        let dst = &mut dprobs[c * plane..][..plane];
        for (d, &gv) in dst.iter_mut().zip(g) {
            let dnum = 2.0 * gv as f64;
            *d = -(dnum * den - num) / (den * den) / classes as f64;
        }
    }
    let dice = dice_total / classes as f64;

    let mut bce = 0.0;
    for ((d, &p), &g) in dprobs.iter_mut().zip(probs).zip(truth.data()) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let g = g as f64;
        bce -= g * libm::log(pc) + (1.0 - g) * libm::log(1.0 - pc);
        if pc == p {
            *d += (-g / pc + (1.0 - g) / (1.0 - pc)) / n;
        }
    }
    (dice, bce / n, dprobs)
}
