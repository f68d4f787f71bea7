//! Central finite-difference checks of the analytic gradients.
//!
//! Every check evaluates the forward loss only; none of it touches the
//! backward passes it verifies. Perturbations whose `+h` and `-h` evaluations
//! see a different ReLU sign pattern straddle a kink where the loss is not
//! differentiable, so those components are counted as skipped rather than
//! compared.

use alloc::vec::Vec;

use crate::attack::{self, compose};
use crate::error::Result;
use crate::intensity::IntensityMapper;
use crate::segnet::SegNet;
use crate::tensor::{BinaryMask, Image2D, MaskChannels};

/// Denominator floor for relative errors of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Outcome of one gradient comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
    }

    pub fn merge(&mut self, other: &GradReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
    }
}

/// Central difference of a scalar function of a vector, one coordinate.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], idx: usize, h: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[idx] = x[idx] + h;
    let up = f(&probe);
    probe[idx] = x[idx] - h;
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

fn loss_and_pattern(net: &SegNet, image: &Image2D, truth: &MaskChannels) -> Result<(f64, Vec<bool>)> {
    net.loss_and_relu_pattern(image, truth)
}

/// Checks every parameter and every input-pixel gradient of the network loss.
pub fn check_segnet(net: &SegNet, image: &Image2D, truth: &MaskChannels, h: f64) -> Result<GradReport> {
    let grads = net.loss_and_grads(image, truth)?;
    let d_theta = grads.d_theta.expect("requested");
    let d_input = grads.d_input.expect("requested");
    let mut report = GradReport::default();

    let base: Vec<f64> = net.theta.values().copied().collect();
    let analytic: Vec<f64> = d_theta.values().copied().collect();
    let mut probe = net.clone();
    for idx in 0..base.len() {
        let mut eval = |v: f64| -> Result<(f64, Vec<bool>)> {
            *probe.theta.value_mut(idx) = v;
            loss_and_pattern(&probe, image, truth)
        };
        let (up, pu) = eval(base[idx] + h)?;
        let (down, pd) = eval(base[idx] - h)?;
        *probe.theta.value_mut(idx) = base[idx];
        if pu != pd {
            report.skipped += 1;
            continue;
        }
        report.record(analytic[idx], (up - down) / (2.0 * h));
    }

    for idx in 0..image.data().len() {
        let x = image.data()[idx];
        let (up, pu) = loss_and_pattern(net, &image.perturbed(idx, x + h), truth)?;
        let (down, pd) = loss_and_pattern(net, &image.perturbed(idx, x - h), truth)?;
        if pu != pd {
            report.skipped += 1;
            continue;
        }
        report.record(d_input[idx], (up - down) / (2.0 * h));
    }
    Ok(report)
}

/// Checks the attack gradient `dL/drho` at `rho = 0` against differences of
/// the composed pipeline `L(S(M * f(x; rho) + (1 - M) * x), y)`.
pub fn check_rho(
    net: &SegNet,
    image: &Image2D,
    truth: &MaskChannels,
    mask: &BinaryMask,
    intervals: usize,
    h: f64,
) -> Result<(GradReport, Vec<f64>)> {
    let zero = IntensityMapper::identity(intervals)?;
    let g = attack::grad_wrt_rho(net, image, truth, mask, &zero)?;
    let mut report = GradReport::default();
    for k in 0..=intervals {
        let eval = |v: f64| -> Result<(f64, Vec<bool>)> {
            let mut rho = alloc::vec![0.0; intervals + 1];
            rho[k] = v;
            let attacked = compose(image, &IntensityMapper::new(rho)?, mask)?;
            loss_and_pattern(net, &attacked, truth)
        };
        let (up, pu) = eval(h)?;
        let (down, pd) = eval(-h)?;
        if pu != pd {
            report.skipped += 1;
            continue;
        }
        report.record(g[k], (up - down) / (2.0 * h));
    }
    Ok((report, g))
}

/// Fourth-order central difference of one coordinate.
pub fn central_diff5<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], idx: usize, h: f64) -> f64 {
    let mut probe = x.to_vec();
    let mut at = |d: f64| {
        probe[idx] = x[idx] + d;
        f(&probe)
    };
    let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

/// Step used by [`fuzz_suite`] for the mapper checks.
pub const MAPPER_STEP: f64 = 1e-3;

/// Checks the knot Jacobian and the per-pixel gradient of a mapper at `t`
/// with fourth-order differences of step `h`. The reference knots come
/// straight from the cumulative-exponential formula.
pub fn check_mapper(mapper: &IntensityMapper, t: f64, h: f64) -> Result<GradReport> {
    let n = mapper.intervals();
    let rho = mapper.rho();
    let mut report = GradReport::default();

    let g = mapper.grad_knots();
    for i in 0..=n {
        for k in 0..=n {
            let fd = central_diff5(|r| reference_knot(r, i), rho, k, h);
            report.record(g[i][k], fd);
        }
    }

    let gp = mapper.grad_pixel(t)?;
    let (seg, frac) = crate::intensity::bucket(t, n);
    for k in 0..=n {
        let fd = central_diff5(
            |r| {
                let lo = reference_knot(r, seg);
                lo + frac * (reference_knot(r, seg + 1) - lo)
            },
            rho,
            k,
            h,
        );
        report.record(gp[k], fd);
    }
    Ok(report)
}

/// `sum_{j=1..i} e^(rho_j - rho_0) / sum_{j=1..n} e^(rho_j - rho_0)`, summed
/// directly rather than as `(sum_{j<=i} - 1)` to avoid cancellation.
pub fn reference_knot(rho: &[f64], i: usize) -> f64 {
    let e: Vec<f64> = rho[1..].iter().map(|r| libm::exp(r - rho[0])).collect();
    let num: f64 = e[..i].iter().sum();
    let den: f64 = e.iter().sum();
    num / den
}

/// Tolerances of the randomized suite.
pub const TOL_NETWORK: f64 = 1e-4;
pub const TOL_MAPPER: f64 = 1e-6;

/// Aggregate outcome of [`fuzz_suite`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SuiteReport {
    pub mapper: GradReport,
    pub segnet: GradReport,
    pub rho: GradReport,
    /// Cases where the attack gradient moved `rho_0`.
    pub g0_nonzero: usize,
    pub cases: usize,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.mapper.max_rel_err < TOL_MAPPER
            && self.segnet.max_rel_err < TOL_NETWORK
            && self.rho.max_rel_err < TOL_NETWORK
            && self.g0_nonzero == 0
    }
}

/// Random network with small random biases, image in `[-1, 1]` and truth.
pub fn random_case(rng: &mut crate::rng::Rng, size: usize, classes: usize) -> Result<(SegNet, Image2D, MaskChannels)> {
    let mut net = SegNet::init(rng, classes)?;
    for l in net.theta.layers.iter_mut() {
        for b in l.bias.iter_mut() {
            *b = rng.uniform_in(-0.1, 0.1);
        }
    }
    let data = (0..size * size).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let image = Image2D::new(size, size, data, -1.0, 1.0)?;
    let truth = (0..classes * size * size).map(|_| (rng.uniform() < 0.3) as u8).collect();
    Ok((net, image, MaskChannels::new(classes, size, size, truth)?))
}

/// `trials` network and attack-gradient cases at `size x size`, plus
/// `mapper_trials` mapper Jacobian cases; every case has its own substream.
pub fn fuzz_suite(trials: usize, mapper_trials: usize, seed: u64, size: usize, h: f64) -> Result<SuiteReport> {
    use crate::rng::Rng;
    let mut out = SuiteReport { cases: trials, ..SuiteReport::default() };
    for t in 0..mapper_trials {
        let mut rng = Rng::substream(seed, 1 << 32 | t as u64);
        let n = 1 + rng.below(12) as usize;
        let rho = (0..=n).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let mapper = IntensityMapper::new(rho)?;
        out.mapper.merge(&check_mapper(&mapper, rng.uniform(), MAPPER_STEP)?);
    }
    for t in 0..trials {
        let mut rng = Rng::substream(seed, t as u64);
        let (net, image, truth) = random_case(&mut rng, size, 2)?;
        out.segnet.merge(&check_segnet(&net, &image, &truth, h)?);
        let n = 2 + rng.below(9) as usize;
        let labels = (0..size * size).map(|_| rng.below(20) as u32).collect();
        let labels = crate::region::RegionLabels::new(size, size, 20, labels)?;
        let mask = crate::region::sample_mask(&labels, 5, &mut rng)?;
        let (rep, g) = check_rho(&net, &image, &truth, &mask, n, h)?;
        out.rho.merge(&rep);
        if g[0] != 0.0 {
            out.g0_nonzero += 1;
        }
    }
    Ok(out)
}
