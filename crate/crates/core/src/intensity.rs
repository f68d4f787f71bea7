//! Trainable monotone intensity mapping.
//!
//! `n + 1` parameters `rho` define knots on the grid `i / n`:
//!
//! ```text
//! knot_i = (sum_{j<=i} e^(rho_j - rho_0) - 1) / (sum_{j<=n} e^(rho_j - rho_0) - 1)
//!        = sum_{j=1..i} w_j / sum_{j=1..n} w_j,      w_j = e^(rho_j - rho_0)
//! ```
//!
//! Values between knots are linearly interpolated, and an image is mapped
//! through its recorded `[vmin, vmax]` range. Every knot vector is
//! non-decreasing with `knot_0 = 0` and `knot_n = 1`, so the map is monotone
//! and keeps pixels inside the original range.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Image2D;

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMapper {
    rho: Vec<f64>,
}

impl IntensityMapper {
    /// Mapper with `n` intervals (`n + 1` parameters) from explicit `rho`.
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.len() < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "mapper needs at least 2 parameters, got {}",
                rho.len()
            )));
        }
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rho"));
        }
        Ok(Self { rho })
    }

    /// The identity mapper (`rho = 0`) with `n` intervals.
    pub fn identity(n: usize) -> Result<Self> {
        Self::new(vec![0.0; n + 1])
    }

    pub fn intervals(&self) -> usize {
        self.rho.len() - 1
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn is_zero(&self) -> bool {
        self.rho.iter().all(|&r| r == 0.0)
    }

    /// True when all interval weights are equal, i.e. the curve is exactly
    /// the identity. Such mappers short-circuit to bit-exact pass-through.
    pub fn is_identity(&self) -> bool {
        let first = self.rho[1];
        self.rho[1..].iter().all(|&r| r == first)
    }

    /// Interval weights `w_j`, `j = 1..=n`, rescaled by a common factor so the
    /// largest is 1. The knots only depend on ratios of weights, so the
    /// rescaling is exact up to rounding and never overflows.
    fn weights(&self) -> Vec<f64> {
        let shift = self.rho[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.rho[1..].iter().map(|&r| libm::exp(r - shift)).collect()
    }

    pub fn curve(&self) -> MappingCurve {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        let n = self.intervals();
        let mut knots = Vec::with_capacity(n + 1);
        knots.push(0.0);
        let mut acc = 0.0;
        for (i, wj) in w.iter().enumerate() {
            acc += wj;
            knots.push(if i + 1 == n { 1.0 } else { (acc / total).min(1.0) });
        }
        MappingCurve { knots }
    }

    /// Value of the interpolated map at `t` in `[0, 1]`.
    pub fn eval_unit(&self, t: f64) -> Result<f64> {
        check_unit(t)?;
        Ok(self.curve().eval(t))
    }

    /// Applies the map to every pixel through the image's recorded range.
    ///
    /// Constant-range images and identity mappers return the input unchanged.
    pub fn apply_image(&self, image: &Image2D) -> Image2D {
        let range = image.range();
        if range <= 0.0 || self.is_identity() {
            return image.clone();
        }
        let curve = self.curve();
        let lo = image.vmin();
        let data = image
            .data()
            .iter()
            .map(|&x| {
                let t = ((x - lo) / range).clamp(0.0, 1.0);
                match curve.eval(t) {
                    f if f == 0.0 => lo,
                    f if f == 1.0 => image.vmax(),
                    f => range * f + lo,
                }
            })
            .collect();
        image.with_data(data)
    }

    /// Dense Jacobian `G[i][k] = d knot_i / d rho_k`, `(n + 1) x (n + 1)`.
    pub fn grad_knots(&self) -> Vec<Vec<f64>> {
        let n = self.intervals();
        let w = self.weights();
        let total: f64 = w.iter().sum();
        let knots = self.curve().knots;
        let mut g = vec![vec![0.0; n + 1]; n + 1];
        for i in 1..n {
            for k in 1..=n {
                let share = w[k - 1] / total;
                let indicator = if k <= i { 1.0 } else { 0.0 };
                g[i][k] = share * (indicator - knots[i]);
            }
        }
        g
    }

    /// Gradient of [`eval_unit`](Self::eval_unit) at `t` with respect to `rho`.
    pub fn grad_pixel(&self, t: f64) -> Result<Vec<f64>> {
        check_unit(t)?;
        let g = self.grad_knots();
        let (i, frac) = bucket(t, self.intervals());
        Ok(g[i]
            .iter()
            .zip(&g[i + 1])
            .map(|(a, b)| (1.0 - frac) * a + frac * b)
            .collect())
    }
}

fn check_unit(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::OutOfUnitRange { value: t })
    }
}

/// Segment index and fractional position of `t` on an `n`-interval grid.
/// `t = 1` lands in the last segment with `frac = 1`.
pub fn bucket(t: f64, n: usize) -> (usize, f64) {
    let scaled = t * n as f64;
    let i = (libm::floor(scaled) as usize).min(n - 1);
    (i, scaled - i as f64)
}

/// Knot values of the map on the grid `i / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingCurve {
    pub knots: Vec<f64>,
}

impl MappingCurve {
    pub fn intervals(&self) -> usize {
        self.knots.len() - 1
    }

    /// Linear interpolation; `t` must already be in `[0, 1]`.
    pub fn eval(&self, t: f64) -> f64 {
        let (i, frac) = bucket(t, self.intervals());
        let (lo, hi) = (self.knots[i], self.knots[i + 1]);
        if frac >= 1.0 {
            return hi;
        }
        // min() keeps rounding from stepping past the next knot
        (lo + frac * (hi - lo)).min(hi)
    }

    /// `(i / n, knot_i)` pairs.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.intervals() as f64;
        self.knots.iter().enumerate().map(move |(i, &k)| (i as f64 / n, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn ln23() -> IntensityMapper {
        IntensityMapper::new(vec![0.0, core::f64::consts::LN_2, libm::log(3.0)]).unwrap()
    }

    #[test]
    fn identity_knots() {
        let c = IntensityMapper::identity(4).unwrap().curve();
        assert_eq!(c.knots, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn ln_weights_knots() {
        // weights 2 and 3: knot_1 = 2 / 5
        let c = ln23().curve();
        assert_eq!(c.knots[0], 0.0);
        assert!(close(c.knots[1], 0.4, 1e-15));
        assert_eq!(c.knots[2], 1.0);
    }

    #[test]
    fn eval_unit_examples() {
        let m = ln23();
        assert!(close(m.eval_unit(0.25).unwrap(), 0.2, 1e-15));
        assert_eq!(m.eval_unit(1.0).unwrap(), 1.0);
        assert_eq!(m.eval_unit(0.0).unwrap(), 0.0);
        let id = IntensityMapper::identity(7).unwrap();
        for t in [0.0, 0.1, 0.33, 0.5, 0.999, 1.0] {
            assert!(close(id.eval_unit(t).unwrap(), t, 1e-15));
        }
        assert!(matches!(m.eval_unit(1.5), Err(Error::OutOfUnitRange { .. })));
        assert!(m.eval_unit(-0.1).is_err());
        assert!(m.grad_pixel(f64::NAN).is_err());
    }

    #[test]
    fn apply_image_example() {
        let img = Image2D::new(1, 3, vec![-0.5, -1.0, 1.0], -1.0, 1.0).unwrap();
        let out = ln23().apply_image(&img);
        assert!(close(out.data()[0], -0.6, 1e-15));
        assert_eq!(out.data()[1], -1.0);
        assert_eq!(out.data()[2], 1.0);
        assert_eq!((out.vmin(), out.vmax()), (-1.0, 1.0));
    }

    #[test]
    fn constant_range_image_is_unchanged() {
        let img = Image2D::new(1, 2, vec![0.3, 0.3], 0.3, 0.3).unwrap();
        assert_eq!(ln23().apply_image(&img), img);
    }

    #[test]
    fn grad_knots_identity_n2() {
        let g = IntensityMapper::identity(2).unwrap().grad_knots();
        assert!(close(g[1][1], 0.25, 1e-15));
        assert!(close(g[1][2], -0.25, 1e-15));
        assert_eq!(g[1][0], 0.0);
        assert!(g[0].iter().chain(&g[2]).all(|&v| v == 0.0));
    }

    #[test]
    fn grad_pixel_examples() {
        let id = IntensityMapper::identity(2).unwrap();
        let gp = id.grad_pixel(0.25).unwrap();
        assert!(close(gp[1], 0.125, 1e-15));
        let m = ln23();
        let g = m.grad_knots();
        assert_eq!(m.grad_pixel(0.5).unwrap(), g[1]);
    }

    #[test]
    fn extreme_rho_stays_finite() {
        let m = IntensityMapper::new(vec![0.0, 800.0, -800.0, 5.0]).unwrap();
        let c = m.curve();
        assert!(c.knots.iter().all(|k| k.is_finite()));
        assert_eq!(c.knots[0], 0.0);
        assert_eq!(c.knots[3], 1.0);
        assert!(m.grad_knots().iter().flatten().all(|v| v.is_finite()));
    }

    fn random_mapper(rng: &mut Rng, n: usize, scale: f64) -> IntensityMapper {
        IntensityMapper::new((0..=n).map(|_| rng.uniform_in(-scale, scale)).collect()).unwrap()
    }

    /// Knot straight from the cumulative-exponential formula, no rescaling.
    fn knot_of(rho: &[f64], i: usize) -> f64 {
        let e: Vec<f64> = rho.iter().map(|r| libm::exp(r - rho[0])).collect();
        let num: f64 = e[..=i].iter().sum::<f64>() - 1.0;
        let den: f64 = e.iter().sum::<f64>() - 1.0;
        num / den
    }

    #[test]
    fn curve_matches_direct_formula() {
        let mut rng = Rng::new(5);
        for _ in 0..500 {
            let n = 1 + rng.below(64) as usize;
            let m = random_mapper(&mut rng, n, 5.0);
            let c = m.curve();
            for i in 0..=n {
                assert!(close(c.knots[i], knot_of(m.rho(), i), 1e-12));
            }
        }
    }

    #[test]
    fn grad_knots_matches_central_differences() {
        let mut rng = Rng::new(11);
        let h = 1e-6;
        for _ in 0..200 {
            let n = 1 + rng.below(12) as usize;
            let m = random_mapper(&mut rng, n, 2.0);
            let g = m.grad_knots();
            for i in 0..=n {
                for k in 0..=n {
                    let mut plus = m.rho().to_vec();
                    let mut minus = m.rho().to_vec();
                    plus[k] += h;
                    minus[k] -= h;
                    let fd = (knot_of(&plus, i) - knot_of(&minus, i)) / (2.0 * h);
                    assert!(close(fd, g[i][k], 1e-8), "i={i} k={k} fd={fd} an={}", g[i][k]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(rho in proptest::collection::vec(-10.0f64..10.0, 2..65),
                                ts in proptest::collection::vec(0.0f64..=1.0, 2..40)) {
            let m = IntensityMapper::new(rho).unwrap();
            let mut ts = ts;
            ts.sort_by(f64::total_cmp);
            let vals: Vec<f64> = ts.iter().map(|&t| m.eval_unit(t).unwrap()).collect();
            for w in vals.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert_eq!(m.eval_unit(0.0).unwrap(), 0.0);
            prop_assert_eq!(m.eval_unit(1.0).unwrap(), 1.0);
        }

        #[test]
        fn gauge_invariance(rho in proptest::collection::vec(-5.0f64..5.0, 2..33),
                            c in -5.0f64..5.0, r0 in -5.0f64..5.0) {
            let base = IntensityMapper::new(rho.clone()).unwrap().curve();
            let shifted: Vec<f64> = rho.iter().map(|r| r + c).collect();
            let shifted = IntensityMapper::new(shifted).unwrap().curve();
            let mut moved = rho.clone();
            moved[0] = r0;
            let moved = IntensityMapper::new(moved).unwrap().curve();
            for i in 0..base.knots.len() {
                prop_assert!(close(base.knots[i], shifted.knots[i], 1e-12));
                prop_assert_eq!(base.knots[i], moved.knots[i]);
            }
        }

        #[test]
        fn zero_rho_is_bitwise_identity(data in proptest::collection::vec(-3.0f64..3.0, 16),
                                        n in 1usize..20) {
            let img = Image2D::from_data(4, 4, data).unwrap();
            prop_assert_eq!(IntensityMapper::identity(n).unwrap().apply_image(&img), img);
        }
    }
}
