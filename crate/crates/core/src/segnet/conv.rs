//! Dense channel-major convolution kernels, stride 1, zero padding.
//!
//! 3x3 layers read a zero-bordered copy of their input, `(h + 2) x (w + 2)`
//! per channel, so inner loops are branch-free and vectorize.

use alloc::vec;
use alloc::vec::Vec;

/// Zero-bordered copy of `c` planes of `h x w`.
pub fn pad(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            let src = &input[(ch * h + y) * w..][..w];
            out[(ch * ph + y + 1) * pw + 1..][..w].copy_from_slice(src);
        }
    }
    out
}

/// `out[o] += sum_i kernel(o, i) * padded[i]`; kernels are `[cout][cin][9]`.
pub fn conv3x3_acc(padded: &[f64], cin: usize, h: usize, w: usize, kernels: &[f64], cout: usize, out: &mut [f64]) {
    let pw = w + 2;
    let plane_p = (h + 2) * pw;
    debug_assert_eq!(kernels.len(), cout * cin * 9);
    debug_assert_eq!(out.len(), cout * h * w);
    for o in 0..cout {
        let out_plane = &mut out[o * h * w..][..h * w];
        for i in 0..cin {
            let k: &[f64; 9] = kernels[(o * cin + i) * 9..][..9].try_into().unwrap();
            let src = &padded[i * plane_p..][..plane_p];
            for y in 0..h {
                let row = &mut out_plane[y * w..][..w];
                let r0 = &src[y * pw..][..pw];
                let r1 = &src[(y + 1) * pw..][..pw];
                let r2 = &src[(y + 2) * pw..][..pw];
                row3(row, r0, r1, r2, k);
            }
        }
    }
}

#[inline(always)]
fn row3(row: &mut [f64], r0: &[f64], r1: &[f64], r2: &[f64], k: &[f64; 9]) {
    let w = row.len();
    let (a0, a1, a2) = (&r0[..w], &r0[1..w + 1], &r0[2..w + 2]);
    let (b0, b1, b2) = (&r1[..w], &r1[1..w + 1], &r1[2..w + 2]);
    let (c0, c1, c2) = (&r2[..w], &r2[1..w + 1], &r2[2..w + 2]);
    for x in 0..w {
        let top = k[0] * a0[x] + k[1] * a1[x] + k[2] * a2[x];
        let mid = k[3] * b0[x] + k[4] * b1[x] + k[5] * b2[x];
        let bot = k[6] * c0[x] + k[7] * c1[x] + k[8] * c2[x];
        row[x] += top + mid + bot;
    }
}

/// Forward 3x3 convolution of an already padded input.
pub fn conv3x3_forward(padded: &[f64], cin: usize, h: usize, w: usize, weight: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * h * w];
    for (o, plane) in out.chunks_exact_mut(h * w).enumerate() {
        plane.fill(bias[o]);
    }
    conv3x3_acc(padded, cin, h, w, weight, cout, &mut out);
    out
}

/// Gradient with respect to the (unpadded) input of a 3x3 convolution.
pub fn conv3x3_backward_input(dout: &[f64], cout: usize, h: usize, w: usize, weight: &[f64], cin: usize) -> Vec<f64> {
    // transposed conv: swap channel roles and rotate each kernel by 180 degrees
    let mut flipped = vec![0.0; cin * cout * 9];
    for o in 0..cout {
        for i in 0..cin {
            let src = &weight[(o * cin + i) * 9..][..9];
            let dst = &mut flipped[(i * cout + o) * 9..][..9];
            for t in 0..9 {
                dst[t] = src[8 - t];
            }
        }
    }
    let padded = pad(dout, cout, h, w);
    let mut din = vec![0.0; cin * h * w];
    conv3x3_acc(&padded, cout, h, w, &flipped, cin, &mut din);
    din
}

/// Accumulates weight and bias gradients of a 3x3 convolution.
pub fn conv3x3_backward_params(
    dout: &[f64],
    padded: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
) {
    let pw = w + 2;
    let plane_p = (h + 2) * pw;
    for o in 0..cout {
        let d = &dout[o * h * w..][..h * w];
        dbias[o] += sum(d);
        for i in 0..cin {
            let src = &padded[i * plane_p..][..plane_p];
            let mut acc = [0.0f64; 9];
            for y in 0..h {
                let drow = &d[y * w..][..w];
                for ky in 0..3 {
                    let prow = &src[(y + ky) * pw..][..pw];
                    for kx in 0..3 {
                        acc[ky * 3 + kx] += dot(drow, &prow[kx..kx + w]);
                    }
                }
            }
            let dst = &mut dweight[(o * cin + i) * 9..][..9];
            for t in 0..9 {
                dst[t] += acc[t];
            }
        }
    }
}

/// Fixed-order dot product with four interleaved partial sums.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let (x, y) = (&a[c * 4..c * 4 + 4], &b[c * 4..c * 4 + 4]);
        lanes[0] += x[0] * y[0];
        lanes[1] += x[1] * y[1];
        lanes[2] += x[2] * y[2];
        lanes[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Fixed-order sum with four interleaved partial sums.
pub fn sum(a: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let x = &a[c * 4..c * 4 + 4];
        lanes[0] += x[0];
        lanes[1] += x[1];
        lanes[2] += x[2];
        lanes[3] += x[3];
    }
    let mut tail = 0.0;
    for &v in &a[chunks * 4..] {
        tail += v;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// 1x1 convolution: `out[o][p] = bias[o] + sum_i weight[o][i] * input[i][p]`.
pub fn conv1x1_forward(input: &[f64], cin: usize, plane: usize, weight: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        let dst = &mut out[o * plane..][..plane];
        dst.fill(bias[o]);
        for i in 0..cin {
            let wv = weight[o * cin + i];
            for (d, s) in dst.iter_mut().zip(&input[i * plane..][..plane]) {
                *d += wv * s;
            }
        }
    }
    out
}

pub fn conv1x1_backward(
    dout: &[f64],
    input: &[f64],
    cin: usize,
    cout: usize,
    plane: usize,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut din = vec![0.0; cin * plane];
    for o in 0..cout {
        let d = &dout[o * plane..][..plane];
        dbias[o] += sum(d);
        for i in 0..cin {
            let src = &input[i * plane..][..plane];
            dweight[o * cin + i] += dot(d, src);
            let wv = weight[o * cin + i];
            for (g, dv) in din[i * plane..][..plane].iter_mut().zip(d) {
                *g += wv * dv;
            }
        }
    }
    din
}

/// 2x2 average pooling.
pub fn avg_pool2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            let r0 = &input[(ch * h + 2 * y) * w..][..w];
            let r1 = &input[(ch * h + 2 * y + 1) * w..][..w];
            let dst = &mut out[(ch * oh + y) * ow..][..ow];
            for x in 0..ow {
                dst[x] = 0.25 * ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]));
            }
        }
    }
    out
}

/// Adds the average-pool gradient of `dout` into `din`.
pub fn avg_pool2_backward(dout: &[f64], c: usize, h: usize, w: usize, din: &mut [f64]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        for y in 0..h {
            let src = &dout[(ch * oh + y / 2) * ow..][..ow];
            let dst = &mut din[(ch * h + y) * w..][..w];
            for x in 0..w {
                dst[x] += 0.25 * src[x / 2];
            }
        }
    }
}

/// Nearest-neighbour x2 upsampling of `c` planes of `h x w`.
pub fn upsample2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            let src = &input[(ch * h + y / 2) * w..][..w];
            let dst = &mut out[(ch * oh + y) * ow..][..ow];
            for x in 0..ow {
                dst[x] = src[x / 2];
            }
        }
    }
    out
}

/// Gradient of [`upsample2`]: each input pixel collects its 2x2 block.
pub fn upsample2_backward(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut din = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let r0 = &dout[(ch * oh + 2 * y) * ow..][..ow];
            let r1 = &dout[(ch * oh + 2 * y + 1) * ow..][..ow];
            let dst = &mut din[(ch * h + y) * w..][..w];
            for x in 0..w {
                dst[x] = (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
    din
}
