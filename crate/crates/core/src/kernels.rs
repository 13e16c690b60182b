//! Forward and adjoint kernels for the layer types the networks use.
//!
//! Convolutions lower to one gemm per batch through an `im2col` matrix whose
//! columns run over `(sample, output pixel)`.

use serde::{Deserialize, Serialize};

use crate::tensor::{gemm, Real, Tensor, Trans};

/// Square kernel/stride/padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            kernel,
            stride,
            pad,
        }
    }

    /// Output extent of a convolution over an input of extent `n`.
    pub fn out_size(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.pad;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of the transposed convolution over extent `n`.
    pub fn transposed_out(&self, n: usize) -> Option<usize> {
        ((n.max(1) - 1) * self.stride + self.kernel).checked_sub(2 * self.pad)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let k = g.kernel;
    let np = n * oh * ow;
    let mut col = vec![T::zero(); c * k * k * np];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * np..(row + 1) * np];
                for ni in 0..n {
                    let src = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let drow = &mut dst[(ni * oh + oy) * ow..(ni * oh + oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add columns back into an NCHW buffer.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    col: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    let k = g.kernel;
    let np = n * oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let srcm = &col[row * np..(row + 1) * np];
                for ni in 0..n {
                    let dst = &mut out[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &srcm[(ni * oh + oy) * ow..(ni * oh + oy + 1) * ow];
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[N, C, P]` → `[C, N·P]`.
fn batch_to_channel_major<T: Real>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * p + ni * p..ci * n * p + (ni + 1) * p]
                .copy_from_slice(&x[(ni * c + ci) * p..(ni * c + ci + 1) * p]);
        }
    }
    out
}

/// `[C, N·P]` → `[N, C, P]`.
fn channel_to_batch_major<T: Real>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        for ni in 0..n {
            out[(ni * c + ci) * p..(ni * c + ci + 1) * p]
                .copy_from_slice(&x[ci * n * p + ni * p..ci * n * p + (ni + 1) * p]);
        }
    }
    out
}

fn add_channel_bias<T: Real>(y: &mut [T], b: &[T], n: usize, c: usize, p: usize) {
    for ni in 0..n {
        for (ci, &bv) in b.iter().enumerate().take(c) {
            for v in &mut y[(ni * c + ci) * p..(ni * c + ci + 1) * p] {
                *v += bv;
            }
        }
    }
}

fn channel_sums<T: Real>(g: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut s = vec![T::zero(); c];
    for ni in 0..n {
        for (ci, sv) in s.iter_mut().enumerate() {
            *sv += g[(ni * c + ci) * p..(ni * c + ci + 1) * p].iter().copied().sum::<T>();
        }
    }
    s
}

/// Cross-correlation `y = w ⋆ x + b`; `w` is `[out, in, k, k]`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Tensor<T> {
    let (n, c, h, wd) = x.dims4();
    let (oc, ic, kh, kw) = w.dims4();
    assert_eq!(ic, c, "conv2d: input channels");
    assert!(kh == g.kernel && kw == g.kernel, "conv2d: kernel size");
    let oh = g.out_size(h).expect("conv2d: input smaller than kernel");
    let ow = g.out_size(wd).expect("conv2d: input smaller than kernel");
    let p = oh * ow;
    let col = im2col(x.data(), n, c, h, wd, g, oh, ow);
    let ckk = c * g.kernel * g.kernel;
    let mut y_cm = vec![T::zero(); oc * n * p];
    gemm(oc, ckk, n * p, T::one(), w.data(), Trans::No, &col, Trans::No, T::zero(), &mut y_cm);
    let mut y = channel_to_batch_major(&y_cm, n, oc, p);
    if let Some(b) = b {
        add_channel_bias(&mut y, b.data(), n, oc, p);
    }
    Tensor::from_vec(&[n, oc, oh, ow], y).expect("conv2d output shape")
}

/// Gradients of [`conv2d_forward`]: `(dx, dw, db)`; `dx` only when requested.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, c, h, wd) = x.dims4();
    let (oc, _, _, _) = w.dims4();
    let (_, _, oh, ow) = gy.dims4();
    let p = oh * ow;
    let ckk = c * g.kernel * g.kernel;
    let gy_cm = batch_to_channel_major(gy.data(), n, oc, p);
    let col = im2col(x.data(), n, c, h, wd, g, oh, ow);
    let mut dw = Tensor::zeros(w.shape());
    gemm(oc, n * p, ckk, T::one(), &gy_cm, Trans::No, &col, Trans::Yes, T::zero(), dw.data_mut());
    let db = Tensor::from_vec(&[oc], channel_sums(gy.data(), n, oc, p)).expect("bias grad");
    let dx = need_dx.then(|| {
        let mut dcol = vec![T::zero(); ckk * n * p];
        gemm(ckk, oc, n * p, T::one(), w.data(), Trans::Yes, &gy_cm, Trans::No, T::zero(), &mut dcol);
        let mut dx = Tensor::zeros(x.shape());
        col2im(&dcol, n, c, h, wd, g, oh, ow, dx.data_mut());
        dx
    });
    (dx, dw, db)
}

/// Transposed convolution; `w` is `[in, out, k, k]`. It is the adjoint of
/// [`conv2d_forward`] with the same geometry, plus bias.
pub fn conv_transpose2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Tensor<T> {
    let (n, c, h, wd) = x.dims4();
    let (ic, oc, kh, kw) = w.dims4();
    assert_eq!(ic, c, "conv_transpose2d: input channels");
    assert!(kh == g.kernel && kw == g.kernel, "conv_transpose2d: kernel size");
    let oh = g.transposed_out(h).expect("conv_transpose2d: output size");
    let ow = g.transposed_out(wd).expect("conv_transpose2d: output size");
    let p = h * wd;
    let okk = oc * g.kernel * g.kernel;
    let x_cm = batch_to_channel_major(x.data(), n, c, p);
    let mut col = vec![T::zero(); okk * n * p];
    gemm(okk, c, n * p, T::one(), w.data(), Trans::Yes, &x_cm, Trans::No, T::zero(), &mut col);
    let mut y = Tensor::zeros(&[n, oc, oh, ow]);
    col2im(&col, n, oc, oh, ow, g, h, wd, y.data_mut());
    if let Some(b) = b {
        add_channel_bias(y.data_mut(), b.data(), n, oc, oh * ow);
    }
    y
}

pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, c, h, wd) = x.dims4();
    let (_, oc, _, _) = w.dims4();
    let (_, _, oh, ow) = gy.dims4();
    let p = h * wd;
    let okk = oc * g.kernel * g.kernel;
    let gcol = im2col(gy.data(), n, oc, oh, ow, g, h, wd);
    let x_cm = batch_to_channel_major(x.data(), n, c, p);
    let mut dw = Tensor::zeros(w.shape());
    gemm(c, n * p, okk, T::one(), &x_cm, Trans::No, &gcol, Trans::Yes, T::zero(), dw.data_mut());
    let db = Tensor::from_vec(&[oc], channel_sums(gy.data(), n, oc, oh * ow)).expect("bias grad");
    let dx = need_dx.then(|| {
        let mut dx_cm = vec![T::zero(); c * n * p];
        gemm(c, okk, n * p, T::one(), w.data(), Trans::No, &gcol, Trans::No, T::zero(), &mut dx_cm);
        Tensor::from_vec(x.shape(), channel_to_batch_major(&dx_cm, n, c, p)).expect("dx shape")
    });
    (dx, dw, db)
}

/// Per-channel batch statistics `(mean, biased variance)` over N, H, W.
pub fn channel_moments<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (n, c, h, w) = x.dims4();
    let p = h * w;
    let m = T::lit((n * p) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ci in 0..c {
        let mut s = T::zero();
        for ni in 0..n {
            s += x.data()[(ni * c + ci) * p..(ni * c + ci + 1) * p].iter().copied().sum::<T>();
        }
        let mu = s / m;
        let mut sq = T::zero();
        for ni in 0..n {
            for &v in &x.data()[(ni * c + ci) * p..(ni * c + ci + 1) * p] {
                sq += (v - mu) * (v - mu);
            }
        }
        mean[ci] = mu;
        var[ci] = sq / m;
    }
    (mean, var)
}

/// `y = gamma * (x - mean) * inv_std + beta` per channel; returns `(y, xhat)`.
pub fn channel_normalize<T: Real>(
    x: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.dims4();
    let p = h * w;
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for ni in 0..n {
        for ci in 0..c {
            let r = (ni * c + ci) * p..(ni * c + ci + 1) * p;
            for ((xh, yv), &xv) in xhat.data_mut()[r.clone()]
                .iter_mut()
                .zip(&mut y.data_mut()[r.clone()])
                .zip(&x.data()[r])
            {
                *xh = (xv - mean[ci]) * inv_std[ci];
                *yv = gamma[ci] * *xh + beta[ci];
            }
        }
    }
    (y, xhat)
}

/// Backward of training-mode batch normalization.
pub fn batch_norm_backward<T: Real>(
    gy: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &[T],
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let (n, c, h, w) = gy.dims4();
    let p = h * w;
    let m = T::lit((n * p) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let r = (ni * c + ci) * p..(ni * c + ci + 1) * p;
            for (&g, &xh) in gy.data()[r.clone()].iter().zip(&xhat.data()[r]) {
                dgamma[ci] += g * xh;
                dbeta[ci] += g;
            }
        }
    }
    let mut dx = Tensor::zeros(gy.shape());
    for ni in 0..n {
        for ci in 0..c {
            let r = (ni * c + ci) * p..(ni * c + ci + 1) * p;
            let k = gamma[ci] * inv_std[ci] / m;
            for ((d, &g), &xh) in dx.data_mut()[r.clone()]
                .iter_mut()
                .zip(&gy.data()[r.clone()])
                .zip(&xhat.data()[r])
            {
                *d = k * (m * g - dbeta[ci] - xh * dgamma[ci]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// 2×2 stride-2 max pooling (floor mode); returns output and argmax offsets.
pub fn max_pool2_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = plane * oh * ow + oy * ow + ox;
                y.data_mut()[o] = src[best];
                arg[o] = best as u32;
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward<T: Real>(gy: &Tensor<T>, arg: &[u32], in_shape: &[usize]) -> Tensor<T> {
    let (_, _, oh, ow) = gy.dims4();
    let (h, w) = (in_shape[2], in_shape[3]);
    let mut dx = Tensor::zeros(in_shape);
    for (o, &g) in gy.data().iter().enumerate() {
        let plane = o / (oh * ow);
        dx.data_mut()[plane * h * w + arg[o] as usize] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, g: ConvGeom) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4();
        let (oc, _, k, _) = w.dims4();
        let oh = g.out_size(h).unwrap();
        let ow = g.out_size(wd).unwrap();
        let mut y = Tensor::zeros(&[n, oc, oh, ow]);
        for ni in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((o * c + ci) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        y.data_mut()[((ni * oc + o) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_summation() {
        let x = Tensor::from_fn(&[2, 3, 7, 7], |i| ((i * 37 % 11) as f64 - 5.0) / 7.0);
        let w = Tensor::from_fn(&[4, 3, 3, 3], |i| ((i * 13 % 7) as f64 - 3.0) / 5.0);
        for g in [ConvGeom::new(3, 1, 1), ConvGeom::new(3, 2, 1), ConvGeom::new(3, 2, 0)] {
            let fast = conv2d_forward(&x, &w, None, g);
            let slow = naive_conv(&x, &w, g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights (swapped axes)
        let g = ConvGeom::new(4, 2, 1);
        let x = Tensor::from_fn(&[1, 2, 8, 8], |i| (i as f64 * 0.37).sin());
        let w = Tensor::from_fn(&[3, 2, 4, 4], |i| (i as f64 * 0.11).cos());
        let y = conv2d_forward(&x, &w, None, g);
        let probe = Tensor::from_fn(y.shape(), |i| (i as f64 * 0.73).sin());
        // convT weight layout [in=3, out=2, k, k] equals conv weight layout
        let xt = conv_transpose2d_forward(&probe, &w, None, g);
        assert_eq!(xt.shape(), x.shape());
        let lhs: f64 = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn geometry_of_reference_plans() {
        let down = ConvGeom::new(3, 2, 1);
        assert_eq!(down.out_size(100), Some(50));
        assert_eq!(down.out_size(50), Some(25));
        let up = ConvGeom::new(4, 2, 1);
        assert_eq!(up.transposed_out(25), Some(50));
        assert_eq!(up.transposed_out(50), Some(100));
        assert_eq!(ConvGeom::new(3, 1, 0).out_size(2), None);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 4.0, 3.0, 2.0]).unwrap();
        let (y, arg) = max_pool2_forward(&x);
        assert_eq!(y.data(), &[4.0]);
        let dx = max_pool2_backward(&Tensor::full(&[1, 1, 1, 1], 1.0), &arg, x.shape());
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
