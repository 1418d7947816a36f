//! Layer forward/backward implementations.
//!
//! Image tensors are [C, H, W]. Convolutions use stride 1 and reflect
//! padding with edge repeat (-1 -> 0, n -> n-1), matching the kernel
//! simulator's border convention. Backward methods accumulate parameter
//! gradients into a flat buffer laid out like the [`ParamStore`];
//! `backward_input` variants propagate only the input gradient, which is
//! what frozen-network paths need.

use super::{real, NnError, ParamRef, ParamStore, Real, Tensor};

/// Dot product with eight independent accumulators; the fixed summation
/// order keeps results reproducible while letting the reduction vectorize.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let mut ai = a.chunks_exact(8);
    let mut bi = b.chunks_exact(8);
    for (ca, cb) in (&mut ai).zip(&mut bi) {
        for k in 0..8 {
            acc[k] = acc[k] + ca[k] * cb[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ai.remainder().iter().zip(bi.remainder()) {
        s = s + *x * *y;
    }
    s
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i - 1;
    }
    if i >= n {
        i = 2 * n - 1 - i;
    }
    i as usize
}

/// 2D convolution, kernel `k` x `k` (1 or 3), stride 1, reflect padding.
/// Weights are [out, in, k, k]; bias [out].
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamRef,
    pub b: ParamRef,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
}

impl Conv2d {
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
    ) -> Self {
        debug_assert!(k == 1 || k == 3);
        let w = ps.alloc(&format!("{name}.w"), &[out_ch, in_ch, k, k]);
        let b = ps.alloc(&format!("{name}.b"), &[out_ch]);
        Self {
            w,
            b,
            in_ch,
            out_ch,
            k,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    pub fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<(), NnError> {
        let (c, _, _) = x.chw();
        if c != self.in_ch {
            return Err(NnError::ShapeMismatch {
                expected: format!("[{}, H, W]", self.in_ch),
                got: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let (_, h, wd) = x.chw();
        let k = self.k;
        let p = k / 2;
        let wts = ps.value(self.w);
        let bias = ps.value(self.b);
        let xp = pad_reflect(x, p);
        let mut out = Tensor::zeros(&[self.out_ch, h, wd]);
        let mut acc = vec![T::zero(); wd];
        for o in 0..self.out_ch {
            for y in 0..h {
                acc.fill(bias[o]);
                for c in 0..self.in_ch {
                    for ky in 0..k {
                        let srow = xp.row(c, y + ky);
                        for kx in 0..k {
                            let wv = wts[((o * self.in_ch + c) * k + ky) * k + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            for (a, si) in acc.iter_mut().zip(&srow[kx..kx + wd]) {
                                *a = *a + wv * *si;
                            }
                        }
                    }
                }
                out.row_mut(o, y).copy_from_slice(&acc);
            }
        }
        out
    }

    /// Full backward: accumulates dL/dw and dL/db into `gparams`, returns
    /// dL/dx.
    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &Tensor<T>,
        gy: &Tensor<T>,
        gparams: &mut [T],
    ) -> Tensor<T> {
        let (_, h, wd) = x.chw();
        let k = self.k;
        let p = k / 2;
        let wts = ps.value(self.w);
        let wrange = ps.range(self.w);
        let brange = ps.range(self.b);
        let xp = pad_reflect(x, p);
        let mut gxp = Tensor::zeros(xp.shape());
        for o in 0..self.out_ch {
            let mut gb = T::zero();
            for y in 0..h {
                let grow = gy.row(o, y);
                gb = gb + grow.iter().copied().sum();
                for c in 0..self.in_ch {
                    for ky in 0..k {
                        let srow = xp.row(c, y + ky);
                        let gxrow = gxp.row_mut(c, y + ky);
                        for kx in 0..k {
                            let widx = ((o * self.in_ch + c) * k + ky) * k + kx;
                            let wv = wts[widx];
                            gparams[wrange.start + widx] =
                                gparams[wrange.start + widx] + dot(grow, &srow[kx..kx + wd]);
                            for (xi, gi) in gxrow[kx..kx + wd].iter_mut().zip(grow) {
                                *xi = *xi + wv * *gi;
                            }
                        }
                    }
                }
            }
            gparams[brange.start + o] = gparams[brange.start + o] + gb;
        }
        fold_reflect(&gxp, p, x.shape())
    }

    /// Input gradient only; parameters untouched (frozen-path backward).
    pub fn backward_input<T: Real>(&self, ps: &ParamStore<T>, gy: &Tensor<T>) -> Tensor<T> {
        let (_, h, wd) = gy.chw();
        let k = self.k;
        let p = k / 2;
        let wts = ps.value(self.w);
        let mut gxp = Tensor::zeros(&[self.in_ch, h + 2 * p, wd + 2 * p]);
        for o in 0..self.out_ch {
            for y in 0..h {
                let grow = gy.row(o, y);
                for c in 0..self.in_ch {
                    for ky in 0..k {
                        let gxrow = gxp.row_mut(c, y + ky);
                        for kx in 0..k {
                            let wv = wts[((o * self.in_ch + c) * k + ky) * k + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            for (xi, gi) in gxrow[kx..kx + wd].iter_mut().zip(grow) {
                                *xi = *xi + wv * *gi;
                            }
                        }
                    }
                }
            }
        }
        fold_reflect(&gxp, p, &[self.in_ch, h, wd])
    }
}

/// Reflect-pads (edge repeat) each channel by `p` on every side.
fn pad_reflect<T: Real>(x: &Tensor<T>, p: usize) -> Tensor<T> {
    if p == 0 {
        return x.clone();
    }
    let (c, h, w) = x.chw();
    let mut out = Tensor::zeros(&[c, h + 2 * p, w + 2 * p]);
    for ch in 0..c {
        for py in 0..h + 2 * p {
            let sy = reflect(py as isize - p as isize, h);
            let src = x.row(ch, sy);
            let dst = out.row_mut(ch, py);
            dst[p..p + w].copy_from_slice(src);
            for i in 0..p {
                dst[i] = src[reflect(i as isize - p as isize, w)];
                dst[p + w + i] = src[reflect((w + i) as isize, w)];
            }
        }
    }
    out
}

/// Adjoint of [`pad_reflect`]: folds padded-border gradients back onto the
/// interior cells they were read from.
fn fold_reflect<T: Real>(gxp: &Tensor<T>, p: usize, shape: &[usize]) -> Tensor<T> {
    if p == 0 {
        return gxp.clone();
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut gx = Tensor::zeros(shape);
    for ch in 0..c {
        for py in 0..h + 2 * p {
            let sy = reflect(py as isize - p as isize, h);
            let src = gxp.row(ch, py);
            let dst = gx.row_mut(ch, sy);
            for (d, s) in dst.iter_mut().zip(&src[p..p + w]) {
                *d = *d + *s;
            }
            for i in 0..p {
                let jl = reflect(i as isize - p as isize, w);
                dst[jl] = dst[jl] + src[i];
                let jr = reflect((w + i) as isize, w);
                dst[jr] = dst[jr] + src[p + w + i];
            }
        }
    }
    gx
}

/// Fully connected layer; weights [out, in], bias [out]. Acts on 1D tensors.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamRef,
    pub b: ParamRef,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, n_in: usize, n_out: usize) -> Self {
        let w = ps.alloc(&format!("{name}.w"), &[n_out, n_in]);
        let b = ps.alloc(&format!("{name}.b"), &[n_out]);
        Self { w, b, n_in, n_out }
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.n_in);
        let w = ps.value(self.w);
        let b = ps.value(self.b);
        let mut y = Vec::with_capacity(self.n_out);
        for o in 0..self.n_out {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            y.push(b[o] + dot(row, x));
        }
        y
    }

    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        x: &[T],
        gy: &[T],
        gparams: &mut [T],
    ) -> Vec<T> {
        let w = ps.value(self.w);
        let wrange = ps.range(self.w);
        let brange = ps.range(self.b);
        let mut gx = vec![T::zero(); self.n_in];
        for o in 0..self.n_out {
            let g = gy[o];
            gparams[brange.start + o] = gparams[brange.start + o] + g;
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let gwrow =
                &mut gparams[wrange.start + o * self.n_in..wrange.start + (o + 1) * self.n_in];
            for (gw, xi) in gwrow.iter_mut().zip(x) {
                *gw = *gw + g * *xi;
            }
            for (gxi, wi) in gx.iter_mut().zip(row) {
                *gxi = *gxi + g * *wi;
            }
        }
        gx
    }

    pub fn backward_input<T: Real>(&self, ps: &ParamStore<T>, gy: &[T]) -> Vec<T> {
        let w = ps.value(self.w);
        let mut gx = vec![T::zero(); self.n_in];
        for o in 0..self.n_out {
            let g = gy[o];
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                gx[i] = gx[i] + g * row[i];
            }
        }
        gx
    }
}

/// 2x2 average pool; spatial dims must be even.
pub fn avgpool2_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let quarter: T = real(0.25);
    let mut out = Tensor::zeros(&[c, h / 2, w / 2]);
    for ch in 0..c {
        for y in 0..h / 2 {
            let r0 = x.row(ch, 2 * y);
            let r1 = x.row(ch, 2 * y + 1);
            let dst = out.row_mut(ch, y);
            for i in 0..w / 2 {
                dst[i] =
                    (r0[2 * i] + r0[2 * i + 1] + r1[2 * i] + r1[2 * i + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avgpool2_backward<T: Real>(gy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (c, hh, hw) = gy.chw();
    let quarter: T = real(0.25);
    let mut gx = Tensor::zeros(in_shape);
    for ch in 0..c {
        for y in 0..hh {
            let g = gy.row(ch, y).to_vec();
            for (dy, row) in [2 * y, 2 * y + 1].into_iter().enumerate() {
                let _ = dy;
                let dst = gx.row_mut(ch, row);
                for i in 0..hw {
                    let gq = g[i] * quarter;
                    dst[2 * i] = dst[2 * i] + gq;
                    dst[2 * i + 1] = dst[2 * i + 1] + gq;
                }
            }
        }
    }
    gx
}

/// 2x nearest-neighbor upsampling.
pub fn upsample2_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    for ch in 0..c {
        for y in 0..h {
            let src = x.row(ch, y).to_vec();
            for row in [2 * y, 2 * y + 1] {
                let dst = out.row_mut(ch, row);
                for i in 0..w {
                    dst[2 * i] = src[i];
                    dst[2 * i + 1] = src[i];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(gy: &Tensor<T>) -> Tensor<T> {
    let (c, h2, w2) = gy.chw();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            let r0 = gy.row(ch, 2 * y);
            let r1 = gy.row(ch, 2 * y + 1);
            let dst = gx.row_mut(ch, y);
            for i in 0..w {
                dst[i] = r0[2 * i] + r0[2 * i + 1] + r1[2 * i] + r1[2 * i + 1];
            }
        }
    }
    gx
}

pub const LEAKY_SLOPE: f64 = 0.01;

/// Leaky rectifier, slope 0.01.
pub fn leaky_relu_forward<T: Real>(x: &mut Tensor<T>) {
    let slope: T = real(LEAKY_SLOPE);
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Activation backward from the *output* values (sign-preserving slope).
pub fn leaky_relu_backward<T: Real>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let slope: T = real(LEAKY_SLOPE);
    let mut gx = gy.clone();
    for (g, &out) in gx.data_mut().iter_mut().zip(y.data()) {
        if out < T::zero() {
            *g = *g * slope;
        }
    }
    gx
}

/// Concatenates [C_i, H, W] tensors along the channel axis.
pub fn concat_forward<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let (_, h, w) = parts[0].chw();
    let total: usize = parts.iter().map(|p| p.chw().0).sum();
    let mut data = Vec::with_capacity(total * h * w);
    for p in parts {
        debug_assert_eq!((p.chw().1, p.chw().2), (h, w));
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(&[total, h, w], data).expect("concat shape")
}

/// Splits a concat gradient back into per-part tensors.
pub fn concat_backward<T: Real>(gy: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let (_, h, w) = gy.chw();
    let mut out = Vec::with_capacity(channels.len());
    let mut off = 0;
    for &c in channels {
        let n = c * h * w;
        let t = Tensor::from_vec(&[c, h, w], gy.data()[off..off + n].to_vec()).unwrap();
        out.push(t);
        off += n;
    }
    out
}

/// Per-channel spatial mean: [C,H,W] -> [C].
pub fn global_avgpool_forward<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let (c, h, w) = x.chw();
    let inv: T = real(1.0 / (h * w) as f64);
    (0..c)
        .map(|ch| {
            let mut acc = T::zero();
            for y in 0..h {
                acc = acc + x.row(ch, y).iter().copied().sum();
            }
            acc * inv
        })
        .collect()
}

pub fn global_avgpool_backward<T: Real>(gy: &[T], shape: &[usize]) -> Tensor<T> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let inv: T = real(1.0 / (h * w) as f64);
    let mut gx = Tensor::zeros(shape);
    for ch in 0..c {
        let g = gy[ch] * inv;
        for y in 0..h {
            for v in gx.row_mut(ch, y) {
                *v = g;
            }
        }
    }
    gx
}

/// Broadcasts a per-channel vector over an H x W grid: [C] -> [C,H,W].
pub fn broadcast_forward<T: Real>(x: &[T], h: usize, w: usize) -> Tensor<T> {
    let c = x.len();
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            out.row_mut(ch, y).fill(x[ch]);
        }
    }
    out
}

pub fn broadcast_backward<T: Real>(gy: &Tensor<T>) -> Vec<T> {
    let (c, h, _) = gy.chw();
    (0..c)
        .map(|ch| {
            let mut acc = T::zero();
            for y in 0..h {
                acc = acc + gy.row(ch, y).iter().copied().sum();
            }
            acc
        })
        .collect()
}
