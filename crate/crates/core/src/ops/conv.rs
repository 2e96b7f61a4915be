use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::same_padding;

/// Window parameters shared by standard and depthwise convolutions.
///
/// Padding is always "same" (see [`same_padding`]); convolutions carry no bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvParams {
    pub fn new(kernel: usize, stride: usize, dilation: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 || dilation == 0 {
            return Err(Error::invalid(format!("kernel {kernel}, stride {stride}, dilation {dilation}: all must be >= 1")));
        }
        Ok(ConvParams { kernel, stride, dilation })
    }

    pub const fn pointwise() -> Self {
        ConvParams { kernel: 1, stride: 1, dilation: 1 }
    }

    pub const fn k3(stride: usize) -> Self {
        ConvParams { kernel: 3, stride, dilation: 1 }
    }

    pub fn geometry(&self, h: usize, w: usize) -> Geometry {
        Geometry::new(h, w, *self)
    }
}

/// Resolved sizes and leading pads of a convolution over an `h×w` plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub params: ConvParams,
}

impl Geometry {
    pub fn new(h: usize, w: usize, params: ConvParams) -> Self {
        let (oh, pad_top) = same_padding(h, params.kernel, params.stride, params.dilation);
        let (ow, pad_left) = same_padding(w, params.kernel, params.stride, params.dilation);
        Geometry { h, w, oh, ow, pad_top, pad_left, params }
    }

    fn is_identity_window(&self) -> bool {
        self.params.kernel == 1 && self.params.stride == 1
    }

    /// Output indices `o` whose source `o·s + tap·d − pad` lies in `[0, len)`.
    #[inline]
    fn valid(out_len: usize, len: usize, pad: usize, tap: usize, p: ConvParams) -> (usize, usize) {
        let offset = (tap * p.dilation) as isize - pad as isize;
        let s = p.stride as isize;
        // smallest o with o*s + offset >= 0
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        // largest o with o*s + offset <= len - 1
        let top = len as isize - 1 - offset;
        if top < 0 {
            return (0, 0);
        }
        let hi = (top / s + 1).min(out_len as isize);
        (lo.min(hi) as usize, hi.max(0) as usize)
    }

    #[inline]
    fn rows(&self, ky: usize) -> (usize, usize) {
        Self::valid(self.oh, self.h, self.pad_top, ky, self.params)
    }

    #[inline]
    fn cols(&self, kx: usize) -> (usize, usize) {
        Self::valid(self.ow, self.w, self.pad_left, kx, self.params)
    }

    #[inline]
    fn src(&self, o: usize, tap: usize, pad: usize) -> usize {
        o * self.params.stride + tap * self.params.dilation - pad
    }
}

fn im2col<T: Element>(x: &[T], channels: usize, g: &Geometry, col: &mut [T]) {
    let k = g.params.kernel;
    let s = g.params.stride;
    let cols = g.oh * g.ow;
    let mut phases = vec![T::zero(); if s > 1 { g.w + s } else { 0 }];
    for c in 0..channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            let (y0, y1) = g.rows(ky);
            let block = &mut col[(c * k + ky) * k * cols..][..k * cols];
            for oy in 0..g.oh {
                if oy < y0 || oy >= y1 {
                    for kx in 0..k {
                        block[kx * cols + oy * g.ow..][..g.ow].fill(T::zero());
                    }
                    continue;
                }
                let src = &plane[g.src(oy, ky, g.pad_top) * g.w..][..g.w];
                let (row, len): (&[T], usize) = if s == 1 {
                    (src, g.w)
                } else {
                    let len = split_phases(src, s, &mut phases);
                    (&phases, len)
                };
                for kx in 0..k {
                    let dst = &mut block[kx * cols + oy * g.ow..][..g.ow];
                    let (x0, x1) = g.cols(kx);
                    dst[..x0].fill(T::zero());
                    dst[x1.max(x0)..].fill(T::zero());
                    if x0 < x1 {
                        let base = g.src(x0, kx, g.pad_left);
                        let start = (base % s) * len + base / s;
                        dst[x0..x1].copy_from_slice(&row[start..start + (x1 - x0)]);
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], channels: usize, g: &Geometry, dx: &mut [T]) {
    let k = g.params.kernel;
    let cols = g.oh * g.ow;
    for c in 0..channels {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * cols..][..cols];
                let (y0, y1) = g.rows(ky);
                let (x0, x1) = g.cols(kx);
                for oy in y0..y1 {
                    let iy = g.src(oy, ky, g.pad_top);
                    let src = &row[oy * g.ow..(oy + 1) * g.ow];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for ox in x0..x1 {
                        let ix = g.src(ox, kx, g.pad_left);
                        dst[ix] = dst[ix] + src[ox];
                    }
                }
            }
        }
    }
}

fn check_standard(is: Shape, ws: Shape, p: ConvParams) -> Result<()> {
    if ws.c != is.c || ws.h != p.kernel || ws.w != p.kernel {
        return Err(Error::shape(format!("conv2d: input {is} is incompatible with weight {ws} (kernel {})", p.kernel)));
    }
    Ok(())
}

/// Cross-correlation with a `[cout, cin, k, k]` weight and same padding.
pub fn conv2d<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, p: ConvParams) -> Result<Tensor<T>> {
    let is = input.shape();
    let ws = weight.shape();
    check_standard(is, ws, p)?;
    let g = p.geometry(is.h, is.w);
    let cout = ws.n;
    let kdim = is.c * p.kernel * p.kernel;
    let cols = g.oh * g.ow;
    let out_shape = Shape::new(is.n, cout, g.oh, g.ow);
    let mut out = vec![T::zero(); out_shape.numel()];
    let w = weight.data();

    out.par_chunks_mut(cout * cols).enumerate().for_each(|(b, out_b)| {
        let x = input.item(b);
        if g.is_identity_window() {
            T::gemm(cout, kdim, cols, T::one(), w, kdim as isize, 1, x, cols as isize, 1, T::zero(), out_b, cols as isize, 1);
        } else {
            let mut col = vec![T::zero(); kdim * cols];
            im2col(x, is.c, &g, &mut col);
            T::gemm(cout, kdim, cols, T::one(), w, kdim as isize, 1, &col, cols as isize, 1, T::zero(), out_b, cols as isize, 1);
        }
    });
    Ok(Tensor::from_parts(out_shape, out))
}

/// Gradients of [`conv2d`] with respect to its input (when requested) and weight.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    p: ConvParams,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let is = input.shape();
    let ws = weight.shape();
    let g = p.geometry(is.h, is.w);
    let cout = ws.n;
    let kdim = is.c * p.kernel * p.kernel;
    let cols = g.oh * g.ow;
    let w = weight.data();

    let mut dw = vec![T::zero(); ws.numel()];
    let mut dx = if need_input { Some(vec![T::zero(); is.numel()]) } else { None };
    let mut col = if g.is_identity_window() { Vec::new() } else { vec![T::zero(); kdim * cols] };
    let mut dcol = if g.is_identity_window() || !need_input { Vec::new() } else { vec![T::zero(); kdim * cols] };

    for b in 0..is.n {
        let x = input.item(b);
        let dy = grad_out.item(b);
        let xcol: &[T] = if g.is_identity_window() {
            x
        } else {
            im2col(x, is.c, &g, &mut col);
            &col
        };
        // dW += dY · colᵀ
        T::gemm(cout, cols, kdim, T::one(), dy, cols as isize, 1, xcol, 1, cols as isize, T::one(), &mut dw, kdim as isize, 1);
        if let Some(dx) = dx.as_mut() {
            let item = is.c * is.plane();
            let dx_b = &mut dx[b * item..(b + 1) * item];
            // dcol = Wᵀ · dY
            if g.is_identity_window() {
                T::gemm(kdim, cout, cols, T::one(), w, 1, kdim as isize, dy, cols as isize, 1, T::zero(), dx_b, cols as isize, 1);
            } else {
                T::gemm(kdim, cout, cols, T::one(), w, 1, kdim as isize, dy, cols as isize, 1, T::zero(), &mut dcol, cols as isize, 1);
                col2im(&dcol, is.c, &g, dx_b);
            }
        }
    }
    (dx.map(|d| Tensor::from_parts(is, d)), Tensor::from_parts(ws, dw))
}

fn check_depthwise(is: Shape, ws: Shape, p: ConvParams) -> Result<()> {
    if ws.n != is.c || ws.c != 1 || ws.h != p.kernel || ws.w != p.kernel {
        return Err(Error::shape(format!("depthwise_conv2d: input {is} is incompatible with weight {ws} (kernel {})", p.kernel)));
    }
    Ok(())
}

/// Splits `row` into `s` phases so that `row[j·s + p]` lands at
/// `phases[p·stride_len + j]`; strided reads become contiguous.
fn split_phases<T: Element>(row: &[T], s: usize, phases: &mut [T]) -> usize {
    let len = row.len().div_ceil(s);
    for (p, dst) in phases.chunks_mut(len).take(s).enumerate() {
        for (d, &v) in dst.iter_mut().zip(row[p..].iter().step_by(s)) {
            *d = v;
        }
    }
    len
}

fn depthwise_plane<T: Element>(x: &[T], k: &[T], g: &Geometry, out: &mut [T]) {
    let ks = g.params.kernel;
    let s = g.params.stride;
    let mut phases = vec![T::zero(); if s > 1 { g.w + s } else { 0 }];
    for oy in 0..g.oh {
        let dst = &mut out[oy * g.ow..(oy + 1) * g.ow];
        dst.fill(T::zero());
        for ky in 0..ks {
            let (y0, y1) = g.rows(ky);
            if oy < y0 || oy >= y1 {
                continue;
            }
            let src = &x[g.src(oy, ky, g.pad_top) * g.w..][..g.w];
            let (row, len): (&[T], usize) = if s == 1 {
                (src, g.w)
            } else {
                let len = split_phases(src, s, &mut phases);
                (&phases, len)
            };
            for kx in 0..ks {
                let (x0, x1) = g.cols(kx);
                if x0 >= x1 {
                    continue;
                }
                let wv = k[ky * ks + kx];
                let base = g.src(x0, kx, g.pad_left);
                let start = (base % s) * len + base / s;
                for (d, &v) in dst[x0..x1].iter_mut().zip(&row[start..start + (x1 - x0)]) {
                    *d = *d + wv * v;
                }
            }
        }
    }
}

/// Per-channel convolution with a `[c, 1, k, k]` weight, optional dilation.
pub fn depthwise_conv2d<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, p: ConvParams) -> Result<Tensor<T>> {
    let is = input.shape();
    check_depthwise(is, weight.shape(), p)?;
    let g = p.geometry(is.h, is.w);
    let out_shape = Shape::new(is.n, is.c, g.oh, g.ow);
    let mut out = vec![T::zero(); out_shape.numel()];
    let taps = p.kernel * p.kernel;
    out.par_chunks_mut(g.oh * g.ow).enumerate().for_each(|(i, plane)| {
        let (b, c) = (i / is.c, i % is.c);
        depthwise_plane(input.plane(b, c), &weight.data()[c * taps..(c + 1) * taps], &g, plane);
    });
    Ok(Tensor::from_parts(out_shape, out))
}

/// Gradients of [`depthwise_conv2d`]; the weight gradient is reduced in f64.
pub fn depthwise_conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    p: ConvParams,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let is = input.shape();
    let g = p.geometry(is.h, is.w);
    let ks = p.kernel;
    let taps = ks * ks;
    let oplane = g.oh * g.ow;

    // Weight gradient: one task per channel, batch summed in order.
    let dw: Vec<T> = (0..is.c)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut acc = vec![0f64; taps];
            for b in 0..is.n {
                let x = input.plane(b, c);
                let dy = grad_out.plane(b, c);
                for ky in 0..ks {
                    let (y0, y1) = g.rows(ky);
                    for kx in 0..ks {
                        let (x0, x1) = g.cols(kx);
                        let mut s = 0f64;
                        for oy in y0..y1 {
                            let src = &x[g.src(oy, ky, g.pad_top) * g.w..][..g.w];
                            let d = &dy[oy * g.ow..(oy + 1) * g.ow];
                            let mut row = T::zero();
                            for ox in x0..x1 {
                                row = row + d[ox] * src[g.src(ox, kx, g.pad_left)];
                            }
                            s += row.as_f64();
                        }
                        acc[ky * ks + kx] += s;
                    }
                }
            }
            acc.into_iter().map(T::of)
        })
        .collect();

    let dx = need_input.then(|| {
        let mut dx = vec![T::zero(); is.numel()];
        dx.par_chunks_mut(is.plane()).enumerate().for_each(|(i, plane)| {
            let c = i % is.c;
            let k = &weight.data()[c * taps..(c + 1) * taps];
            let dy = &grad_out.data()[i * oplane..(i + 1) * oplane];
            for ky in 0..ks {
                let (y0, y1) = g.rows(ky);
                for kx in 0..ks {
                    let wv = k[ky * ks + kx];
                    let (x0, x1) = g.cols(kx);
                    for oy in y0..y1 {
                        let iy = g.src(oy, ky, g.pad_top);
                        let d = &dy[oy * g.ow..(oy + 1) * g.ow];
                        let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                        for ox in x0..x1 {
                            let ix = g.src(ox, kx, g.pad_left);
                            dst[ix] = dst[ix] + wv * d[ox];
                        }
                    }
                }
            }
        });
        Tensor::from_parts(is, dx)
    });
    (dx, Tensor::from_parts(weight.shape(), dw))
}
