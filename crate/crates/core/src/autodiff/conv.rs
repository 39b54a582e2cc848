//! Convolution, pooling and upsampling kernels on `[C, D, H, W]` tensors.
//! 2D data uses `D = 1` with unit kernel/stride/padding along that axis.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::{Error, Result};

/// Per-axis (depth, height, width) convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad_lo: [usize; 3],
    pub pad_hi: [usize; 3],
}

impl ConvGeom {
    /// Stride-1 "same" convolution with an odd kernel `k` over `ndim` spatial axes.
    pub fn same(k: usize, ndim: usize) -> Self {
        let p = k / 2;
        let mut g = ConvGeom { kernel: [k; 3], stride: [1; 3], pad_lo: [p; 3], pad_hi: [p; 3] };
        if ndim == 2 {
            g.kernel[0] = 1;
            g.pad_lo[0] = 0;
            g.pad_hi[0] = 0;
        }
        g
    }

    /// Strided convolution with symmetric padding `k / 2`.
    pub fn strided(k: usize, stride: usize, ndim: usize) -> Self {
        let mut g = Self::same(k, ndim);
        g.stride = [stride; 3];
        if ndim == 2 {
            g.stride[0] = 1;
        }
        g
    }

    /// Stride-1 convolution that grows each spatial axis by `grow`
    /// (kernel `k`, padding split low/high with the extra voxel on the high side).
    pub fn growing(k: usize, grow: usize, ndim: usize) -> Self {
        let total = k - 1 + grow;
        let mut g = ConvGeom { kernel: [k; 3], stride: [1; 3], pad_lo: [total / 2; 3], pad_hi: [total - total / 2; 3] };
        if ndim == 2 {
            g.kernel[0] = 1;
            g.pad_lo[0] = 0;
            g.pad_hi[0] = 0;
        }
        g
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + self.pad_lo[a] + self.pad_hi[a];
            if padded < self.kernel[a] {
                return Err(Error::ShapeMismatch(format!(
                    "kernel {} larger than padded input {padded}",
                    self.kernel[a]
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

/// Output positions `o` with `o * s + k - lo` inside `[0, n)`.
#[inline]
fn valid_range(out_len: usize, n: usize, k: usize, s: usize, lo: usize) -> (usize, usize) {
    let start = if lo > k { (lo - k).div_ceil(s) } else { 0 };
    let limit = n + lo;
    let end = if limit > k { (limit - k).div_ceil(s).min(out_len) } else { 0 };
    (start, end.max(start))
}

pub(crate) fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    let [ci, id, ih, iw] = x.dims4()?;
    let ws = w.shape();
    if ws.len() != 5 || ws[1] != ci || ws[2..] != g.kernel || b.len() != ws[0] {
        return Err(Error::ShapeMismatch(format!(
            "conv weight {ws:?} / bias {:?} vs input {:?} and kernel {:?}",
            b.shape(),
            x.shape(),
            g.kernel
        )));
    }
    let co = ws[0];
    let [od, oh, ow] = g.output_dims([id, ih, iw])?;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let mut out = vec![0.0; co * od * oh * ow];
    let xd = x.data();
    let wd = w.data();
    let osz = od * oh * ow;
    let isz = id * ih * iw;
    for o in 0..co {
        let ob = &mut out[o * osz..(o + 1) * osz];
        ob.iter_mut().for_each(|v| *v = b.data()[o]);
        for c in 0..ci {
            let xin = &xd[c * isz..(c + 1) * isz];
            for kz in 0..kd {
                let (z0, z1) = valid_range(od, id, kz, sd, g.pad_lo[0]);
                for ky in 0..kh {
                    let (y0, y1) = valid_range(oh, ih, ky, sh, g.pad_lo[1]);
                    for kx in 0..kw {
                        let (x0, x1) = valid_range(ow, iw, kx, sw, g.pad_lo[2]);
                        let wv = wd[(((o * ci + c) * kd + kz) * kh + ky) * kw + kx];
                        for oz in z0..z1 {
                            let iz = oz * sd + kz - g.pad_lo[0];
                            for oy in y0..y1 {
                                let iy = oy * sh + ky - g.pad_lo[1];
                                let orow = &mut ob[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                                let irow = &xin[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                                if sw == 1 {
                                    let off = kx as isize - g.pad_lo[2] as isize;
                                    let src = &irow[(x0 as isize + off) as usize..(x1 as isize + off) as usize];
                                    for (dst, s) in orow[x0..x1].iter_mut().zip(src) {
                                        *dst += wv * s;
                                    }
                                } else {
                                    for (ox, dst) in orow.iter_mut().enumerate().take(x1).skip(x0) {
                                        *dst += wv * irow[ox * sw + kx - g.pad_lo[2]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let shape: Vec<usize> = if x.shape().len() == 3 { vec![co, oh, ow] } else { vec![co, od, oh, ow] };
    Tensor::new(&shape, out)
}

/// Gradients `(dx, dw, db)` of a convolution given the output gradient.
pub(crate) fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    g: &ConvGeom,
    gy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let [ci, id, ih, iw] = x.dims4()?;
    let co = w.shape()[0];
    let [od, oh, ow] = g.output_dims([id, ih, iw])?;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let osz = od * oh * ow;
    let isz = id * ih * iw;
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; co];
    let xd = x.data();
    let wd = w.data();
    let gd = gy.data();
    for o in 0..co {
        let gb = &gd[o * osz..(o + 1) * osz];
        db[o] = gb.iter().sum();
        for c in 0..ci {
            let xin = &xd[c * isz..(c + 1) * isz];
            for kz in 0..kd {
                let (z0, z1) = valid_range(od, id, kz, sd, g.pad_lo[0]);
                for ky in 0..kh {
                    let (y0, y1) = valid_range(oh, ih, ky, sh, g.pad_lo[1]);
                    for kx in 0..kw {
                        let (x0, x1) = valid_range(ow, iw, kx, sw, g.pad_lo[2]);
                        let widx = (((o * ci + c) * kd + kz) * kh + ky) * kw + kx;
                        let wv = wd[widx];
                        let mut acc = 0.0;
                        for oz in z0..z1 {
                            let iz = oz * sd + kz - g.pad_lo[0];
                            for oy in y0..y1 {
                                let iy = oy * sh + ky - g.pad_lo[1];
                                let grow = &gb[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                                let ibase = c * isz + (iz * ih + iy) * iw;
                                let irow = &xin[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                                if sw == 1 {
                                    let off = kx as isize - g.pad_lo[2] as isize;
                                    let lo = (x0 as isize + off) as usize;
                                    let hi = (x1 as isize + off) as usize;
                                    for (gv, xv) in grow[x0..x1].iter().zip(&irow[lo..hi]) {
                                        acc += gv * xv;
                                    }
                                    if need_dx {
                                        for (d, gv) in dx[ibase + lo..ibase + hi].iter_mut().zip(&grow[x0..x1]) {
                                            *d += wv * gv;
                                        }
                                    }
                                } else {
                                    for (ox, gv) in grow.iter().enumerate().take(x1).skip(x0) {
                                        let ix = ox * sw + kx - g.pad_lo[2];
                                        acc += gv * irow[ix];
                                        if need_dx {
                                            dx[ibase + ix] += wv * gv;
                                        }
                                    }
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    let dx = if need_dx { Some(Tensor::new(x.shape(), dx)?) } else { None };
    Ok((dx, Tensor::new(w.shape(), dw)?, Tensor::new(&[co], db)?))
}

/// Max pooling with window = stride = `factor` per axis, floor mode.
/// Returns the output and the flat input index of each maximum.
pub(crate) fn maxpool_forward(x: &Tensor, factor: [usize; 3]) -> Result<(Tensor, Vec<usize>)> {
    let [c, id, ih, iw] = x.dims4()?;
    let [fd, fh, fw] = factor;
    let (od, oh, ow) = (id / fd, ih / fh, iw / fw);
    if od == 0 || oh == 0 || ow == 0 {
        return Err(Error::ShapeMismatch(format!("cannot pool {:?} by {factor:?}", x.shape())));
    }
    let mut out = Vec::with_capacity(c * od * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    let xd = x.data();
    for ch in 0..c {
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dz in 0..fd {
                        for dy in 0..fh {
                            for dxx in 0..fw {
                                let i = ((ch * id + oz * fd + dz) * ih + oy * fh + dy) * iw + ox * fw + dxx;
                                if xd[i] > best {
                                    best = xd[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    let shape: Vec<usize> = if x.shape().len() == 3 { vec![c, oh, ow] } else { vec![c, od, oh, ow] };
    Ok((Tensor::new(&shape, out)?, arg))
}

pub(crate) fn upsample_forward(x: &Tensor, factor: [usize; 3]) -> Result<Tensor> {
    let [c, id, ih, iw] = x.dims4()?;
    let [fd, fh, fw] = factor;
    let (od, oh, ow) = (id * fd, ih * fh, iw * fw);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * od * oh * ow);
    for ch in 0..c {
        for oz in 0..od {
            for oy in 0..oh {
                let base = ((ch * id + oz / fd) * ih + oy / fh) * iw;
                for ox in 0..ow {
                    out.push(xd[base + ox / fw]);
                }
            }
        }
    }
    let shape: Vec<usize> = if x.shape().len() == 3 { vec![c, oh, ow] } else { vec![c, od, oh, ow] };
    Tensor::new(&shape, out)
}

pub(crate) fn upsample_backward(x: &Tensor, factor: [usize; 3], gy: &Tensor) -> Result<Tensor> {
    let [c, id, ih, iw] = x.dims4()?;
    let [fd, fh, fw] = factor;
    let (od, oh, ow) = (id * fd, ih * fh, iw * fw);
    let mut dx = vec![0.0; x.len()];
    let gd = gy.data();
    let mut k = 0;
    for ch in 0..c {
        for oz in 0..od {
            for oy in 0..oh {
                let base = ((ch * id + oz / fd) * ih + oy / fh) * iw;
                for ox in 0..ow {
                    dx[base + ox / fw] += gd[k];
                    k += 1;
                }
            }
        }
    }
    Tensor::new(x.shape(), dx)
}
