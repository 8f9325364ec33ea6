//! 2-D cross-correlation with zero padding, plus its two adjoints.
//!
//! Output planes are computed independently in parallel; each plane uses a
//! fixed accumulation order so results are bit-identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl ConvGeometry {
    /// Stride 1, "same" padding for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        ConvGeometry {
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }
}

/// Convolution weights, optional bias and geometry.
///
/// `weight` has shape `(out_ch, in_ch / groups, kh, kw)`; `bias`, when
/// present, has shape `(1, out_ch, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub geometry: ConvGeometry,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Option<Tensor>, geometry: ConvGeometry) -> Result<Self> {
        let p = ConvParams {
            weight,
            bias,
            geometry,
        };
        p.validate()?;
        Ok(p)
    }

    /// Stride-1 "same" conv.
    pub fn same(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let k = weight.shape().h;
        Self::new(weight, bias, ConvGeometry::same(k))
    }

    pub fn validate(&self) -> Result<()> {
        let ws = self.weight.shape();
        let g = self.geometry;
        if g.stride == 0 || g.groups == 0 {
            return Err(Error::invalid("conv2d", ws, "stride and groups must be positive"));
        }
        if !ws.n.is_multiple_of(g.groups) {
            return Err(Error::invalid("conv2d", ws, "out_ch not divisible by groups"));
        }
        if ws.is_empty() {
            return Err(Error::invalid("conv2d", ws, "empty weight"));
        }
        if let Some(b) = &self.bias {
            if b.numel() != ws.n {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: ws,
                    right: b.shape(),
                });
            }
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c * self.geometry.groups
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h, s.w)
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        conv_output_shape(input, self.weight.shape(), self.geometry)
    }
}

pub fn conv_output_shape(input: Shape, weight: Shape, g: ConvGeometry) -> Result<Shape> {
    if input.c != weight.c * g.groups {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input,
            right: weight,
        });
    }
    let (hp, wp) = (input.h + 2 * g.padding, input.w + 2 * g.padding);
    if hp < weight.h || wp < weight.w || input.is_empty() {
        return Err(Error::EmptyOutput {
            op: "conv2d",
            reason: format!("input {input} padded by {} smaller than kernel {weight}", g.padding),
        });
    }
    Ok(Shape::new(
        input.n,
        weight.n,
        (hp - weight.h) / g.stride + 1,
        (wp - weight.w) / g.stride + 1,
    ))
}

/// Range of output columns `ox` whose source column `ox*s + k - p` is inside `[0, w)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, k: usize, p: usize, s: usize) -> (usize, usize) {
    // ox*s + k >= p  and  ox*s + k - p < in_len
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    let limit = in_len + p; // ox*s + k < in_len + p
    let hi = if limit > k { (limit - k).div_ceil(s) } else { 0 };
    (lo.min(out_len), hi.min(out_len))
}

pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    params.validate()?;
    conv2d_raw(
        input,
        &params.weight,
        params.bias.as_ref(),
        params.geometry,
    )
}

/// Convolution on loose weight/bias tensors.
pub fn conv2d_raw(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    g: ConvGeometry,
) -> Result<Tensor> {
    let is = input.shape();
    let ws = weight.shape();
    let os = conv_output_shape(is, ws, g)?;
    if let Some(b) = bias {
        if b.numel() != ws.n {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: ws,
                right: b.shape(),
            });
        }
    }
    let out_per_group = ws.n / g.groups;
    let in_per_group = ws.c;
    let (kh, kw) = (ws.h, ws.w);
    let (s, p) = (g.stride, g.padding);
    let mut out = Tensor::zeros(os);
    let plane = os.plane();
    let wdata = weight.data();
    let idata = input.data();

    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, oc) = (idx / os.c, idx % os.c);
            let grp = oc / out_per_group;
            if let Some(b) = bias {
                dst.fill(b.data()[oc]);
            }
            for icl in 0..in_per_group {
                let ic = grp * in_per_group + icl;
                let src = &idata[(n * is.c + ic) * is.plane()..][..is.plane()];
                let wbase = ((oc * in_per_group) + icl) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(os.h, is.h, ky, p, s);
                    for kx in 0..kw {
                        let wv = wdata[wbase + ky * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox_lo, ox_hi) = valid_range(os.w, is.w, kx, p, s);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let row = &src[iy * is.w..(iy + 1) * is.w];
                            let orow = &mut dst[oy * os.w..(oy + 1) * os.w];
                            if s == 1 {
                                let ix0 = ox_lo + kx - p;
                                let len = ox_hi - ox_lo;
                                for (o, &i) in orow[ox_lo..ox_hi].iter_mut().zip(&row[ix0..ix0 + len]) {
                                    *o += wv * i;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * row[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradient of the conv output with respect to its input.
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    weight: &Tensor,
    input_shape: Shape,
    g: ConvGeometry,
) -> Result<Tensor> {
    let os = conv_output_shape(input_shape, weight.shape(), g)?;
    if grad_out.shape() != os {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward_input",
            left: os,
            right: grad_out.shape(),
        });
    }
    let ws = weight.shape();
    let out_per_group = ws.n / g.groups;
    let in_per_group = ws.c;
    let (kh, kw) = (ws.h, ws.w);
    let (s, p) = (g.stride, g.padding);
    let is = input_shape;
    let mut dx = Tensor::zeros(is);
    let wdata = weight.data();
    let gdata = grad_out.data();

    dx.data_mut()
        .par_chunks_mut(is.plane())
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, ic) = (idx / is.c, idx % is.c);
            let grp = ic / in_per_group;
            let icl = ic % in_per_group;
            for ocl in 0..out_per_group {
                let oc = grp * out_per_group + ocl;
                let src = &gdata[(n * os.c + oc) * os.plane()..][..os.plane()];
                let wbase = ((oc * in_per_group) + icl) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(os.h, is.h, ky, p, s);
                    for kx in 0..kw {
                        let wv = wdata[wbase + ky * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox_lo, ox_hi) = valid_range(os.w, is.w, kx, p, s);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let grow = &src[oy * os.w..(oy + 1) * os.w];
                            let drow = &mut dst[iy * is.w..(iy + 1) * is.w];
                            for ox in ox_lo..ox_hi {
                                drow[ox * s + kx - p] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        });
    Ok(dx)
}

/// Gradients of the conv output with respect to weight and bias.
pub fn conv2d_backward_params(
    grad_out: &Tensor,
    input: &Tensor,
    weight_shape: Shape,
    g: ConvGeometry,
) -> Result<(Tensor, Tensor)> {
    let is = input.shape();
    let os = conv_output_shape(is, weight_shape, g)?;
    if grad_out.shape() != os {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward_params",
            left: os,
            right: grad_out.shape(),
        });
    }
    let ws = weight_shape;
    let out_per_group = ws.n / g.groups;
    let in_per_group = ws.c;
    let (kh, kw) = (ws.h, ws.w);
    let (s, p) = (g.stride, g.padding);
    let per_oc = in_per_group * kh * kw;
    let mut dw = Tensor::zeros(ws);
    let idata = input.data();
    let gdata = grad_out.data();

    dw.data_mut()
        .par_chunks_mut(per_oc)
        .enumerate()
        .for_each(|(oc, dst)| {
            let grp = oc / out_per_group;
            for icl in 0..in_per_group {
                let ic = grp * in_per_group + icl;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(os.h, is.h, ky, p, s);
                    for kx in 0..kw {
                        let (ox_lo, ox_hi) = valid_range(os.w, is.w, kx, p, s);
                        let mut acc = 0.0f64;
                        for n in 0..is.n {
                            let src = &idata[(n * is.c + ic) * is.plane()..][..is.plane()];
                            let gsrc = &gdata[(n * os.c + oc) * os.plane()..][..os.plane()];
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ky - p;
                                let irow = &src[iy * is.w..(iy + 1) * is.w];
                                let grow = &gsrc[oy * os.w..(oy + 1) * os.w];
                                let mut row_acc = 0.0f32;
                                for ox in ox_lo..ox_hi {
                                    row_acc += grow[ox] * irow[ox * s + kx - p];
                                }
                                acc += row_acc as f64;
                            }
                        }
                        dst[(icl * kh + ky) * kw + kx] = acc as f32;
                    }
                }
            }
        });

    let mut db = vec![0.0f32; ws.n];
    for (oc, v) in db.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for n in 0..os.n {
            acc += grad_out.plane(n, oc).iter().map(|&g| g as f64).sum::<f64>();
        }
        *v = acc as f32;
    }
    Ok((dw, Tensor::channel_vector(db)))
}
