//! Dilated 2-D convolution, forward and backward.
//!
//! Direct implementation: for each (filter, input-channel, tap) the inner
//! loops run over contiguous rows so they vectorize; output channels are
//! independent and computed in parallel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ConvSpec, GradTape, LayerParams, TapeRecord};

fn check_conv_args(input: &Tensor, params: &LayerParams, spec: &ConvSpec) -> Result<(usize, usize)> {
    if input.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "conv input must be [C,H,W], got {:?}",
            input.shape()
        )));
    }
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if c_in != spec.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels, got {c_in}",
            spec.in_channels
        )));
    }
    if params.weights.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch(format!(
            "conv weights {:?} do not match spec {:?}",
            params.weights.shape(),
            spec.weight_shape()
        )));
    }
    if params.bias.shape() != [spec.out_channels] {
        return Err(Error::ShapeMismatch(format!(
            "conv bias {:?} must be [{}]",
            params.bias.shape(),
            spec.out_channels
        )));
    }
    if !input.all_finite() {
        return Err(Error::Numeric("non-finite value in conv input".into()));
    }
    spec.output_hw(h, w)
}

/// Zero-pad each channel of `[C,H,W]` by `p` on all sides.
fn pad_input(input: &Tensor, p: usize) -> (Vec<f64>, usize, usize) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut padded = vec![0.0; c * hp * wp];
    let src = input.data();
    for ci in 0..c {
        for i in 0..h {
            let dst_off = ci * hp * wp + (i + p) * wp + p;
            let src_off = ci * h * w + i * w;
            padded[dst_off..dst_off + w].copy_from_slice(&src[src_off..src_off + w]);
        }
    }
    (padded, hp, wp)
}

/// `out[c][i][j] = B[c] + sum_{ci,u,v} F[c][ci][u][v] *
/// padded[ci][i*s + u*d][j*s + v*d]`, zero padding of width `p`.
///
/// Appends a record holding the input so the backward pass can form the
/// weight gradient.
pub fn conv2d_forward(
    input: &Tensor,
    params: &LayerParams,
    spec: &ConvSpec,
    tape: &mut GradTape,
) -> Result<Tensor> {
    let (ho, wo) = check_conv_args(input, params, spec)?;
    let (padded, _hp, wp) = pad_input(input, spec.padding);
    let (k, s, d) = (spec.kernel, spec.stride, spec.dilation);
    let (c_in, c_out) = (spec.in_channels, spec.out_channels);
    let plane = wp * (input.shape()[1] + 2 * spec.padding);
    let weights = params.weights.data();
    let bias = params.bias.data();

    let mut out = vec![0.0; c_out * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(co, out_plane)| {
        out_plane.fill(bias[co]);
        for ci in 0..c_in {
            let in_plane = &padded[ci * plane..(ci + 1) * plane];
            for u in 0..k {
                for v in 0..k {
                    let wgt = weights[((co * c_in + ci) * k + u) * k + v];
                    if wgt == 0.0 {
                        continue;
                    }
                    for i in 0..ho {
                        let src = i * s + u * d;
                        let row = &in_plane[src * wp + v * d..];
                        let dst = &mut out_plane[i * wo..(i + 1) * wo];
                        if s == 1 {
                            for (o, &x) in dst.iter_mut().zip(&row[..wo]) {
                                *o += wgt * x;
                            }
                        } else {
                            for (o, x) in dst.iter_mut().zip(row.iter().step_by(s)) {
                                *o += wgt * x;
                            }
                        }
                    }
                }
            }
        }
    });

    tape.push(TapeRecord::Conv2d { input: input.clone(), spec: *spec });
    Tensor::from_vec(&[c_out, ho, wo], out)
}

/// Exact adjoints of [`conv2d_forward`] with respect to input, weights, and
/// bias. `record` must be the `Conv2d` record of the matching forward call.
pub fn conv2d_backward(
    grad_out: &Tensor,
    record: &TapeRecord,
    params: &LayerParams,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (input, spec) = match record {
        TapeRecord::Conv2d { input, spec } => (input, spec),
        other => {
            return Err(Error::Tape(format!(
                "conv2d backward got a {} record",
                other.kind()
            )))
        }
    };
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let (ho, wo) = spec.output_hw(h, w)?;
    if grad_out.shape() != [spec.out_channels, ho, wo] {
        return Err(Error::ShapeMismatch(format!(
            "grad_out {:?} does not match forward output [{}, {ho}, {wo}]",
            grad_out.shape(),
            spec.out_channels
        )));
    }

    let (padded, hp, wp) = pad_input(input, spec.padding);
    let (k, s, d, p) = (spec.kernel, spec.stride, spec.dilation, spec.padding);
    let (c_in, c_out) = (spec.in_channels, spec.out_channels);
    let plane = hp * wp;
    let g = grad_out.data();
    let weights = params.weights.data();

    // Bias gradient: per-channel sum of grad_out.
    let grad_bias: Vec<f64> = (0..c_out)
        .map(|co| g[co * ho * wo..(co + 1) * ho * wo].iter().sum())
        .collect();

    // Weight gradient: correlation of grad_out planes with padded input.
    let mut grad_w = vec![0.0; c_out * c_in * k * k];
    grad_w
        .par_chunks_mut(c_in * k * k)
        .enumerate()
        .for_each(|(co, gw)| {
            let g_plane = &g[co * ho * wo..(co + 1) * ho * wo];
            for ci in 0..c_in {
                let in_plane = &padded[ci * plane..(ci + 1) * plane];
                for u in 0..k {
                    for v in 0..k {
                        let mut acc = 0.0;
                        for i in 0..ho {
                            let src = i * s + u * d;
                            let row = &in_plane[src * wp + v * d..];
                            let grow = &g_plane[i * wo..(i + 1) * wo];
                            if s == 1 {
                                for (&gv, &x) in grow.iter().zip(&row[..wo]) {
                                    acc += gv * x;
                                }
                            } else {
                                for (&gv, x) in grow.iter().zip(row.iter().step_by(s)) {
                                    acc += gv * x;
                                }
                            }
                        }
                        gw[(ci * k + u) * k + v] = acc;
                    }
                }
            }
        });

    // Input gradient: scatter each output gradient through the taps, into a
    // padded buffer, then crop. Input channels are independent.
    let mut grad_pad = vec![0.0; c_in * plane];
    grad_pad.par_chunks_mut(plane).enumerate().for_each(|(ci, gp)| {
        for co in 0..c_out {
            let g_plane = &g[co * ho * wo..(co + 1) * ho * wo];
            for u in 0..k {
                for v in 0..k {
                    let wgt = weights[((co * c_in + ci) * k + u) * k + v];
                    if wgt == 0.0 {
                        continue;
                    }
                    for i in 0..ho {
                        let dst_row = i * s + u * d;
                        let grow = &g_plane[i * wo..(i + 1) * wo];
                        let seg = &mut gp[dst_row * wp + v * d..];
                        if s == 1 {
                            for (x, &gv) in seg[..wo].iter_mut().zip(grow) {
                                *x += wgt * gv;
                            }
                        } else {
                            for (x, &gv) in seg.iter_mut().step_by(s).zip(grow) {
                                *x += wgt * gv;
                            }
                        }
                    }
                }
            }
        }
    });

    let mut grad_in = vec![0.0; c_in * h * w];
    for ci in 0..c_in {
        for i in 0..h {
            let src = ci * plane + (i + p) * wp + p;
            let dst = ci * h * w + i * w;
            grad_in[dst..dst + w].copy_from_slice(&grad_pad[src..src + w]);
        }
    }

    Ok((
        Tensor::from_vec(&[c_in, h, w], grad_in)?,
        Tensor::from_vec(&spec.weight_shape(), grad_w)?,
        Tensor::from_vec(&[c_out], grad_bias)?,
    ))
}
