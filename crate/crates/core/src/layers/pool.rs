//! 2x2 stride-2 max-pooling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{GradTape, TapeRecord};

/// Index of the window maximum in row-major scan order; ties keep the
/// first occurrence, so backward routing is deterministic.
fn window_argmax(data: &[f64], w: usize, i: usize, j: usize) -> (usize, f64) {
    let mut best_off = i * 2 * w + j * 2;
    let mut best = data[best_off];
    for (du, dv) in [(0usize, 1usize), (1, 0), (1, 1)] {
        let off = (i * 2 + du) * w + j * 2 + dv;
        if data[off] > best {
            best = data[off];
            best_off = off;
        }
    }
    (best_off, best)
}

/// Max over each non-overlapping 2x2 window of a `[C,H,W]` tensor; H and W
/// must be even.
pub fn maxpool_forward(input: &Tensor, tape: &mut GradTape) -> Result<Tensor> {
    if input.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "maxpool input must be [C,H,W], got {:?}",
            input.shape()
        )));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "maxpool needs even spatial extents, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ho * wo];
    for ci in 0..c {
        let plane = &input.data()[ci * h * w..(ci + 1) * h * w];
        let out_plane = &mut out[ci * ho * wo..(ci + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                out_plane[i * wo + j] = window_argmax(plane, w, i, j).1;
            }
        }
    }
    tape.push(TapeRecord::MaxPool { input: input.clone() });
    Tensor::from_vec(&[c, ho, wo], out)
}

/// Routes each output gradient to the argmax position of its window.
pub fn maxpool_backward(grad_out: &Tensor, record: &TapeRecord) -> Result<Tensor> {
    let input = match record {
        TapeRecord::MaxPool { input } => input,
        other => {
            return Err(Error::Tape(format!("maxpool backward got a {} record", other.kind())))
        }
    };
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (ho, wo) = (h / 2, w / 2);
    if grad_out.shape() != [c, ho, wo] {
        return Err(Error::ShapeMismatch(format!(
            "maxpool grad {:?} vs expected [{c}, {ho}, {wo}]",
            grad_out.shape()
        )));
    }
    let mut grad_in = vec![0.0; c * h * w];
    for ci in 0..c {
        let plane = &input.data()[ci * h * w..(ci + 1) * h * w];
        let g_plane = &grad_out.data()[ci * ho * wo..(ci + 1) * ho * wo];
        let gi_plane = &mut grad_in[ci * h * w..(ci + 1) * h * w];
        for i in 0..ho {
            for j in 0..wo {
                let (off, _) = window_argmax(plane, w, i, j);
                gi_plane[off] += g_plane[i * wo + j];
            }
        }
    }
    Tensor::from_vec(&[c, h, w], grad_in)
}
