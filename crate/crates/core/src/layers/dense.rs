//! Fully connected layer, inverted dropout, and flatten.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{GradTape, LayerParams, Mode, TapeRecord};

/// `out = x^T W + b` for a rank-1 input of length `n`, weights `[n, m]`.
pub fn fc_forward(input: &Tensor, params: &LayerParams, tape: &mut GradTape) -> Result<Tensor> {
    if input.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "fc input must be rank-1, got {:?}",
            input.shape()
        )));
    }
    let n = input.len();
    if params.weights.rank() != 2 || params.weights.shape()[0] != n {
        return Err(Error::ShapeMismatch(format!(
            "fc weights {:?} do not accept input of length {n}",
            params.weights.shape()
        )));
    }
    let m = params.weights.shape()[1];
    if params.bias.shape() != [m] {
        return Err(Error::ShapeMismatch(format!(
            "fc bias {:?} must be [{m}]",
            params.bias.shape()
        )));
    }
    let w = params.weights.data();
    let mut out = params.bias.data().to_vec();
    for (t, &x) in input.data().iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &w[t * m..(t + 1) * m];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += x * wv;
        }
    }
    tape.push(TapeRecord::Fc { input: input.clone() });
    Tensor::from_vec(&[m], out)
}

/// Adjoints of [`fc_forward`]: `grad_in = W g`, `grad_W = x g^T`,
/// `grad_b = g`.
pub fn fc_backward(
    grad_out: &Tensor,
    record: &TapeRecord,
    params: &LayerParams,
) -> Result<(Tensor, Tensor, Tensor)> {
    let input = match record {
        TapeRecord::Fc { input } => input,
        other => return Err(Error::Tape(format!("fc backward got a {} record", other.kind()))),
    };
    let n = input.len();
    let m = params.weights.shape()[1];
    if grad_out.shape() != [m] {
        return Err(Error::ShapeMismatch(format!(
            "fc grad {:?} vs expected [{m}]",
            grad_out.shape()
        )));
    }
    let w = params.weights.data();
    let g = grad_out.data();
    let mut grad_in = vec![0.0; n];
    let mut grad_w = vec![0.0; n * m];
    for t in 0..n {
        let row = &w[t * m..(t + 1) * m];
        grad_in[t] = row.iter().zip(g).map(|(&wv, &gv)| wv * gv).sum();
        let x = input.data()[t];
        if x != 0.0 {
            for (gw, &gv) in grad_w[t * m..(t + 1) * m].iter_mut().zip(g) {
                *gw = x * gv;
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n], grad_in)?,
        Tensor::from_vec(&[n, m], grad_w)?,
        grad_out.clone(),
    ))
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; in infer mode the exact
/// identity.
pub fn dropout_forward<R: Rng>(
    input: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
    tape: &mut GradTape,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Domain(format!("dropout rate {rate} outside [0, 1)")));
    }
    match mode {
        Mode::Infer => {
            tape.push(TapeRecord::Dropout { mask: None });
            Ok(input.clone())
        }
        Mode::Train => {
            let scale = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..input.len())
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
                .collect();
            let mask = Tensor::from_vec(input.shape(), mask)?;
            let out = input.mul(&mask)?;
            tape.push(TapeRecord::Dropout { mask: Some(mask) });
            Ok(out)
        }
    }
}

/// Applies the recorded mask (identity when the forward ran in infer mode).
pub fn dropout_backward(grad_out: &Tensor, record: &TapeRecord) -> Result<Tensor> {
    let mask = match record {
        TapeRecord::Dropout { mask } => mask,
        other => {
            return Err(Error::Tape(format!("dropout backward got a {} record", other.kind())))
        }
    };
    match mask {
        None => Ok(grad_out.clone()),
        Some(mask) => grad_out.mul(mask),
    }
}

/// Collapse any tensor to rank 1 in row-major order.
pub fn flatten_forward(input: &Tensor, tape: &mut GradTape) -> Tensor {
    tape.push(TapeRecord::Flatten { input_shape: input.shape().to_vec() });
    input.reshape(&[input.len()]).expect("flatten preserves element count")
}

pub fn flatten_backward(grad_out: &Tensor, record: &TapeRecord) -> Result<Tensor> {
    let shape = match record {
        TapeRecord::Flatten { input_shape } => input_shape,
        other => {
            return Err(Error::Tape(format!("flatten backward got a {} record", other.kind())))
        }
    };
    grad_out.reshape(shape)
}
