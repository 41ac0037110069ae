//! ReLU and softmax.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{GradTape, TapeRecord};

/// Elementwise `max(x, 0)`; output has the same shape as the input.
pub fn relu_forward(input: &Tensor, tape: &mut GradTape) -> Tensor {
    let out = input.max_scalar(0.0);
    tape.push(TapeRecord::Relu { input: input.clone() });
    out
}

/// Gradient passes where the forward input was strictly positive; the
/// subgradient at exactly zero is defined as zero.
pub fn relu_backward(grad_out: &Tensor, record: &TapeRecord) -> Result<Tensor> {
    let input = match record {
        TapeRecord::Relu { input } => input,
        other => return Err(Error::Tape(format!("relu backward got a {} record", other.kind()))),
    };
    if grad_out.shape() != input.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu grad {:?} vs input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Numerically stable softmax over a rank-1 tensor:
/// `out[i] = exp(x[i] - max) / sum_j exp(x[j] - max)`.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "softmax expects rank-1 input, got {:?}",
            input.shape()
        )));
    }
    if !input.all_finite() {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let max = input.max_value();
    let exps: Vec<f64> = input.data().iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::from_vec(input.shape(), exps.into_iter().map(|e| e / total).collect())
}

/// Vector-Jacobian product of softmax: given probabilities `p` and a
/// gradient `g` with respect to them, the gradient with respect to the
/// logits is `p_i * (g_i - sum_j g_j p_j)`.
pub fn softmax_vjp(probs: &Tensor, grad_probs: &Tensor) -> Result<Tensor> {
    if probs.shape() != grad_probs.shape() {
        return Err(Error::ShapeMismatch(format!(
            "probs {:?} vs grad {:?}",
            probs.shape(),
            grad_probs.shape()
        )));
    }
    let dot: f64 = probs
        .data()
        .iter()
        .zip(grad_probs.data())
        .map(|(&p, &g)| p * g)
        .sum();
    let data = probs
        .data()
        .iter()
        .zip(grad_probs.data())
        .map(|(&p, &g)| p * (g - dot))
        .collect();
    Tensor::from_vec(probs.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_maps_negatives_to_zero() {
        let x = Tensor::from_vec(&[1, 2], vec![-1.0, 2.0]).unwrap();
        let mut tape = GradTape::new();
        assert_eq!(relu_forward(&x, &mut tape).data(), &[0.0, 2.0]);
    }

    #[test]
    fn relu_positive_input_is_identity_both_ways() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut tape = GradTape::new();
        let y = relu_forward(&x, &mut tape);
        assert_eq!(y, x);
        let g = Tensor::from_vec(&[3], vec![0.5, -0.5, 2.0]).unwrap();
        let gi = relu_backward(&g, &tape.pop().unwrap()).unwrap();
        assert_eq!(gi, g);
    }

    #[test]
    fn relu_gradient_zero_at_zero_and_below() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 1.0]).unwrap();
        let mut tape = GradTape::new();
        relu_forward(&x, &mut tape);
        let g = Tensor::filled(&[3], 1.0).unwrap();
        let gi = relu_backward(&g, &tape.pop().unwrap()).unwrap();
        assert_eq!(gi.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_finite_difference_away_from_zero() {
        let x = Tensor::from_vec(&[4], vec![-2.0, -0.5, 0.7, 3.0]).unwrap();
        let mut tape = GradTape::new();
        relu_forward(&x, &mut tape);
        let record = tape.pop().unwrap();
        let g = Tensor::from_vec(&[4], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let gi = relu_backward(&g, &record).unwrap();
        let eps = 1e-5;
        for i in 0..4 {
            let mut plus = x.clone();
            plus.data_mut()[i] += eps;
            let mut minus = x.clone();
            minus.data_mut()[i] -= eps;
            let fd = (plus.max_scalar(0.0).sum() - minus.max_scalar(0.0).sum()) / (2.0 * eps);
            assert!((fd - gi.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let z = Tensor::zeros(&[3]).unwrap();
        let p = softmax(&z).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = Tensor::from_vec(&[3], vec![1000.0, 0.0, 0.0]).unwrap();
        let p = softmax(&big).unwrap();
        assert!(p.data()[0] > 1.0 - 1e-12);
        assert!(p.all_finite());
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let p = softmax(&x).unwrap();
        let z: f64 = x.data().iter().map(|v| v.exp()).sum();
        for (got, &v) in p.data().iter().zip(x.data()) {
            assert!((got - v.exp() / z).abs() < 1e-12);
        }
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let shifted = Tensor::from_vec(&[4], x.data().iter().map(|v| v + 123.0).collect()).unwrap();
        let a = softmax(&x).unwrap();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_vjp_rows_sum_to_zero() {
        let x = Tensor::from_vec(&[3], vec![0.1, 0.5, -0.2]).unwrap();
        let p = softmax(&x).unwrap();
        // Sum over output classes of the logit gradient is zero because the
        // probabilities sum to a constant.
        let mut total = Tensor::zeros(&[3]).unwrap();
        for c in 0..3 {
            let mut sel = Tensor::zeros(&[3]).unwrap();
            sel.set(&[c], 1.0).unwrap();
            total.add_assign(&softmax_vjp(&p, &sel).unwrap()).unwrap();
        }
        for &v in total.data() {
            assert!(v.abs() < 1e-15);
        }
    }
}
