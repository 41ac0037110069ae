//! Adam optimizer state and update step.

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelGraph};
use crate::tensor::Tensor;

use super::TrainConfig;

/// First and second moment estimates, shaped exactly like the parameters,
/// plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<(Tensor, Tensor)>,
    v: Vec<(Tensor, Tensor)>,
    t: u64,
}

impl AdamState {
    pub fn new(model: &ModelGraph) -> AdamState {
        let zeros: Vec<(Tensor, Tensor)> = model
            .params()
            .iter()
            .map(|(_, p)| (p.weights.zeros_like(), p.bias.zeros_like()))
            .collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

fn update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam update over all model parameters:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, bias-corrected, then
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    model: &mut ModelGraph,
    grads: &Gradients,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    let n = model.params().len();
    if grads.layers.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient layers for {n} parameter layers",
            grads.layers.len()
        )));
    }
    for (g, (name, _)) in grads.layers.iter().zip(model.params()) {
        if !g.weights.all_finite() || !g.bias.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
    }
    state.t += 1;
    let t = state.t;
    for (i, (_, params)) in model.params_mut().into_iter().enumerate() {
        let g = &grads.layers[i];
        update(
            params.weights.data_mut(),
            g.weights.data(),
            state.m[i].0.data_mut(),
            state.v[i].0.data_mut(),
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
            t,
        );
        update(
            params.bias.data_mut(),
            g.bias.data(),
            state.m[i].1.data_mut(),
            state.v[i].1.data_mut(),
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
            t,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_pdcovidnet, ModelConfig, ParamGrad};
    use crate::rng::{derive_rng, Stream};

    fn tiny_model() -> ModelGraph {
        let cfg = ModelConfig {
            input_size: 4,
            channels: 1,
            dilations: vec![1],
            filters: vec![2],
            fc: vec![],
            dropout: 0.0,
            classes: 2,
        };
        let mut rng = derive_rng(0, Stream::Init, &[]);
        build_pdcovidnet(&cfg, &mut rng).unwrap()
    }

    #[test]
    fn zero_gradient_is_noop_for_all_t() {
        let mut model = tiny_model();
        let before: Vec<f64> = model
            .params()
            .iter()
            .flat_map(|(_, p)| p.weights.data().to_vec())
            .collect();
        let grads = model.zero_gradients();
        let mut state = AdamState::new(&model);
        let config = TrainConfig::default();
        for _ in 0..5 {
            adam_step(&mut model, &grads, &mut state, &config).unwrap();
        }
        let after: Vec<f64> = model
            .params()
            .iter()
            .flat_map(|(_, p)| p.weights.data().to_vec())
            .collect();
        assert_eq!(before, after);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn unit_gradient_first_step_is_minus_lr() {
        // Scalar parameter, g = 1, t = 1: bias correction makes the
        // effective step -lr / (1 + eps).
        let mut p = [0.0f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        let lr = 1e-4;
        update(&mut p, &[1.0], &mut m, &mut v, lr, 0.9, 0.999, 1e-8, 1);
        assert!((p[0] + lr).abs() < 1e-11, "step was {}", p[0]);
    }

    #[test]
    fn identical_parameters_stay_identical() {
        let mut p = [0.3f64, 0.3];
        let mut m = [0.0f64; 2];
        let mut v = [0.0f64; 2];
        for t in 1..=10 {
            update(&mut p, &[0.7, 0.7], &mut m, &mut v, 1e-3, 0.9, 0.999, 1e-8, t);
            assert_eq!(p[0], p[1]);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut model = tiny_model();
        let mut grads = model.zero_gradients();
        grads.layers[0].weights.data_mut()[0] = f64::NAN;
        let name = grads.layers[0].name.clone();
        let mut state = AdamState::new(&model);
        match adam_step(&mut model, &grads, &mut state, &TrainConfig::default()) {
            Err(Error::Numeric(msg)) => assert!(msg.contains(&name)),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn gradient_layer_count_must_match() {
        let mut model = tiny_model();
        let mut grads = model.zero_gradients();
        grads.layers.push(ParamGrad {
            name: "extra".into(),
            weights: Tensor::zeros(&[1]).unwrap(),
            bias: Tensor::zeros(&[1]).unwrap(),
        });
        let mut state = AdamState::new(&model);
        assert!(adam_step(&mut model, &grads, &mut state, &TrainConfig::default()).is_err());
    }
}
