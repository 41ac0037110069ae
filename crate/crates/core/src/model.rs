//! The parallel-dilated network graph: two (configurable) branches of
//! conv-conv-pool blocks that differ only in dilation rate, an
//! elementwise-add fusion, and a final-conv / flatten / FC head ending in a
//! 3-way softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, dropout_backward, dropout_forward, fc_backward,
    fc_forward, flatten_backward, flatten_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward, softmax, softmax_vjp, ConvSpec, GradTape, LayerParams, Mode,
    TapeRecord,
};
use crate::tensor::Tensor;

/// Canonical class order used throughout: index 0, 1, 2.
pub const DEFAULT_CLASS_NAMES: [&str; 3] = ["COVID-19", "Normal", "Viral Pneumonia"];

/// Structural description of the network. The default reproduces the
/// published topology exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub channels: usize,
    pub dilations: Vec<usize>,
    pub filters: Vec<usize>,
    pub fc: Vec<usize>,
    pub dropout: f64,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            input_size: 224,
            channels: 3,
            dilations: vec![1, 2],
            filters: vec![64, 128, 256, 512, 512],
            fc: vec![1024, 1024],
            dropout: 0.3,
            classes: 3,
        }
    }
}

impl ModelConfig {
    /// Number of conv-conv-pool blocks per branch.
    pub fn blocks(&self) -> usize {
        self.filters.len()
    }

    /// Spatial extent after all pooling halvings.
    pub fn final_spatial(&self) -> usize {
        self.input_size >> self.blocks()
    }

    /// Length of the flattened feature vector feeding the FC stack.
    pub fn flatten_len(&self) -> usize {
        let s = self.final_spatial();
        s * s * self.filters.last().copied().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.filters.is_empty() {
            return Err(Error::Build("at least one conv block is required".into()));
        }
        if self.dilations.is_empty() {
            return Err(Error::Build("at least one branch dilation is required".into()));
        }
        if self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Build("dilation rates must be positive".into()));
        }
        if self.channels == 0 {
            return Err(Error::Build("input channels must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Build("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Build(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let div = 1usize << self.blocks();
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Build(format!(
                "input size {} does not survive {} pooling halvings",
                self.input_size,
                self.blocks()
            )));
        }
        Ok(())
    }
}

/// One node of a branch or of the head.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv { name: String, spec: ConvSpec, params: LayerParams },
    Relu,
    MaxPool,
    Flatten,
    Fc { name: String, params: LayerParams },
    Dropout { rate: f64 },
}

/// Gradient of one parameterized layer, shaped exactly like its parameters.
#[derive(Debug, Clone)]
pub struct ParamGrad {
    pub name: String,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// All parameter gradients in canonical layer order (branch 0 first, then
/// branch 1, ..., then the head).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<ParamGrad>,
}

impl Gradients {
    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|g| g.weights.all_finite() && g.bias.all_finite())
    }
}

/// Which score the saliency gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Softmax probability of the target class.
    Probability,
    /// Pre-softmax logit of the target class.
    Logit,
}

/// The assembled network with owned parameters.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    config: ModelConfig,
    branches: Vec<Vec<Layer>>,
    head: Vec<Layer>,
    class_names: Vec<String>,
}

fn he_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-limit..limit)).collect())
        .expect("valid init shape")
}

fn init_conv<R: Rng>(rng: &mut R, name: &str, spec: ConvSpec) -> Layer {
    let fan_in = spec.in_channels * spec.kernel * spec.kernel;
    let params = LayerParams::new(
        he_uniform(rng, &spec.weight_shape(), fan_in),
        Tensor::zeros(&[spec.out_channels]).expect("bias shape"),
    );
    Layer::Conv { name: name.to_string(), spec, params }
}

fn init_fc<R: Rng>(rng: &mut R, name: &str, n_in: usize, n_out: usize) -> Layer {
    let params = LayerParams::new(
        he_uniform(rng, &[n_in, n_out], n_in),
        Tensor::zeros(&[n_out]).expect("bias shape"),
    );
    Layer::Fc { name: name.to_string(), params }
}

/// Build the network from a config, with He-uniform weights and zero biases.
pub fn build_pdcovidnet(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ModelGraph> {
    config.validate()?;
    let mut branches = Vec::with_capacity(config.dilations.len());
    for (b, &d) in config.dilations.iter().enumerate() {
        let mut layers = Vec::new();
        let mut in_ch = config.channels;
        for (blk, &f) in config.filters.iter().enumerate() {
            for c in 0..2 {
                let spec = ConvSpec::same(in_ch, f, 3, d)?;
                layers.push(init_conv(rng, &format!("branch{b}.block{blk}.conv{c}"), spec));
                layers.push(Layer::Relu);
                in_ch = f;
            }
            layers.push(Layer::MaxPool);
        }
        branches.push(layers);
    }

    let last = *config.filters.last().expect("validated non-empty");
    let mut head = Vec::new();
    // Final low-level feature extraction runs at dilation 1.
    head.push(init_conv(rng, "head.conv", ConvSpec::same(last, last, 3, 1)?));
    head.push(Layer::Relu);
    head.push(Layer::Flatten);
    let mut n_in = config.flatten_len();
    for (i, &width) in config.fc.iter().enumerate() {
        head.push(init_fc(rng, &format!("head.fc{i}"), n_in, width));
        head.push(Layer::Dropout { rate: config.dropout });
        n_in = width;
    }
    head.push(init_fc(rng, "head.classifier", n_in, config.classes));

    let class_names = if config.classes == 3 {
        DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..config.classes).map(|i| format!("class-{i}")).collect()
    };

    let model = ModelGraph { config: config.clone(), branches, head, class_names };
    // One analytic pass over the shapes catches any inconsistent topology.
    model.layer_shapes()?;
    Ok(model)
}

impl ModelGraph {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn set_class_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.config.classes {
            return Err(Error::Build(format!(
                "{} class names for {} classes",
                names.len(),
                self.config.classes
            )));
        }
        self.class_names = names;
        Ok(())
    }

    /// Parameterized layers in canonical order.
    pub fn params(&self) -> Vec<(&str, &LayerParams)> {
        self.branches
            .iter()
            .flatten()
            .chain(self.head.iter())
            .filter_map(|layer| match layer {
                Layer::Conv { name, params, .. } => Some((name.as_str(), params)),
                Layer::Fc { name, params } => Some((name.as_str(), params)),
                _ => None,
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(&str, &mut LayerParams)> {
        self.branches
            .iter_mut()
            .flatten()
            .chain(self.head.iter_mut())
            .filter_map(|layer| match layer {
                Layer::Conv { name, params, .. } => Some((name.as_str(), params)),
                Layer::Fc { name, params } => Some((name.as_str(), params)),
                _ => None,
            })
            .collect()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params()
            .iter()
            .map(|(_, p)| p.weights.len() + p.bias.len())
            .sum()
    }

    /// Zero-filled gradient holder matching the parameters.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .params()
                .iter()
                .map(|(name, p)| ParamGrad {
                    name: name.to_string(),
                    weights: p.weights.zeros_like(),
                    bias: p.bias.zeros_like(),
                })
                .collect(),
        }
    }

    /// Analytic per-row output shapes, one row per line of the layer table:
    /// input, the fifteen per-branch rows (both branches always agree), the
    /// fusion, the final conv, flatten, each FC, and softmax.
    pub fn layer_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let cfg = &self.config;
        let mut rows = Vec::new();
        let s0 = cfg.input_size;
        rows.push(("input".to_string(), vec![cfg.channels, s0, s0]));
        let mut s = s0;
        for (blk, &f) in cfg.filters.iter().enumerate() {
            // Same-padding convolutions keep the extent in every branch.
            for c in 0..2 {
                rows.push((format!("block{blk}.conv{c}"), vec![f, s, s]));
            }
            if s % 2 != 0 {
                return Err(Error::Build(format!(
                    "block {blk} cannot pool odd extent {s}"
                )));
            }
            s /= 2;
            rows.push((format!("block{blk}.pool"), vec![f, s, s]));
        }
        let last = *cfg.filters.last().expect("non-empty");
        rows.push(("add".to_string(), vec![last, s, s]));
        rows.push(("final_conv".to_string(), vec![last, s, s]));
        rows.push(("flatten".to_string(), vec![cfg.flatten_len()]));
        for (i, &w) in cfg.fc.iter().enumerate() {
            rows.push((format!("fc{i}"), vec![w]));
        }
        rows.push(("softmax".to_string(), vec![cfg.classes]));
        Ok(rows)
    }

    fn run_layers(
        &self,
        layers: &[Layer],
        mut x: Tensor,
        mode: Mode,
        rng: &mut Option<&mut ChaCha8Rng>,
        tape: &mut GradTape,
    ) -> Result<Tensor> {
        for layer in layers {
            x = match layer {
                Layer::Conv { name, spec, params } => conv2d_forward(&x, params, spec, tape)
                    .map_err(|e| annotate(e, name))?,
                Layer::Relu => relu_forward(&x, tape),
                Layer::MaxPool => maxpool_forward(&x, tape)?,
                Layer::Flatten => flatten_forward(&x, tape),
                Layer::Fc { name, params } => {
                    fc_forward(&x, params, tape).map_err(|e| annotate(e, name))?
                }
                Layer::Dropout { rate } => match (mode, rng.as_deref_mut()) {
                    (Mode::Train, Some(r)) => dropout_forward(&x, *rate, mode, r, tape)?,
                    (Mode::Train, None) => {
                        return Err(Error::Domain("train-mode forward requires an rng".into()))
                    }
                    (Mode::Infer, _) => {
                        // Identity; the rng is never consumed in infer mode.
                        let mut unused = ChaCha8Rng::seed_from_u64(0);
                        dropout_forward(&x, *rate, mode, &mut unused, tape)?
                    }
                },
            };
            if !x.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite activation after {}",
                    layer_label(layer)
                )));
            }
        }
        Ok(x)
    }

    fn forward_full(
        &self,
        image: &Tensor,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, Tensor, GradTape)> {
        let cfg = &self.config;
        let want = [cfg.channels, cfg.input_size, cfg.input_size];
        if image.shape() != want {
            return Err(Error::ShapeMismatch(format!(
                "model expects input {:?}, got {:?}",
                want,
                image.shape()
            )));
        }
        let mut tape = GradTape::new();
        let mut fused: Option<Tensor> = None;
        for branch in &self.branches {
            let out = self.run_layers(branch, image.clone(), mode, &mut rng, &mut tape)?;
            fused = Some(match fused {
                None => out,
                Some(acc) => acc.add(&out)?,
            });
        }
        tape.push(TapeRecord::Fuse { arity: self.branches.len() });
        let fused = fused.expect("at least one branch");
        let logits = self.run_layers(&self.head, fused, mode, &mut rng, &mut tape)?;
        let probs = softmax(&logits)?;
        Ok((logits, probs, tape))
    }

    /// Run the network. Returns class probabilities (softmax output, sums
    /// to 1) and the tape covering all layers of both branches and the head.
    pub fn forward(
        &self,
        image: &Tensor,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, GradTape)> {
        let (_logits, probs, tape) = self.forward_full(image, mode, rng)?;
        Ok((probs, tape))
    }

    /// Infer-mode forward; a pure function of (parameters, image).
    pub fn infer(&self, image: &Tensor) -> Result<(Tensor, GradTape)> {
        self.forward(image, Mode::Infer, None)
    }

    fn backward_layers(
        &self,
        layers: &[Layer],
        mut grad: Tensor,
        tape: &mut GradTape,
        grads: &mut Vec<ParamGrad>,
        capture_after_flatten: &mut Option<Tensor>,
    ) -> Result<Tensor> {
        for layer in layers.iter().rev() {
            let record = tape
                .pop()
                .ok_or_else(|| Error::Tape("tape exhausted before layers".into()))?;
            grad = match layer {
                Layer::Conv { name, params, .. } => {
                    let (gi, gw, gb) = conv2d_backward(&grad, &record, params)?;
                    grads.push(ParamGrad { name: name.clone(), weights: gw, bias: gb });
                    gi
                }
                Layer::Relu => relu_backward(&grad, &record)?,
                Layer::MaxPool => maxpool_backward(&grad, &record)?,
                Layer::Flatten => {
                    let gi = flatten_backward(&grad, &record)?;
                    if capture_after_flatten.is_none() {
                        *capture_after_flatten = Some(gi.clone());
                    }
                    gi
                }
                Layer::Fc { name, params } => {
                    let (gi, gw, gb) = fc_backward(&grad, &record, params)?;
                    grads.push(ParamGrad { name: name.clone(), weights: gw, bias: gb });
                    gi
                }
                Layer::Dropout { .. } => dropout_backward(&grad, &record)?,
            };
        }
        Ok(grad)
    }

    fn backward_full(
        &self,
        mut tape: GradTape,
        grad_logits: &Tensor,
    ) -> Result<(Gradients, Tensor)> {
        if grad_logits.shape() != [self.config.classes] {
            return Err(Error::ShapeMismatch(format!(
                "grad_logits {:?} vs [{}]",
                grad_logits.shape(),
                self.config.classes
            )));
        }
        let expected = self.branches.iter().map(Vec::len).sum::<usize>() + 1 + self.head.len();
        if tape.len() != expected {
            return Err(Error::Tape(format!(
                "tape has {} records, this model produces {expected}",
                tape.len()
            )));
        }

        let mut rev_grads: Vec<ParamGrad> = Vec::new();
        let mut head_capture = None;
        let fused_grad = self.backward_layers(
            &self.head,
            grad_logits.clone(),
            &mut tape,
            &mut rev_grads,
            &mut head_capture,
        )?;
        let saliency_grad = head_capture
            .ok_or_else(|| Error::Tape("head has no flatten record".into()))?;

        match tape.pop() {
            Some(TapeRecord::Fuse { arity }) if arity == self.branches.len() => {}
            Some(other) => {
                return Err(Error::Tape(format!(
                    "expected fuse record, got {}",
                    other.kind()
                )))
            }
            None => return Err(Error::Tape("tape exhausted at fusion".into())),
        }

        // The adjoint of elementwise addition duplicates the gradient into
        // every branch. Branch records sit on the tape in push order, so
        // they unwind last-branch first.
        let mut none = None;
        for branch in self.branches.iter().rev() {
            self.backward_layers(branch, fused_grad.clone(), &mut tape, &mut rev_grads, &mut none)?;
        }
        if !tape.is_empty() {
            return Err(Error::Tape(format!("{} unconsumed tape records", tape.len())));
        }

        rev_grads.reverse();
        Ok((Gradients { layers: rev_grads }, saliency_grad))
    }

    /// Backpropagate from a gradient with respect to the pre-softmax logits.
    /// Returns one gradient per parameterized layer in canonical order.
    pub fn backward(&self, tape: GradTape, grad_logits: &Tensor) -> Result<Gradients> {
        Ok(self.backward_full(tape, grad_logits)?.0)
    }

    /// Post-ReLU output of the final (post-fusion) convolution, the gradient
    /// of the class-`c` score with respect to it, and the score itself.
    /// Dropout runs in infer mode.
    pub fn activations_and_gradients(
        &self,
        image: &Tensor,
        class_index: usize,
        score: ScoreKind,
    ) -> Result<(Tensor, Tensor, f64)> {
        if class_index >= self.config.classes {
            return Err(Error::Domain(format!(
                "class index {class_index} out of range for {} classes",
                self.config.classes
            )));
        }
        let (logits, probs, tape) = self.forward_full(image, Mode::Infer, None)?;

        // A = relu(final conv output); recover it from the head relu record.
        let relu_idx = self.branches.iter().map(Vec::len).sum::<usize>() + 2;
        let activations = match &tape.records()[relu_idx] {
            TapeRecord::Relu { input } => input.max_scalar(0.0),
            other => {
                return Err(Error::Tape(format!(
                    "expected head relu record, found {}",
                    other.kind()
                )))
            }
        };

        let mut onehot = Tensor::zeros(&[self.config.classes])?;
        onehot.set(&[class_index], 1.0)?;
        let (grad_logits, score_value) = match score {
            ScoreKind::Probability => (
                softmax_vjp(&probs, &onehot)?,
                probs.get(&[class_index])?,
            ),
            ScoreKind::Logit => (onehot, logits.get(&[class_index])?),
        };
        let (_grads, grad_activations) = self.backward_full(tape, &grad_logits)?;
        Ok((activations, grad_activations, score_value))
    }
}

fn layer_label(layer: &Layer) -> String {
    match layer {
        Layer::Conv { name, .. } => name.clone(),
        Layer::Fc { name, .. } => name.clone(),
        Layer::Relu => "relu".into(),
        Layer::MaxPool => "maxpool".into(),
        Layer::Flatten => "flatten".into(),
        Layer::Dropout { .. } => "dropout".into(),
    }
}

fn annotate(e: Error, name: &str) -> Error {
    match e {
        Error::ShapeMismatch(msg) => Error::ShapeMismatch(format!("{name}: {msg}")),
        Error::Numeric(msg) => Error::Numeric(format!("{name}: {msg}")),
        other => other,
    }
}
