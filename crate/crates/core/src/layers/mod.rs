//! Forward/backward implementations of every layer kind the network uses,
//! plus the receptive-field and output-size arithmetic that ties a
//! convolution spec to its output shape.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{relu_backward, relu_forward, softmax, softmax_vjp};
pub use conv::{conv2d_backward, conv2d_forward};
pub use dense::{
    dropout_backward, dropout_forward, fc_backward, fc_forward, flatten_backward,
    flatten_forward,
};
pub use pool::{maxpool_backward, maxpool_forward};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Effective extent of a `k`-kernel dilated by `d`: `d*(k-1)+1`.
pub fn receptive_field(k: usize, d: usize) -> Result<usize> {
    if k == 0 || d == 0 {
        return Err(Error::Domain(format!(
            "kernel and dilation must be positive, got k={k}, d={d}"
        )));
    }
    Ok(d * (k - 1) + 1)
}

/// Output extent of a convolution/pool along one axis:
/// `floor((m + 2p - rf) / s) + 1`.
pub fn output_extent(m: usize, p: usize, rf: usize, s: usize) -> Result<usize> {
    if s == 0 {
        return Err(Error::Domain("stride must be positive".into()));
    }
    if m + 2 * p < rf {
        return Err(Error::ShapeMismatch(format!(
            "input extent {m} with padding {p} is smaller than receptive field {rf}"
        )));
    }
    Ok((m + 2 * p - rf) / s + 1)
}

/// Geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel size `k` (odd, square).
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<ConvSpec> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Domain("channel counts must be positive".into()));
        }
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::Domain(format!("kernel must be odd positive, got {kernel}")));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Domain("stride and dilation must be positive".into()));
        }
        Ok(ConvSpec { in_channels, out_channels, kernel, stride, dilation, padding })
    }

    /// Spec with the padding that preserves spatial extent at stride 1:
    /// `p = d*(k-1)/2`.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Result<ConvSpec> {
        let padding = dilation * (kernel - 1) / 2;
        ConvSpec::new(in_channels, out_channels, kernel, 1, dilation, padding)
    }

    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    /// Output spatial extents for an `(h, w)` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let rf = self.receptive_field();
        Ok((
            output_extent(h, self.padding, rf, self.stride)?,
            output_extent(w, self.padding, rf, self.stride)?,
        ))
    }

    /// Shape of the filter tensor: `[out, in, k, k]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }
}

/// Weights and bias of one parameterized layer.
///
/// Convolution weights are `[out_channels, in_channels, k, k]`; fully
/// connected weights are `[in, out]` with one bias per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn new(weights: Tensor, bias: Tensor) -> LayerParams {
        LayerParams { weights, bias }
    }

    pub fn all_finite(&self) -> bool {
        self.weights.all_finite() && self.bias.all_finite()
    }
}

/// What one forward invocation cached for its backward pass.
#[derive(Debug, Clone)]
pub enum TapeRecord {
    Conv2d { input: Tensor, spec: ConvSpec },
    Relu { input: Tensor },
    MaxPool { input: Tensor },
    Fc { input: Tensor },
    /// `mask` is `None` in infer mode; in train mode it holds per-element
    /// factors of either `0` or `1/(1-rate)`.
    Dropout { mask: Option<Tensor> },
    Flatten { input_shape: Vec<usize> },
    /// Elementwise-add fusion of `arity` branch outputs.
    Fuse { arity: usize },
}

impl TapeRecord {
    pub fn kind(&self) -> &'static str {
        match self {
            TapeRecord::Conv2d { .. } => "conv2d",
            TapeRecord::Relu { .. } => "relu",
            TapeRecord::MaxPool { .. } => "maxpool",
            TapeRecord::Fc { .. } => "fc",
            TapeRecord::Dropout { .. } => "dropout",
            TapeRecord::Flatten { .. } => "flatten",
            TapeRecord::Fuse { .. } => "fuse",
        }
    }
}

/// Recorded forward pass; replaying it in reverse drives backpropagation.
///
/// Each forward invocation appends exactly one record, so popping from the
/// end visits layers in exact reverse forward order.
#[derive(Debug, Default)]
pub struct GradTape {
    records: Vec<TapeRecord>,
}

impl GradTape {
    pub fn new() -> GradTape {
        GradTape { records: Vec::new() }
    }

    pub fn push(&mut self, record: TapeRecord) {
        self.records.push(record);
    }

    pub fn pop(&mut self) -> Option<TapeRecord> {
        self.records.pop()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TapeRecord] {
        &self.records
    }
}

/// Whether dropout is active and layers may consume randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
