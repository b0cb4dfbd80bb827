//! Strided 2-D convolution over (time, frequency) feature maps.
//!
//! Inputs are laid out `[t][f][c]` row-major and flattened into a rank-2
//! tensor of shape `[T, F*C]`. Output length along each axis follows the
//! ceiling rule `ceil(len / stride)` with zero padding on the right, so the
//! output time length is a pure function of input length and config.

use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation output.
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Geometry of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub kernel_t: usize,
    pub kernel_f: usize,
    pub stride_t: usize,
    pub stride_f: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

impl ConvLayerSpec {
    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels * self.kernel_t * self.kernel_f]
    }

    pub fn bias_shape(&self) -> Vec<usize> {
        vec![self.out_channels]
    }
}

/// One layer with its weights: kernel `[c_out, c_in*kt*kf]`, bias `[c_out]`.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub spec: ConvLayerSpec,
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// `ceil(len / stride)` — output length along one axis.
pub fn conv_output_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Receptive field of a layer stack along the time axis.
pub fn receptive_field(specs: &[ConvLayerSpec]) -> usize {
    let mut rf = 1usize;
    let mut jump = 1usize;
    for spec in specs {
        rf += (spec.kernel_t - 1) * jump;
        jump *= spec.stride_t;
    }
    rf
}

/// Total time downsampling factor of a layer stack.
pub fn time_stride(specs: &[ConvLayerSpec]) -> usize {
    specs.iter().map(|s| s.stride_t).product()
}

pub(crate) struct ConvDims {
    pub t_out: usize,
    pub f_out: usize,
}

pub(crate) fn conv_dims(t_in: usize, f_in: usize, spec: &ConvLayerSpec) -> ConvDims {
    ConvDims {
        t_out: conv_output_len(t_in, spec.stride_t),
        f_out: conv_output_len(f_in, spec.stride_f),
    }
}

#[inline]
fn input_index(t: usize, f: usize, c: usize, f_in: usize, c_in: usize) -> usize {
    (t * f_in + f) * c_in + c
}

#[inline]
fn kernel_index(co: usize, ci: usize, dt: usize, df: usize, spec: &ConvLayerSpec) -> usize {
    ((co * spec.in_channels + ci) * spec.kernel_t + dt) * spec.kernel_f + df
}

/// Forward pass shared by the tape op and the inference path.
pub(crate) fn conv2d_forward(
    input: &[f64],
    t_in: usize,
    f_in: usize,
    spec: &ConvLayerSpec,
    kernel: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let dims = conv_dims(t_in, f_in, spec);
    let mut out = vec![0.0; dims.t_out * dims.f_out * spec.out_channels];
    for tp in 0..dims.t_out {
        for fp in 0..dims.f_out {
            for co in 0..spec.out_channels {
                let mut acc = bias[co];
                for ci in 0..spec.in_channels {
                    for dt in 0..spec.kernel_t {
                        let t = tp * spec.stride_t + dt;
                        if t >= t_in {
                            continue;
                        }
                        for df in 0..spec.kernel_f {
                            let f = fp * spec.stride_f + df;
                            if f >= f_in {
                                continue;
                            }
                            acc += kernel[kernel_index(co, ci, dt, df, spec)]
                                * input[input_index(t, f, ci, f_in, spec.in_channels)];
                        }
                    }
                }
                out[(tp * dims.f_out + fp) * spec.out_channels + co] = spec.activation.apply(acc);
            }
        }
    }
    out
}

/// Backward pass: accumulates into the input, kernel and bias gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    input: &[f64],
    t_in: usize,
    f_in: usize,
    spec: &ConvLayerSpec,
    kernel: &[f64],
    output: &[f64],
    grad_out: &[f64],
    grad_input: &mut [f64],
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
) {
    let dims = conv_dims(t_in, f_in, spec);
    for tp in 0..dims.t_out {
        for fp in 0..dims.f_out {
            for co in 0..spec.out_channels {
                let out_idx = (tp * dims.f_out + fp) * spec.out_channels + co;
                let gz = grad_out[out_idx]
                    * spec.activation.derivative_from_output(output[out_idx]);
                if gz == 0.0 {
                    continue;
                }
                grad_bias[co] += gz;
                for ci in 0..spec.in_channels {
                    for dt in 0..spec.kernel_t {
                        let t = tp * spec.stride_t + dt;
                        if t >= t_in {
                            continue;
                        }
                        for df in 0..spec.kernel_f {
                            let f = fp * spec.stride_f + df;
                            if f >= f_in {
                                continue;
                            }
                            let ki = kernel_index(co, ci, dt, df, spec);
                            let ii = input_index(t, f, ci, f_in, spec.in_channels);
                            grad_kernel[ki] += gz * input[ii];
                            grad_input[ii] += gz * kernel[ki];
                        }
                    }
                }
            }
        }
    }
}

/// Runs a stack of convolution layers over a time-major feature matrix.
///
/// The input tensor has shape `[L, F]` and is treated as a single-channel
/// map; layer 0 must therefore declare `in_channels = 1` and `f_in = F`.
/// Errors when the input is shorter than the stack's receptive field.
pub fn conv_downsample(input: &Tensor, layers: &[ConvLayer]) -> Result<Tensor, NumericsError> {
    if layers.is_empty() {
        return Err(NumericsError::EmptyInput("conv_downsample"));
    }
    let specs: Vec<ConvLayerSpec> = layers.iter().map(|l| l.spec).collect();
    let need = receptive_field(&specs);
    let t_in = input.rows();
    if t_in < need {
        return Err(NumericsError::InputTooShort { got: t_in, need });
    }
    let first = &layers[0].spec;
    if input.cols() % first.in_channels != 0 {
        return Err(NumericsError::ShapeMismatch {
            op: "conv_downsample",
            detail: format!(
                "input cols {} not divisible by layer-0 channels {}",
                input.cols(),
                first.in_channels
            ),
        });
    }

    let mut data = input.data().to_vec();
    let mut t = t_in;
    let mut f = input.cols() / first.in_channels;
    for layer in layers {
        check_layer_shapes(layer)?;
        let dims = conv_dims(t, f, &layer.spec);
        data = conv2d_forward(&data, t, f, &layer.spec, layer.kernel.data(), layer.bias.data());
        t = dims.t_out;
        f = dims.f_out;
    }
    let cols = f * layers.last().expect("non-empty").spec.out_channels;
    Tensor::matrix(t, cols, data)
}

pub(crate) fn check_layer_shapes(layer: &ConvLayer) -> Result<(), NumericsError> {
    if layer.kernel.shape() != layer.spec.kernel_shape().as_slice() {
        return Err(NumericsError::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "kernel shape {:?}, spec wants {:?}",
                layer.kernel.shape(),
                layer.spec.kernel_shape()
            ),
        });
    }
    if layer.bias.shape() != layer.spec.bias_shape().as_slice() {
        return Err(NumericsError::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "bias shape {:?}, spec wants {:?}",
                layer.bias.shape(),
                layer.spec.bias_shape()
            ),
        });
    }
    Ok(())
}
