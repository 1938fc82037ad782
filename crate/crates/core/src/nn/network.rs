use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{self, Batch, ParamGrads};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    FullyConnected {
        in_size: usize,
        out_size: usize,
    },
}

impl LayerSpec {
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            LayerSpec::Relu => (0, 0),
            LayerSpec::FullyConnected { in_size, out_size } => (out_size * in_size, out_size),
        }
    }

    pub fn has_params(&self) -> bool {
        !matches!(self, LayerSpec::Relu)
    }

    /// Output shape for input `(c, h, w)` under valid convolution.
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 {
                    return Err(Error::Config(format!("conv layer with zero size: {self:?}")));
                }
                if kernel % 2 == 0 {
                    return Err(Error::Config(format!("conv kernel {kernel} must be odd")));
                }
                if in_channels != c {
                    return Err(Error::shape("conv input channels", in_channels, (c, h, w)));
                }
                if kernel > h || kernel > w {
                    return Err(Error::shape(
                        "conv kernel exceeds input",
                        (c, h, w),
                        format!("{kernel}x{kernel} kernel"),
                    ));
                }
                Ok((out_channels, h - kernel + 1, w - kernel + 1))
            }
            LayerSpec::Relu => Ok((c, h, w)),
            LayerSpec::FullyConnected { in_size, out_size } => {
                if in_size == 0 || out_size == 0 {
                    return Err(Error::Config(format!("dense layer with zero size: {self:?}")));
                }
                if in_size != c * h * w {
                    return Err(Error::shape("dense input size", in_size, (c, h, w)));
                }
                Ok((out_size, 1, 1))
            }
        }
    }
}

/// Weights and bias of one layer (empty for ReLU). The same shape is used
/// for gradients and optimizer velocities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Params {
    pub fn zeros_like(spec: &LayerSpec) -> Self {
        let (w, b) = spec.param_counts();
        Self {
            weights: vec![0.0; w],
            bias: vec![0.0; b],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn from_grads(g: ParamGrads) -> Self {
        Self {
            weights: g.weights,
            bias: g.bias,
        }
    }
}

/// Draws i.i.d. `N(0, std^2)` weights and zero biases for `spec`,
/// deterministically from `seed`.
pub fn init_weights(spec: &LayerSpec, seed: u64, std: f64) -> Params {
    let mut p = Params::zeros_like(spec);
    if std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("positive finite std");
        for w in &mut p.weights {
            *w = normal.sample(&mut rng);
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: (usize, usize, usize),
    layers: Vec<LayerSpec>,
    params: Vec<Params>,
    seed: u64,
}

/// Forward-pass record needed for backpropagation.
pub(crate) struct Trace {
    inputs: Vec<Batch>,
    cols: Vec<Option<Vec<f64>>>,
    pub output: Batch,
}

impl Network {
    /// Validates the layer chain and initializes parameters; layer `i` is
    /// seeded from `(seed, i)`.
    pub fn new(
        input_shape: (usize, usize, usize),
        layers: Vec<LayerSpec>,
        seed: u64,
        init_std: f64,
    ) -> Result<Self> {
        if !(init_std >= 0.0 && init_std.is_finite()) {
            return Err(Error::Config(format!("init std {init_std} must be finite and >= 0")));
        }
        Self::check_chain(input_shape, &layers)?;
        let params = layers
            .iter()
            .enumerate()
            .map(|(i, spec)| init_weights(spec, layer_seed(seed, i), init_std))
            .collect();
        Ok(Self {
            input_shape,
            layers,
            params,
            seed,
        })
    }

    /// Assembles a network from explicit parameters, validating every shape.
    pub fn from_parts(
        input_shape: (usize, usize, usize),
        layers: Vec<LayerSpec>,
        params: Vec<Params>,
        seed: u64,
    ) -> Result<Self> {
        Self::check_chain(input_shape, &layers)?;
        if params.len() != layers.len() {
            return Err(Error::shape("parameter list", layers.len(), params.len()));
        }
        for (spec, p) in layers.iter().zip(&params) {
            let counts = spec.param_counts();
            if (p.weights.len(), p.bias.len()) != counts {
                return Err(Error::shape("layer parameters", counts, (p.weights.len(), p.bias.len())));
            }
            if !p.is_finite() {
                return Err(Error::Config("non-finite parameter".into()));
            }
        }
        Ok(Self {
            input_shape,
            layers,
            params,
            seed,
        })
    }

    fn check_chain(
        input_shape: (usize, usize, usize),
        layers: &[LayerSpec],
    ) -> Result<(usize, usize, usize)> {
        if input_shape.0 == 0 || input_shape.1 == 0 || input_shape.2 == 0 {
            return Err(Error::shape("network input", "non-zero", input_shape));
        }
        let mut shape = input_shape;
        for (i, spec) in layers.iter().enumerate() {
            shape = spec.output_shape(shape).map_err(|e| match e {
                Error::Shape {
                    context,
                    expected,
                    found,
                } => Error::Shape {
                    context,
                    expected: format!("layer {i}: {expected}"),
                    found,
                },
                other => other,
            })?;
        }
        Ok(shape)
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        let (c, h, w) = self.input_shape;
        c * h * w
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        Self::check_chain(self.input_shape, &self.layers).expect("validated at construction")
    }

    pub fn output_len(&self) -> usize {
        let (c, h, w) = self.output_shape();
        c * h * w
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Params] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Params] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    /// Number of layers carrying weights.
    pub fn parametric_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.has_params()).count()
    }

    fn check_input(&self, len: usize, batch: usize) -> Result<()> {
        if len != batch * self.input_len() {
            return Err(Error::shape(
                "network input",
                (batch, self.input_shape),
                format!("{len} values"),
            ));
        }
        Ok(())
    }

    pub(crate) fn trace(&self, inputs: &[f64], batch: usize) -> Result<Trace> {
        self.check_input(inputs.len(), batch)?;
        let mut x = Batch::pack(inputs, batch, self.input_shape);
        let mut trace_inputs = Vec::with_capacity(self.layers.len());
        let mut cols = Vec::with_capacity(self.layers.len());
        for (spec, p) in self.layers.iter().zip(&self.params) {
            let (y, col) = apply_layer(spec, p, &x);
            trace_inputs.push(x);
            cols.push(col);
            x = y;
        }
        Ok(Trace {
            inputs: trace_inputs,
            cols,
            output: x,
        })
    }

    /// Forward pass over `batch` samples concatenated in `inputs`; returns
    /// outputs concatenated per sample.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(inputs.len(), batch)?;
        let mut x = Batch::pack(inputs, batch, self.input_shape);
        for (spec, p) in self.layers.iter().zip(&self.params) {
            x = apply_layer(spec, p, &x).0;
        }
        Ok(x.unpack())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let out = self.forward_batch(input.data(), 1)?;
        Ok(Tensor::from_parts(output_dims(self.output_shape()), out))
    }

    /// Parameter gradients given the forward trace and `d loss / d output`
    /// (concatenated per sample).
    pub(crate) fn backprop(&self, trace: &Trace, grad_out: &[f64]) -> Vec<Params> {
        let out = &trace.output;
        let mut g = Batch::pack(grad_out, out.batch, (out.channels, out.height, out.width));
        let mut grads = vec![Params::default(); self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let input = &trace.inputs[i];
            let need_input = i > 0;
            match self.layers[i] {
                LayerSpec::Conv { kernel, .. } => {
                    let (gi, pg) = layers::conv_backward(
                        input,
                        trace.cols[i].as_deref(),
                        &self.params[i].weights,
                        &g,
                        kernel,
                        need_input,
                    );
                    grads[i] = Params::from_grads(pg);
                    if let Some(gi) = gi {
                        g = gi;
                    }
                }
                LayerSpec::Relu => layers::relu_mask(&input.data, &mut g.data),
                LayerSpec::FullyConnected { .. } => {
                    let (gi, pg) =
                        layers::fc_backward_batch(input, &self.params[i].weights, &g, need_input);
                    grads[i] = Params::from_grads(pg);
                    if let Some(gi) = gi {
                        g = gi;
                    }
                }
            }
        }
        grads
    }

    /// Gradients of all parameters for one sample given `d loss / d output`.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<Vec<Params>> {
        let trace = self.trace(input.data(), 1)?;
        if grad_out.len() != self.output_len() {
            return Err(Error::shape("network grad_out", self.output_len(), grad_out.len()));
        }
        Ok(self.backprop(&trace, grad_out.data()))
    }
}

fn apply_layer(spec: &LayerSpec, p: &Params, x: &Batch) -> (Batch, Option<Vec<f64>>) {
    match *spec {
        LayerSpec::Conv {
            out_channels,
            kernel,
            ..
        } => layers::conv_forward(x, &p.weights, &p.bias, out_channels, kernel),
        LayerSpec::Relu => {
            let mut y = x.clone();
            layers::relu_in_place(&mut y.data);
            (y, None)
        }
        LayerSpec::FullyConnected { out_size, .. } => {
            (layers::fc_forward_batch(x, &p.weights, &p.bias, out_size), None)
        }
    }
}

fn output_dims((c, h, w): (usize, usize, usize)) -> Vec<usize> {
    if h == 1 && w == 1 {
        vec![c]
    } else {
        vec![c, h, w]
    }
}

pub(crate) fn layer_seed(seed: u64, layer: usize) -> u64 {
    // splitmix64 finalizer so neighbouring layers get unrelated streams
    let mut z = seed ^ (layer as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
