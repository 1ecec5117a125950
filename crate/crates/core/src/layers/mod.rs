//! Layer kernels: forward passes, exact backward passes, and the `Layer`
//! enum the network stacks.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{sigmoid_scalar, Flatten, Relu, Sigmoid};
pub(crate) use conv::image_batch_dims;
pub use conv::{Conv2d, ConvGradients};
pub use dense::{Dense, DenseGradients};
pub use pool::MaxPool2d;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Declarative description of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// Square same-padded convolution, stride 1.
    Conv { kernel: usize, filters: usize },
    /// 2x2 window, stride 2.
    MaxPool,
    Relu,
    Flatten,
    Dense { units: usize },
    Sigmoid,
}

#[derive(Clone, Debug)]
pub enum Layer<T: Real = f32> {
    Conv(Conv2d<T>),
    MaxPool(MaxPool2d),
    Relu(Relu),
    Flatten(Flatten),
    Dense(Dense<T>),
    Sigmoid(Sigmoid<T>),
}

/// Parameter gradients of one trainable layer, in `params()` order.
pub type ParamGrads<T> = [Tensor<T>; 2];

impl<T: Real> Layer<T> {
    /// Builds a zero-initialized layer for a per-sample input shape and
    /// returns it with its per-sample output shape.
    pub fn from_spec(spec: LayerSpec, input: &[usize]) -> Result<(Self, Vec<usize>)> {
        let image = |what: &str| match *input {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Shape(format!("{what} expects an (h, w, c) input, got {input:?}"))),
        };
        Ok(match spec {
            LayerSpec::Conv { kernel, filters } => {
                let (h, w, c) = image("convolution")?;
                let conv = Conv2d::new((kernel, kernel), c, filters);
                let g = conv.geometry(h, w, c)?;
                (Layer::Conv(conv), vec![g.out_h, g.out_w, filters])
            }
            LayerSpec::MaxPool => {
                let (h, w, c) = image("max pool")?;
                let pool = MaxPool2d::default();
                let (oh, ow) = pool.output_dims(h, w)?;
                (Layer::MaxPool(pool), vec![oh, ow, c])
            }
            LayerSpec::Relu => (Layer::Relu(Relu::default()), input.to_vec()),
            LayerSpec::Sigmoid => (Layer::Sigmoid(Sigmoid::default()), input.to_vec()),
            LayerSpec::Flatten => (
                Layer::Flatten(Flatten::default()),
                vec![input.iter().product()],
            ),
            LayerSpec::Dense { units } => match *input {
                [inputs] => (Layer::Dense(Dense::new(inputs, units)), vec![units]),
                _ => {
                    return Err(Error::Shape(format!(
                        "dense layer expects a flat input, got {input:?}"
                    )))
                }
            },
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::MaxPool(_) => "maxpool",
            Layer::Relu(_) => "relu",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Sigmoid(_) => "sigmoid",
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Dense(_))
    }

    /// `(suffix, tensor)` pairs: weights first, then bias.
    pub fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv(c) => vec![("filters", c.filters()), ("bias", c.bias())],
            Layer::Dense(d) => vec![("weights", d.weights()), ("bias", d.bias())],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(c) => {
                let (w, b) = c.params_mut();
                vec![w, b]
            }
            Layer::Dense(d) => {
                let (w, b) = d.params_mut();
                vec![w, b]
            }
            _ => Vec::new(),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::MaxPool(l) => l.infer(x),
            Layer::Relu(l) => l.infer(x),
            Layer::Flatten(l) => l.infer(x),
            Layer::Dense(l) => l.infer(x),
            Layer::Sigmoid(l) => l.infer(x),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
            Layer::Sigmoid(l) => l.forward(x),
        }
    }

    /// Input gradient plus parameter gradients for trainable layers.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<(Tensor<T>, Option<ParamGrads<T>>)> {
        Ok(match self {
            Layer::Conv(l) => {
                let g = l.backward(dy)?;
                (g.dx, Some([g.dfilters, g.dbias]))
            }
            Layer::Dense(l) => {
                let g = l.backward(dy)?;
                (g.dx, Some([g.dweights, g.dbias]))
            }
            Layer::MaxPool(l) => (l.backward(dy)?, None),
            Layer::Relu(l) => (l.backward(dy)?, None),
            Layer::Flatten(l) => (l.backward(dy)?, None),
            Layer::Sigmoid(l) => (l.backward(dy)?, None),
        })
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.clear_cache(),
            Layer::MaxPool(l) => l.clear_cache(),
            Layer::Relu(l) => l.clear_cache(),
            Layer::Flatten(l) => l.clear_cache(),
            Layer::Dense(l) => l.clear_cache(),
            Layer::Sigmoid(l) => l.clear_cache(),
        }
    }
}
