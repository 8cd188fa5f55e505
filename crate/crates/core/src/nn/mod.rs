//! Minimal reverse-mode kernel: each layer caches what its backward pass
//! needs during `forward` and accumulates parameter gradients in `backward`.
//!
//! Only the layers the decoders use are provided. Shapes are batch-first:
//! dense layers take `B x I`, temporal layers `B x C x L`, the LSTM
//! `B x T x I`.

mod activation;
mod adam;
mod conv;
mod dense;
pub(crate) mod linalg;
mod loss;
mod lstm;
mod norm;
pub mod serialize;
mod tensor;

pub use activation::{Relu, SwapTimeChannel};
pub use adam::{Adam, AdamConfig};
pub use conv::{Conv1dSame, MaxPool1d};
pub use dense::Dense;
pub use loss::mse_loss;
pub use lstm::{Lstm, LstmActivation};
pub use norm::{BatchNorm, Dropout, BATCHNORM_EPS, BATCHNORM_MOMENTUM};
pub use tensor::Tensor;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A parameter tensor with its gradient. Non-trainable parameters (batch
/// norm running statistics) are serialized but skipped by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: &str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name: name.to_string(), value, grad, trainable: true }
    }

    pub fn buffer(name: &str, value: Tensor) -> Self {
        Self { trainable: false, ..Self::new(name, value) }
    }
}

pub trait Layer: Send + Sync + LayerClone {
    fn kind(&self) -> &'static str;

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;

    /// Gradient with respect to the last forward input. Parameter gradients
    /// are added to `Param::grad`.
    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

pub trait LayerClone {
    fn clone_box(&self) -> Box<dyn Layer>;
}

impl<T: Layer + Clone + 'static> LayerClone for T {
    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

impl Clone for Box<dyn Layer> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Uniform He-style fan-in initialization, `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`.
pub(crate) fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

pub(crate) fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
    t
}

pub(crate) fn no_forward(kind: &str) -> Error {
    Error::Argument(format!("{kind}: backward called before forward"))
}

/// Layers applied in order.
#[derive(Clone, Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut out = x.clone();
        for layer in &mut self.layers {
            out = layer.forward(&out, mode)?;
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Parameter names prefixed with the layer position, e.g. `2.dense.weight`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.params()
                    .into_iter()
                    .map(move |p| (format!("{i}.{kind}.{}", p.name), &p.value))
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Copies of every parameter value, trainable or not.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params().into_iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != snapshot.len() {
            return Err(Error::Shape(format!(
                "snapshot has {} tensors, model has {}",
                snapshot.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter_mut().zip(snapshot) {
            if p.value.shape() != s.shape() {
                return Err(Error::Shape(format!(
                    "snapshot tensor {:?} does not fit parameter {} {:?}",
                    s.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = s.clone();
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }
}
