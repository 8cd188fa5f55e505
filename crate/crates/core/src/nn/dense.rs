use rand_chacha::ChaCha8Rng;

use super::linalg::{gemm, View};
use super::{he_uniform, no_forward, Layer, Mode, Param, Tensor};
use crate::error::{Error, Result};

/// `y = x W^T + b` for `x: B x I`, `W: O x I`.
#[derive(Clone)]
pub struct Dense {
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::new("weight", he_uniform(&[outputs, inputs], inputs, rng)),
            bias: Param::new("bias", Tensor::zeros(&[outputs])),
            input: None,
        }
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.dim(0)] {
            return Err(Error::Shape(format!(
                "dense weight {:?} and bias {:?} do not match",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight: Param::new("weight", weight), bias: Param::new("bias", bias), input: None })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn weight(&self) -> &Param {
        &self.weight
    }

    pub fn bias(&self) -> &Param {
        &self.bias
    }
}

impl Layer for Dense {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        x.expect_rank(2, "dense")?;
        let (batch, inputs, outputs) = (x.dim(0), self.inputs(), self.outputs());
        if x.dim(1) != inputs {
            return Err(Error::Shape(format!("dense expects {inputs} inputs, got {}", x.dim(1))));
        }
        let mut out = Vec::with_capacity(batch * outputs);
        for _ in 0..batch {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(
            View::new(x.data(), batch, inputs),
            View::new(self.weight.value.data(), outputs, inputs).t(),
            1.0,
            &mut out,
        );
        self.input = Some(x.clone());
        Tensor::new(vec![batch, outputs], out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| no_forward("dense"))?;
        let (batch, inputs, outputs) = (x.dim(0), self.inputs(), self.outputs());
        if grad_out.shape() != [batch, outputs] {
            return Err(Error::Shape(format!(
                "dense gradient {:?}, expected [{batch}, {outputs}]",
                grad_out.shape()
            )));
        }
        let g = View::new(grad_out.data(), batch, outputs);
        gemm(g.t(), View::new(x.data(), batch, inputs), 1.0, self.weight.grad.data_mut());
        let db = self.bias.grad.data_mut();
        for row in grad_out.data().chunks_exact(outputs) {
            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        let mut dx = vec![0.0; batch * inputs];
        gemm(g, View::new(self.weight.value.data(), outputs, inputs), 0.0, &mut dx);
        Tensor::new(vec![batch, inputs], dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
