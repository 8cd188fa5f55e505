use rand_chacha::ChaCha8Rng;

use super::linalg::{gemm, View};
use super::{he_uniform, no_forward, Layer, Mode, Param, Tensor};
use crate::error::{Error, Result};

/// 1-D convolution over `B x C x L` with symmetric zero padding of
/// `(K - 1) / 2`, so the output keeps length `L`.
///
/// Cross-correlation convention: `y[f, t] = b[f] + sum_{c,k} w[f, c, k] * x[c, t + k - pad]`.
#[derive(Clone)]
pub struct Conv1dSame {
    weight: Param,
    bias: Param,
    // im2col buffers from the last forward, `B x (C*K) x L`.
    cols: Vec<f64>,
    input_shape: Option<[usize; 3]>,
}

impl Conv1dSame {
    pub fn new(channels: usize, filters: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Argument(format!("conv kernel size must be odd, got {kernel}")));
        }
        let weight = he_uniform(&[filters, channels, kernel], channels * kernel, rng);
        Self::from_params(weight, Tensor::zeros(&[filters]))
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 3 || bias.shape() != [weight.dim(0)] {
            return Err(Error::Shape(format!(
                "conv weight {:?} and bias {:?} do not match",
                weight.shape(),
                bias.shape()
            )));
        }
        if weight.dim(2) % 2 == 0 {
            return Err(Error::Argument(format!("conv kernel size must be odd, got {}", weight.dim(2))));
        }
        Ok(Self {
            weight: Param::new("weight", weight),
            bias: Param::new("bias", bias),
            cols: Vec::new(),
            input_shape: None,
        })
    }

    pub fn filters(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn channels(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.dim(2)
    }
}

impl Layer for Conv1dSame {
    fn kind(&self) -> &'static str {
        "conv1d"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        x.expect_rank(3, "conv1d")?;
        let (batch, channels, len) = (x.dim(0), x.dim(1), x.dim(2));
        if channels != self.channels() {
            return Err(Error::Shape(format!(
                "conv1d expects {} channels, got {channels}",
                self.channels()
            )));
        }
        let (filters, kernel) = (self.filters(), self.kernel());
        let pad = kernel / 2;
        let ck = channels * kernel;
        self.cols = vec![0.0; batch * ck * len];
        let mut out = vec![0.0; batch * filters * len];
        for b in 0..batch {
            let cols = &mut self.cols[b * ck * len..(b + 1) * ck * len];
            let xb = &x.data()[b * channels * len..(b + 1) * channels * len];
            for c in 0..channels {
                for k in 0..kernel {
                    let row = &mut cols[(c * kernel + k) * len..(c * kernel + k + 1) * len];
                    for (t, slot) in row.iter_mut().enumerate() {
                        if let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) {
                            *slot = xb[c * len + src];
                        }
                    }
                }
            }
            let yb = &mut out[b * filters * len..(b + 1) * filters * len];
            for (f, row) in yb.chunks_exact_mut(len).enumerate() {
                row.fill(self.bias.value.data()[f]);
            }
            gemm(
                View::new(self.weight.value.data(), filters, ck),
                View::new(cols, ck, len),
                1.0,
                yb,
            );
        }
        self.input_shape = Some([batch, channels, len]);
        Tensor::new(vec![batch, filters, len], out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let [batch, channels, len] = self.input_shape.ok_or_else(|| no_forward("conv1d"))?;
        let (filters, kernel) = (self.filters(), self.kernel());
        if grad_out.shape() != [batch, filters, len] {
            return Err(Error::Shape(format!(
                "conv1d gradient {:?}, expected [{batch}, {filters}, {len}]",
                grad_out.shape()
            )));
        }
        let pad = kernel / 2;
        let ck = channels * kernel;
        let mut dx = vec![0.0; batch * channels * len];
        let mut dcols = vec![0.0; ck * len];
        for b in 0..batch {
            let g = &grad_out.data()[b * filters * len..(b + 1) * filters * len];
            let cols = &self.cols[b * ck * len..(b + 1) * ck * len];
            gemm(
                View::new(g, filters, len),
                View::new(cols, ck, len).t(),
                1.0,
                self.weight.grad.data_mut(),
            );
            for (f, row) in g.chunks_exact(len).enumerate() {
                self.bias.grad.data_mut()[f] += row.iter().sum::<f64>();
            }
            gemm(
                View::new(self.weight.value.data(), filters, ck).t(),
                View::new(g, filters, len),
                0.0,
                &mut dcols,
            );
            let dxb = &mut dx[b * channels * len..(b + 1) * channels * len];
            for c in 0..channels {
                for k in 0..kernel {
                    let row = &dcols[(c * kernel + k) * len..(c * kernel + k + 1) * len];
                    for (t, v) in row.iter().enumerate() {
                        if let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) {
                            dxb[c * len + src] += v;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![batch, channels, len], dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Non-overlapping max pooling along the last axis of `B x C x L`, stride
/// equal to the window. A final partial window is kept, so the output length
/// is `ceil(L / W)`. Ties route the gradient to the first maximum.
#[derive(Clone)]
pub struct MaxPool1d {
    window: usize,
    argmax: Vec<usize>,
    input_shape: Option<[usize; 3]>,
}

impl MaxPool1d {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Argument("max-pool window must be at least 1".into()));
        }
        Ok(Self { window, argmax: Vec::new(), input_shape: None })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn output_len(&self, len: usize) -> usize {
        len.div_ceil(self.window)
    }
}

impl Layer for MaxPool1d {
    fn kind(&self) -> &'static str {
        "maxpool1d"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        x.expect_rank(3, "maxpool1d")?;
        let (batch, channels, len) = (x.dim(0), x.dim(1), x.dim(2));
        let out_len = self.output_len(len);
        let mut out = Vec::with_capacity(batch * channels * out_len);
        self.argmax.clear();
        for series in x.data().chunks_exact(len) {
            for (w, chunk) in series.chunks(self.window).enumerate() {
                let mut best = 0;
                for (i, v) in chunk.iter().enumerate() {
                    if *v > chunk[best] {
                        best = i;
                    }
                }
                out.push(chunk[best]);
                self.argmax.push(w * self.window + best);
            }
        }
        self.input_shape = Some([batch, channels, len]);
        Tensor::new(vec![batch, channels, out_len], out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let [batch, channels, len] = self.input_shape.ok_or_else(|| no_forward("maxpool1d"))?;
        let out_len = self.output_len(len);
        if grad_out.shape() != [batch, channels, out_len] {
            return Err(Error::Shape(format!(
                "maxpool1d gradient {:?}, expected [{batch}, {channels}, {out_len}]",
                grad_out.shape()
            )));
        }
        let mut dx = vec![0.0; batch * channels * len];
        for (series, (g, idx)) in grad_out
            .data()
            .chunks_exact(out_len)
            .zip(self.argmax.chunks_exact(out_len))
            .enumerate()
        {
            for (gv, &i) in g.iter().zip(idx) {
                dx[series * len + i] += gv;
            }
        }
        Tensor::new(vec![batch, channels, len], dx)
    }
}
