use rand_chacha::ChaCha8Rng;

use super::linalg::{gemm, View};
use super::{no_forward, uniform, Layer, Mode, Param, Tensor};
use crate::error::{Error, Result};

/// Nonlinearity for the candidate cell input and the hidden output. Gates
/// are always sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LstmActivation {
    Relu,
    Tanh,
}

impl LstmActivation {
    fn apply(self, v: f64) -> f64 {
        match self {
            LstmActivation::Relu => v.max(0.0),
            LstmActivation::Tanh => v.tanh(),
        }
    }

    /// Derivative given the pre-activation `v` and the output `a = apply(v)`.
    fn derivative(self, v: f64, a: f64) -> f64 {
        match self {
            LstmActivation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            LstmActivation::Tanh => 1.0 - a * a,
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Clone)]
struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    // Post-activation gates, each B x H.
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    g_pre: Vec<f64>,
    c: Vec<f64>,
    c_act: Vec<f64>,
}

/// Single-layer LSTM over `B x T x I` returning the last hidden state `B x H`.
///
/// Gate rows are stacked in the order input, forget, cell, output:
///
/// ```text
/// z   = x_t W_ih^T + h_{t-1} W_hh^T + b
/// c_t = f * c_{t-1} + i * act(z_cell)
/// h_t = o * act(c_t)
/// ```
///
/// Initial states are zero. Backward is full backpropagation through time.
#[derive(Clone)]
pub struct Lstm {
    w_ih: Param,
    w_hh: Param,
    bias: Param,
    activation: LstmActivation,
    steps: Vec<Step>,
    input_shape: Option<[usize; 3]>,
}

impl Lstm {
    /// Fan-in uniform initialization with bound `1 / sqrt(I + H)`; forget
    /// gate bias starts at 1.
    pub fn new(inputs: usize, hidden: usize, activation: LstmActivation, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((inputs + hidden) as f64).sqrt();
        let w_ih = uniform(&[4 * hidden, inputs], bound, rng);
        let w_hh = uniform(&[4 * hidden, hidden], bound, rng);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Self::from_params(w_ih, w_hh, bias, activation).expect("consistent shapes")
    }

    pub fn from_params(w_ih: Tensor, w_hh: Tensor, bias: Tensor, activation: LstmActivation) -> Result<Self> {
        let ok = w_ih.rank() == 2
            && w_hh.rank() == 2
            && w_ih.dim(0) % 4 == 0
            && w_hh.shape() == [w_ih.dim(0), w_ih.dim(0) / 4]
            && bias.shape() == [w_ih.dim(0)];
        if !ok {
            return Err(Error::Shape(format!(
                "lstm weights {:?}, {:?}, bias {:?} are inconsistent",
                w_ih.shape(),
                w_hh.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            w_ih: Param::new("w_ih", w_ih),
            w_hh: Param::new("w_hh", w_hh),
            bias: Param::new("bias", bias),
            activation,
            steps: Vec::new(),
            input_shape: None,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.value.dim(1)
    }

    pub fn inputs(&self) -> usize {
        self.w_ih.value.dim(1)
    }

    pub fn activation(&self) -> LstmActivation {
        self.activation
    }
}

impl Layer for Lstm {
    fn kind(&self) -> &'static str {
        "lstm"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        x.expect_rank(3, "lstm")?;
        let (batch, steps, inputs) = (x.dim(0), x.dim(1), x.dim(2));
        if steps == 0 {
            return Err(Error::Argument("lstm needs at least one time step".into()));
        }
        if inputs != self.inputs() {
            return Err(Error::Shape(format!("lstm expects {} inputs, got {inputs}", self.inputs())));
        }
        let h = self.hidden();
        let act = self.activation;
        let mut h_prev = vec![0.0; batch * h];
        let mut c_prev = vec![0.0; batch * h];
        self.steps.clear();
        for t in 0..steps {
            let mut x_t = Vec::with_capacity(batch * inputs);
            for b in 0..batch {
                let start = (b * steps + t) * inputs;
                x_t.extend_from_slice(&x.data()[start..start + inputs]);
            }
            let mut z = Vec::with_capacity(batch * 4 * h);
            for _ in 0..batch {
                z.extend_from_slice(self.bias.value.data());
            }
            gemm(
                View::new(&x_t, batch, inputs),
                View::new(self.w_ih.value.data(), 4 * h, inputs).t(),
                1.0,
                &mut z,
            );
            gemm(
                View::new(&h_prev, batch, h),
                View::new(self.w_hh.value.data(), 4 * h, h).t(),
                1.0,
                &mut z,
            );
            let n = batch * h;
            let (mut i, mut f, mut g, mut o, mut g_pre) =
                (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            let (mut c, mut c_act, mut h_new) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for b in 0..batch {
                let zb = &z[b * 4 * h..(b + 1) * 4 * h];
                for k in 0..h {
                    let idx = b * h + k;
                    i[idx] = sigmoid(zb[k]);
                    f[idx] = sigmoid(zb[h + k]);
                    g_pre[idx] = zb[2 * h + k];
                    g[idx] = act.apply(g_pre[idx]);
                    o[idx] = sigmoid(zb[3 * h + k]);
                    c[idx] = f[idx] * c_prev[idx] + i[idx] * g[idx];
                    c_act[idx] = act.apply(c[idx]);
                    h_new[idx] = o[idx] * c_act[idx];
                }
            }
            let c_next = c.clone();
            self.steps.push(Step { x: x_t, h_prev, c_prev, i, f, g, o, g_pre, c, c_act });
            h_prev = h_new;
            c_prev = c_next;
        }
        self.input_shape = Some([batch, steps, inputs]);
        Tensor::new(vec![batch, h], h_prev)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let [batch, steps, inputs] = self.input_shape.ok_or_else(|| no_forward("lstm"))?;
        let h = self.hidden();
        if grad_out.shape() != [batch, h] {
            return Err(Error::Shape(format!(
                "lstm gradient {:?}, expected [{batch}, {h}]",
                grad_out.shape()
            )));
        }
        let act = self.activation;
        let n = batch * h;
        let mut dh = grad_out.data().to_vec();
        let mut dc = vec![0.0; n];
        let mut dx = vec![0.0; batch * steps * inputs];
        let mut dz = vec![0.0; batch * 4 * h];
        let mut dx_t = vec![0.0; batch * inputs];
        for (t, s) in self.steps.iter().enumerate().rev() {
            for b in 0..batch {
                for k in 0..h {
                    let idx = b * h + k;
                    let d_o = dh[idx] * s.c_act[idx];
                    dc[idx] += dh[idx] * s.o[idx] * act.derivative(s.c[idx], s.c_act[idx]);
                    let d_i = dc[idx] * s.g[idx];
                    let d_g = dc[idx] * s.i[idx];
                    let d_f = dc[idx] * s.c_prev[idx];
                    let row = &mut dz[b * 4 * h..(b + 1) * 4 * h];
                    row[k] = d_i * s.i[idx] * (1.0 - s.i[idx]);
                    row[h + k] = d_f * s.f[idx] * (1.0 - s.f[idx]);
                    row[2 * h + k] = d_g * act.derivative(s.g_pre[idx], s.g[idx]);
                    row[3 * h + k] = d_o * s.o[idx] * (1.0 - s.o[idx]);
                    dc[idx] *= s.f[idx];
                }
            }
            let dz_view = View::new(&dz, batch, 4 * h);
            gemm(dz_view.t(), View::new(&s.x, batch, inputs), 1.0, self.w_ih.grad.data_mut());
            gemm(dz_view.t(), View::new(&s.h_prev, batch, h), 1.0, self.w_hh.grad.data_mut());
            let db = self.bias.grad.data_mut();
            for row in dz.chunks_exact(4 * h) {
                db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            gemm(dz_view, View::new(self.w_ih.value.data(), 4 * h, inputs), 0.0, &mut dx_t);
            for b in 0..batch {
                let start = (b * steps + t) * inputs;
                dx[start..start + inputs].copy_from_slice(&dx_t[b * inputs..(b + 1) * inputs]);
            }
            gemm(dz_view, View::new(self.w_hh.value.data(), 4 * h, h), 0.0, &mut dh);
        }
        Tensor::new(vec![batch, steps, inputs], dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}
