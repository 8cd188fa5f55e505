use super::{no_forward, Layer, Mode, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Default)]
pub struct Relu {
    active: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let active: Vec<bool> = x.data().iter().map(|v| *v > 0.0).collect();
        let out = x.data().iter().map(|v| v.max(0.0)).collect();
        self.active = Some(active);
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let active = self.active.as_ref().ok_or_else(|| no_forward("relu"))?;
        if active.len() != grad_out.len() {
            return Err(Error::Shape("relu gradient does not match input".into()));
        }
        let out = grad_out
            .data()
            .iter()
            .zip(active)
            .map(|(g, a)| if *a { *g } else { 0.0 })
            .collect();
        Tensor::new(grad_out.shape().to_vec(), out)
    }
}

/// Swaps the last two axes of a rank-3 tensor: `B x C x L` to `B x L x C`.
/// Used between the convolutional stack and the LSTM.
#[derive(Clone, Default)]
pub struct SwapTimeChannel;

fn swap(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(3, "swap")?;
    let (b, r, c) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        let src = &x.data()[bi * r * c..(bi + 1) * r * c];
        let dst = &mut out[bi * r * c..(bi + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    Tensor::new(vec![b, c, r], out)
}

impl Layer for SwapTimeChannel {
    fn kind(&self) -> &'static str {
        "swap"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        swap(x)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        swap(grad_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_masks_negative_gradient() {
        let mut r = Relu::new();
        let x = Tensor::new(vec![1, 4], vec![-1.0, 0.0, 2.0, -3.0]).unwrap();
        assert_eq!(r.forward(&x, Mode::Train).unwrap().data(), &[0.0, 0.0, 2.0, 0.0]);
        let g = r.backward(&Tensor::filled(&[1, 4], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn swap_round_trip() {
        let x = Tensor::new(vec![2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let mut s = SwapTimeChannel;
        let y = s.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2]);
        assert_eq!(&y.data()[..6], &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(s.backward(&y).unwrap(), x);
    }
}
