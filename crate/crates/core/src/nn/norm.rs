use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{no_forward, Layer, Mode, Param, Tensor};
use crate::error::{Error, Result};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

/// Batch normalization over axis 1 of a `B x F` or `B x F x L` input.
/// Statistics are pooled over the batch and, for rank-3 inputs, over `L`.
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased variance into the running estimate; eval mode uses the running
/// estimates.
#[derive(Clone)]
pub struct BatchNorm {
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    cache: Option<Cache>,
}

#[derive(Clone)]
struct Cache {
    shape: Vec<usize>,
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

fn layout(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [b, f] => (b, f, 1),
        [b, f, l] => (b, f, l),
        _ => unreachable!("rank checked by caller"),
    }
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::new("gamma", Tensor::filled(&[features], 1.0)),
            beta: Param::new("beta", Tensor::zeros(&[features])),
            running_mean: Param::buffer("running_mean", Tensor::zeros(&[features])),
            running_var: Param::buffer("running_var", Tensor::filled(&[features], 1.0)),
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn set_affine(&mut self, gamma: &[f64], beta: &[f64]) -> Result<()> {
        if gamma.len() != self.features() || beta.len() != self.features() {
            return Err(Error::Shape("batchnorm affine parameters".into()));
        }
        self.gamma.value.data_mut().copy_from_slice(gamma);
        self.beta.value.data_mut().copy_from_slice(beta);
        Ok(())
    }

    pub fn set_running(&mut self, mean: &[f64], var: &[f64]) -> Result<()> {
        if mean.len() != self.features() || var.len() != self.features() {
            return Err(Error::Shape("batchnorm running statistics".into()));
        }
        self.running_mean.value.data_mut().copy_from_slice(mean);
        self.running_var.value.data_mut().copy_from_slice(var);
        Ok(())
    }

    pub fn running_mean(&self) -> &[f64] {
        self.running_mean.value.data()
    }

    pub fn running_var(&self) -> &[f64] {
        self.running_var.value.data()
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> &'static str {
        "batchnorm"
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if !(x.rank() == 2 || x.rank() == 3) {
            return Err(Error::Shape(format!("batchnorm expects rank 2 or 3, got {:?}", x.shape())));
        }
        let (batch, features, len) = layout(x.shape());
        if features != self.features() {
            return Err(Error::Shape(format!(
                "batchnorm has {} features, input has {features}",
                self.features()
            )));
        }
        if mode == Mode::Train && batch < 2 {
            return Err(Error::DegenerateBatch(batch));
        }
        let count = (batch * len) as f64;
        let at = |b: usize, f: usize, l: usize| b * features * len + f * len + l;
        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; features];
        for f in 0..features {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0;
                    for b in 0..batch {
                        for l in 0..len {
                            sum += x.data()[at(b, f, l)];
                        }
                    }
                    let mean = sum / count;
                    let mut ss = 0.0;
                    for b in 0..batch {
                        for l in 0..len {
                            let d = x.data()[at(b, f, l)] - mean;
                            ss += d * d;
                        }
                    }
                    let var = ss / count;
                    let rm = &mut self.running_mean.value.data_mut()[f];
                    *rm = (1.0 - BATCHNORM_MOMENTUM) * *rm + BATCHNORM_MOMENTUM * mean;
                    let rv = &mut self.running_var.value.data_mut()[f];
                    *rv = (1.0 - BATCHNORM_MOMENTUM) * *rv + BATCHNORM_MOMENTUM * ss / (count - 1.0);
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.value.data()[f], self.running_var.value.data()[f]),
            };
            inv_std[f] = 1.0 / (var + BATCHNORM_EPS).sqrt();
            for b in 0..batch {
                for l in 0..len {
                    let i = at(b, f, l);
                    normalized[i] = (x.data()[i] - mean) * inv_std[f];
                }
            }
        }
        let mut out = normalized.clone();
        for b in 0..batch {
            for f in 0..features {
                let (g, be) = (self.gamma.value.data()[f], self.beta.value.data()[f]);
                for l in 0..len {
                    let i = at(b, f, l);
                    out[i] = g * out[i] + be;
                }
            }
        }
        self.cache = Some(Cache { shape: x.shape().to_vec(), normalized, inv_std, mode });
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| no_forward("batchnorm"))?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(Error::Shape(format!(
                "batchnorm gradient {:?}, expected {:?}",
                grad_out.shape(),
                cache.shape
            )));
        }
        let (batch, features, len) = layout(&cache.shape);
        let count = (batch * len) as f64;
        let at = |b: usize, f: usize, l: usize| b * features * len + f * len + l;
        let g = grad_out.data();
        let mut dx = vec![0.0; g.len()];
        for f in 0..features {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..batch {
                for l in 0..len {
                    let i = at(b, f, l);
                    sum_g += g[i];
                    sum_gx += g[i] * cache.normalized[i];
                }
            }
            self.beta.grad.data_mut()[f] += sum_g;
            self.gamma.grad.data_mut()[f] += sum_gx;
            let scale = self.gamma.value.data()[f] * cache.inv_std[f];
            for b in 0..batch {
                for l in 0..len {
                    let i = at(b, f, l);
                    dx[i] = match cache.mode {
                        Mode::Train => {
                            scale * (g[i] - sum_g / count - cache.normalized[i] * sum_gx / count)
                        }
                        Mode::Eval => scale * g[i],
                    };
                }
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

/// Inverted dropout: in train mode each element is kept with probability
/// `1 - rate` and scaled by `1 / (1 - rate)`; eval mode is the identity.
/// Masks come from a seeded stream, so a run is reproducible.
#[derive(Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Argument(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Self { rate, rng: ChaCha8Rng::seed_from_u64(seed), mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Scaled mask applied by the last train-mode forward.
    pub fn last_mask(&self) -> Option<&[f64]> {
        self.mask.as_deref()
    }
}

impl Layer for Dropout {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match &self.mask {
            None => Ok(grad_out.clone()),
            Some(mask) => {
                if mask.len() != grad_out.len() {
                    return Err(Error::Shape("dropout gradient does not match mask".into()));
                }
                let out = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor::new(grad_out.shape().to_vec(), out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn random(shape: &[usize], std: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(3.0, std).unwrap();
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|v| *v = n.sample(&mut rng));
        t
    }

    #[test]
    fn train_output_is_standardized() {
        // Output variance is var / (var + eps); inputs with std 10 keep the
        // eps contribution below 1e-6.
        for shape in [vec![16, 5], vec![8, 3, 7]] {
            let mut bn = BatchNorm::new(shape[1]);
            let x = random(&shape, 10.0, 1);
            let y = bn.forward(&x, Mode::Train).unwrap();
            let (b, f, l) = layout(&shape);
            for feat in 0..f {
                let vals: Vec<f64> = (0..b)
                    .flat_map(|bi| (0..l).map(move |li| (bi, li)))
                    .map(|(bi, li)| y.data()[bi * f * l + feat * l + li])
                    .collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
                assert!(m.abs() < 1e-8);
                assert!((v - 1.0).abs() < 1e-6, "variance {v}");
            }
        }
    }

    #[test]
    fn eval_with_unit_running_stats_is_affine() {
        let mut bn = BatchNorm::new(2);
        bn.set_affine(&[2.0, -1.0], &[0.5, 0.25]).unwrap();
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        let s = 1.0 / (1.0 + BATCHNORM_EPS).sqrt();
        let want = [2.0 * s + 0.5, -2.0 * s + 0.25, 6.0 * s + 0.5, -4.0 * s + 0.25];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_batch_rejected_in_train() {
        let mut bn = BatchNorm::new(3);
        assert!(matches!(
            bn.forward(&Tensor::zeros(&[1, 3]), Mode::Train),
            Err(Error::DegenerateBatch(1))
        ));
        assert!(bn.forward(&Tensor::zeros(&[1, 3]), Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean()[0] - 0.25).abs() < 1e-15);
        // Unbiased variance of 1..4 is 5/3.
        assert!((bn.running_var()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn dropout_identities_and_rate_check() {
        let x = random(&[4, 6], 1.0, 2);
        let mut d = Dropout::new(0.0, 1).unwrap();
        assert_eq!(d.forward(&x, Mode::Train).unwrap(), x);
        let mut d = Dropout::new(0.5, 1).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval).unwrap(), x);
        assert!(Dropout::new(1.0, 0).is_err());
        assert!(Dropout::new(-0.1, 0).is_err());
    }

    #[test]
    fn dropout_keep_fraction_and_expectation() {
        let n = 1_000_000;
        let x = Tensor::filled(&[n], 2.0);
        let mut d = Dropout::new(0.25, 42).unwrap();
        let y = d.forward(&x, Mode::Train).unwrap();
        let kept = y.data().iter().filter(|v| **v != 0.0).count() as f64 / n as f64;
        assert!((kept - 0.75).abs() < 0.002, "kept {kept}");
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn dropout_is_reproducible() {
        let x = random(&[10, 10], 1.0, 3);
        let mut a = Dropout::new(0.25, 9).unwrap();
        let mut b = Dropout::new(0.25, 9).unwrap();
        assert_eq!(a.forward(&x, Mode::Train).unwrap(), b.forward(&x, Mode::Train).unwrap());
    }
}
