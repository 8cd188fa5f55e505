use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{FeatureMatrix, TargetMatrix};
use crate::error::{Error, Result};
use crate::nn::serialize::save_state;
use crate::nn::{
    BatchNorm, Conv1dSame, Dense, Dropout, Lstm, LstmActivation, MaxPool1d, Mode, Relu, Sequential,
    SwapTimeChannel, Tensor,
};

pub const MLP_HIDDEN: [usize; 4] = [128, 128, 128, 16];
pub const CONV1_FILTERS: usize = 256;
pub const CONV1_KERNEL: usize = 7;
pub const POOL1: usize = 5;
pub const CONV2_FILTERS: usize = 128;
pub const CONV2_KERNEL: usize = 5;
pub const POOL2: usize = 3;
pub const DROPOUT_RATE: f64 = 0.25;
pub const LSTM_UNITS: usize = 128;
pub const HEAD_UNITS: usize = 128;
const PREDICT_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Mlp { input_dim: usize },
    CnnLstm { lags: usize, channels: usize },
}

impl Architecture {
    pub fn input_dim(self) -> usize {
        match self {
            Architecture::Mlp { input_dim } => input_dim,
            Architecture::CnnLstm { lags, channels } => lags * channels,
        }
    }

    /// Input tensor for the selected rows. The MLP takes flat `B x (L*N)`
    /// rows; the CNN-LSTM takes `B x N x L`, which is the channel-major row
    /// layout unchanged.
    pub fn input_tensor(self, x: &FeatureMatrix, rows: &[usize]) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} feature columns, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * x.cols());
        for &r in rows {
            data.extend_from_slice(x.row(r));
        }
        let shape = match self {
            Architecture::Mlp { input_dim } => vec![rows.len(), input_dim],
            Architecture::CnnLstm { lags, channels } => {
                if x.lags() != lags || x.channels() != channels {
                    return Err(Error::Shape(format!(
                        "network expects {lags} lags x {channels} channels, got {} x {}",
                        x.lags(),
                        x.channels()
                    )));
                }
                vec![rows.len(), channels, lags]
            }
        };
        Tensor::new(shape, data)
    }
}

/// Sequence length the LSTM sees for `lags` input samples.
pub fn cnn_lstm_steps(lags: usize) -> usize {
    lags.div_ceil(POOL1).div_ceil(POOL2)
}

/// A trainable decoder network together with the input layout it expects.
#[derive(Clone)]
pub struct NeuralNet {
    architecture: Architecture,
    net: Sequential,
}

/// `BN -> D1 128 -> D2 128 -> D3 128 -> D4 16 -> 3`, ReLU between dense
/// layers, linear output.
pub fn build_mlp(input_dim: usize, seed: u64) -> Result<NeuralNet> {
    if input_dim == 0 {
        return Err(Error::Argument("MLP input dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::new();
    net.push(BatchNorm::new(input_dim));
    let mut width = input_dim;
    for units in MLP_HIDDEN {
        net.push(Dense::new(width, units, &mut rng)).push(Relu::new());
        width = units;
    }
    net.push(Dense::new(width, 3, &mut rng));
    Ok(NeuralNet { architecture: Architecture::Mlp { input_dim }, net })
}

/// `BN -> C1(256, k7) -> M1(5) -> C2(128, k5) -> M2(3) -> dropout 0.25 ->
/// LSTM 128 -> D1 128 -> D2 3`. Convolutions run along time with EEG
/// channels as input maps and are followed by ReLU, as is D1.
pub fn build_cnn_lstm(lags: usize, channels: usize, seed: u64) -> Result<NeuralNet> {
    if lags == 0 || channels == 0 {
        return Err(Error::Argument(format!("CNN-LSTM needs L, N >= 1, got L={lags}, N={channels}")));
    }
    if lags < CONV1_KERNEL {
        log::warn!("L = {lags} is shorter than the first kernel; zero padding dominates");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::new();
    net.push(BatchNorm::new(channels))
        .push(Conv1dSame::new(channels, CONV1_FILTERS, CONV1_KERNEL, &mut rng)?)
        .push(Relu::new())
        .push(MaxPool1d::new(POOL1)?)
        .push(Conv1dSame::new(CONV1_FILTERS, CONV2_FILTERS, CONV2_KERNEL, &mut rng)?)
        .push(Relu::new())
        .push(MaxPool1d::new(POOL2)?)
        .push(Dropout::new(DROPOUT_RATE, seed.wrapping_add(1))?)
        .push(SwapTimeChannel)
        .push(Lstm::new(CONV2_FILTERS, LSTM_UNITS, LstmActivation::Relu, &mut rng))
        .push(Dense::new(LSTM_UNITS, HEAD_UNITS, &mut rng))
        .push(Relu::new())
        .push(Dense::new(HEAD_UNITS, 3, &mut rng));
    Ok(NeuralNet { architecture: Architecture::CnnLstm { lags, channels }, net })
}

impl NeuralNet {
    /// Fresh network for `architecture`.
    pub fn build(architecture: Architecture, seed: u64) -> Result<Self> {
        match architecture {
            Architecture::Mlp { input_dim } => build_mlp(input_dim, seed),
            Architecture::CnnLstm { lags, channels } => build_cnn_lstm(lags, channels, seed),
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn input_tensor(&self, x: &FeatureMatrix, rows: &[usize]) -> Result<Tensor> {
        self.architecture.input_tensor(x, rows)
    }

    /// Eval-mode prediction; does not touch `self`.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<TargetMatrix> {
        let mut net = self.net.clone();
        predict_with(self.architecture, &mut net, x)
    }

    pub(crate) fn predict_in_place(&mut self, x: &FeatureMatrix) -> Result<TargetMatrix> {
        let architecture = self.architecture;
        predict_with(architecture, &mut self.net, x)
    }

    /// SHA-256 of every parameter value, buffers included.
    pub fn parameter_digest(&self) -> String {
        hex::encode(Sha256::digest(save_state(&self.net).1))
    }
}

fn predict_with(architecture: Architecture, net: &mut Sequential, x: &FeatureMatrix) -> Result<TargetMatrix> {
    let mut out = Vec::with_capacity(x.rows());
    let rows: Vec<usize> = (0..x.rows()).collect();
    for chunk in rows.chunks(PREDICT_BATCH) {
        let y = net.forward(&architecture.input_tensor(x, chunk)?, Mode::Eval)?;
        out.extend(y.data().chunks_exact(3).map(|r| [r[0], r[1], r[2]]));
    }
    Ok(TargetMatrix::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_shapes_for_twenty_one_channels() {
        let m = build_mlp(21 * 25, 0).unwrap();
        let named = m.network().named_params();
        let d1 = named.iter().find(|(n, _)| n == "1.dense.weight").unwrap();
        assert_eq!(d1.1.shape(), &[128, 525]);
        let shapes: Vec<Vec<usize>> = named
            .iter()
            .filter(|(n, _)| n.ends_with("dense.weight"))
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        assert_eq!(shapes, vec![vec![128, 525], vec![128, 128], vec![128, 128], vec![16, 128], vec![3, 16]]);
    }

    #[test]
    fn cnn_lstm_pooled_lengths() {
        assert_eq!(cnn_lstm_steps(35), 3);
        assert_eq!(35usize.div_ceil(5), 7);
        let m = build_cnn_lstm(35, 21, 0).unwrap();
        let x = FeatureMatrix::from_rows(35, 21, vec![0.5; 2 * 35 * 21]).unwrap();
        let mut net = m.network().clone();
        let mut t = m.input_tensor(&x, &[0, 1]).unwrap();
        let kinds: Vec<&str> = net.layers().iter().map(|l| l.kind()).collect();
        assert_eq!(
            kinds,
            ["batchnorm", "conv1d", "relu", "maxpool1d", "conv1d", "relu", "maxpool1d", "dropout", "swap", "lstm", "dense", "relu", "dense"]
        );
        let mut lengths = Vec::new();
        for layer in net_layers_mut(&mut net) {
            t = layer.forward(&t, Mode::Eval).unwrap();
            lengths.push(t.shape().to_vec());
        }
        assert_eq!(lengths[3], vec![2, 256, 7]);
        assert_eq!(lengths[6], vec![2, 128, 3]);
        assert_eq!(lengths[8], vec![2, 3, 128]);
        assert_eq!(lengths[12], vec![2, 3]);
    }

    fn net_layers_mut(net: &mut Sequential) -> Vec<&mut Box<dyn crate::nn::Layer>> {
        net.layers_mut().iter_mut().collect()
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(build_mlp(30, 4).unwrap().parameter_digest(), build_mlp(30, 4).unwrap().parameter_digest());
        assert_ne!(build_mlp(30, 4).unwrap().parameter_digest(), build_mlp(30, 5).unwrap().parameter_digest());
        assert_eq!(
            build_cnn_lstm(11, 3, 1).unwrap().parameter_digest(),
            build_cnn_lstm(11, 3, 1).unwrap().parameter_digest()
        );
    }

    #[test]
    fn batched_prediction_equals_single_rows() {
        let x = FeatureMatrix::from_rows(11, 3, (0..5 * 33).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        for m in [build_mlp(33, 2).unwrap(), build_cnn_lstm(11, 3, 2).unwrap()] {
            let all = m.predict(&x).unwrap();
            assert_eq!(all.rows(), 5);
            for r in 0..5 {
                let one = m.predict(&x.select(&[r])).unwrap();
                for d in 0..3 {
                    assert!((one.as_rows()[0][d] - all.as_rows()[r][d]).abs() < 1e-9);
                }
            }
            assert!(all.flat().iter().all(|v| v.is_finite()));
        }
    }
}
