//! Closed-form multivariable linear regression, the MLP and CNN-LSTM
//! networks, their shared training loop, and the model file format.

mod mlr;
mod model_file;
mod net;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use mlr::{fit_mlr, residual_projections, MlrModel, RIDGE_LAMBDA};
pub use model_file::{load_model, save_model, ModelHeader, ModelMeta, TrainedModel, MODEL_MAGIC};
pub use net::{
    build_cnn_lstm, build_mlp, cnn_lstm_steps, Architecture, NeuralNet, CONV1_FILTERS, CONV1_KERNEL,
    CONV2_FILTERS, CONV2_KERNEL, DROPOUT_RATE, HEAD_UNITS, LSTM_UNITS, MLP_HIDDEN, POOL1, POOL2,
};
pub use train::{evaluation_loss, train, train_with_monitor, NoMonitor, TrainConfig, TrainMonitor, TrainReport};

use crate::dataset::{FeatureMatrix, TargetMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Mlr,
    Mlp,
    CnnLstm,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 3] = [DecoderKind::Mlr, DecoderKind::Mlp, DecoderKind::CnnLstm];

    pub fn id(self) -> &'static str {
        match self {
            DecoderKind::Mlr => "mlr",
            DecoderKind::Mlp => "mlp",
            DecoderKind::CnnLstm => "cnnlstm",
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.trim().to_ascii_lowercase().chars().filter(|c| *c != '-' && *c != '_').collect();
        DecoderKind::ALL
            .into_iter()
            .find(|k| k.id() == key)
            .ok_or_else(|| Error::Argument(format!("unknown decoder {s:?} (expected mlr, mlp or cnnlstm)")))
    }
}

/// A fitted decoder of any kind.
#[derive(Clone)]
pub enum Decoder {
    Mlr(MlrModel),
    Neural(NeuralNet),
}

impl Decoder {
    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Mlr(_) => DecoderKind::Mlr,
            Decoder::Neural(n) => match n.architecture() {
                Architecture::Mlp { .. } => DecoderKind::Mlp,
                Architecture::CnnLstm { .. } => DecoderKind::CnnLstm,
            },
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<TargetMatrix> {
        match self {
            Decoder::Mlr(m) => m.predict(x),
            Decoder::Neural(n) => n.predict(x),
        }
    }
}

/// Fits `kind` on the training rows, using the validation rows for early
/// stopping of the networks. Returns no report for mLR.
pub fn fit_decoder(
    kind: DecoderKind,
    train_data: (&FeatureMatrix, &TargetMatrix),
    val_data: (&FeatureMatrix, &TargetMatrix),
    config: &TrainConfig,
) -> Result<(Decoder, Option<TrainReport>)> {
    let (x, _) = train_data;
    let mut net = match kind {
        DecoderKind::Mlr => return Ok((Decoder::Mlr(fit_mlr(train_data.0, train_data.1)?), None)),
        DecoderKind::Mlp => build_mlp(x.cols(), config.seed)?,
        DecoderKind::CnnLstm => build_cnn_lstm(x.lags(), x.channels(), config.seed)?,
    };
    let report = train(&mut net, train_data, val_data, config)?;
    Ok((Decoder::Neural(net), Some(report)))
}
