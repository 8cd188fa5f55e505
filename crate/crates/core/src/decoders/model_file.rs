//! Model file layout: 8-byte magic, little-endian `u64` header length, JSON
//! header, then the parameter blob described by the header's manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Decoder, DecoderKind, MlrModel, NeuralNet};
use crate::dataset::{FeatureMatrix, LagWindowSpec, TargetMatrix};
use crate::error::{Error, Result};
use crate::nn::serialize::{decode, encode, load_state, save_state, ParamEntry};
use crate::nn::Tensor;
use crate::pipeline::{Normalization, PreprocessConfig};
use crate::signal::FrequencyBand;

pub const MODEL_MAGIC: &[u8; 8] = b"KTMODEL1";

/// Everything besides the decoder needed to run it on a raw recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub subject_ids: Vec<String>,
    pub channel_names: Vec<String>,
    pub lag: LagWindowSpec,
    pub preprocess: PreprocessConfig,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub kind: DecoderKind,
    pub lags: usize,
    pub channels: usize,
    pub band: Option<FrequencyBand>,
    pub architecture: Option<Architecture>,
    pub rank_deficient: bool,
    pub meta: ModelMeta,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone)]
pub struct TrainedModel {
    pub decoder: Decoder,
    pub meta: ModelMeta,
}

impl TrainedModel {
    pub fn kind(&self) -> DecoderKind {
        self.decoder.kind()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<TargetMatrix> {
        self.decoder.predict(x)
    }

    /// Serialized bytes; identical models give identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = &self.meta;
        let (architecture, rank_deficient, (params, blob)) = match &self.decoder {
            Decoder::Mlr(m) => {
                let alpha = Tensor::new(vec![3], m.alpha.to_vec()).expect("three intercepts");
                let beta = Tensor::new(vec![3, m.cols], m.beta.clone()).expect("beta shape");
                (None, m.rank_deficient, encode(&[("alpha".into(), &alpha), ("beta".into(), &beta)]))
            }
            Decoder::Neural(n) => (Some(n.architecture()), false, save_state(n.network())),
        };
        let header = ModelHeader {
            kind: self.kind(),
            lags: meta.lag.window_len(),
            channels: meta.channel_names.len(),
            band: meta.preprocess.band,
            architecture,
            rank_deficient,
            meta: meta.clone(),
            params,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + blob.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let bad = |m: String| Error::format(context, m);
        if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
            return Err(bad("not a model file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            bad(format!("header length {len} exceeds file size {}", bytes.len()))
        })?;
        let header: ModelHeader =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| bad(format!("header: {e}")))?;
        let blob = &bytes[header_end..];
        let lags = header.meta.lag.window_len();
        if header.lags != lags || header.channels != header.meta.channel_names.len() {
            return Err(bad("header dimensions disagree with its metadata".into()));
        }
        let decoder = match (header.kind, header.architecture) {
            (DecoderKind::Mlr, None) => {
                let tensors = decode(&header.params, blob)?;
                let [alpha, beta] = <[Tensor; 2]>::try_from(tensors)
                    .map_err(|_| bad("mLR needs exactly alpha and beta".into()))?;
                let cols = lags * header.channels;
                if alpha.shape() != [3] || beta.shape() != [3, cols] {
                    return Err(bad(format!(
                        "mLR parameters {:?}, {:?} do not fit {cols} columns",
                        alpha.shape(),
                        beta.shape()
                    )));
                }
                Decoder::Mlr(MlrModel {
                    alpha: [alpha.data()[0], alpha.data()[1], alpha.data()[2]],
                    beta: beta.into_data(),
                    cols,
                    rank_deficient: header.rank_deficient,
                })
            }
            (kind @ (DecoderKind::Mlp | DecoderKind::CnnLstm), Some(arch)) => {
                let matches = matches!(
                    (kind, arch),
                    (DecoderKind::Mlp, Architecture::Mlp { .. }) | (DecoderKind::CnnLstm, Architecture::CnnLstm { .. })
                );
                if !matches || arch.input_dim() != lags * header.channels {
                    return Err(bad(format!("architecture {arch:?} does not match {kind} with {lags} x {} inputs", header.channels)));
                }
                let mut net = NeuralNet::build(arch, 0)?;
                load_state(net.network_mut(), &header.params, blob)?;
                Decoder::Neural(net)
            }
            (kind, arch) => return Err(bad(format!("decoder {kind} with architecture {arch:?}"))),
        };
        Ok(Self { decoder, meta: header.meta })
    }
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TrainedModel::from_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::{build_cnn_lstm, build_mlp, fit_mlr};
    use crate::signal::{MinMaxParams, ZScoreParams};

    fn meta(lags: usize, channels: usize) -> ModelMeta {
        ModelMeta {
            subject_ids: vec!["S01".into()],
            channel_names: (0..channels).map(|i| format!("C{i}")).collect(),
            lag: LagWindowSpec::from_samples(lags - 1, 0, 100.0).unwrap(),
            preprocess: PreprocessConfig::default().with_band(Some(FrequencyBand::Fb1)),
            normalization: Normalization {
                eeg: vec![ZScoreParams::new(0.1, 2.0).unwrap(); channels],
                kinematics: [MinMaxParams::new(-1.0, 1.0).unwrap(); 3],
            },
        }
    }

    fn features(lags: usize, channels: usize, rows: usize) -> FeatureMatrix {
        let n = lags * channels * rows;
        FeatureMatrix::from_rows(lags, channels, (0..n).map(|i| (i as f64 * 0.731).sin()).collect()).unwrap()
    }

    #[test]
    fn every_kind_round_trips() {
        let x = features(6, 2, 30);
        let y = TargetMatrix::new((0..30).map(|i| [x.row(i)[0], x.row(i)[3], 0.2 * i as f64]).collect());
        let models = [
            Decoder::Mlr(fit_mlr(&x, &y).unwrap()),
            Decoder::Neural(build_mlp(12, 3).unwrap()),
            Decoder::Neural(build_cnn_lstm(6, 2, 3).unwrap()),
        ];
        let dir = tempfile::tempdir().unwrap();
        for decoder in models {
            let model = TrainedModel { decoder, meta: meta(6, 2) };
            let path = dir.path().join(format!("{}.ktm", model.kind()));
            save_model(&model, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back.kind(), model.kind());
            assert_eq!(back.meta, model.meta);
            assert_eq!(back.to_bytes(), model.to_bytes());
            assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let model = TrainedModel { decoder: Decoder::Neural(build_mlp(12, 3).unwrap()), meta: meta(6, 2) };
        let bytes = model.to_bytes();
        assert!(TrainedModel::from_bytes(&bytes[..bytes.len() - 8], "m").is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(TrainedModel::from_bytes(&wrong, "m"), Err(Error::Format { .. })));
        assert!(TrainedModel::from_bytes(&bytes[..10], "m").is_err());
    }
}
