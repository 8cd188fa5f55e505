//! Parameter blobs: a manifest of `(name, shape)` entries plus every value
//! concatenated in manifest order as little-endian f64.

use serde::{Deserialize, Serialize};

use super::{Sequential, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn encode(named: &[(String, &Tensor)]) -> (Vec<ParamEntry>, Vec<u8>) {
    let entries = named
        .iter()
        .map(|(name, t)| ParamEntry { name: name.clone(), shape: t.shape().to_vec() })
        .collect();
    let blob = named
        .iter()
        .flat_map(|(_, t)| t.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect();
    (entries, blob)
}

pub fn decode(entries: &[ParamEntry], blob: &[u8]) -> Result<Vec<Tensor>> {
    let total: usize = entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if blob.len() != total * 8 {
        return Err(Error::format(
            "parameter blob",
            format!("{} bytes, manifest declares {total} f64 values", blob.len()),
        ));
    }
    let mut offset = 0;
    entries
        .iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let values = blob[offset..offset + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += n * 8;
            Tensor::new(e.shape.clone(), values)
                .map_err(|err| Error::format(format!("parameter {}", e.name), err.to_string()))
        })
        .collect()
}

/// Manifest and blob for every parameter of `model`, buffers included.
pub fn save_state(model: &Sequential) -> (Vec<ParamEntry>, Vec<u8>) {
    encode(&model.named_params())
}

/// Loads values saved by [`save_state`] into a model of the same architecture.
pub fn load_state(model: &mut Sequential, entries: &[ParamEntry], blob: &[u8]) -> Result<()> {
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if names.len() != entries.len() || names.iter().zip(entries).any(|(n, e)| *n != e.name) {
        return Err(Error::format(
            "parameter manifest",
            format!(
                "entries {:?} do not match model parameters {names:?}",
                entries.iter().map(|e| e.name.as_str()).collect::<Vec<_>>()
            ),
        ));
    }
    let tensors = decode(entries, blob)?;
    model.restore(&tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BatchNorm, Dense, Mode, Relu};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Sequential {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Sequential::new();
        m.push(BatchNorm::new(4)).push(Dense::new(4, 3, &mut rng)).push(Relu::new());
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut a = model(1);
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64).sin() * 3.0).collect()).unwrap();
        a.forward(&x, Mode::Train).unwrap();
        let (entries, blob) = save_state(&a);
        assert_eq!(entries[0].name, "0.batchnorm.gamma");
        let mut b = model(2);
        load_state(&mut b, &entries, &blob).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p.value), bits(&q.value));
        }
        assert_eq!(a.forward(&x, Mode::Eval).unwrap(), b.forward(&x, Mode::Eval).unwrap());
    }

    #[test]
    fn truncated_blob_and_wrong_names_rejected() {
        let a = model(1);
        let (entries, blob) = save_state(&a);
        let mut b = model(1);
        assert!(load_state(&mut b, &entries, &blob[..blob.len() - 8]).is_err());
        let mut renamed = entries.clone();
        renamed[0].name = "x".into();
        assert!(load_state(&mut b, &renamed, &blob).is_err());
    }
}
