//! Payload codecs carried inside frames.
//!
//! Parameter sets use a self-describing tensor list:
//! `tensor_count u32`, then per tensor `name_len u16`, UTF-8 name,
//! `dtype u8` (0 = f32, 1 = f64), `ndims u8`, `dims u32 * ndims`, and the
//! row-major values. Control messages (hello, metrics) are JSON.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParameterSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireDtype {
    F32 = 0,
    #[default]
    F64 = 1,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Protocol(format!("payload too short: need {n} bytes at offset {}, have {}", self.pos, self.bytes.len()))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Protocol("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Protocol("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Protocol(format!("{} unread payload bytes", self.bytes.len() - self.pos)))
        }
    }
}

fn checked_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Encoding(format!("{what} {n} does not fit in u32")))
}

pub fn encode_params(params: &ParameterSet, dtype: WireDtype) -> Result<Vec<u8>> {
    let width = match dtype {
        WireDtype::F32 => 4,
        WireDtype::F64 => 8,
    };
    let mut out = Vec::with_capacity(4 + params.num_values() * width + params.len() * 32);
    out.extend_from_slice(&checked_u32(params.len(), "tensor count")?.to_le_bytes());
    for t in params.tensors() {
        let name = t.name().as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| Error::Encoding(format!("tensor name of {} bytes", name.len())))?;
        let ndims = u8::try_from(t.shape().len()).map_err(|_| Error::Encoding(format!("{} has too many dims", t.name())))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(dtype as u8);
        out.push(ndims);
        for &d in t.shape() {
            out.extend_from_slice(&checked_u32(d, "dimension")?.to_le_bytes());
        }
        match dtype {
            WireDtype::F64 => t.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            WireDtype::F32 => t.values().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        }
    }
    Ok(out)
}

pub fn decode_params(payload: &[u8]) -> Result<ParameterSet> {
    let mut r = Reader::new(payload);
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Protocol(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let dtype = r.u8()?;
        let ndims = r.u8()? as usize;
        let shape: Vec<usize> = (0..ndims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Protocol(format!("tensor {name}: shape {shape:?} overflows")))?;
        let values = match dtype {
            1 => r.f64s(n)?,
            0 => {
                let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Protocol("length overflow".into()))?)?;
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect()
            }
            other => return Err(Error::Protocol(format!("tensor {name}: unknown dtype {other}"))),
        };
        tensors.push(Tensor::new(name, shape, values).map_err(|e| Error::Protocol(e.to_string()))?);
    }
    r.finish()?;
    ParameterSet::new(tensors).map_err(|e| Error::Protocol(e.to_string()))
}

/// First message on every connection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    /// Round count the sender was configured with, if it knows one.
    #[serde(default)]
    pub rounds: Option<u32>,
    pub schema_id: String,
}

/// Sent by a client after each model update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub round: u32,
    pub samples: u64,
    pub train_loss: f64,
    pub train_seconds: f64,
}

pub fn encode_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(value)?)
}

pub fn decode_json<T: for<'de> Deserialize<'de>>(payload: &[u8]) -> Result<T> {
    serde_json::from_slice(payload).map_err(|e| Error::Protocol(format!("malformed control payload: {e}")))
}

/// Raw training data plus query rows shipped to a cloud predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictRequest {
    pub train_features: Array2<f64>,
    pub train_labels: Vec<usize>,
    pub query_features: Array2<f64>,
}

impl PredictRequest {
    /// `n_train u32, n_query u32, dim u32`, train features (f64),
    /// train labels (u32), query features (f64).
    pub fn encode(&self) -> Result<Vec<u8>> {
        let (n_train, dim) = self.train_features.dim();
        let (n_query, query_dim) = self.query_features.dim();
        if query_dim != dim || self.train_labels.len() != n_train {
            return Err(Error::Encoding(format!(
                "inconsistent request: train {n_train}x{dim}, {} labels, query {n_query}x{query_dim}",
                self.train_labels.len()
            )));
        }
        let mut out = Vec::with_capacity(12 + 8 * dim * (n_train + n_query) + 4 * n_train);
        for n in [n_train, n_query, dim] {
            out.extend_from_slice(&checked_u32(n, "count")?.to_le_bytes());
        }
        self.train_features.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for &l in &self.train_labels {
            out.extend_from_slice(&checked_u32(l, "label")?.to_le_bytes());
        }
        self.query_features.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        Ok(out)
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        let mut r = Reader::new(payload);
        let (n_train, n_query, dim) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let matrix = |r: &mut Reader, rows: usize| -> Result<Array2<f64>> {
            let n = rows.checked_mul(dim).ok_or_else(|| Error::Protocol("length overflow".into()))?;
            Ok(Array2::from_shape_vec((rows, dim), r.f64s(n)?).expect("length matches"))
        };
        let train_features = matrix(&mut r, n_train)?;
        let train_labels = r.u32s(n_train)?.into_iter().map(|l| l as usize).collect();
        let query_features = matrix(&mut r, n_query)?;
        r.finish()?;
        Ok(PredictRequest { train_features, train_labels, query_features })
    }
}

/// Class probabilities for each query row: `n u32, classes u32`, then
/// `n * classes` row-major f64 values.
pub fn encode_predictions(probabilities: &Array2<f64>) -> Result<Vec<u8>> {
    let (n, k) = probabilities.dim();
    let mut out = Vec::with_capacity(8 + 8 * n * k);
    out.extend_from_slice(&checked_u32(n, "prediction count")?.to_le_bytes());
    out.extend_from_slice(&checked_u32(k, "class count")?.to_le_bytes());
    probabilities.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    Ok(out)
}

pub fn decode_predictions(payload: &[u8]) -> Result<Array2<f64>> {
    let mut r = Reader::new(payload);
    let (n, k) = (r.u32()? as usize, r.u32()? as usize);
    let len = n.checked_mul(k).ok_or_else(|| Error::Protocol("length overflow".into()))?;
    let values = r.f64s(len)?;
    r.finish()?;
    Ok(Array2::from_shape_vec((n, k), values).expect("length matches"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParameterSet {
        ParameterSet::new(vec![
            Tensor::new("a.weight", vec![2, 3], vec![0.1, -0.2, 1e-300, f64::MAX, -0.0, 3.0]).unwrap(),
            Tensor::new("a.bias", vec![2], vec![1.5, -2.25]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let p = sample();
        assert!(decode_params(&encode_params(&p, WireDtype::F64).unwrap()).unwrap().bit_eq(&p));
    }

    #[test]
    fn layout_of_a_single_scalar() {
        let p = ParameterSet::new(vec![Tensor::new("w", vec![1], vec![1.0]).unwrap()]).unwrap();
        let bytes = encode_params(&p, WireDtype::F64).unwrap();
        let mut expected = vec![1, 0, 0, 0, 1, 0, b'w', 1, 1, 1, 0, 0, 0];
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn f32_round_trip_rounds_each_value() {
        let p = sample();
        let back = decode_params(&encode_params(&p, WireDtype::F32).unwrap()).unwrap();
        assert!(back.same_schema(&p));
        for (a, b) in p.values().zip(back.values()) {
            assert_eq!(a as f32 as f64, b);
        }
    }

    #[test]
    fn empty_set_round_trips() {
        let bytes = encode_params(&ParameterSet::empty(), WireDtype::F64).unwrap();
        assert_eq!(bytes, vec![0, 0, 0, 0]);
        assert!(decode_params(&bytes).unwrap().is_empty());
    }

    #[test]
    fn malformed_payloads_are_protocol_errors() {
        let bytes = encode_params(&sample(), WireDtype::F64).unwrap();
        assert!(matches!(decode_params(&bytes[..bytes.len() - 1]), Err(Error::Protocol(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_params(&extra), Err(Error::Protocol(_))));
        let mut bad_dtype = bytes;
        bad_dtype[4 + 2 + 8] = 7;
        assert!(matches!(decode_params(&bad_dtype), Err(Error::Protocol(_))));
    }

    #[test]
    fn predict_payloads_round_trip() {
        let req = PredictRequest {
            train_features: Array2::from_shape_fn((3, 2), |(i, j)| i as f64 - j as f64 * 0.5),
            train_labels: vec![0, 2, 1],
            query_features: Array2::from_shape_fn((2, 2), |(i, j)| (i * j) as f64),
        };
        assert_eq!(PredictRequest::decode(&req.encode().unwrap()).unwrap(), req);
        let probs = Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64 / 4.0);
        assert_eq!(decode_predictions(&encode_predictions(&probs).unwrap()).unwrap(), probs);
    }

    proptest! {
        #[test]
        fn random_sets_round_trip(
            shapes in prop::collection::vec(prop::collection::vec(1usize..4, 1..4), 0..5),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let tensors = shapes.into_iter().enumerate().map(|(i, shape)| {
                let n = shape.iter().product();
                let values = (0..n).map(|_| f64::from_bits(rng.gen::<u64>() & !(0x7FF << 52)) + rng.gen::<f64>()).collect();
                Tensor::new(format!("t{i}"), shape, values).unwrap()
            }).collect();
            let p = ParameterSet::new(tensors).unwrap();
            prop_assert!(decode_params(&encode_params(&p, WireDtype::F64).unwrap()).unwrap().bit_eq(&p));
        }
    }
}
