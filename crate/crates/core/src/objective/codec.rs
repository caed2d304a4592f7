//! Dense arrays as `{ "shape": [...], "data": "<base64 little-endian f64>" }`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Packed {
    shape: Vec<usize>,
    data: String,
}

fn encode(values: impl Iterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

fn decode<E: serde::de::Error>(data: &str, expected: usize) -> Result<Vec<f64>, E> {
    let bytes = STANDARD.decode(data).map_err(E::custom)?;
    if bytes.len() != expected * 8 {
        return Err(E::custom(format!(
            "payload holds {} bytes, shape needs {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let (r, c) = m.dim();
        Packed {
            shape: vec![r, c],
            data: encode(m.iter().copied()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let p = Packed::deserialize(d)?;
        let [r, c] = p.shape[..] else {
            return Err(D::Error::custom("matrix shape must have two entries"));
        };
        let values = decode::<D::Error>(&p.data, r * c)?;
        Array2::from_shape_vec((r, c), values).map_err(D::Error::custom)
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        Packed {
            shape: vec![v.len()],
            data: encode(v.iter().copied()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        let p = Packed::deserialize(d)?;
        let [n] = p.shape[..] else {
            return Err(D::Error::custom("vector shape must have one entry"));
        };
        Ok(Array1::from(decode::<D::Error>(&p.data, n)?))
    }
}
