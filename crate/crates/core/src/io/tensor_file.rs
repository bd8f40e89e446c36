//! Binary and JSON containers for pattern tensors.
//!
//! Binary layout (little endian): magic `PTSR`, then `u32` version, `n`, `k`
//! and flags (bit 0: stochastic), then `k^n` `f64` values in index order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::PatternTensor;

pub const MAGIC: &[u8; 4] = b"PTSR";
pub const VERSION: u32 = 1;
const FLAG_STOCHASTIC: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn to_bytes(t: &PatternTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.len());
    out.extend_from_slice(MAGIC);
    let flags = if t.is_stochastic() { FLAG_STOCHASTIC } else { 0 };
    for word in [VERSION, t.n() as u32, t.k() as u32, flags] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<PatternTensor> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Parse("not a pattern tensor file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, n, k, flags) = (word(0), word(1) as usize, word(2) as usize, word(3));
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported tensor file version {version}")));
    }
    if n > crate::tensor::MAX_TENSOR_LEAVES || !(2..=16).contains(&k) {
        return Err(Error::Parse(format!("implausible tensor header n={n} k={k}")));
    }
    let len = k.pow(n as u32);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 8 * len {
        return Err(Error::Parse(format!("expected {} payload bytes, found {}", 8 * len, payload.len())));
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let t = PatternTensor::new(n, k, values)?;
    if flags & FLAG_STOCHASTIC != 0 {
        t.into_stochastic()
    } else {
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonEntry {
    pattern: String,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonTensor {
    n: usize,
    k: usize,
    stochastic: bool,
    entries: Vec<JsonEntry>,
}

fn state_char(s: usize, k: usize) -> char {
    if k == 4 {
        crate::DNA[s]
    } else {
        char::from_digit(s as u32, 36).unwrap()
    }
}

/// Debug form listing the nonzero entries by pattern string.
pub fn to_json(t: &PatternTensor) -> String {
    let entries = t
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(x, &value)| JsonEntry {
            pattern: t.pattern_of(x).iter().map(|&s| state_char(s, t.k())).collect(),
            value,
        })
        .collect();
    let doc = JsonTensor { n: t.n(), k: t.k(), stochastic: t.is_stochastic(), entries };
    serde_json::to_string_pretty(&doc).expect("tensor serialises")
}

pub fn from_json(text: &str) -> Result<PatternTensor> {
    let doc: JsonTensor = serde_json::from_str(text)?;
    let mut values = PatternTensor::zeros(doc.n, doc.k)?.into_values();
    for e in &doc.entries {
        let mut idx = 0;
        if e.pattern.chars().count() != doc.n {
            return Err(Error::Parse(format!("pattern {} does not have {} states", e.pattern, doc.n)));
        }
        for c in e.pattern.chars() {
            let s = (0..doc.k)
                .find(|&s| state_char(s, doc.k) == c.to_ascii_uppercase() || state_char(s, doc.k) == c)
                .ok_or_else(|| Error::Parse(format!("unknown state '{c}'")))?;
            idx = idx * doc.k + s;
        }
        values[idx] = e.value;
    }
    let t = PatternTensor::new(doc.n, doc.k, values)?;
    if doc.stochastic {
        t.into_stochastic()
    } else {
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let mut v: Vec<f64> = (0..64).map(|i| i as f64 / 2016.0).collect();
        v[0] = v[3];
        v[3] = -0.0;
        let t = PatternTensor::new(3, 4, v).unwrap().into_stochastic().unwrap();
        let bytes = to_bytes(&t);
        assert_eq!(&bytes[..4], b"PTSR");
        assert_eq!(bytes.len(), 20 + 64 * 8);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert!(back.is_stochastic());
        assert!(from_bytes(&bytes[..100]).is_err());
        assert!(from_bytes(b"nope").is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = PatternTensor::diagonal(2, 4).unwrap();
        let text = to_json(&t);
        assert!(text.contains("\"GG\""));
        assert_eq!(from_json(&text).unwrap(), t);
    }
}
