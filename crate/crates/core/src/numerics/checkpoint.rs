//! Checkpoint files: one line of JSON header, then the raw little-endian
//! `f64` data of every tensor, concatenated in header order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

pub const FORMAT: &str = "histyle-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(params: &ParamStore) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        dtype: "f64".into(),
        step: params.step(),
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(reader: impl Read) -> Result<ParamStore> {
    let mut reader = BufReader::new(reader);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    if header.dtype != "f64" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", header.dtype)));
    }
    let mut params = ParamStore::new();
    let mut buf = [0u8; 8];
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            reader
                .read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("truncated data for {}", entry.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        params.insert(entry.name, Tensor::new(entry.shape, data)?)?;
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    params.set_step(header.step);
    Ok(params)
}

pub fn save(path: &Path, params: &ParamStore) -> Result<()> {
    let bytes = encode(params)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    decode(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng::new(2);
        let mut p = ParamStore::new();
        p.insert("b", Tensor::randn(&[3], 1.0, &mut rng)).unwrap();
        p.insert("a.w", Tensor::randn(&[4, 5], 1.0, &mut rng)).unwrap();
        p.set_step(17);
        let bytes = encode(&p).unwrap();
        let q = decode(bytes.as_slice()).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.step(), 17);
    }

    #[test]
    fn header_then_little_endian_data() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(vec![1.5, -2.0])).unwrap();
        let bytes = encode(&p).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["tensors"][0]["shape"], serde_json::json!([2]));
        assert_eq!(&bytes[nl + 1..nl + 9], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), nl + 1 + 16);
    }

    #[test]
    fn truncated_is_error() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(vec![1.5, -2.0])).unwrap();
        let bytes = encode(&p).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
