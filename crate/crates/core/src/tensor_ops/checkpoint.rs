//! Checkpoint file: the bytes `PDEQ1`, a little-endian `u32` header length,
//! a JSON header, then every tensor as little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, Normalization};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"PDEQ1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Group spec, seed and architecture live in the config.
    pub config: ModelConfig,
    pub normalization: Normalization,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn of(model: &Model) -> Self {
        Checkpoint {
            config: model.config.clone(),
            normalization: model.normalization,
            tensors: model.tensors().into_iter().map(|(name, t)| TensorEntry { name, len: t.len() }).collect(),
        }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model) -> Result<()> {
    let header = serde_json::to_vec(&Checkpoint::of(model))?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, t) in model.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let truncated = |what: &str| Error::Checkpoint(format!("truncated {what}"));
    if bytes.len() < MAGIC.len() + 4 {
        return Err(truncated("preamble"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a PDEQ1 checkpoint".into()));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = &bytes[9..];
    if body.len() < hlen {
        return Err(truncated("header"));
    }
    let header: Checkpoint = serde_json::from_slice(&body[..hlen])?;
    let mut model = Model::new(header.config.clone())?;
    model.normalization = header.normalization;
    let expected = Checkpoint::of(&model).tensors;
    if expected != header.tensors {
        return Err(Error::Checkpoint("tensor layout does not match the configured architecture".into()));
    }
    let mut blob = body[hlen..].chunks_exact(8);
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(blob.next().ok_or_else(|| truncated("parameters"))?.try_into().expect("8 bytes"));
        }
    }
    if blob.next().is_some() || !blob.remainder().is_empty() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(model)
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(std::io::BufWriter::new(std::fs::File::create(path)?), self)
    }

    pub fn load(path: &Path) -> Result<Model> {
        read_checkpoint(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group2d::GroupSpec;

    fn model() -> Model {
        let mut c = ModelConfig::desk_pdo(GroupSpec::new(4, true), 3, 7);
        c.widths = vec![2, 3];
        let mut m = Model::new(c).unwrap();
        m.normalization = Normalization { mean: 0.1 + 0.2, std: 1.0 / 3.0 };
        for (i, t) in m.tensors_mut().into_iter().enumerate() {
            t[0] = i as f64 * 0.1 - 1.0 / 3.0;
        }
        m
    }

    #[test]
    fn round_trip_is_identity() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m).unwrap();
        assert_eq!(&buf[..5], b"PDEQ1");
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.normalization, m.normalization);
        assert_eq!(back.tensors(), m.tensors());
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_damage() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model()).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        assert!(read_checkpoint(&buf[..4]).is_err());
    }
}
