//! Binary checkpoint: magic bytes, a little-endian `u64` header length, a JSON
//! header, then every tensor as little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderConfig, WeightOrigin};
use super::graph::Matrix;
use super::params::ParamSet;

const MAGIC: &[u8; 8] = b"PHSCKPT1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint file")]
    BadMagic { path: String },
    #[error("{path}: corrupt header: {reason}")]
    BadHeader { path: String, reason: String },
    #[error("{path}: {reason}")]
    Incompatible { path: String, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    set: String,
    group: u16,
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    #[serde(default)]
    vocab: Option<Vec<String>>,
    #[serde(default)]
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// An encoder plus any named head parameter sets and the tokenizer vocabulary.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub heads: Vec<(String, ParamSet)>,
    pub vocab: Option<Vec<String>>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn head(&self, name: &str) -> Option<&ParamSet> {
        self.heads.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut sets: Vec<(&str, &ParamSet)> = vec![("encoder", &self.encoder.params)];
        sets.extend(self.heads.iter().map(|(n, p)| (n.as_str(), p)));
        let mut tensors = Vec::new();
        for (set, params) in &sets {
            for (name, m) in params.iter() {
                tensors.push(TensorEntry {
                    set: set.to_string(),
                    group: params.group(),
                    name: name.to_string(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                });
            }
        }
        let header = Header {
            encoder: self.encoder.config.clone(),
            vocab: self.vocab.clone(),
            metadata: self.metadata.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        f.write_all(MAGIC).map_err(io)?;
        f.write_all(&(json.len() as u64).to_le_bytes())
            .map_err(io)?;
        f.write_all(&json).map_err(io)?;
        for (_, params) in &sets {
            for (_, m) in params.iter() {
                for x in m.iter() {
                    f.write_all(&x.to_le_bytes()).map_err(io)?;
                }
            }
        }
        f.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let p = path.display().to_string();
        let io = |source| CheckpointError::Io {
            path: p.clone(),
            source,
        };
        let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
        let mut magic = [0u8; 8];
        if f.read_exact(&mut magic).is_err() || &magic != MAGIC {
            return Err(CheckpointError::BadMagic { path: p });
        }
        let mut len = [0u8; 8];
        f.read_exact(&mut len).map_err(io)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 64 << 20 {
            return Err(CheckpointError::BadHeader {
                path: p,
                reason: format!("header length {len} is implausible"),
            });
        }
        let mut json = vec![0u8; len];
        f.read_exact(&mut json).map_err(io)?;
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| CheckpointError::BadHeader {
                path: p.clone(),
                reason: e.to_string(),
            })?;

        let mut sets: Vec<(String, ParamSet)> = Vec::new();
        let mut buf = [0u8; 8];
        for t in &header.tensors {
            if sets.last().map(|(n, _)| n != &t.set).unwrap_or(true) {
                sets.push((t.set.clone(), ParamSet::new(t.group)));
            }
            let mut m = Matrix::zeros((t.rows, t.cols));
            for x in m.iter_mut() {
                f.read_exact(&mut buf).map_err(io)?;
                *x = f64::from_le_bytes(buf);
            }
            sets.last_mut()
                .expect("set pushed")
                .1
                .add(t.name.clone(), m);
        }
        let mut iter = sets.into_iter();
        let (first, enc_params) = iter.next().ok_or_else(|| CheckpointError::BadHeader {
            path: p.clone(),
            reason: "no tensors".into(),
        })?;
        if first != "encoder" {
            return Err(CheckpointError::BadHeader {
                path: p,
                reason: format!("first tensor set is `{first}`, expected `encoder`"),
            });
        }
        let encoder = Encoder::from_params(
            header.encoder,
            enc_params,
            WeightOrigin::Checkpoint(p.clone()),
        )
        .map_err(|reason| CheckpointError::Incompatible {
            path: p.clone(),
            reason,
        })?;
        if let Some(v) = &header.vocab {
            if v.len() != encoder.config.vocab_size {
                return Err(CheckpointError::Incompatible {
                    path: p,
                    reason: format!(
                        "vocabulary has {} tokens but the embedding table has {} rows",
                        v.len(),
                        encoder.config.vocab_size
                    ),
                });
            }
        }
        Ok(Checkpoint {
            encoder,
            heads: iter.collect(),
            vocab: header.vocab,
            metadata: header.metadata,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let enc = Encoder::random(EncoderConfig::small(7, 8, 1, 5), 1);
        let mut head = ParamSet::new(9);
        head.add("w", ndarray::array![[1.5, -2.0]]);
        let ck = Checkpoint {
            encoder: enc.clone(),
            heads: vec![("head".into(), head.clone())],
            vocab: Some((0..7).map(|i| format!("t{i}")).collect()),
            metadata: serde_json::json!({"step": 3}),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.encoder.params, enc.params);
        assert_eq!(back.head("head"), Some(&head));
        assert_eq!(back.metadata["step"], 3);
        assert!(!back.encoder.is_random_init());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"hello world, not a model").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::BadMagic { .. })
        ));
    }
}
