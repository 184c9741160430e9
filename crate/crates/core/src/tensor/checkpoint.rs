//! Versioned checkpoint files.
//!
//! Line 1 is a header record; every following line is one tensor record with
//! its name, shape and values. The header carries an FNV-1a 64 hash of the
//! canonical serialization (header with an empty hash field, then each tensor
//! line), checked on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lora::{LoraAdapter, LoraLayer};
use super::mlp::{Activation, Linear, MlpConfig, MlpModel};
use super::Tensor;
use crate::error::{Error, Result};
use crate::seed::Fnv1a;
use crate::textio::{from_line, to_line, write_atomic};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub label: String,
    pub train_steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model: MlpModel,
    pub adapter: Option<LoraAdapter>,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct LoraHeader {
    rank: usize,
    alpha: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    latent_dim: usize,
    cond_dim: usize,
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    merged: bool,
    lora: Option<LoraHeader>,
    seed: u64,
    label: String,
    train_steps: u64,
    content_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl ModelCheckpoint {
    pub fn new(model: MlpModel, adapter: Option<LoraAdapter>, meta: CheckpointMeta) -> Self {
        ModelCheckpoint { model, adapter, meta }
    }

    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.model.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), &l.weight));
            out.push((format!("layer{i}.bias"), &l.bias));
        }
        if let Some(ad) = &self.adapter {
            for (i, l) in ad.layers.iter().enumerate() {
                out.push((format!("lora{i}.a"), &l.a));
                out.push((format!("lora{i}.b"), &l.b));
            }
        }
        out
    }

    fn header(&self, hash: String) -> Header {
        Header {
            format_version: CHECKPOINT_VERSION,
            latent_dim: self.model.config.latent_dim,
            cond_dim: self.model.config.cond_dim,
            layer_dims: self.model.config.layer_dims(),
            activations: self.model.layers.iter().map(|l| l.activation).collect(),
            merged: self.model.merged,
            lora: self.adapter.as_ref().map(|a| LoraHeader {
                rank: a.rank,
                alpha: a.alpha,
            }),
            seed: self.meta.seed,
            label: self.meta.label.clone(),
            train_steps: self.meta.train_steps,
            content_hash: hash,
        }
    }

    fn body_lines(&self) -> Result<Vec<String>> {
        self.tensors()
            .into_iter()
            .map(|(name, t)| {
                to_line(&TensorRecord {
                    name,
                    shape: t.shape().to_vec(),
                    values: t.values().to_vec(),
                })
            })
            .collect()
    }

    fn hash_of(header_line: &str, body: &[String]) -> u64 {
        let mut h = Fnv1a::default();
        h.update(header_line.as_bytes());
        h.update(b"\n");
        for line in body {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        h.finish()
    }

    /// FNV-1a 64 over the canonical serialization.
    pub fn content_hash(&self) -> Result<u64> {
        let canon = to_line(&self.header(String::new()))?;
        Ok(Self::hash_of(&canon, &self.body_lines()?))
    }

    pub fn to_text(&self) -> Result<String> {
        let body = self.body_lines()?;
        let canon = to_line(&self.header(String::new()))?;
        let hash = Self::hash_of(&canon, &body);
        let mut out = to_line(&self.header(format!("{hash:016x}")))?;
        out.push('\n');
        for line in body {
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| Error::corruption("empty checkpoint"))?;
        let probe: VersionProbe = from_line(first)?;
        if probe.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: probe.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header: Header = from_line(first)?;
        let body: Vec<String> = lines.map(str::to_owned).collect();
        let canon = to_line(&Header {
            content_hash: String::new(),
            ..from_line::<Header>(first)?
        })?;
        let hash = Self::hash_of(&canon, &body);
        if format!("{hash:016x}") != header.content_hash {
            return Err(Error::corruption(format!(
                "content hash mismatch: header says {}, content hashes to {hash:016x}",
                header.content_hash
            )));
        }
        let mut records = body
            .iter()
            .map(|l| from_line::<TensorRecord>(l))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = |expect: String| -> Result<Tensor> {
            let r = records
                .next()
                .ok_or_else(|| Error::corruption(format!("missing tensor {expect}")))?;
            if r.name != expect {
                return Err(Error::corruption(format!("expected tensor {expect}, found {}", r.name)));
            }
            Tensor::new(r.shape, r.values).map_err(|e| Error::corruption(e.to_string()))
        };
        let dims = &header.layer_dims;
        if dims.len() < 2 || header.activations.len() + 1 != dims.len() {
            return Err(Error::corruption("bad layer dims"));
        }
        let config = MlpConfig {
            latent_dim: header.latent_dim,
            cond_dim: header.cond_dim,
            hidden: dims[1..dims.len() - 1].to_vec(),
        };
        if config.layer_dims() != *dims {
            return Err(Error::corruption("layer dims disagree with latent/cond dims"));
        }
        let mut layers = Vec::new();
        for (i, act) in header.activations.iter().enumerate() {
            layers.push(Linear {
                weight: next(format!("layer{i}.weight"))?,
                bias: next(format!("layer{i}.bias"))?,
                activation: *act,
            });
        }
        let model = MlpModel {
            config,
            layers,
            merged: header.merged,
        };
        model.validate().map_err(|e| Error::corruption(e.to_string()))?;
        let adapter = match &header.lora {
            Some(lh) => {
                let mut ls = Vec::new();
                for i in 0..model.layers.len() {
                    ls.push(LoraLayer {
                        a: next(format!("lora{i}.a"))?,
                        b: next(format!("lora{i}.b"))?,
                    });
                }
                let ad = LoraAdapter {
                    rank: lh.rank,
                    alpha: lh.alpha,
                    layers: ls,
                };
                ad.check_compatible(&model).map_err(|e| Error::corruption(e.to_string()))?;
                Some(ad)
            }
            None => None,
        };
        if records.next().is_some() {
            return Err(Error::corruption("trailing tensor records"));
        }
        Ok(ModelCheckpoint {
            model,
            adapter,
            meta: CheckpointMeta {
                seed: header.seed,
                label: header.label,
                train_steps: header.train_steps,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}
