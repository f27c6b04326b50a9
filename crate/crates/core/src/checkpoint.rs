//! Project-wide checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SLIMCKPT1"            9-byte magic
//! u64                     length of the metadata block in bytes
//! metadata                UTF-8 JSON: {"config", "step", "links", "tensors": [{"name", "shape"}]}
//! payload                 for each tensor in directory order: row-major f32 values
//! ```
//!
//! `links` carries string references to other artifacts, e.g. the SHA-256 of
//! the low-level checkpoint a high-level controller was trained against.
//! Encoding a decoded checkpoint reproduces the original bytes exactly.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SlimError};
use crate::funcapprox::{Activation, GaussianPolicy, HeadKind, Layer, Network, PowerIteration};

pub const MAGIC: &[u8; 9] = b"SLIMCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    config: serde_json::Value,
    step: u64,
    links: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub step: u64,
    pub links: BTreeMap<String, String>,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(config: serde_json::Value, step: u64) -> Self {
        Checkpoint {
            config,
            step,
            links: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: impl IntoIterator<Item = f64>) {
        let data: Vec<f32> = values.into_iter().map(|v| v as f32).collect();
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let name = name.into();
        self.tensors.retain(|(n, _)| *n != name);
        self.tensors.push((name, Tensor { shape, data }));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| SlimError::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n.starts_with(prefix))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            config: self.config.clone(),
            step: self.step,
            links: self.links.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let meta_bytes = serde_json::to_vec(&meta).map_err(|e| SlimError::Checkpoint(e.to_string()))?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.data.len() * 4).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + meta_bytes.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta_bytes);
        for (_, t) in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| SlimError::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut off = MAGIC.len();
        let meta_len = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
        off += 8;
        let meta_end = off
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta: Metadata =
            serde_json::from_slice(&bytes[off..meta_end]).map_err(|e| SlimError::Checkpoint(e.to_string()))?;
        off = meta_end;
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for entry in meta.tensors {
            let n: usize = entry.shape.iter().product();
            let end = off
                .checked_add(n * 4)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| bad("truncated payload"))?;
            let data = bytes[off..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            off = end;
            tensors.push((
                entry.name,
                Tensor {
                    shape: entry.shape,
                    data,
                },
            ));
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Checkpoint {
            config: meta.config,
            step: meta.step,
            links: meta.links,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.encode()?;
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| SlimError::io(dir, e))?;
            }
        }
        std::fs::write(path, &bytes).map_err(|e| SlimError::io(path, e))?;
        Ok(digest(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| SlimError::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Store a network as `{prefix}.l{i}.weight|bias` (plus `.u`/`.v` for
    /// spectral layers).
    pub fn put_network(&mut self, prefix: &str, net: &Network) {
        for (i, l) in net.layers.iter().enumerate() {
            let (r, c) = l.weight.dim();
            self.insert(format!("{prefix}.l{i}.weight"), vec![r, c], l.weight.iter().copied());
            self.insert(format!("{prefix}.l{i}.bias"), vec![r], l.bias.iter().copied());
            if let Some(p) = &l.spectral {
                self.insert(format!("{prefix}.l{i}.u"), vec![r], p.u.iter().copied());
                self.insert(format!("{prefix}.l{i}.v"), vec![c], p.v.iter().copied());
            }
        }
    }

    /// Inverse of [`Checkpoint::put_network`]; hidden layers are tanh, the
    /// last is identity.
    pub fn get_network(&self, prefix: &str) -> Result<Network> {
        let mut layers = Vec::new();
        let mut i = 0;
        while let Some(w) = self.get(&format!("{prefix}.l{i}.weight")) {
            if w.shape.len() != 2 {
                return Err(SlimError::Checkpoint(format!("{prefix}.l{i}.weight is not a matrix")));
            }
            let weight = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.iter().map(|&v| v as f64).collect())
                .map_err(|e| SlimError::Checkpoint(e.to_string()))?;
            let b = self.require(&format!("{prefix}.l{i}.bias"))?;
            SlimError::check_dim(w.shape[0], b.data.len())?;
            let bias = Array1::from_iter(b.data.iter().map(|&v| v as f64));
            let spectral = match (
                self.get(&format!("{prefix}.l{i}.u")),
                self.get(&format!("{prefix}.l{i}.v")),
            ) {
                (Some(u), Some(v)) => Some(PowerIteration {
                    u: Array1::from_iter(u.data.iter().map(|&x| x as f64)),
                    v: Array1::from_iter(v.data.iter().map(|&x| x as f64)),
                }),
                _ => None,
            };
            if let Some(prev) = layers.last() {
                let prev: &Layer = prev;
                SlimError::check_dim(prev.out_dim(), weight.ncols())?;
            }
            layers.push(Layer {
                weight,
                bias,
                activation: Activation::Tanh,
                spectral,
            });
            i += 1;
        }
        match layers.last_mut() {
            Some(l) => l.activation = Activation::Identity,
            None => return Err(SlimError::Checkpoint(format!("no network under {prefix}"))),
        }
        Ok(Network { layers })
    }

    pub fn put_policy(&mut self, prefix: &str, p: &GaussianPolicy) {
        self.put_network(&format!("{prefix}.net"), &p.net);
        self.insert(
            format!("{prefix}.log_std"),
            vec![p.log_std.len()],
            p.log_std.iter().copied(),
        );
        self.insert(
            format!("{prefix}.head"),
            vec![2],
            [
                if p.head == HeadKind::Squashed { 1.0 } else { 0.0 },
                if p.gripper { 1.0 } else { 0.0 },
            ],
        );
    }

    pub fn get_policy(&self, prefix: &str) -> Result<GaussianPolicy> {
        let net = self.get_network(&format!("{prefix}.net"))?;
        let log_std: Vec<f64> = self
            .require(&format!("{prefix}.log_std"))?
            .data
            .iter()
            .map(|&v| v as f64)
            .collect();
        let head = &self.require(&format!("{prefix}.head"))?.data;
        let kind = if head[0] > 0.5 {
            HeadKind::Squashed
        } else {
            HeadKind::Gaussian
        };
        let gripper = head[1] > 0.5;
        let n = log_std.len();
        let mut p = GaussianPolicy::new(net, n, kind, gripper, 0.0)?;
        p.log_std = log_std;
        Ok(p)
    }
}

/// Hex SHA-256 of a byte string.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| SlimError::io(path, e))?;
    Ok(digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn sample() -> Checkpoint {
        let mut rng = rng_from_seed(0);
        let mut c = Checkpoint::new(serde_json::json!({"variant": "slim", "lr": 3e-4}), 42);
        let net = Network::mlp(&[3, 5, 2], 1.0, &mut rng).with_spectral_norm(3, &mut rng);
        c.put_network("phi", &net);
        c.links.insert("parent".into(), "abc".into());
        c
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let bytes = c.encode().unwrap();
        assert_eq!(&bytes[..9], b"SLIMCKPT1");
        let d = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(d, c);
        assert_eq!(d.encode().unwrap(), bytes);
    }

    #[test]
    fn network_survives_at_f32_precision() {
        let c = sample();
        let net = Checkpoint::decode(&c.encode().unwrap())
            .unwrap()
            .get_network("phi")
            .unwrap();
        assert_eq!(net.layers.len(), 2);
        assert!(net.is_spectral());
        assert_eq!(net.layers[1].activation, Activation::Identity);
        let again = {
            let mut c2 = Checkpoint::new(c.config.clone(), c.step);
            c2.put_network("phi", &net);
            c2.links = c.links.clone();
            c2
        };
        assert_eq!(again.encode().unwrap(), c.encode().unwrap());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::decode(&long).is_err());
        assert!(sample().get_network("missing").is_err());
    }
}
