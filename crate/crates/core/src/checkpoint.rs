//! Versioned binary model checkpoints.
//!
//! ```text
//! "SGCN1" | u32 version | u32 n | n bytes JSON metadata |
//! u32 tensors | per tensor: u32 name_len, name, u8 ndim, u32 dims*, f64* |
//! u8 has_velocity | per tensor: f64* (same lengths as the parameters)
//! ```
//!
//! Integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::net::{FinalizedArchitecture, NetConfig, Network, NetworkMode};
use crate::optim::OptimizerState;
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 5] = b"SGCN1";
pub const VERSION: u32 = 1;

/// Skeleton description stored alongside the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyRecord {
    pub joints: usize,
    pub edges: Vec<(usize, usize)>,
    pub parent: Option<Vec<Option<usize>>>,
}

impl TopologyRecord {
    pub fn from_topology(t: &SkeletonTopology) -> Self {
        TopologyRecord {
            joints: t.num_joints(),
            edges: t.edges().to_vec(),
            parent: t.parent().map(<[_]>::to_vec),
        }
    }

    pub fn to_topology(&self) -> Result<SkeletonTopology> {
        let t = SkeletonTopology::new(self.joints, self.edges.clone())?;
        match &self.parent {
            Some(p) => t.with_parents(p.clone()),
            None => Ok(t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub net: NetConfig,
    pub topology: TopologyRecord,
    pub architecture: FinalizedArchitecture,
    pub train: TrainConfig,
    /// Epochs completed when the checkpoint was taken.
    pub epochs_done: usize,
}

/// A finalized network's weights, optionally with optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<(String, Tensor)>,
    pub velocity: Option<Vec<Vec<f64>>>,
}

impl Checkpoint {
    pub fn capture(net: &Network, opt: Option<&OptimizerState>, train: &TrainConfig, epochs_done: usize) -> Result<Self> {
        let NetworkMode::Finalized(arch) = net.mode() else {
            return Err(Error::Contract("only finalized networks are checkpointed".into()));
        };
        let store = net.params();
        Ok(Checkpoint {
            meta: CheckpointMeta {
                net: net.config().clone(),
                topology: TopologyRecord::from_topology(net.topology()),
                architecture: arch.clone(),
                train: train.clone(),
                epochs_done,
            },
            params: store
                .names()
                .iter()
                .cloned()
                .zip(store.tensors().iter().cloned())
                .collect(),
            velocity: opt.map(|o| o.velocity().to_vec()),
        })
    }

    /// Rebuild the network and load every stored tensor into it.
    pub fn network(&self) -> Result<Network> {
        let mut net = Network::new(
            self.meta.net.clone(),
            self.meta.topology.to_topology()?,
            NetworkMode::Finalized(self.meta.architecture.clone()),
        )?;
        let store = net.params_mut();
        if store.len() != self.params.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, network has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, t) in &self.params {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Data(format!("checkpoint tensor {name} has no counterpart")))?;
            if store.get(id).shape() != t.shape() {
                return Err(Error::Data(format!(
                    "tensor {name}: checkpoint shape {:?}, network shape {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            store.assign(id, t.data())?;
        }
        Ok(net)
    }

    /// Optimizer for `net` with restored momentum, if saved.
    pub fn optimizer(&self, net: &Network) -> Result<OptimizerState> {
        let mut opt = self.meta.train.optimizer(net)?;
        if let Some(v) = &self.velocity {
            opt.set_velocity(v.clone())?;
        }
        Ok(opt)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        match &self.velocity {
            Some(vel) => {
                out.push(1);
                for v in vel {
                    for &x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            None => out.push(0),
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf, pos: 0 };
        if r.take(5)? != MAGIC {
            return Err(Error::format(0, "bad magic, expected \"SGCN1\""));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(5, format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let at = r.pos;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(n)?).map_err(|e| Error::format(at as u64, e.to_string()))?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::format(at as u64, "tensor name is not UTF-8"))?;
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = r.f64s(numel)?;
            let at = r.pos;
            params.push((name, Tensor::new(shape, data).map_err(|e| Error::format(at as u64, e.to_string()))?));
        }
        let velocity = match r.take(1)?[0] {
            0 => None,
            1 => Some(
                params
                    .iter()
                    .map(|(_, t)| r.f64s(t.numel()))
                    .collect::<Result<Vec<_>>>()?,
            ),
            b => return Err(Error::format(r.pos as u64 - 1, format!("bad velocity flag {b}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::format(
                r.pos as u64,
                format!("{} trailing bytes", buf.len() - r.pos),
            ));
        }
        Ok(Checkpoint { meta, params, velocity })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated checkpoint: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.pos as u64, "tensor too large"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
