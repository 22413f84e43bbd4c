//! Per-sample correlation graphs computed from node embeddings.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Binder, Init, ParamId, ParamStore};

/// Which projections embed the nodes before correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DynamicMode {
    /// 1×1 channel projections.
    Spatial,
    /// `k×1` temporal convolutions.
    Temporal,
    /// A 1×1 projection followed by a `k×1` temporal convolution.
    SpatioTemporal,
}

/// Produces a row-stochastic `B×V×V` graph from `B×C×T×V` features:
/// `A(i, j) = softmax_j(⟨φ(v_i), ψ(v_j)⟩ / (E·T))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicGraphGenerator {
    mode: DynamicMode,
    in_channels: usize,
    embed_dim: usize,
    temporal_kernel: usize,
    double_softmax: bool,
    phi: Vec<ParamId>,
    psi: Vec<ParamId>,
}

impl DynamicGraphGenerator {
    /// Embedding width used for a module with `out_channels` outputs.
    pub fn default_embed_dim(out_channels: usize) -> usize {
        (out_channels / 4).max(4)
    }

    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        mode: DynamicMode,
        in_channels: usize,
        embed_dim: usize,
        temporal_kernel: usize,
    ) -> Result<Self> {
        if embed_dim == 0 {
            return Err(Error::Contract("dynamic graph embed_dim must be positive".into()));
        }
        if in_channels == 0 {
            return Err(Error::Contract("dynamic graph needs input channels".into()));
        }
        if temporal_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "temporal kernel {temporal_kernel} must be odd"
            )));
        }
        let (c, e, k) = (in_channels, embed_dim, temporal_kernel);
        let layers: Vec<(usize, usize, usize)> = match mode {
            DynamicMode::Spatial => vec![(c, e, 1)],
            DynamicMode::Temporal => vec![(c, e, k)],
            DynamicMode::SpatioTemporal => vec![(c, e, 1), (e, e, k)],
        };
        let mut make = |branch: &str| -> Result<Vec<ParamId>> {
            layers
                .iter()
                .enumerate()
                .map(|(i, &(cin, cout, kt))| {
                    store.add(
                        &format!("{prefix}.{branch}.{i}"),
                        &[cout, cin, kt, 1],
                        Init::He { fan_in: cin * kt },
                    )
                })
                .collect()
        };
        let phi = make("phi")?;
        let psi = make("psi")?;
        Ok(DynamicGraphGenerator {
            mode,
            in_channels,
            embed_dim,
            temporal_kernel,
            double_softmax: false,
            phi,
            psi,
        })
    }

    /// Apply softmax a second time to the normalized scores.
    pub fn with_double_softmax(mut self, flag: bool) -> Self {
        self.double_softmax = flag;
        self
    }

    pub fn mode(&self) -> DynamicMode {
        self.mode
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn temporal_kernel(&self) -> usize {
        self.temporal_kernel
    }

    pub fn phi(&self) -> &[ParamId] {
        &self.phi
    }

    pub fn psi(&self) -> &[ParamId] {
        &self.psi
    }

    fn embed(&self, b: &mut Binder, x: Var, layers: &[ParamId]) -> Result<Var> {
        let mut h = x;
        for &w in layers {
            let wv = b.var(w);
            let kt = b.tape.shape(wv)[2];
            h = b.tape.conv2d(h, wv, 1, (kt - 1) / 2)?;
        }
        Ok(h)
    }

    /// Correlation graph for a `B×C×T×V` batch.
    pub fn forward(&self, b: &mut Binder, x: Var) -> Result<Var> {
        let shape = b.tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::dim(format!(
                "dynamic graph expects [B, {}, T, V], got {shape:?}",
                self.in_channels
            )));
        }
        let (batch, t, v) = (shape[0], shape[2], shape[3]);
        let phi = self.embed(b, x, &self.phi)?;
        let psi = self.embed(b, x, &self.psi)?;
        let rows = self.embed_dim * t;
        let phi = b.tape.reshape(phi, &[batch, rows, v])?;
        let psi = b.tape.reshape(psi, &[batch, rows, v])?;
        let logits = b.tape.matmul_ex(phi, psi, true, false)?;
        let logits = b.tape.scale(logits, 1.0 / rows as f64)?;
        let mut graph = b.tape.softmax(logits, 2)?;
        if self.double_softmax {
            graph = b.tape.softmax(graph, 2)?;
        }
        Ok(graph)
    }
}
