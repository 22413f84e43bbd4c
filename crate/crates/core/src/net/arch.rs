//! Architecture parameters, module sampling and finalization.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_vec;
use crate::error::{Error, Result};
use crate::graph::ModuleKind;

const M: usize = ModuleKind::COUNT;

/// Threshold on mixing weights above which a module survives finalization.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Real `layers × 8` matrix of per-layer module logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureParams {
    layers: usize,
    alpha: Vec<f64>,
}

impl ArchitectureParams {
    pub fn new(layers: usize, alpha: Vec<f64>) -> Result<Self> {
        if layers == 0 || alpha.len() != layers * M {
            return Err(Error::Config(format!(
                "architecture needs {layers}x{M} = {} entries, got {}",
                layers * M,
                alpha.len()
            )));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("architecture parameters must be finite".into()));
        }
        Ok(ArchitectureParams { layers, alpha })
    }

    /// All-zero logits: uniform mixing over the eight modules.
    pub fn uniform(layers: usize) -> Self {
        ArchitectureParams {
            layers,
            alpha: vec![0.0; layers * M],
        }
    }

    /// `+hot` on `kind` and `-hot` elsewhere in every layer.
    pub fn one_hot(layers: usize, kind: ModuleKind, hot: f64) -> Self {
        let alpha = (0..layers * M)
            .map(|i| if i % M == kind.index() { hot } else { -hot })
            .collect();
        ArchitectureParams { layers, alpha }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }

    pub fn row(&self, layer: usize) -> &[f64] {
        &self.alpha[layer * M..(layer + 1) * M]
    }

    /// Softmax of one layer's logits.
    pub fn mixing_weights(&self, layer: usize) -> [f64; M] {
        mixing_weights(self.row(layer))
    }

    pub fn all_mixing_weights(&self) -> Vec<[f64; M]> {
        (0..self.layers).map(|l| self.mixing_weights(l)).collect()
    }
}

/// Softmax over an 8-entry logit row.
pub fn mixing_weights(row: &[f64]) -> [f64; M] {
    assert_eq!(row.len(), M, "module row must have {M} entries");
    let w = softmax_vec(row);
    let mut out = [0.0; M];
    out.copy_from_slice(&w);
    out
}

/// Draw one module with probabilities `softmax(alpha_row)`.
pub fn sample_active_module<R: Rng + ?Sized>(alpha_row: &[f64], rng: &mut R) -> ModuleKind {
    let w = mixing_weights(alpha_row);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            return ModuleKind::ALL[i];
        }
    }
    // u landed in the rounding slack above the cumulative sum.
    let last = w.iter().rposition(|&p| p > 0.0).unwrap_or(M - 1);
    ModuleKind::ALL[last]
}

/// Per-layer module subsets of a searched network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizedArchitecture {
    layers: Vec<Vec<ModuleKind>>,
}

impl FinalizedArchitecture {
    pub fn new(layers: Vec<Vec<ModuleKind>>) -> Result<Self> {
        if let Some(i) = layers.iter().position(|l| l.is_empty()) {
            return Err(Error::Config(format!("layer {} has no active module", i + 1)));
        }
        let layers = layers
            .into_iter()
            .map(|mut l| {
                l.sort();
                l.dedup();
                l
            })
            .collect();
        Ok(FinalizedArchitecture { layers })
    }

    /// The same single module at every layer.
    pub fn single(layers: usize, kind: ModuleKind) -> Self {
        FinalizedArchitecture {
            layers: vec![vec![kind]; layers],
        }
    }

    pub fn layers(&self) -> &[Vec<ModuleKind>] {
        &self.layers
    }

    pub fn contains(&self, layer: usize, kind: ModuleKind) -> bool {
        self.layers[layer].contains(&kind)
    }
}

/// Keep modules whose weight strictly exceeds `threshold` in each row.
pub fn finalize_architecture(weights: &[[f64; M]], threshold: f64) -> Result<FinalizedArchitecture> {
    let mut layers = Vec::with_capacity(weights.len());
    for (l, row) in weights.iter().enumerate() {
        let chosen: Vec<ModuleKind> = row
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > threshold)
            .map(|(i, _)| ModuleKind::ALL[i])
            .collect();
        if chosen.is_empty() {
            return Err(Error::Config(format!(
                "no module of layer {} exceeds threshold {threshold}; lower the threshold",
                l + 1
            )));
        }
        layers.push(chosen);
    }
    FinalizedArchitecture::new(layers)
}

/// One layer of the exported architecture document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub index: usize,
    pub weights: BTreeMap<String, f64>,
    pub selected: Vec<String>,
}

/// JSON form of a searched architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDoc {
    pub layers: Vec<LayerRecord>,
    pub threshold: f64,
}

impl ArchitectureDoc {
    /// Finalize `weights` at `threshold` and record both.
    pub fn from_weights(weights: &[[f64; M]], threshold: f64) -> Result<Self> {
        let finalized = finalize_architecture(weights, threshold)?;
        let layers = weights
            .iter()
            .zip(finalized.layers())
            .enumerate()
            .map(|(index, (row, sel))| LayerRecord {
                index,
                weights: ModuleKind::ALL
                    .iter()
                    .zip(row)
                    .map(|(k, &w)| (k.name().to_string(), w))
                    .collect(),
                selected: sel.iter().map(|k| k.name().to_string()).collect(),
            })
            .collect();
        Ok(ArchitectureDoc { layers, threshold })
    }

    pub fn from_params(params: &ArchitectureParams, threshold: f64) -> Result<Self> {
        Self::from_weights(&params.all_mixing_weights(), threshold)
    }

    /// Per-layer weight rows in module order.
    pub fn weights(&self) -> Result<Vec<[f64; M]>> {
        self.layers
            .iter()
            .map(|l| {
                let mut row = [0.0; M];
                for (k, slot) in ModuleKind::ALL.iter().zip(row.iter_mut()) {
                    *slot = *l.weights.get(k.name()).ok_or_else(|| {
                        Error::Config(format!("layer {} lacks a weight for {k}", l.index))
                    })?;
                }
                Ok(row)
            })
            .collect()
    }

    /// The recorded `selected` lists, validated.
    pub fn finalized(&self) -> Result<FinalizedArchitecture> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.index != i {
                return Err(Error::Config(format!(
                    "layer records out of order: position {i} has index {}",
                    l.index
                )));
            }
        }
        let layers = self
            .layers
            .iter()
            .map(|l| l.selected.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        FinalizedArchitecture::new(layers)
    }

    /// Re-run finalization on the stored weights at a new threshold.
    pub fn refinalize(&self, threshold: f64) -> Result<Self> {
        Self::from_weights(&self.weights()?, threshold)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ArchitectureDoc = serde_json::from_str(text)?;
        doc.weights()?;
        doc.finalized()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
