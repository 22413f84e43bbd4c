//! The ten-block searchable spatial-temporal GCN.
//!
//! Each block aggregates its graph function modules, then applies a 1×1
//! spatial convolution (`Conv_S` + BN + ReLU) and a `9×1` temporal
//! convolution (`Conv_T` + BN), adds a residual branch and a final ReLU.
//! Bodies are folded into the batch axis and averaged after global
//! pooling, before the fully connected head.

mod arch;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use arch::{
    finalize_architecture, mixing_weights, sample_active_module, ArchitectureDoc, ArchitectureParams,
    FinalizedArchitecture, LayerRecord, DEFAULT_THRESHOLD,
};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::graph::{apply_module, ChebBasis, DynamicGraphGenerator, GraphSet, ModuleKind, SkeletonTopology};
use crate::params::{apply_bn_updates, Binder, BnUpdate, Init, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const STANDARD_CHANNELS: [usize; 10] = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256];
pub const STANDARD_STRIDES: [usize; 10] = [1, 1, 1, 1, 2, 1, 1, 2, 1, 1];
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Shape and graph options of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub temporal_kernel: usize,
    #[serde(default)]
    pub cheb_basis: ChebBasis,
    #[serde(default)]
    pub double_softmax: bool,
    pub seed: u64,
}

impl NetConfig {
    /// Ten blocks, 64→256 channels, stride 2 at blocks 5 and 8.
    pub fn standard(num_classes: usize) -> Self {
        NetConfig {
            num_classes,
            in_channels: 3,
            channels: STANDARD_CHANNELS.to_vec(),
            strides: STANDARD_STRIDES.to_vec(),
            temporal_kernel: 9,
            cheb_basis: ChebBasis::Chebyshev,
            double_softmax: false,
            seed: 0,
        }
    }

    /// Divide every block width by `divisor` (at least one channel).
    pub fn with_width_divisor(mut self, divisor: usize) -> Self {
        let d = divisor.max(1);
        self.channels = self.channels.iter().map(|c| (c / d).max(1)).collect();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least two classes, got {}",
                self.num_classes
            )));
        }
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::Config(format!(
                "{} channel entries for {} strides",
                self.channels.len(),
                self.strides.len()
            )));
        }
        if self.channels.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.strides.iter().any(|s| !matches!(s, 1 | 2)) {
            return Err(Error::Config(format!("strides must be 1 or 2: {:?}", self.strides)));
        }
        if self.temporal_kernel.is_multiple_of(2) {
            return Err(Error::Config("temporal kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Which modules a network instantiates and how it combines them.
#[derive(Clone, Debug, PartialEq)]
pub enum NetworkMode {
    /// All eight modules, softmax-weighted by architecture parameters.
    MixedSum,
    /// All eight modules, one sampled module active per block.
    SampledSingle,
    /// A fixed subset per block, summed with equal weight.
    Finalized(FinalizedArchitecture),
}

/// Per-forward module selection.
#[derive(Clone, Copy, Debug)]
pub enum Assignment<'a> {
    Mixed(&'a ArchitectureParams),
    Sampled(&'a [ModuleKind]),
    Finalized,
}

/// How batch norm layers normalize during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running estimates updated afterwards.
    Train,
    /// Batch statistics without touching the running estimates.
    BatchStats,
    /// Running estimates.
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BatchNorm {
    fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.add(&format!("{prefix}.gamma"), &[channels], Init::Constant(1.0))?,
            beta: store.add(&format!("{prefix}.beta"), &[channels], Init::Constant(0.0))?,
            running_mean: store.add_buffer(&format!("{prefix}.running_mean"), &[channels], Init::Constant(0.0))?,
            running_var: store.add_buffer(&format!("{prefix}.running_var"), &[channels], Init::Constant(1.0))?,
        })
    }

    fn forward(&self, b: &mut Binder, x: Var, mode: BnMode) -> Result<Var> {
        let g = b.var(self.gamma);
        let be = b.var(self.beta);
        match mode {
            BnMode::Inference => {
                let store = b.store();
                let rm = store.get(self.running_mean).data();
                let rv = store.get(self.running_var).data();
                Ok(b.tape.batch_norm(x, g, be, BN_EPS, Some((rm, rv)))?.0)
            }
            BnMode::Train | BnMode::BatchStats => {
                let (y, stats) = b.tape.batch_norm(x, g, be, BN_EPS, None)?;
                if mode == BnMode::Train {
                    b.record_bn(BnUpdate {
                        mean: self.running_mean,
                        var: self.running_var,
                        stats: stats.expect("batch statistics requested"),
                    });
                }
                Ok(y)
            }
        }
    }
}

/// One graph function module with its projection and generator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModuleUnit {
    pub kind: ModuleKind,
    pub theta: ParamId,
    pub generator: Option<DynamicGraphGenerator>,
}

#[derive(Clone, Debug, PartialEq)]
enum Residual {
    Identity,
    Projection(ParamId),
}

/// A GCN block: modules → Conv_S → Conv_T, plus residual.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    modules: Vec<ModuleUnit>,
    conv_s: ParamId,
    bn_s: BatchNorm,
    conv_t: ParamId,
    bn_t: BatchNorm,
    residual: Residual,
}

enum Selection<'a> {
    Weighted(&'a [f64; ModuleKind::COUNT]),
    Single(ModuleKind),
    Sum,
}

impl Block {
    fn new(
        store: &mut ParamStore,
        index: usize,
        in_c: usize,
        out_c: usize,
        stride: usize,
        kinds: &[ModuleKind],
        cfg: &NetConfig,
    ) -> Result<Self> {
        let p = format!("block{index}");
        let mut modules = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            let mp = format!("{p}.{}", kind.name());
            let theta = store.add(&format!("{mp}.theta"), &[out_c, in_c, 1, 1], Init::He { fan_in: in_c })?;
            let generator = match kind.dynamic_mode() {
                Some(mode) => Some(
                    DynamicGraphGenerator::new(
                        store,
                        &format!("{mp}.gen"),
                        mode,
                        in_c,
                        DynamicGraphGenerator::default_embed_dim(out_c),
                        cfg.temporal_kernel,
                    )?
                    .with_double_softmax(cfg.double_softmax),
                ),
                None => None,
            };
            modules.push(ModuleUnit { kind, theta, generator });
        }
        let kt = cfg.temporal_kernel;
        let conv_s = store.add(&format!("{p}.conv_s"), &[out_c, out_c, 1, 1], Init::He { fan_in: out_c })?;
        let bn_s = BatchNorm::new(store, &format!("{p}.bn_s"), out_c)?;
        let conv_t = store.add(&format!("{p}.conv_t"), &[out_c, out_c, kt, 1], Init::He { fan_in: out_c * kt })?;
        let bn_t = BatchNorm::new(store, &format!("{p}.bn_t"), out_c)?;
        let residual = if in_c == out_c && stride == 1 {
            Residual::Identity
        } else {
            Residual::Projection(store.add(&format!("{p}.residual"), &[out_c, in_c, 1, 1], Init::He { fan_in: in_c })?)
        };
        Ok(Block {
            in_channels: in_c,
            out_channels: out_c,
            stride,
            modules,
            conv_s,
            bn_s,
            conv_t,
            bn_t,
            residual,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn modules(&self) -> &[ModuleUnit] {
        &self.modules
    }

    fn unit(&self, kind: ModuleKind) -> Result<&ModuleUnit> {
        self.modules
            .iter()
            .find(|u| u.kind == kind)
            .ok_or_else(|| Error::Config(format!("block has no {kind} module")))
    }

    /// Every trainable parameter the block owns besides module weights.
    fn trunk_params(&self) -> Vec<ParamId> {
        let mut out = vec![
            self.conv_s,
            self.bn_s.gamma,
            self.bn_s.beta,
            self.conv_t,
            self.bn_t.gamma,
            self.bn_t.beta,
        ];
        if let Residual::Projection(w) = self.residual {
            out.push(w);
        }
        out
    }

    fn forward(&self, b: &mut Binder, graphs: &GraphSet, x: Var, sel: Selection<'_>, bn: BnMode) -> Result<Var> {
        let run = |b: &mut Binder, unit: &ModuleUnit| {
            apply_module(b, unit.kind, x, graphs, unit.generator.as_ref(), unit.theta)
        };
        let agg = match sel {
            Selection::Single(kind) => run(b, self.unit(kind)?)?,
            Selection::Weighted(w) => {
                let mut outs = Vec::with_capacity(ModuleKind::COUNT);
                for kind in ModuleKind::ALL {
                    outs.push(run(b, self.unit(kind)?)?);
                }
                b.tape.weighted_sum(&outs, w)?
            }
            Selection::Sum => {
                let mut outs = Vec::with_capacity(self.modules.len());
                for unit in &self.modules {
                    outs.push(run(b, unit)?);
                }
                if outs.len() == 1 {
                    outs[0]
                } else {
                    b.tape.weighted_sum(&outs, &vec![1.0; outs.len()])?
                }
            }
        };
        let ws = b.var(self.conv_s);
        let h = b.tape.conv2d(agg, ws, 1, 0)?;
        let h = self.bn_s.forward(b, h, bn)?;
        let h = b.tape.relu(h)?;
        let wt = b.var(self.conv_t);
        let kt = b.store().get(self.conv_t).shape()[2];
        let h = b.tape.conv2d(h, wt, self.stride, (kt - 1) / 2)?;
        let h = self.bn_t.forward(b, h, bn)?;
        let res = match self.residual {
            Residual::Identity => x,
            Residual::Projection(w) => {
                let wv = b.var(w);
                b.tape.conv2d(x, wv, self.stride, 0)?
            }
        };
        let h = b.tape.add(h, res)?;
        b.tape.relu(h)
    }
}

/// Blocks, head and parameters of one network instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetConfig,
    topology: SkeletonTopology,
    graphs: GraphSet,
    mode: NetworkMode,
    blocks: Vec<Block>,
    fc_weight: ParamId,
    fc_bias: ParamId,
    store: ParamStore,
}

impl Network {
    pub fn new(config: NetConfig, topology: SkeletonTopology, mode: NetworkMode) -> Result<Self> {
        config.validate()?;
        let graphs = GraphSet::new(&topology, config.cheb_basis)?;
        let depth = config.depth();
        if let NetworkMode::Finalized(f) = &mode {
            if f.layers().len() != depth {
                return Err(Error::Config(format!(
                    "finalized architecture has {} layers, network has {depth}",
                    f.layers().len()
                )));
            }
        }
        let mut store = ParamStore::new(config.seed);
        let mut blocks = Vec::with_capacity(depth);
        let mut in_c = config.in_channels;
        for (i, (&out_c, &stride)) in config.channels.iter().zip(&config.strides).enumerate() {
            let kinds: Vec<ModuleKind> = match &mode {
                NetworkMode::Finalized(f) => f.layers()[i].clone(),
                _ => ModuleKind::ALL.to_vec(),
            };
            blocks.push(Block::new(&mut store, i, in_c, out_c, stride, &kinds, &config)?);
            in_c = out_c;
        }
        let fc_weight = store.add("fc.weight", &[in_c, config.num_classes], Init::He { fan_in: in_c })?;
        let fc_bias = store.add("fc.bias", &[config.num_classes], Init::Constant(0.0))?;
        Ok(Network {
            config,
            topology,
            graphs,
            mode,
            blocks,
            fc_weight,
            fc_bias,
            store,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn graphs(&self) -> &GraphSet {
        &self.graphs
    }

    pub fn mode(&self) -> &NetworkMode {
        &self.mode
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Trainable parameters of the modules a forward under `assign` runs,
    /// plus every block trunk and the head.
    pub fn active_params(&self, assign: Assignment<'_>) -> Vec<ParamId> {
        let mut out = Vec::new();
        for (l, block) in self.blocks.iter().enumerate() {
            for unit in &block.modules {
                let active = match assign {
                    Assignment::Sampled(kinds) => kinds[l] == unit.kind,
                    _ => true,
                };
                if active {
                    out.push(unit.theta);
                    if let Some(g) = &unit.generator {
                        out.extend(g.phi().iter().chain(g.psi()).copied());
                    }
                }
            }
            out.extend(block.trunk_params());
        }
        out.push(self.fc_weight);
        out.push(self.fc_bias);
        out
    }

    /// Draw one module per block from `softmax(alpha)`.
    pub fn sample_assignment<R: Rng + ?Sized>(&self, alpha: &ArchitectureParams, rng: &mut R) -> Vec<ModuleKind> {
        (0..self.depth())
            .map(|l| sample_active_module(alpha.row(l), rng))
            .collect()
    }

    fn check_assignment(&self, assign: &Assignment<'_>) -> Result<()> {
        let search_net = !matches!(self.mode, NetworkMode::Finalized(_));
        match assign {
            Assignment::Mixed(a) => {
                if !search_net {
                    return Err(Error::Config("mixed forward on a finalized network".into()));
                }
                if a.layers() != self.depth() {
                    return Err(Error::Config(format!(
                        "architecture has {} layers, network has {}",
                        a.layers(),
                        self.depth()
                    )));
                }
            }
            Assignment::Sampled(kinds) => {
                if kinds.len() != self.depth() {
                    return Err(Error::Config(format!(
                        "{} sampled modules for {} blocks",
                        kinds.len(),
                        self.depth()
                    )));
                }
            }
            Assignment::Finalized => {}
        }
        Ok(())
    }

    /// Fold `[B, C, T, V, M]` bodies into `[B·M, C, T, V]`.
    fn fold_bodies(&self, input: &Tensor) -> Result<(Tensor, usize, usize)> {
        let s = input.shape();
        if s.len() != 5 {
            return Err(Error::dim(format!("network input must be [B, C, T, V, M], got {s:?}")));
        }
        let (b, c, t, v, m) = (s[0], s[1], s[2], s[3], s[4]);
        if v != self.topology.num_joints() {
            return Err(Error::dim(format!(
                "input has {v} joints, topology has {}",
                self.topology.num_joints()
            )));
        }
        if c != self.config.in_channels {
            return Err(Error::dim(format!(
                "input has {c} channels, network expects {}",
                self.config.in_channels
            )));
        }
        let src = input.data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    for vi in 0..v {
                        let base = (((bi * c + ci) * t + ti) * v + vi) * m;
                        for mi in 0..m {
                            out[(((bi * m + mi) * c + ci) * t + ti) * v + vi] = src[base + mi];
                        }
                    }
                }
            }
        }
        Ok((Tensor::new([b * m, c, t, v], out)?, b, m))
    }

    /// Class logits `[B, num_classes]` for a `[B, C, T, V, M]` batch.
    pub fn forward(&self, b: &mut Binder, input: &Tensor, assign: Assignment<'_>, bn: BnMode) -> Result<Var> {
        self.check_assignment(&assign)?;
        let (folded, batch, bodies) = self.fold_bodies(input)?;
        let mut h = b.tape.constant(folded);
        let weights = match assign {
            Assignment::Mixed(a) => a.all_mixing_weights(),
            _ => Vec::new(),
        };
        for (l, block) in self.blocks.iter().enumerate() {
            let sel = match assign {
                Assignment::Mixed(_) => Selection::Weighted(&weights[l]),
                Assignment::Sampled(kinds) => Selection::Single(kinds[l]),
                Assignment::Finalized => Selection::Sum,
            };
            h = block.forward(b, &self.graphs, h, sel, bn)?;
        }
        let pooled = b.tape.global_avg_pool(h)?;
        let c = b.tape.shape(pooled)[1];
        let pooled = b.tape.reshape(pooled, &[batch, bodies, c])?;
        let feat = b.tape.mean_axis(pooled, 1)?;
        let w = b.var(self.fc_weight);
        let bias = b.var(self.fc_bias);
        let logits = b.tape.matmul(feat, w)?;
        b.tape.add_bias(logits, bias)
    }

    /// Inference-only logits as a plain tensor.
    pub fn predict(&self, input: &Tensor, assign: Assignment<'_>, bn: BnMode) -> Result<Tensor> {
        let mut b = Binder::new(&self.store);
        let out = self.forward(&mut b, input, assign, bn)?;
        Ok(b.tape.value(out).clone())
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        apply_bn_updates(&mut self.store, updates, BN_MOMENTUM);
    }
}

/// Build a ten-block network for the given architecture shape.
pub fn build_network(
    arch: &ArchitectureParams,
    topology: SkeletonTopology,
    num_classes: usize,
    mode: NetworkMode,
) -> Result<Network> {
    let cfg = NetConfig::standard(num_classes);
    if arch.layers() != cfg.depth() {
        return Err(Error::Config(format!(
            "architecture has {} layers, network needs {}",
            arch.layers(),
            cfg.depth()
        )));
    }
    Network::new(cfg, topology, mode)
}
