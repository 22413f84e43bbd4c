//! Run configuration: a JSON file overlaid with command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sgcn_core::ceim::CeimConfig;
use sgcn_core::graph::ChebBasis;
use sgcn_core::net::NetConfig;
use sgcn_core::search::{SearchConfig, TrainActivation};
use sgcn_core::train::{LrSchedule, TrainConfig};

use crate::CliError;

/// Epoch count the default milestones refer to.
const REFERENCE_EPOCHS: usize = 70;
const REFERENCE_MILESTONES: [usize; 2] = [30, 45];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    /// Divide the 64/128/256 block widths by this factor.
    pub width_divisor: usize,
    pub cheb_basis: ChebBasis,
    pub double_softmax: bool,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            width_divisor: 1,
            cheb_basis: ChebBasis::Chebyshev,
            double_softmax: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub epochs: usize,
    pub lr: f64,
    /// Zero-based decay epochs; scaled from 30/45 of 70 when absent.
    pub milestones: Option<Vec<usize>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimSection {
    fn search() -> Self {
        OptimSection {
            weight_decay: 1e-4,
            ..Self::train()
        }
    }

    fn train() -> Self {
        OptimSection {
            epochs: REFERENCE_EPOCHS,
            lr: 0.1,
            milestones: None,
            momentum: 0.9,
            weight_decay: 6e-4,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            milestones: self.milestones.clone().unwrap_or_else(|| scaled_milestones(self.epochs)),
            gamma: 0.1,
        }
    }
}

impl Default for OptimSection {
    fn default() -> Self {
        Self::train()
    }
}

/// The 30/45-of-70 decay points rescaled to `epochs`, dropping any that
/// collapse onto each other or onto epoch zero.
pub fn scaled_milestones(epochs: usize) -> Vec<usize> {
    let mut out: Vec<usize> = REFERENCE_MILESTONES
        .iter()
        .map(|&m| ((m * epochs) as f64 / REFERENCE_EPOCHS as f64).round() as usize)
        .filter(|&m| m > 0 && m < epochs)
        .collect();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub epochs: usize,
    pub lr: f64,
    pub milestones: Option<Vec<usize>>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub population: usize,
    pub eval_fraction: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub cache_fitness: bool,
    pub train_activation: TrainActivation,
    pub threshold: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        let c = CeimConfig::default();
        let o = OptimSection::search();
        SearchSection {
            epochs: o.epochs,
            lr: o.lr,
            milestones: o.milestones,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            warmup_epochs: c.warmup_epochs,
            population: c.population,
            eval_fraction: c.eval_fraction,
            epsilon_start: c.epsilon_start,
            epsilon_end: c.epsilon_end,
            cache_fitness: c.cache_fitness,
            train_activation: TrainActivation::Sampled,
            threshold: sgcn_core::net::DEFAULT_THRESHOLD,
        }
    }
}

impl SearchSection {
    pub fn optim(&self) -> OptimSection {
        OptimSection {
            epochs: self.epochs,
            lr: self.lr,
            milestones: self.milestones.clone(),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Leading frames of each stored clip fed to the network.
    pub frames: usize,
    /// Train and evaluate on bone vectors instead of joint positions.
    pub bones: bool,
    pub net: NetSection,
    pub search: SearchSection,
    pub train: OptimSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            batch_size: 16,
            frames: sgcn_core::data::FRAMES,
            bones: false,
            net: NetSection::default(),
            search: SearchSection::default(),
            train: OptimSection::train(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn net_config(&self, num_classes: usize) -> NetConfig {
        NetConfig {
            cheb_basis: self.net.cheb_basis,
            double_softmax: self.net.double_softmax,
            ..NetConfig::standard(num_classes)
                .with_width_divisor(self.net.width_divisor)
                .with_seed(self.seed)
        }
    }

    fn trainer(&self, o: &OptimSection) -> TrainConfig {
        TrainConfig {
            epochs: o.epochs,
            batch_size: self.batch_size,
            frames: self.frames,
            schedule: o.schedule(),
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.trainer(&self.train)
    }

    pub fn search_config(&self) -> SearchConfig {
        let s = &self.search;
        let optim = s.optim();
        SearchConfig {
            ceim: CeimConfig {
                population: s.population,
                epochs: s.epochs,
                warmup_epochs: s.warmup_epochs,
                epsilon_start: s.epsilon_start,
                epsilon_end: s.epsilon_end,
                eval_fraction: s.eval_fraction,
                cache_fitness: s.cache_fitness,
                seed: self.seed,
            },
            train: self.trainer(&optim),
            train_activation: s.train_activation,
            threshold: s.threshold,
            split_seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.net.width_divisor == 0 {
            return Err(CliError::Usage("width_divisor must be positive".into()));
        }
        Ok(())
    }
}
