//! Architecture search: CEIM over module logits with shared weights.
//!
//! The network's weights are split-trained on one half of the data while
//! candidate architectures are scored by top-1 accuracy on a random third
//! of the other half.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ceim::{self, CeimConfig, IterationRecord, Phase, SearchOutcome, SearchProblem};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::ModuleKind;
use crate::metrics::top_k_accuracy;
use crate::net::{sample_active_module, ArchitectureDoc, ArchitectureParams, BnMode, NetConfig, Network, NetworkMode};
use crate::optim::OptimizerState;
use crate::train::{predict_scores, train_epoch, Activation, EpochStats, TrainConfig};

/// How shared weights are trained once warmup is over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainActivation {
    /// One module per block, drawn from `softmax(mu)` for every batch.
    #[default]
    Sampled,
    /// All modules, weighted by `softmax(mu)`.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub ceim: CeimConfig,
    pub train: TrainConfig,
    pub train_activation: TrainActivation,
    pub threshold: f64,
    /// Seed of the train/validation halving.
    pub split_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            ceim: CeimConfig::default(),
            train: TrainConfig::search(),
            train_activation: TrainActivation::Sampled,
            threshold: crate::net::DEFAULT_THRESHOLD,
            split_seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.ceim.validate()?;
        self.train.validate()?;
        if self.train.epochs != self.ceim.epochs {
            return Err(Error::Config(format!(
                "search trains for {} epochs but CEIM runs {}",
                self.train.epochs, self.ceim.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1)", self.threshold)));
        }
        Ok(())
    }
}

/// Progress notifications.
#[derive(Clone, Debug)]
pub enum SearchEvent<'a> {
    Epoch { phase: Phase, stats: &'a EpochStats },
    Iteration(&'a IterationRecord),
}

struct NasProblem<'a, F> {
    net: Network,
    opt: OptimizerState,
    data: &'a Dataset,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    subset: Vec<usize>,
    cfg: &'a SearchConfig,
    epochs: Vec<EpochStats>,
    observer: F,
}

fn mu_params(mu: &[f64], layers: usize) -> Result<ArchitectureParams> {
    ArchitectureParams::new(layers, mu.to_vec())
}

impl<F: FnMut(SearchEvent<'_>) -> Result<()>> SearchProblem for NasProblem<'_, F> {
    fn train_epoch(&mut self, epoch: usize, phase: Phase, mu: &[f64], rng: &mut ChaCha8Rng) -> Result<()> {
        let depth = self.net.depth();
        let mu = mu_params(mu, depth)?;
        let mode = self.cfg.train_activation;
        let stats = train_epoch(
            &mut self.net,
            &mut self.opt,
            self.data,
            &self.train_idx,
            &self.cfg.train,
            epoch,
            rng,
            |r| match (phase, mode) {
                (Phase::Warmup, _) => Activation::Sampled(random_assignment(depth, r)),
                (Phase::Search, TrainActivation::Sampled) => {
                    Activation::Sampled((0..depth).map(|l| sample_active_module(mu.row(l), r)).collect())
                }
                (Phase::Search, TrainActivation::Mixed) => Activation::Mixed(mu.clone()),
            },
        )?;
        (self.observer)(SearchEvent::Epoch { phase, stats: &stats })?;
        self.epochs.push(stats);
        Ok(())
    }

    fn begin_round(&mut self, _iteration: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let n = self.val_idx.len();
        let k = ((n as f64 * self.cfg.ceim.eval_fraction).ceil() as usize).clamp(1, n);
        self.subset = self.val_idx.choose_multiple(rng, k).copied().collect();
        self.subset.sort_unstable();
        Ok(())
    }

    fn fitness(&mut self, alpha: &[f64]) -> Result<f64> {
        let arch = mu_params(alpha, self.net.depth())?;
        let scores = predict_scores(
            &self.net,
            self.data,
            &self.subset,
            &Activation::Mixed(arch),
            self.cfg.train.frames,
            self.cfg.train.batch_size,
            BnMode::BatchStats,
        )?;
        let labels: Vec<usize> = self.subset.iter().map(|&i| self.data.samples()[i].label).collect();
        top_k_accuracy(&scores, &labels, 1)
    }

    fn on_iteration(&mut self, record: &IterationRecord) -> Result<()> {
        (self.observer)(SearchEvent::Iteration(record))
    }
}

/// Everything a search produces.
#[derive(Clone, Debug)]
pub struct SearchResult {
    /// Best sample of the final population.
    pub best: ArchitectureParams,
    pub best_fitness: f64,
    /// Mean of the final search distribution.
    pub mu: ArchitectureParams,
    pub doc: ArchitectureDoc,
    pub outcome: SearchOutcome,
    pub epochs: Vec<EpochStats>,
}

/// Run the full search on `data`.
pub fn run_search<F>(data: &Dataset, net_cfg: &NetConfig, cfg: &SearchConfig, observer: F) -> Result<SearchResult>
where
    F: FnMut(SearchEvent<'_>) -> Result<()>,
{
    cfg.validate()?;
    if data.num_classes() != net_cfg.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, network {}",
            data.num_classes(),
            net_cfg.num_classes
        )));
    }
    if data.len() < 2 {
        return Err(Error::Data("search needs at least two samples".into()));
    }
    let net = Network::new(net_cfg.clone(), data.topology().clone(), NetworkMode::SampledSingle)?;
    let opt = cfg.train.optimizer(&net)?;
    let (train_idx, val_idx) = data.split_halves(cfg.split_seed);
    let depth = net.depth();
    let mut problem = NasProblem {
        net,
        opt,
        data,
        train_idx,
        val_idx,
        subset: Vec::new(),
        cfg,
        epochs: Vec::new(),
        observer,
    };
    let outcome = ceim::search(&mut problem, depth * ModuleKind::COUNT, &cfg.ceim)?;
    let best = ArchitectureParams::new(depth, outcome.best.alpha.clone())?;
    let mu = ArchitectureParams::new(depth, outcome.distribution.mu().to_vec())?;
    let doc = ArchitectureDoc::from_params(&best, cfg.threshold)?;
    Ok(SearchResult {
        best_fitness: outcome.best.fitness.unwrap_or(f64::NAN),
        best,
        mu,
        doc,
        epochs: problem.epochs,
        outcome,
    })
}

/// Uniformly random module per block, as used during warmup.
pub fn random_assignment<R: Rng + ?Sized>(depth: usize, rng: &mut R) -> Vec<ModuleKind> {
    (0..depth)
        .map(|_| sample_active_module(&[0.0; ModuleKind::COUNT], rng))
        .collect()
}
