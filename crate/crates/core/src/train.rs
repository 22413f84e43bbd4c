//! Mini-batch training and batched inference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::ModuleKind;
use crate::net::{ArchitectureParams, Assignment, BnMode, Network};
use crate::optim::{sgd_nesterov_step, OptimizerState};
use crate::params::Binder;
use crate::tensor::Tensor;

/// Step decay: `base · gamma^(milestones passed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    /// Zero-based epochs from which the next decay applies.
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 0.1,
            milestones: vec![30, 45],
            gamma: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * self.gamma.powi(passed as i32)
    }

    pub fn validate(&self, epochs: usize) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) || !(self.gamma > 0.0) {
            return Err(Error::Config("learning rate and decay factor must be positive".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "milestones {:?} must be strictly increasing",
                self.milestones
            )));
        }
        if let Some(&m) = self.milestones.last() {
            if m >= epochs {
                return Err(Error::Config(format!("milestone {m} is not below {epochs} epochs")));
            }
        }
        Ok(())
    }
}

/// Optimizer and batching settings shared by search and training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Leading frames of each stored clip fed to the network.
    pub frames: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 70,
            batch_size: 16,
            frames: crate::data::FRAMES,
            schedule: LrSchedule::default(),
            momentum: 0.9,
            weight_decay: 6e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Search-phase defaults: lighter weight decay.
    pub fn search() -> Self {
        TrainConfig {
            weight_decay: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(1..=crate::data::FRAMES).contains(&self.frames) {
            return Err(Error::Config(format!("frames {} outside [1, 300]", self.frames)));
        }
        self.schedule.validate(self.epochs)
    }

    pub fn optimizer(&self, net: &Network) -> Result<OptimizerState> {
        OptimizerState::new(
            net.params().tensors(),
            self.schedule.base,
            self.momentum,
            self.weight_decay,
        )
    }
}

/// Independent generator for one epoch, so a resumed run replays the
/// same shuffles.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Owned module selection for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Activation {
    Mixed(ArchitectureParams),
    Sampled(Vec<ModuleKind>),
    Finalized,
}

impl Activation {
    pub fn as_assignment(&self) -> Assignment<'_> {
        match self {
            Activation::Mixed(a) => Assignment::Mixed(a),
            Activation::Sampled(k) => Assignment::Sampled(k),
            Activation::Finalized => Assignment::Finalized,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Forward, backward and one optimizer step on a batch. Returns the loss
/// and the number of correct predictions.
pub fn train_step(
    net: &mut Network,
    opt: &mut OptimizerState,
    input: &Tensor,
    labels: &[usize],
    activation: &Activation,
) -> Result<(f64, usize)> {
    let (loss, correct, grads, bn) = {
        let mut b = Binder::new(net.params());
        let logits = net.forward(&mut b, input, activation.as_assignment(), BnMode::Train)?;
        let correct = crate::metrics::argmax_rows(b.tape.value(logits))
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        let loss = b.tape.cross_entropy(logits, labels)?;
        let value = b.tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Numerical(format!("training loss became {value}")));
        }
        let (grads, bn) = b.backward(loss)?;
        (value, correct, grads, bn)
    };
    sgd_nesterov_step(net.params_mut().tensors_mut(), &grads, opt)?;
    net.apply_bn_updates(&bn);
    Ok((loss, correct))
}

/// One pass over `indices` in shuffled mini-batches. `activation` is asked
/// for a module selection before every batch.
pub fn train_epoch<F>(
    net: &mut Network,
    opt: &mut OptimizerState,
    data: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
    mut activation: F,
) -> Result<EpochStats>
where
    F: FnMut(&mut ChaCha8Rng) -> Activation,
{
    if indices.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let lr = cfg.schedule.lr_at(epoch);
    opt.learning_rate = lr;
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let (mut loss_sum, mut correct) = (0.0, 0);
    for chunk in order.chunks(cfg.batch_size) {
        let (input, labels) = data.batch(chunk, cfg.frames)?;
        let act = activation(rng);
        let (loss, hits) = train_step(net, opt, &input, &labels, &act)?;
        loss_sum += loss * chunk.len() as f64;
        correct += hits;
    }
    Ok(EpochStats {
        epoch,
        lr,
        loss: loss_sum / order.len() as f64,
        accuracy: correct as f64 / order.len() as f64,
    })
}

/// Logits for `indices`, batch by batch. Batches run in parallel; the
/// result does not depend on the thread count.
pub fn predict_scores(
    net: &Network,
    data: &Dataset,
    indices: &[usize],
    activation: &Activation,
    frames: usize,
    batch_size: usize,
    bn: BnMode,
) -> Result<Tensor> {
    if bn == BnMode::Train {
        return Err(Error::Contract("inference cannot update batch-norm statistics".into()));
    }
    let chunks: Vec<&[usize]> = indices.chunks(batch_size.max(1)).collect();
    let parts = chunks
        .par_iter()
        .map(|chunk| {
            let (input, _) = data.batch(chunk, frames)?;
            net.predict(&input, activation.as_assignment(), bn)
        })
        .collect::<Result<Vec<Tensor>>>()?;
    let c = net.num_classes();
    let mut out = Vec::with_capacity(indices.len() * c);
    for p in parts {
        out.extend_from_slice(p.data());
    }
    Tensor::new([indices.len(), c], out)
}

/// Mean cross-entropy of score rows against labels.
pub fn mean_cross_entropy(scores: &Tensor, labels: &[usize]) -> f64 {
    let c = scores.shape()[1];
    scores
        .data()
        .chunks(c)
        .zip(labels)
        .map(|(row, &y)| -crate::autodiff::softmax_vec(row)[y].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / labels.len().max(1) as f64
}
