//! Named parameter storage and per-pass binding onto a [`Tape`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    He { fan_in: usize },
    Constant(f64),
}

/// Flat list of named tensors. Trainable entries receive gradients;
/// the rest are buffers such as batch-norm running statistics.
///
/// Initial values depend only on the store seed and the parameter name,
/// so two networks holding a parameter of the same name start equal.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            names: Vec::new(),
            tensors: Vec::new(),
            trainable: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        self.insert(name, shape, init, true)
    }

    pub fn add_buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        self.insert(name, shape, init, false)
    }

    fn insert(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let tensor = match init {
            Init::He { fan_in } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()));
                Tensor::randn(shape.to_vec(), (2.0 / fan_in.max(1) as f64).sqrt(), &mut rng)
            }
            Init::Constant(v) => Tensor::full(shape.to_vec(), v),
        };
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.trainable.push(trainable);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Overwrite a tensor's values, keeping its shape.
    pub fn assign(&mut self, id: ParamId, data: &[f64]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if t.numel() != data.len() {
            return Err(Error::dim(format!(
                "assigning {} values to {} of shape {:?}",
                data.len(),
                self.names[id.0],
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Running-statistic update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats,
}

/// One forward/backward pass: a fresh tape plus the parameters bound to it.
pub struct Binder<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
    bn_updates: Vec<BnUpdate>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Binder {
            tape: Tape::new(),
            store,
            vars: vec![None; store.len()],
            bn_updates: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Tape variable for a parameter, registered on first use.
    pub fn var(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.store.is_trainable(id) {
            self.tape.param(t)
        } else {
            self.tape.constant(t)
        };
        self.vars[id.0] = Some(v);
        v
    }

    pub fn record_bn(&mut self, update: BnUpdate) {
        self.bn_updates.push(update);
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    /// Backpropagate `loss`; returns one gradient slot per stored parameter
    /// (`None` for buffers and for parameters the pass never touched) and
    /// the recorded batch-norm updates.
    pub fn backward(self, loss: Var) -> Result<(Vec<Option<Vec<f64>>>, Vec<BnUpdate>)> {
        let Binder {
            tape,
            store,
            vars,
            bn_updates,
        } = self;
        let mut grads = tape.backward(loss)?;
        let out = vars
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Some(v) if store.trainable[i] => grads.take(*v),
                _ => None,
            })
            .collect();
        Ok((out, bn_updates))
    }
}

/// Fold recorded batch statistics into running estimates.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate], momentum: f64) {
    for u in updates {
        for (r, s) in store.get_mut(u.mean).data_mut().iter_mut().zip(&u.stats.mean) {
            *r = (1.0 - momentum) * *r + momentum * s;
        }
        for (r, s) in store.get_mut(u.var).data_mut().iter_mut().zip(&u.stats.var) {
            *r = (1.0 - momentum) * *r + momentum * s;
        }
    }
}
