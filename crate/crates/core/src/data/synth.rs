//! Synthetic labeled motion.
//!
//! A handful of connected joints oscillate at a shared frequency. Classes
//! differ only in the phase lag between neighboring moving joints, so the
//! label is carried by how joints move relative to each other rather than
//! by any single joint's trajectory. Per-sample noise jitters the global
//! phase and amplitude and adds Gaussian coordinate noise; the phase jitter
//! scales with `noise_std`, which erodes trajectory templates much faster
//! than it erodes the relative-phase signal.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{preprocess, Dataset, COORDS};
use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::tensor::Tensor;

/// Oscillation periods per clip.
const CYCLES: f64 = 4.0;
/// Standard deviation of the global phase jitter per unit of `noise_std`.
const PHASE_GAIN: f64 = 2.0 * PI;
const MAX_MOVING: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMotionSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub joints: usize,
    pub frames: usize,
    pub noise_std: f64,
}

impl SyntheticMotionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("need at least one sample per class".into()));
        }
        if self.joints < 2 {
            return Err(Error::Config(format!("need at least two joints, got {}", self.joints)));
        }
        if self.frames == 0 || self.frames > super::FRAMES {
            return Err(Error::Config(format!(
                "frames must lie in [1, {}], got {}",
                super::FRAMES,
                self.frames
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be nonnegative, got {}", self.noise_std)));
        }
        Ok(())
    }

    /// NTU layout for 25 joints, a binary tree otherwise.
    pub fn topology(&self) -> Result<SkeletonTopology> {
        if self.joints == 25 {
            Ok(SkeletonTopology::ntu25())
        } else {
            SkeletonTopology::binary_tree(self.joints)
        }
    }

    /// One signature per class.
    pub fn signatures(&self) -> Result<Vec<ClassSignature>> {
        let topo = self.topology()?;
        let tree = moving_tree(&topo, MAX_MOVING);
        Ok((0..self.num_classes)
            .map(|c| {
                let lag = PI * c as f64 / (self.num_classes - 1) as f64;
                ClassSignature {
                    cycles: CYCLES,
                    couplings: tree.iter().map(|&(p, j)| (p, j, lag)).collect(),
                }
            })
            .collect())
    }
}

/// Coupled joint pairs `(i, j, lag)`: joint `j` trails joint `i` by `lag`
/// radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub cycles: f64,
    pub couplings: Vec<(usize, usize, f64)>,
}

impl ClassSignature {
    /// Joint phases implied by the couplings, `None` for still joints.
    fn phases(&self, v: usize) -> Vec<Option<f64>> {
        let mut phase = vec![None; v];
        if let Some(&(root, _, _)) = self.couplings.first() {
            phase[root] = Some(0.0);
        }
        for &(i, j, lag) in &self.couplings {
            let base = phase[i].unwrap_or(0.0);
            phase[i] = Some(base);
            phase[j] = Some(base + lag);
        }
        phase
    }
}

/// `(parent, child)` edges of the first `k` joints reached breadth-first
/// from joint 0, in visiting order.
fn moving_tree(topo: &SkeletonTopology, k: usize) -> Vec<(usize, usize)> {
    let v = topo.num_joints();
    let mut adj = vec![Vec::new(); v];
    for &(a, b) in topo.edges() {
        adj[a].push(b);
        adj[b].push(a);
    }
    adj.iter_mut().for_each(|n| n.sort_unstable());
    let mut seen = vec![false; v];
    seen[0] = true;
    let mut count = 1;
    let mut out = Vec::new();
    let mut queue = VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if count == k {
                return out;
            }
            if !seen[w] {
                seen[w] = true;
                count += 1;
                out.push((u, w));
                queue.push_back(w);
            }
        }
    }
    out
}

fn rest_pose(j: usize) -> [f64; 3] {
    [0.2 * (j % 4) as f64, -0.25 * (j / 4) as f64, 0.05 * j as f64]
}

/// A balanced labeled dataset, classes interleaved in sample order.
pub fn synthesize<R: Rng + ?Sized>(spec: &SyntheticMotionSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let topo = spec.topology()?;
    let sigs = spec.signatures()?;
    let (t, v) = (spec.frames, spec.joints);
    let phases: Vec<Vec<Option<f64>>> = sigs.iter().map(|s| s.phases(v)).collect();
    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for _ in 0..spec.samples_per_class {
        for (label, sig) in sigs.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let global = PHASE_GAIN * spec.noise_std * z;
            let z: f64 = rng.sample(StandardNormal);
            let amp = 1.0 + spec.noise_std * z;
            let omega = 2.0 * PI * sig.cycles / t as f64;
            let mut raw = vec![0.0; COORDS * t * v];
            for c in 0..COORDS {
                for ti in 0..t {
                    for j in 0..v {
                        let mut x = rest_pose(j)[c];
                        if c == 0 {
                            if let Some(p) = phases[label][j] {
                                x += amp * (omega * ti as f64 + global - p).sin();
                            }
                        }
                        let n: f64 = rng.sample(StandardNormal);
                        x += spec.noise_std * n;
                        raw[(c * t + ti) * v + j] = x as f32 as f64;
                    }
                }
            }
            samples.push(preprocess(&Tensor::new([COORDS, t, v, 1], raw)?, label)?);
        }
    }
    Dataset::new(topo, spec.num_classes, samples)
}
