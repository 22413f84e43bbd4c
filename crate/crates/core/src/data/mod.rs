//! Skeleton clips, preprocessing, bone features and datasets.
//!
//! A clip is a `[3, T, V, M]` tensor: coordinates, frames, joints, bodies.
//! Stored clips always hold [`FRAMES`] frames and [`BODIES`] bodies.

mod format;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use format::MAGIC;
pub use synth::{synthesize, ClassSignature, SyntheticMotionSpec};

use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::tensor::Tensor;

pub const COORDS: usize = 3;
pub const FRAMES: usize = 300;
pub const BODIES: usize = 2;

/// One labeled clip of shape `[3, FRAMES, V, BODIES]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSample {
    pub data: Tensor,
    pub label: usize,
}

impl SkeletonSample {
    pub fn num_joints(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Tile the frame axis of a `[3, T0, V, B0]` clip to [`FRAMES`] by whole-clip
/// repetition and zero-fill missing bodies.
pub fn preprocess(raw: &Tensor, label: usize) -> Result<SkeletonSample> {
    let s = raw.shape();
    if s.len() != 4 || s[0] != COORDS {
        return Err(Error::Data(format!("raw clip must be [3, T, V, B], got {s:?}")));
    }
    let (t0, v, b0) = (s[1], s[2], s[3]);
    if !(1..=BODIES).contains(&b0) {
        return Err(Error::Data(format!("clip has {b0} bodies, expected 1 or 2")));
    }
    let src = raw.data();
    let mut out = vec![0.0; COORDS * FRAMES * v * BODIES];
    for c in 0..COORDS {
        for t in 0..FRAMES {
            let st = t % t0;
            for j in 0..v {
                for m in 0..b0 {
                    out[((c * FRAMES + t) * v + j) * BODIES + m] = src[((c * t0 + st) * v + j) * b0 + m];
                }
            }
        }
    }
    Ok(SkeletonSample {
        data: Tensor::new([COORDS, FRAMES, v, BODIES], out)?,
        label,
    })
}

/// Bone vectors `x[j] - x[parent(j)]`; roots map to zero.
pub fn joints_to_bones(sample: &SkeletonSample, topology: &SkeletonTopology) -> Result<SkeletonSample> {
    let parent = topology
        .parent()
        .ok_or_else(|| Error::Config("bone features need a parent array".into()))?;
    let s = sample.data.shape();
    if s.len() != 4 || s[2] != parent.len() {
        return Err(Error::dim(format!(
            "sample {s:?} does not match a {}-joint topology",
            parent.len()
        )));
    }
    let (c, t, v, m) = (s[0], s[1], s[2], s[3]);
    let x = sample.data.data();
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        for ti in 0..t {
            let row = (ci * t + ti) * v;
            for (j, p) in parent.iter().enumerate() {
                let Some(p) = *p else { continue };
                for mi in 0..m {
                    out[(row + j) * m + mi] = x[(row + j) * m + mi] - x[(row + p) * m + mi];
                }
            }
        }
    }
    Ok(SkeletonSample {
        data: Tensor::new(s.to_vec(), out)?,
        label: sample.label,
    })
}

/// Labeled clips sharing one skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    topology: SkeletonTopology,
    num_classes: usize,
    samples: Vec<SkeletonSample>,
}

impl Dataset {
    pub fn new(topology: SkeletonTopology, num_classes: usize, samples: Vec<SkeletonSample>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Data("dataset needs at least one class".into()));
        }
        let v = topology.num_joints();
        for (i, s) in samples.iter().enumerate() {
            if s.data.shape() != [COORDS, FRAMES, v, BODIES] {
                return Err(Error::Data(format!(
                    "sample {i} has shape {:?}, expected [{COORDS}, {FRAMES}, {v}, {BODIES}]",
                    s.data.shape()
                )));
            }
            if s.label >= num_classes {
                return Err(Error::Data(format!(
                    "sample {i} has label {} with {num_classes} classes",
                    s.label
                )));
            }
        }
        Ok(Dataset {
            topology,
            num_classes,
            samples,
        })
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn num_joints(&self) -> usize {
        self.topology.num_joints()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn samples(&self) -> &[SkeletonSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// The same clips as bone vectors.
    pub fn to_bones(&self) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| joints_to_bones(s, &self.topology))
            .collect::<Result<_>>()?;
        Ok(Dataset {
            samples,
            ..self.clone()
        })
    }

    /// Stack clips into `[B, 3, frames, V, 2]`, keeping the first `frames`
    /// frames of each.
    pub fn batch(&self, indices: &[usize], frames: usize) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if !(1..=FRAMES).contains(&frames) {
            return Err(Error::Config(format!("frames must lie in [1, {FRAMES}], got {frames}")));
        }
        let v = self.num_joints();
        let per_frame = v * BODIES;
        let per_sample = COORDS * frames * per_frame;
        let mut out = Vec::with_capacity(indices.len() * per_sample);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::Index(format!("sample {i} of {}", self.samples.len())))?;
            let d = s.data.data();
            for c in 0..COORDS {
                let start = c * FRAMES * per_frame;
                out.extend_from_slice(&d[start..start + frames * per_frame]);
            }
            labels.push(s.label);
        }
        Ok((Tensor::new([indices.len(), COORDS, frames, v, BODIES], out)?, labels))
    }

    /// Seeded shuffle of all indices, cut into a first and a second half.
    pub fn split_halves(&self, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let second = idx.split_off(idx.len() / 2);
        (idx, second)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(t: usize, v: usize, b: usize) -> Tensor {
        let n = 3 * t * v * b;
        Tensor::new([3, t, v, b], (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn short_clip_repeats() {
        let s = preprocess(&clip(100, 2, 2), 0).unwrap();
        for t in 0..FRAMES {
            assert_eq!(s.data.get(&[1, t, 1, 0]), s.data.get(&[1, t % 100, 1, 0]));
        }
    }

    #[test]
    fn single_body_padded() {
        let s = preprocess(&clip(300, 3, 1), 0).unwrap();
        for t in 0..FRAMES {
            assert_eq!(s.data.get(&[2, t, 2, 1]), 0.0);
        }
        assert_eq!(s.data.get(&[0, 5, 1, 0]), clip(300, 3, 1).get(&[0, 5, 1, 0]));
    }

    #[test]
    fn bone_of_child() {
        let topo = SkeletonTopology::binary_tree(2).unwrap();
        let mut raw = Tensor::zeros([3, 1, 2, 1]);
        raw.set(&[0, 0, 1, 0], 1.0);
        raw.set(&[1, 0, 1, 0], 1.0);
        raw.set(&[1, 0, 0, 0], 1.0);
        let s = preprocess(&raw, 0).unwrap();
        let b = joints_to_bones(&s, &topo).unwrap();
        assert_eq!(
            [b.data.get(&[0, 0, 1, 0]), b.data.get(&[1, 0, 1, 0]), b.data.get(&[2, 0, 1, 0])],
            [1.0, 0.0, 0.0]
        );
        assert_eq!(b.data.get(&[1, 0, 0, 0]), 0.0);
    }
}
