//! Classification metrics and a nearest-centroid baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fraction of rows whose label is among the `k` highest scores. Ties are
/// broken toward the lower class index.
pub fn top_k_accuracy(scores: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let (n, c) = check_scores(scores, labels)?;
    if k == 0 {
        return Err(Error::Contract("top-k needs k >= 1".into()));
    }
    let s = scores.data();
    let mut hits = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &s[i * c..(i + 1) * c];
        let target = row[y];
        let better = row
            .iter()
            .enumerate()
            .filter(|&(j, &x)| x > target || (x == target && j < y))
            .count();
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

fn check_scores(scores: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let s = scores.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::dim(format!(
            "scores {s:?} for {} labels",
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= s[1]) {
        return Err(Error::Index(format!("label {y} with {} classes", s[1])));
    }
    Ok((s[0], s[1]))
}

/// Row-wise argmax, lowest index on ties.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let c = *scores.shape().last().unwrap_or(&1);
    scores
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

/// Top-1 and, for five or more classes, top-5 accuracy plus confusion
/// counts indexed `[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    pub top1: f64,
    pub top5: Option<f64>,
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate_scores(scores: &Tensor, labels: &[usize]) -> Result<Evaluation> {
    let (n, c) = check_scores(scores, labels)?;
    let mut confusion = vec![vec![0; c]; c];
    for (&y, p) in labels.iter().zip(argmax_rows(scores)) {
        confusion[y][p] += 1;
    }
    Ok(Evaluation {
        samples: n,
        top1: top_k_accuracy(scores, labels, 1)?,
        top5: if c >= 5 {
            Some(top_k_accuracy(scores, labels, 5)?)
        } else {
            None
        },
        confusion,
    })
}

/// Row-wise softmax of a `[N, C]` logit table.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.ndim() != 2 {
        return Err(Error::dim(format!("expected [N, C] scores, got {:?}", logits.shape())));
    }
    let c = logits.shape()[1];
    let data = logits
        .data()
        .chunks(c)
        .flat_map(crate::autodiff::softmax_vec)
        .collect();
    Tensor::new(logits.shape().to_vec(), data)
}

/// Elementwise mean of two per-class probability tables.
pub fn fuse_scores(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() || a.ndim() != 2 {
        return Err(Error::Data(format!(
            "cannot fuse scores of shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x + y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Per-class mean feature vectors.
#[derive(Clone, Debug)]
pub struct NearestCentroid {
    centroids: Vec<Vec<f64>>,
}

impl NearestCentroid {
    /// Fit on rows of `features` (each of equal length).
    pub fn fit(features: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<Self> {
        let d = features.first().map_or(0, Vec::len);
        let mut sums = vec![vec![0.0; d]; num_classes];
        let mut counts = vec![0usize; num_classes];
        for (x, &y) in features.iter().zip(labels) {
            if x.len() != d || y >= num_classes {
                return Err(Error::Data("ragged features or label out of range".into()));
            }
            counts[y] += 1;
            sums[y].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            if n > 0 {
                s.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        Ok(NearestCentroid { centroids: sums })
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        (0..self.centroids.len())
            .fold((0, f64::INFINITY), |(bi, bd), i| {
                let d = dist(&self.centroids[i]);
                if d < bd {
                    (i, d)
                } else {
                    (bi, bd)
                }
            })
            .0
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        hits as f64 / labels.len().max(1) as f64
    }
}
