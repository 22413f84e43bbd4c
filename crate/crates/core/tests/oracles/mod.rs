//! Reference computations shared by the integration tests. None of them
//! call back into the code they check.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use sgcn_core::autodiff::{Tape, Var};
use sgcn_core::graph::SkeletonTopology;
use sgcn_core::net::{Assignment, BnMode, NetConfig};
use sgcn_core::params::{Binder, ParamStore};
use sgcn_core::{Result, Tensor};

pub const FD_STEP: f64 = 1e-6;

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected_topology<R: Rng>(v: usize, extra_p: f64, rng: &mut R) -> SkeletonTopology {
    let mut edges = Vec::new();
    for i in 1..v {
        edges.push((rng.random_range(0..i), i));
    }
    for i in 0..v {
        for j in i + 1..v {
            let present = edges.iter().any(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i));
            if !present && rng.random_bool(extra_p) {
                edges.push((i, j));
            }
        }
    }
    SkeletonTopology::new(v, edges).unwrap()
}

/// `D^{-1/2} A D^{-1/2}` built directly from the edge list.
pub fn normalized_adjacency(t: &SkeletonTopology) -> DMatrix<f64> {
    let v = t.num_joints();
    let mut a = DMatrix::<f64>::zeros(v, v);
    for &(i, j) in t.edges() {
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    let d: Vec<f64> = (0..v).map(|i| a.row(i).sum()).collect();
    DMatrix::from_fn(v, v, |i, j| {
        if d[i] > 0.0 && d[j] > 0.0 {
            a[(i, j)] / (d[i] * d[j]).sqrt()
        } else {
            0.0
        }
    })
}

/// `U f(Λ) Uᵀ` for a symmetric matrix.
pub fn spectral_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let u = &eig.eigenvectors;
    let fl = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    u * fl * u.transpose()
}

/// `T_k(λ) = cos(k·arccos λ)` on `[-1, 1]`.
pub fn chebyshev_scalar(k: usize, lambda: f64) -> f64 {
    (k as f64 * lambda.clamp(-1.0, 1.0).acos()).cos()
}

/// `T_k(L̂)` through the eigendecomposition of `L̂ = D^{-1/2} A D^{-1/2}`.
pub fn chebyshev_by_eigen(t: &SkeletonTopology, k: usize) -> DMatrix<f64> {
    spectral_apply(&normalized_adjacency(t), |l| chebyshev_scalar(k, l))
}

/// `L^k` with `L = I + L̂`, through the eigendecomposition.
pub fn power_by_eigen(t: &SkeletonTopology, k: usize) -> DMatrix<f64> {
    spectral_apply(&normalized_adjacency(t), |l| (1.0 + l).powi(k as i32))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &Tensor) -> f64 {
    let v = a.nrows();
    assert_eq!(b.shape(), &[v, v]);
    (0..v * v)
        .map(|idx| (a[(idx / v, idx % v)] - b.data()[idx]).abs())
        .fold(0.0, f64::max)
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn projection<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Central-difference check of every input of `f`, projected onto a random
/// direction in output space. Returns the worst relative error.
pub fn gradcheck<R, F>(inputs: &[Tensor], rng: &mut R, f: F) -> f64
where
    R: Rng,
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Tensor {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.value(out).clone()
    };
    let out_len = eval(inputs).numel();
    let w = projection(out_len, rng);
    let scalar = |vals: &[Tensor]| -> f64 { eval(vals).data().iter().zip(&w).map(|(a, b)| a * b).sum() };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let shape = tape.shape(out).to_vec();
    let wv = tape.constant(Tensor::new(shape, w.clone()).unwrap());
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var).expect("input gradient").to_vec();
        let mut numeric = vec![0.0; inputs[i].numel()];
        let mut vals = inputs.to_vec();
        for (k, slot) in numeric.iter_mut().enumerate() {
            let x0 = inputs[i].data()[k];
            vals[i].data_mut()[k] = x0 + FD_STEP;
            let up = scalar(&vals);
            vals[i].data_mut()[k] = x0 - FD_STEP;
            let down = scalar(&vals);
            vals[i].data_mut()[k] = x0;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Tensor with entries uniform in `[-1, 1]`, pushed at least `margin`
/// away from zero so ReLU kinks stay out of finite-difference reach.
pub fn random_tensor<R: Rng>(shape: &[usize], margin: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-1.0..1.0);
            if x.abs() < margin {
                margin.copysign(x)
            } else {
                x
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Ten blocks, four to eight channels, for checks on the full network.
pub fn tiny_net_config(num_classes: usize, seed: u64) -> NetConfig {
    NetConfig {
        channels: vec![4, 4, 4, 4, 8, 8, 8, 8, 8, 8],
        temporal_kernel: 3,
        ..NetConfig::standard(num_classes).with_seed(seed)
    }
}

/// One-sided differences further apart than this mean the step crossed a
/// ReLU kink, where the central difference is not a derivative estimate.
fn crosses_kink(forward: f64, backward: f64) -> bool {
    (forward - backward).abs() > 1e-4 * forward.abs().max(backward.abs()) + 1e-7
}

/// Finite-difference check of the cross-entropy loss of `net` against
/// `samples` coordinates of every trainable parameter. Coordinates whose
/// step straddles a kink are redrawn. Returns the worst relative error over
/// parameters and the number of redrawn coordinates.
pub fn network_gradcheck<R: Rng>(
    net: &mut sgcn_core::net::Network,
    input: &Tensor,
    labels: &[usize],
    assign: Assignment<'_>,
    samples: usize,
    rng: &mut R,
) -> (f64, usize) {
    let loss_of = |net: &sgcn_core::net::Network| -> f64 {
        let mut b = Binder::new(net.params());
        let logits = net.forward(&mut b, input, assign, BnMode::BatchStats).unwrap();
        let loss = b.tape.cross_entropy(logits, labels).unwrap();
        b.tape.value(loss).item().unwrap()
    };
    let (grads, _) = {
        let mut b = Binder::new(net.params());
        let logits = net.forward(&mut b, input, assign, BnMode::BatchStats).unwrap();
        let loss = b.tape.cross_entropy(logits, labels).unwrap();
        b.backward(loss).unwrap()
    };
    let base = loss_of(net);
    let ids: Vec<_> = net.params().ids().collect();
    let mut worst: f64 = 0.0;
    let mut redrawn = 0;
    for id in ids {
        let Some(g) = &grads[id.index()] else {
            continue;
        };
        let n = g.len();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for _ in 0..samples.min(n) {
            for _ in 0..20 {
                let k = rng.random_range(0..n);
                let x0 = net.params().get(id).data()[k];
                net.params_mut().get_mut(id).data_mut()[k] = x0 + FD_STEP;
                let up = loss_of(net);
                net.params_mut().get_mut(id).data_mut()[k] = x0 - FD_STEP;
                let down = loss_of(net);
                net.params_mut().get_mut(id).data_mut()[k] = x0;
                if crosses_kink((up - base) / FD_STEP, (base - down) / FD_STEP) {
                    redrawn += 1;
                    continue;
                }
                analytic.push(g[k]);
                numeric.push((up - down) / (2.0 * FD_STEP));
                break;
            }
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    (worst, redrawn)
}

/// Gradients with respect to every stored parameter of a computation that
/// reads parameters through a [`Binder`].
pub fn store_gradcheck<R, F>(store: &mut ParamStore, x: &Tensor, r: &mut R, f: F) -> f64
where
    R: Rng,
    F: Fn(&mut Binder, Var) -> Var,
{
    let run = |store: &ParamStore, x: &Tensor| -> Tensor {
        let mut b = Binder::new(store);
        let xv = b.tape.constant(x.clone());
        let out = f(&mut b, xv);
        b.tape.value(out).clone()
    };
    let out_len = run(store, x).numel();
    let w: Vec<f64> = (0..out_len).map(|_| r.random_range(-1.0..1.0)).collect();
    let scalar = |store: &ParamStore, x: &Tensor| -> f64 {
        run(store, x).data().iter().zip(&w).map(|(a, b)| a * b).sum()
    };

    let param_grads = {
        let mut b = Binder::new(store);
        let xv = b.tape.constant(x.clone());
        let out = f(&mut b, xv);
        let shape = b.tape.shape(out).to_vec();
        let wv = b.tape.constant(Tensor::new(shape, w.clone()).unwrap());
        let prod = b.tape.mul(out, wv).unwrap();
        let loss = b.tape.sum(prod).unwrap();
        b.backward(loss).unwrap().0
    };

    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        let Some(g) = &param_grads[id.index()] else { continue };
        let mut numeric = vec![0.0; g.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let x0 = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = x0 + FD_STEP;
            let up = scalar(store, x);
            store.get_mut(id).data_mut()[k] = x0 - FD_STEP;
            let down = scalar(store, x);
            store.get_mut(id).data_mut()[k] = x0;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(g, &numeric));
    }
    worst
}
