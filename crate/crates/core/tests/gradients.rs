//! Finite-difference checks of every differentiable op and of whole
//! networks.

mod oracles;

use oracles::{gradcheck, network_gradcheck, random_tensor, store_gradcheck, tiny_net_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgcn_core::graph::{
    apply_module, propagate, DynamicGraphGenerator, DynamicMode, GraphSet, ModuleKind,
    SkeletonTopology,
};
use sgcn_core::net::{Assignment, ArchitectureParams, FinalizedArchitecture, Network, NetworkMode};
use sgcn_core::params::{Binder, Init, ParamStore};
use sgcn_core::{Tape, Tensor};

const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check(name: &str, err: f64) {
    assert!(err < TOL, "{name}: relative error {err:e}");
}

#[test]
fn matmul_all_layouts() {
    let mut r = rng(1);
    for case in 0..12 {
        let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let ta = case % 2 == 1;
        let tb = (case / 2) % 2 == 1;
        let batched = case >= 4;
        let shared = case >= 8;
        let a_shape: Vec<usize> = match (batched, ta) {
            (false, false) => vec![m, k],
            (false, true) => vec![k, m],
            (true, false) => vec![3, m, k],
            (true, true) => vec![3, k, m],
        };
        let b_shape: Vec<usize> = match (batched && !shared, tb) {
            (false, false) => vec![k, n],
            (false, true) => vec![n, k],
            (true, false) => vec![3, k, n],
            (true, true) => vec![3, n, k],
        };
        let inputs = [random_tensor(&a_shape, 0.0, &mut r), random_tensor(&b_shape, 0.0, &mut r)];
        let err = gradcheck(&inputs, &mut r, |t, v| t.matmul_ex(v[0], v[1], ta, tb));
        check(&format!("matmul case {case}"), err);
    }
}

#[test]
fn conv2d_strides_padding_kernels() {
    let mut r = rng(2);
    for case in 0..12 {
        let b = r.random_range(1..3);
        let cin = r.random_range(1..4);
        let cout = r.random_range(1..4);
        let t = r.random_range(5..9);
        let v = r.random_range(1..4);
        let kt = [1, 3, 5][case % 3];
        let kv = if case % 4 == 3 { v } else { 1 };
        let stride = 1 + case % 2;
        let pad = (kt - 1) / 2;
        let inputs = [
            random_tensor(&[b, cin, t, v], 0.0, &mut r),
            random_tensor(&[cout, cin, kt, kv], 0.0, &mut r),
        ];
        let err = gradcheck(&inputs, &mut r, |tp, x| tp.conv2d(x[0], x[1], stride, pad));
        check(&format!("conv2d case {case}"), err);
    }
}

#[test]
fn softmax_each_axis() {
    let mut r = rng(3);
    for case in 0..9 {
        let shape = [r.random_range(1..4), r.random_range(2..5), r.random_range(2..5)];
        let axis = case % 3;
        let x = random_tensor(&shape, 0.0, &mut r);
        let err = gradcheck(&[x], &mut r, |t, v| t.softmax(v[0], axis));
        check(&format!("softmax axis {axis}"), err);
    }
}

#[test]
fn cross_entropy_and_relu() {
    let mut r = rng(4);
    for case in 0..8 {
        let (n, c) = (r.random_range(1..6), r.random_range(2..7));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let x = random_tensor(&[n, c], 0.0, &mut r);
        let err = gradcheck(&[x], &mut r, |t, v| t.cross_entropy(v[0], &labels));
        check(&format!("cross_entropy case {case}"), err);
    }
    for case in 0..6 {
        let x = random_tensor(&[2, 3, r.random_range(1..5)], 0.05, &mut r);
        let err = gradcheck(&[x], &mut r, |t, v| t.relu(v[0]));
        check(&format!("relu case {case}"), err);
    }
}

#[test]
fn batch_norm_batch_and_running_statistics() {
    let mut r = rng(5);
    for case in 0..8 {
        let (n, c, s) = (r.random_range(2..5), r.random_range(1..4), r.random_range(1..5));
        let inputs = [
            random_tensor(&[n, c, s], 0.0, &mut r),
            random_tensor(&[c], 0.0, &mut r),
            random_tensor(&[c], 0.0, &mut r),
        ];
        if case % 2 == 0 {
            let err = gradcheck(&inputs, &mut r, |t, v| Ok(t.batch_norm(v[0], v[1], v[2], 1e-5, None)?.0));
            check(&format!("batch_norm batch stats case {case}"), err);
        } else {
            let mean: Vec<f64> = (0..c).map(|_| r.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
            let err = gradcheck(&inputs, &mut r, |t, v| {
                Ok(t.batch_norm(v[0], v[1], v[2], 1e-5, Some((&mean, &var)))?.0)
            });
            check(&format!("batch_norm running case {case}"), err);
        }
    }
}

#[test]
fn reductions_and_elementwise() {
    let mut r = rng(6);
    for case in 0..6 {
        let shape = [r.random_range(1..4), r.random_range(1..4), r.random_range(1..4)];
        let axis = case % 3;
        let a = random_tensor(&shape, 0.0, &mut r);
        let b = random_tensor(&shape, 0.0, &mut r);
        check("mean_axis", gradcheck(&[a.clone()], &mut r, |t, v| t.mean_axis(v[0], axis)));
        check("global_avg_pool", gradcheck(&[a.clone()], &mut r, |t, v| t.global_avg_pool(v[0])));
        check("add", gradcheck(&[a.clone(), b.clone()], &mut r, |t, v| t.add(v[0], v[1])));
        check("mul", gradcheck(&[a.clone(), b.clone()], &mut r, |t, v| t.mul(v[0], v[1])));
        check("scale", gradcheck(&[a.clone()], &mut r, |t, v| t.scale(v[0], -1.7)));
        check("sum", gradcheck(&[a.clone()], &mut r, |t, v| t.sum(v[0])));
        let bias = random_tensor(&[shape[1]], 0.0, &mut r);
        check("add_bias", gradcheck(&[a.clone(), bias], &mut r, |t, v| t.add_bias(v[0], v[1])));
        let flat = [shape[0] * shape[1] * shape[2]];
        check("reshape", gradcheck(&[a.clone()], &mut r, |t, v| {
            let y = t.reshape(v[0], &flat)?;
            t.mul(y, y)
        }));
        let w = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 0.25];
        let c = random_tensor(&shape, 0.0, &mut r);
        check("weighted_sum", gradcheck(&[a, b, c], &mut r, |t, v| t.weighted_sum(v, &w)));
    }
}

#[test]
fn propagate_fixed_and_per_sample_graphs() {
    let mut r = rng(7);
    for case in 0..8 {
        let (b, c, t, v) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..4), r.random_range(2..6));
        let g_shape: Vec<usize> = if case % 2 == 0 { vec![v, v] } else { vec![b, v, v] };
        let inputs = [random_tensor(&[b, c, t, v], 0.0, &mut r), random_tensor(&g_shape, 0.0, &mut r)];
        let err = gradcheck(&inputs, &mut r, |tp, x| propagate(tp, x[0], x[1]));
        check(&format!("propagate case {case}"), err);
    }
}

#[test]
fn dynamic_generators_wrt_input_and_embeddings() {
    let mut r = rng(8);
    let modes = [DynamicMode::Spatial, DynamicMode::Temporal, DynamicMode::SpatioTemporal];
    for case in 0..9 {
        let mode = modes[case % 3];
        let double = case >= 6;
        let (b, c, t, v) = (r.random_range(1..3), r.random_range(1..4), r.random_range(3..6), r.random_range(2..6));
        let mut store = ParamStore::new(case as u64);
        let generator = DynamicGraphGenerator::new(&mut store, "g", mode, c, 3, 3)
            .unwrap()
            .with_double_softmax(double);
        let x = random_tensor(&[b, c, t, v], 0.0, &mut r);

        let err = store_gradcheck(&mut store, &x, &mut r, |bd, xv| generator.forward(bd, xv).unwrap());
        check(&format!("dynamic {mode:?} double={double} params"), err);

        let frozen = store.clone();
        let err = gradcheck(&[x], &mut r, |tape, vars| {
            let mut bd = Binder::new(&frozen);
            bd.tape = std::mem::take(tape);
            let out = generator.forward(&mut bd, vars[0]);
            *tape = std::mem::take(&mut bd.tape);
            out
        });
        check(&format!("dynamic {mode:?} double={double} input"), err);
    }
}

#[test]
fn every_function_module() {
    let mut r = rng(9);
    let topo = SkeletonTopology::binary_tree(6).unwrap();
    let graphs = GraphSet::new(&topo, Default::default()).unwrap();
    for (i, kind) in ModuleKind::ALL.into_iter().enumerate() {
        let (cin, cout) = (2, 3);
        let mut store = ParamStore::new(i as u64);
        let theta = store.add("theta", &[cout, cin, 1, 1], Init::He { fan_in: cin }).unwrap();
        let generator = kind.dynamic_mode().map(|m| DynamicGraphGenerator::new(&mut store, "g", m, cin, 4, 3).unwrap());
        let x = random_tensor(&[2, cin, 4, 6], 0.0, &mut r);
        let err = store_gradcheck(&mut store, &x, &mut r, |bd, xv| {
            apply_module(bd, kind, xv, &graphs, generator.as_ref(), theta).unwrap()
        });
        check(&format!("module {kind}"), err);
    }
}

fn tiny_input(r: &mut ChaCha8Rng, batch: usize) -> (Tensor, Vec<usize>) {
    let x = random_tensor(&[batch, 3, 16, 8, 2], 0.0, r);
    let labels = (0..batch).map(|i| i % 3).collect();
    (x, labels)
}

#[test]
fn full_network_mixed_sampled_finalized() {
    let mut r = rng(10);
    let topo = SkeletonTopology::binary_tree(8).unwrap();
    let (x, labels) = tiny_input(&mut r, 3);

    let mut net = Network::new(tiny_net_config(3, 1), topo.clone(), NetworkMode::MixedSum).unwrap();
    let alpha = ArchitectureParams::new(10, (0..80).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let (err, _) = network_gradcheck(&mut net, &x, &labels, Assignment::Mixed(&alpha), 3, &mut r);
    check("network mixed", err);

    let kinds: Vec<ModuleKind> = (0..10).map(|l| ModuleKind::ALL[l % 8]).collect();
    let mut net = Network::new(tiny_net_config(3, 2), topo.clone(), NetworkMode::SampledSingle).unwrap();
    let (err, _) = network_gradcheck(&mut net, &x, &labels, Assignment::Sampled(&kinds), 3, &mut r);
    check("network sampled", err);

    let arch = FinalizedArchitecture::new(
        (0..10)
            .map(|l| vec![ModuleKind::ALL[l % 8], ModuleKind::ALL[(l + 5) % 8]])
            .collect(),
    )
    .unwrap();
    let mut cfg = tiny_net_config(3, 3);
    cfg.double_softmax = true;
    let mut net = Network::new(cfg, topo, NetworkMode::Finalized(arch)).unwrap();
    let (err, _) = network_gradcheck(&mut net, &x, &labels, Assignment::Finalized, 3, &mut r);
    check("network finalized", err);
}

#[test]
fn tape_records_only_what_it_is_given() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::scalar(2.0));
    let b = tape.constant(Tensor::scalar(3.0));
    let y = tape.mul(a, b).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(a), Some(&[3.0][..]));
    assert!(g.get(b).is_none());
}
