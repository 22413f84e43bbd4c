//! Whole-network behavior: shapes, mode equivalence, symmetry, training and
//! checkpoints.

mod oracles;

use oracles::{random_tensor, tiny_net_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgcn_core::checkpoint::Checkpoint;
use sgcn_core::data::{synthesize, SyntheticMotionSpec};
use sgcn_core::graph::{ModuleKind, SkeletonTopology};
use sgcn_core::net::{
    build_network, Assignment, ArchitectureParams, BnMode, FinalizedArchitecture, NetConfig, Network, NetworkMode,
};
use sgcn_core::params::Binder;
use sgcn_core::train::{epoch_rng, predict_scores, train_epoch, Activation, LrSchedule, TrainConfig};
use sgcn_core::{Error, Tensor};

#[test]
fn standard_network_maps_ntu_clips_to_sixty_scores() {
    let topo = SkeletonTopology::ntu25();
    let arch = FinalizedArchitecture::single(10, ModuleKind::FixedL);
    let net = build_network(
        &ArchitectureParams::uniform(10),
        topo,
        60,
        NetworkMode::Finalized(arch),
    )
    .unwrap();
    let widths: Vec<usize> = net.blocks().iter().map(|b| b.out_channels()).collect();
    assert_eq!(widths, [64, 64, 64, 64, 128, 128, 128, 256, 256, 256]);
    let strides: Vec<usize> = net.blocks().iter().map(|b| b.stride()).collect();
    assert_eq!(strides, [1, 1, 1, 1, 2, 1, 1, 2, 1, 1]);
    let x = Tensor::zeros([1, 3, 300, 25, 2]);
    let y = net.predict(&x, Assignment::Finalized, BnMode::Inference).unwrap();
    assert_eq!(y.shape(), &[1, 60]);
    assert!(y.is_finite());
}

#[test]
fn wrong_inputs_are_rejected() {
    let net = Network::new(tiny_net_config(3, 0), SkeletonTopology::binary_tree(8).unwrap(), NetworkMode::MixedSum)
        .unwrap();
    let bad_joints = Tensor::zeros([1, 3, 16, 7, 2]);
    let a = ArchitectureParams::uniform(10);
    assert!(matches!(
        net.predict(&bad_joints, Assignment::Mixed(&a), BnMode::BatchStats),
        Err(Error::Dimension(_))
    ));
    let short = ArchitectureParams::uniform(9);
    assert!(net
        .predict(&Tensor::zeros([1, 3, 16, 8, 2]), Assignment::Mixed(&short), BnMode::BatchStats)
        .is_err());
}

/// One-hot logits this large leave the other seven weights below 1e-40.
const SATURATED: f64 = 100.0;

#[test]
fn saturated_mixture_matches_single_module_network() {
    let topo = SkeletonTopology::binary_tree(8).unwrap();
    let mixed = Network::new(tiny_net_config(3, 42), topo.clone(), NetworkMode::MixedSum).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for (i, kind) in ModuleKind::ALL.into_iter().enumerate() {
        let single = Network::new(
            tiny_net_config(3, 42),
            topo.clone(),
            NetworkMode::Finalized(FinalizedArchitecture::single(10, kind)),
        )
        .unwrap();
        let alpha = ArchitectureParams::one_hot(10, kind, SATURATED);
        let inputs = if i < 2 { 7 } else { 6 };
        for _ in 0..inputs {
            let x = random_tensor(&[2, 3, 16, 8, 2], 0.0, &mut r);
            for bn in [BnMode::BatchStats, BnMode::Inference] {
                let a = mixed.predict(&x, Assignment::Mixed(&alpha), bn).unwrap();
                let b = single.predict(&x, Assignment::Finalized, bn).unwrap();
                worst = worst.max(a.max_abs_diff(&b));
            }
        }
    }
    assert!(worst < 1e-5, "{worst:e}");
}

#[test]
fn sampled_assignment_matches_single_module_network() {
    let topo = SkeletonTopology::binary_tree(8).unwrap();
    let sampled = Network::new(tiny_net_config(3, 5), topo.clone(), NetworkMode::SampledSingle).unwrap();
    let kinds: Vec<ModuleKind> = (0..10).map(|l| ModuleKind::ALL[(3 * l) % 8]).collect();
    let arch = FinalizedArchitecture::new(kinds.iter().map(|&k| vec![k]).collect()).unwrap();
    let single = Network::new(tiny_net_config(3, 5), topo, NetworkMode::Finalized(arch)).unwrap();
    let x = random_tensor(&[2, 3, 16, 8, 2], 0.0, &mut ChaCha8Rng::seed_from_u64(2));
    let a = sampled.predict(&x, Assignment::Sampled(&kinds), BnMode::BatchStats).unwrap();
    let b = single.predict(&x, Assignment::Finalized, BnMode::BatchStats).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

fn permute_joints(x: &Tensor, perm: &[usize]) -> Tensor {
    let s = x.shape().to_vec();
    let mut out = Tensor::zeros(s.clone());
    for b in 0..s[0] {
        for c in 0..s[1] {
            for t in 0..s[2] {
                for v in 0..s[3] {
                    for m in 0..s[4] {
                        out.set(&[b, c, t, perm[v], m], x.get(&[b, c, t, v, m]));
                    }
                }
            }
        }
    }
    out
}

#[test]
fn relabeling_joints_leaves_logits_unchanged() {
    let topo = SkeletonTopology::binary_tree(8).unwrap();
    let perm = [3, 0, 6, 1, 7, 2, 5, 4];
    let moved = SkeletonTopology::new(8, topo.edges().iter().map(|&(a, b)| (perm[a], perm[b])).collect()).unwrap();
    let a = Network::new(tiny_net_config(3, 9), topo, NetworkMode::MixedSum).unwrap();
    let b = Network::new(tiny_net_config(3, 9), moved, NetworkMode::MixedSum).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let alpha = ArchitectureParams::new(10, (0..80).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let x = random_tensor(&[2, 3, 16, 8, 2], 0.0, &mut r);
    let ya = a.predict(&x, Assignment::Mixed(&alpha), BnMode::BatchStats).unwrap();
    let yb = b.predict(&permute_joints(&x, &perm), Assignment::Mixed(&alpha), BnMode::BatchStats).unwrap();
    assert!(ya.max_abs_diff(&yb) < 1e-9, "{}", ya.max_abs_diff(&yb));
}

#[test]
fn every_mixed_parameter_receives_gradient() {
    let net = Network::new(tiny_net_config(3, 4), SkeletonTopology::binary_tree(8).unwrap(), NetworkMode::MixedSum)
        .unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let alpha = ArchitectureParams::uniform(10);
    let x = random_tensor(&[2, 3, 16, 8, 2], 0.0, &mut r);
    let mut b = Binder::new(net.params());
    let logits = net.forward(&mut b, &x, Assignment::Mixed(&alpha), BnMode::Train).unwrap();
    let loss = b.tape.cross_entropy(logits, &[0, 2]).unwrap();
    let (grads, bn) = b.backward(loss).unwrap();
    assert!(!bn.is_empty());
    for id in net.active_params(Assignment::Mixed(&alpha)) {
        let g = grads[id.index()].as_ref().unwrap_or_else(|| panic!("{} has no gradient", net.params().name(id)));
        assert!(g.iter().any(|&v| v != 0.0), "{} gradient is zero", net.params().name(id));
    }
}

fn small_data(seed: u64) -> sgcn_core::data::Dataset {
    let spec = SyntheticMotionSpec {
        num_classes: 3,
        samples_per_class: 6,
        joints: 8,
        frames: 16,
        noise_std: 0.05,
    };
    synthesize(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn small_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 6,
        frames: 16,
        schedule: LrSchedule {
            base: 0.05,
            milestones: vec![],
            gamma: 0.1,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn training_fits_a_small_clean_problem() {
    let data = small_data(1);
    let arch = FinalizedArchitecture::single(10, ModuleKind::FixedL);
    let mut net = Network::new(tiny_net_config(3, 1), data.topology().clone(), NetworkMode::Finalized(arch)).unwrap();
    let tc = small_train(12);
    let mut opt = tc.optimizer(&net).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut first = None;
    let mut last = 0.0;
    for e in 0..tc.epochs {
        let s = train_epoch(&mut net, &mut opt, &data, &idx, &tc, e, &mut epoch_rng(0, e), |_| Activation::Finalized)
            .unwrap();
        first.get_or_insert(s.loss);
        last = s.loss;
    }
    assert!(last < 0.5 * first.unwrap(), "loss {} -> {last}", first.unwrap());
}

#[test]
fn checkpoint_restores_predictions_and_momentum() {
    let data = small_data(2);
    let arch = FinalizedArchitecture::new(
        (0..10)
            .map(|l| vec![ModuleKind::ALL[l % 5], ModuleKind::DynSpatioTemporal])
            .collect(),
    )
    .unwrap();
    let mut net = Network::new(tiny_net_config(3, 2), data.topology().clone(), NetworkMode::Finalized(arch)).unwrap();
    let tc = small_train(2);
    let mut opt = tc.optimizer(&net).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    train_epoch(&mut net, &mut opt, &data, &idx, &tc, 0, &mut epoch_rng(0, 0), |_| Activation::Finalized).unwrap();

    let ckpt = Checkpoint::capture(&net, Some(&opt), &tc, 1).unwrap();
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    let restored = back.network().unwrap();
    let scores = |n: &Network| predict_scores(n, &data, &idx, &Activation::Finalized, 16, 4, BnMode::Inference).unwrap();
    assert_eq!(scores(&restored), scores(&net));
    assert_eq!(back.optimizer(&restored).unwrap().velocity(), opt.velocity());

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(Checkpoint::from_bytes(&trailing), Err(Error::Format { .. })));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]), Err(Error::Format { .. })));

    let search_net = Network::new(tiny_net_config(3, 2), data.topology().clone(), NetworkMode::MixedSum).unwrap();
    assert!(Checkpoint::capture(&search_net, None, &tc, 0).is_err());
}

#[test]
fn prediction_does_not_depend_on_batch_size() {
    let data = small_data(3);
    let net = Network::new(
        tiny_net_config(3, 3),
        data.topology().clone(),
        NetworkMode::Finalized(FinalizedArchitecture::single(10, ModuleKind::DynTemporal)),
    )
    .unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let a = predict_scores(&net, &data, &idx, &Activation::Finalized, 16, 1, BnMode::Inference).unwrap();
    let b = predict_scores(&net, &data, &idx, &Activation::Finalized, 16, 7, BnMode::Inference).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn standard_config_scales_down() {
    let cfg = NetConfig::standard(10).with_width_divisor(8);
    assert_eq!(cfg.channels, [8, 8, 8, 8, 16, 16, 16, 32, 32, 32]);
    assert_eq!(cfg.depth(), 10);
}
