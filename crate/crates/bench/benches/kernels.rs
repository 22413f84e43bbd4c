use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgcn_bench::{clips, conv_case, desk_network, single_module, sphere};
use sgcn_core::ceim::{importance_mix, sample_population, ArchDistribution, Ceim, CeimConfig};
use sgcn_core::graph::{chebyshev_components, normalized_graph, ModuleKind, SkeletonTopology};
use sgcn_core::net::{Assignment, ArchitectureParams, BnMode, NetworkMode};
use sgcn_core::Tape;

fn conv2d(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    for batch in [1, 16] {
        let (x, w) = conv_case(batch);
        g.bench_with_input(BenchmarkId::new("forward_backward", batch), &batch, |b, _| {
            b.iter(|| {
                let mut t = Tape::new();
                let xv = t.param(x.clone());
                let wv = t.param(w.clone());
                let y = t.conv2d(xv, wv, 1, 4).unwrap();
                let s = t.sum(y).unwrap();
                t.backward(s).unwrap()
            })
        });
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    let mut g = c.benchmark_group("network_forward");
    g.sample_size(10);
    let x = clips(16, 64);
    for kind in [ModuleKind::FixedL, ModuleKind::Cheb4, ModuleKind::DynSpatioTemporal] {
        let net = desk_network(single_module(kind));
        g.bench_function(kind.to_string(), |b| {
            b.iter(|| net.predict(&x, Assignment::Finalized, BnMode::Inference).unwrap())
        });
    }
    let mixed = desk_network(NetworkMode::MixedSum);
    let alpha = ArchitectureParams::uniform(10);
    g.bench_function("mixed_all_eight", |b| {
        b.iter(|| mixed.predict(&x, Assignment::Mixed(&alpha), BnMode::BatchStats).unwrap())
    });
    g.finish();
}

fn ceim(c: &mut Criterion) {
    let mut g = c.benchmark_group("ceim");
    let cfg = CeimConfig {
        population: 50,
        warmup_epochs: 0,
        ..CeimConfig::default()
    };
    g.bench_function("iterate_dim80_n50", |b| {
        let mut ceim = Ceim::new(ArchDistribution::standard(80), cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = sphere(0.5);
        b.iter(|| ceim.iterate(0, &mut rng, |a| Ok(f(a))).unwrap())
    });
    let old = ArchDistribution::standard(80);
    let new = ArchDistribution::new(vec![0.1; 80], vec![0.9; 80]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pop = sample_population(&old, 50, &mut rng);
    g.bench_function("importance_mix_dim80_n50", |b| b.iter(|| importance_mix(&pop, &old, &new, 50, &mut rng)));
    g.finish();
}

fn chebyshev(c: &mut Criterion) {
    let topo = SkeletonTopology::ntu25();
    let l = normalized_graph(&topo).unwrap();
    c.bench_function("chebyshev_ntu25", |b| b.iter(|| chebyshev_components(&l)));
}

criterion_group!(benches, conv2d, network, ceim, chebyshev);
criterion_main!(benches);
