//! CEIM update rules, importance mixing and black-box convergence.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgcn_core::ceim::{
    importance_mix, maximize, rank_weights, sample_population, sort_by_fitness, update_distribution,
    ArchDistribution, Ceim, CeimConfig, FitSample, Origin,
};
use sgcn_core::Error;

fn sphere_config(seed: u64) -> CeimConfig {
    CeimConfig {
        population: 50,
        epochs: 200,
        warmup_epochs: 0,
        seed,
        ..CeimConfig::default()
    }
}

#[test]
fn sphere_converges_for_every_seed() {
    for seed in 0..10 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + seed);
        let c: Vec<f64> = (0..5).map(|_| r.random_range(-1.5..1.5)).collect();
        let f = |a: &[f64]| -a.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let out = maximize(f, ArchDistribution::standard(5), &sphere_config(seed)).unwrap();
        let err = out
            .distribution
            .mu()
            .iter()
            .zip(&c)
            .map(|(m, y)| (m - y).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "seed {seed}: ‖μ − c‖∞ = {err}");
        assert_eq!(out.trace.len(), 200);
    }
}

#[test]
fn rank_weights_closed_forms() {
    let cases: [&[f64]; 3] = [&[1.0], &[2.0 / 3.0, 1.0 / 3.0], &[6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]];
    for want in cases {
        let got = rank_weights(want.len()).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

fn mix_trials(shift_sigmas: f64, trials: usize, seed: u64) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut reused = 0.0;
    for _ in 0..trials {
        let dim = r.random_range(1..8);
        let n = r.random_range(5..40);
        let mu: Vec<f64> = (0..dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let s2: Vec<f64> = (0..dim).map(|_| r.random_range(0.1..2.0)).collect();
        let old = ArchDistribution::new(mu.clone(), s2.clone()).unwrap();
        let shifted: Vec<f64> = mu.iter().zip(&s2).map(|(m, v)| m + shift_sigmas * v.sqrt()).collect();
        let new = ArchDistribution::new(shifted, s2).unwrap();
        let pop = sample_population(&old, n, &mut r);
        let out = importance_mix(&pop, &old, &new, n, &mut r);
        assert_eq!(out.samples.len(), n);
        reused += out.reuse_fraction();
    }
    reused / trials as f64
}

#[test]
fn identical_distributions_reuse_everything() {
    assert!(mix_trials(0.0, 1000, 1) >= 0.99);
}

#[test]
fn distant_distributions_reuse_nothing() {
    assert!(mix_trials(100.0, 1000, 2) <= 0.01);
}

#[test]
fn partial_shift_reuses_in_between() {
    let f = mix_trials(0.5, 300, 3);
    assert!(f > 0.05 && f < 0.95, "{f}");
}

#[test]
fn mixing_from_an_empty_population_draws_fresh() {
    let d = ArchDistribution::standard(4);
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let out = importance_mix(&[], &d, &d, 12, &mut r);
    assert_eq!(out.samples.len(), 12);
    assert_eq!(out.reused, 0);
    assert!(out.samples.iter().all(|s| s.origin == Origin::Fresh && s.fitness.is_none()));
}

#[test]
fn non_finite_fitness_is_redrawn_then_fatal() {
    let cfg = CeimConfig {
        population: 6,
        epochs: 3,
        warmup_epochs: 0,
        ..CeimConfig::default()
    };
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut ceim = Ceim::new(ArchDistribution::standard(3), cfg.clone()).unwrap();
    let mut calls = 0;
    let rec = ceim
        .iterate(0, &mut r, |a| {
            calls += 1;
            Ok(if calls <= 4 { f64::NAN } else { -a[0].abs() })
        })
        .unwrap();
    assert_eq!(rec.discarded, 4);
    assert!(ceim.population().iter().all(|s| s.fitness.unwrap().is_finite()));

    let mut ceim = Ceim::new(ArchDistribution::standard(3), cfg).unwrap();
    let err = ceim.iterate(0, &mut r, |_| Ok(f64::NAN)).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)));
}

#[test]
fn re_evaluation_is_the_default() {
    let cfg = CeimConfig {
        population: 20,
        epochs: 4,
        warmup_epochs: 0,
        ..CeimConfig::default()
    };
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut ceim = Ceim::new(ArchDistribution::standard(2), cfg.clone()).unwrap();
    let mut evals = 0;
    for epoch in 0..3 {
        ceim.iterate(epoch, &mut r, |a| {
            evals += 1;
            Ok(-a[0] * a[0])
        })
        .unwrap();
    }
    assert_eq!(evals, 60);

    let mut ceim = Ceim::new(ArchDistribution::standard(2), CeimConfig { cache_fitness: true, ..cfg }).unwrap();
    let mut evals = 0;
    let mut reused = 0;
    for epoch in 0..3 {
        let rec = ceim
            .iterate(epoch, &mut r, |a| {
                evals += 1;
                Ok(-a[0] * a[0])
            })
            .unwrap();
        reused += (rec.reuse_fraction * 20.0).round() as usize;
    }
    assert_eq!(evals + reused, 60);
}

#[test]
fn epsilon_schedule_runs_linearly() {
    let cfg = CeimConfig::default();
    assert_eq!(cfg.search_iterations(), 50);
    assert_eq!(cfg.epsilon_at(0), 1e-2);
    assert!((cfg.epsilon_at(49) - 1e-5).abs() < 1e-18);
    let mid = cfg.epsilon_at(24);
    assert!((mid - (1e-2 + (1e-5 - 1e-2) * 24.0 / 49.0)).abs() < 1e-15);
}

proptest! {
    #[test]
    fn rank_weights_are_harmonic(n in 1usize..200) {
        let w = rank_weights(n).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..n {
            prop_assert!((w[i] * (i + 1) as f64 - w[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn update_is_a_weighted_moment(
        raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..12),
        mu0 in prop::collection::vec(-1.0f64..1.0, 3),
        eps in 0.0f64..0.1,
    ) {
        let n = raw.len();
        let dist = ArchDistribution::new(mu0.clone(), vec![1.0; 3]).unwrap();
        let samples: Vec<FitSample> = raw.iter().cloned().map(FitSample::fresh).collect();
        let lambda = rank_weights(n).unwrap();
        let next = update_distribution(&dist, &samples, &lambda, eps).unwrap();
        for j in 0..3 {
            let mut m = 0.0;
            let mut v = 0.0;
            for (s, l) in raw.iter().zip(&lambda) {
                m += l * s[j];
                v += l * (s[j] - mu0[j]).powi(2);
            }
            prop_assert!((next.mu()[j] - m).abs() < 1e-12);
            prop_assert!((next.sigma2()[j] - (v + eps)).abs() < 1e-12 || eps == 0.0 && v == 0.0);
            prop_assert!(next.sigma2()[j] > 0.0);
        }
    }

    #[test]
    fn sorting_is_stable_and_best_first(fits in prop::collection::vec(0i32..5, 0..30)) {
        let mut samples: Vec<FitSample> = fits
            .iter()
            .enumerate()
            .map(|(i, &f)| FitSample { fitness: Some(f as f64), ..FitSample::fresh(vec![i as f64]) })
            .collect();
        sort_by_fitness(&mut samples);
        for w in samples.windows(2) {
            let (a, b) = (w[0].fitness.unwrap(), w[1].fitness.unwrap());
            prop_assert!(a >= b);
            if a == b {
                prop_assert!(w[0].alpha[0] < w[1].alpha[0]);
            }
        }
    }

    #[test]
    fn mixing_always_returns_n(
        n in 1usize..30,
        old_len in 0usize..40,
        shift in 0.0f64..5.0,
        seed in any::<u64>(),
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let old = ArchDistribution::standard(3);
        let new = ArchDistribution::new(vec![shift; 3], vec![0.5; 3]).unwrap();
        let pop = sample_population(&old, old_len, &mut r);
        let out = importance_mix(&pop, &old, &new, n, &mut r);
        prop_assert_eq!(out.samples.len(), n);
        prop_assert!(out.reused <= old_len.min(n));
    }
}
