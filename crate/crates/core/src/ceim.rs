//! Cross-entropy method with importance mixing.
//!
//! A diagonal Gaussian over architecture vectors is refined by ranking a
//! population of samples. Old samples whose density stays high under the
//! updated Gaussian are carried over instead of being redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_RATIO: f64 = 1e12;

/// Diagonal Gaussian `N(mu, diag(sigma2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDistribution {
    mu: Vec<f64>,
    sigma2: Vec<f64>,
}

impl ArchDistribution {
    pub fn new(mu: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || mu.len() != sigma2.len() {
            return Err(Error::Config(format!(
                "distribution with {} means and {} variances",
                mu.len(),
                sigma2.len()
            )));
        }
        if mu.iter().any(|m| !m.is_finite()) || sigma2.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("means must be finite and variances positive".into()));
        }
        Ok(ArchDistribution { mu, sigma2 })
    }

    /// `mu = 0`, `sigma2 = 1`.
    pub fn standard(dim: usize) -> Self {
        ArchDistribution {
            mu: vec![0.0; dim],
            sigma2: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut acc = 0.0;
        for ((xi, m), s) in x.iter().zip(&self.mu).zip(&self.sigma2) {
            let d = xi - m;
            acc += d * d / s + s.ln() + LN_2PI;
        }
        -0.5 * acc
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma2)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s.sqrt() * z
            })
            .collect()
    }

    /// Symmetric KL divergence between two diagonal Gaussians.
    pub fn symmetric_kl(&self, other: &ArchDistribution) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim() {
            let (s1, s2) = (self.sigma2[i], other.sigma2[i]);
            let d = self.mu[i] - other.mu[i];
            acc += 0.5 * (s1 / s2 + s2 / s1 - 2.0 + d * d * (1.0 / s1 + 1.0 / s2));
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Fresh,
    Reused,
}

/// A population member. `fitness` is `None` until evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub alpha: Vec<f64>,
    pub fitness: Option<f64>,
    pub origin: Origin,
}

impl FitSample {
    pub fn fresh(alpha: Vec<f64>) -> Self {
        FitSample {
            alpha,
            fitness: None,
            origin: Origin::Fresh,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CeimConfig {
    pub population: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub eval_fraction: f64,
    /// Keep the fitness of carried-over samples instead of re-evaluating.
    pub cache_fitness: bool,
    pub seed: u64,
}

impl Default for CeimConfig {
    fn default() -> Self {
        CeimConfig {
            population: 50,
            epochs: 70,
            warmup_epochs: 20,
            epsilon_start: 1e-2,
            epsilon_end: 1e-5,
            eval_fraction: 1.0 / 3.0,
            cache_fitness: false,
            seed: 0,
        }
    }
}

impl CeimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Config("population must be positive".into()));
        }
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.epsilon_start >= 0.0 && self.epsilon_end >= 0.0) {
            return Err(Error::Config("epsilon must be nonnegative".into()));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "eval_fraction {} outside (0, 1]",
                self.eval_fraction
            )));
        }
        Ok(())
    }

    pub fn search_iterations(&self) -> usize {
        self.epochs - self.warmup_epochs
    }

    /// Noise floor for search iteration `k`, linear from start to end.
    pub fn epsilon_at(&self, k: usize) -> f64 {
        let n = self.search_iterations();
        if n <= 1 {
            return self.epsilon_start;
        }
        let t = k.min(n - 1) as f64 / (n - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

/// `n` independent draws from `dist`.
pub fn sample_population<R: Rng + ?Sized>(dist: &ArchDistribution, n: usize, rng: &mut R) -> Vec<FitSample> {
    (0..n).map(|_| FitSample::fresh(dist.sample(rng))).collect()
}

fn density_ratio(log_num: f64, log_den: f64) -> f64 {
    (log_num - log_den).exp().clamp(0.0, MAX_RATIO)
}

/// Population of exactly `n` drawn from old samples and fresh draws.
#[derive(Clone, Debug)]
pub struct MixOutcome {
    pub samples: Vec<FitSample>,
    pub reused: usize,
}

impl MixOutcome {
    pub fn reuse_fraction(&self) -> f64 {
        self.reused as f64 / self.samples.len().max(1) as f64
    }
}

/// Carry over old samples that pass the retention test, admit fresh draws
/// that pass the acceptance test, then trim or top up to `n`.
///
/// Carried samples keep their fitness; callers that re-evaluate clear it.
pub fn importance_mix<R: Rng + ?Sized>(
    old: &[FitSample],
    pi_old: &ArchDistribution,
    pi_new: &ArchDistribution,
    n: usize,
    rng: &mut R,
) -> MixOutcome {
    let mut pool: Vec<FitSample> = Vec::with_capacity(2 * n);
    if old.is_empty() {
        return MixOutcome {
            samples: sample_population(pi_new, n, rng),
            reused: 0,
        };
    }
    for s in old {
        let keep = density_ratio(pi_new.log_density(&s.alpha), pi_old.log_density(&s.alpha)).min(1.0);
        let r1: f64 = rng.random();
        if keep > r1 {
            pool.push(FitSample {
                origin: Origin::Reused,
                ..s.clone()
            });
        }
    }
    for _ in 0..n {
        let alpha = pi_new.sample(rng);
        let accept = (1.0 - density_ratio(pi_old.log_density(&alpha), pi_new.log_density(&alpha))).max(0.0);
        let r2: f64 = rng.random();
        if accept > r2 {
            pool.push(FitSample::fresh(alpha));
        }
    }
    while pool.len() > n {
        let i = rng.random_range(0..pool.len());
        pool.remove(i);
    }
    while pool.len() < n {
        pool.push(FitSample::fresh(pi_new.sample(rng)));
    }
    let reused = pool.iter().filter(|s| s.origin == Origin::Reused).count();
    MixOutcome { samples: pool, reused }
}

/// Rank weights `λ_i ∝ log(1 + N) / i`, normalized to sum to one.
pub fn rank_weights(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Contract("rank weights need at least one sample".into()));
    }
    let c = ((1 + n) as f64).ln();
    let raw: Vec<f64> = (1..=n).map(|i| c / i as f64).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weighted mean of the sorted samples and weighted spread around the
/// previous mean, plus `epsilon` on the diagonal.
pub fn update_distribution(
    dist: &ArchDistribution,
    sorted: &[FitSample],
    lambda: &[f64],
    epsilon: f64,
) -> Result<ArchDistribution> {
    if sorted.len() != lambda.len() || sorted.is_empty() {
        return Err(Error::Contract(format!(
            "{} samples for {} weights",
            sorted.len(),
            lambda.len()
        )));
    }
    let d = dist.dim();
    let mut mu = vec![0.0; d];
    let mut sigma2 = vec![0.0; d];
    for (s, &l) in sorted.iter().zip(lambda) {
        if s.alpha.len() != d {
            return Err(Error::dim(format!("sample of dimension {} for a {d}-D distribution", s.alpha.len())));
        }
        for j in 0..d {
            mu[j] += l * s.alpha[j];
            let dev = s.alpha[j] - dist.mu[j];
            sigma2[j] += l * dev * dev;
        }
    }
    for s in &mut sigma2 {
        *s += epsilon;
        if *s <= 0.0 {
            // epsilon = 0 with every sample on the old mean.
            *s = f64::MIN_POSITIVE;
        }
    }
    Ok(ArchDistribution { mu, sigma2 })
}

/// Stable sort by fitness, best first. Unevaluated samples go last.
pub fn sort_by_fitness(samples: &mut [FitSample]) {
    let key = |s: &FitSample| s.fitness.unwrap_or(f64::NEG_INFINITY);
    samples.sort_by(|a, b| key(b).total_cmp(&key(a)));
}

/// Whether a trainer epoch belongs to the warmup phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Search,
}

/// One line of the search trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub epsilon: f64,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub reuse_fraction: f64,
    pub discarded: usize,
    pub mu_mean: f64,
    pub mu_max_abs: f64,
    pub sigma2_mean: f64,
    pub mu: Vec<f64>,
}

/// What the search loop needs from the surrounding training setup.
pub trait SearchProblem {
    /// One epoch of weight training. `mu` is the current mean.
    fn train_epoch(&mut self, epoch: usize, phase: Phase, mu: &[f64], rng: &mut ChaCha8Rng) -> Result<()>;

    /// Called before each evaluation round, e.g. to redraw the fitness subset.
    fn begin_round(&mut self, _iteration: usize, _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }

    fn fitness(&mut self, alpha: &[f64]) -> Result<f64>;

    /// Called with each new trace line.
    fn on_iteration(&mut self, _record: &IterationRecord) -> Result<()> {
        Ok(())
    }
}

/// Final state of a search.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: FitSample,
    pub distribution: ArchDistribution,
    pub population: Vec<FitSample>,
    pub trace: Vec<IterationRecord>,
}

/// Incremental CEIM state, one call to [`Ceim::iterate`] per round.
#[derive(Clone, Debug)]
pub struct Ceim {
    cfg: CeimConfig,
    dist: ArchDistribution,
    prev: Option<ArchDistribution>,
    population: Vec<FitSample>,
    iteration: usize,
}

/// Redraws allowed per population slot before a NaN fitness is fatal.
const MAX_REDRAWS: usize = 100;

impl Ceim {
    pub fn new(dist: ArchDistribution, cfg: CeimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Ceim {
            cfg,
            dist,
            prev: None,
            population: Vec::new(),
            iteration: 0,
        })
    }

    pub fn distribution(&self) -> &ArchDistribution {
        &self.dist
    }

    pub fn population(&self) -> &[FitSample] {
        &self.population
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Mix, evaluate, rank and refit once.
    pub fn iterate<F>(&mut self, epoch: usize, rng: &mut ChaCha8Rng, mut fitness: F) -> Result<IterationRecord>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        let n = self.cfg.population;
        let mix = match &self.prev {
            Some(prev) => importance_mix(&self.population, prev, &self.dist, n, rng),
            None => importance_mix(&[], &self.dist, &self.dist, n, rng),
        };
        let reuse_fraction = mix.reuse_fraction();
        let mut samples = mix.samples;
        let mut discarded = 0;
        for s in samples.iter_mut() {
            if !self.cfg.cache_fitness {
                s.fitness = None;
            }
            let mut tries = 0;
            while s.fitness.is_none() {
                let f = fitness(&s.alpha)?;
                if f.is_finite() {
                    s.fitness = Some(f);
                } else {
                    log::warn!("fitness {f} at iteration {}; redrawing sample", self.iteration);
                    discarded += 1;
                    tries += 1;
                    if tries > MAX_REDRAWS {
                        return Err(Error::Numerical(format!(
                            "fitness stayed non-finite over {MAX_REDRAWS} redraws"
                        )));
                    }
                    *s = FitSample::fresh(self.dist.sample(rng));
                }
            }
        }
        sort_by_fitness(&mut samples);
        let lambda = rank_weights(n)?;
        let epsilon = self.cfg.epsilon_at(self.iteration);
        let next = update_distribution(&self.dist, &samples, &lambda, epsilon)?;
        let fits: Vec<f64> = samples.iter().filter_map(|s| s.fitness).collect();
        let record = IterationRecord {
            epoch,
            iteration: self.iteration,
            epsilon,
            best_fitness: fits[0],
            mean_fitness: fits.iter().sum::<f64>() / fits.len() as f64,
            reuse_fraction,
            discarded,
            mu_mean: next.mu.iter().sum::<f64>() / next.dim() as f64,
            mu_max_abs: next.mu.iter().fold(0.0, |m, v| m.max(v.abs())),
            sigma2_mean: next.sigma2.iter().sum::<f64>() / next.dim() as f64,
            mu: next.mu.clone(),
        };
        self.prev = Some(std::mem::replace(&mut self.dist, next));
        self.population = samples;
        self.iteration += 1;
        Ok(record)
    }
}

/// Alternate weight training and distribution updates.
///
/// The first `warmup_epochs` epochs only train; every later epoch trains at
/// the current mean and then runs one CEIM round.
pub fn search<P: SearchProblem>(problem: &mut P, dim: usize, cfg: &CeimConfig) -> Result<SearchOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ceim = Ceim::new(ArchDistribution::standard(dim), cfg.clone())?;
    let mut trace = Vec::with_capacity(cfg.search_iterations());
    for epoch in 0..cfg.epochs {
        let phase = if epoch < cfg.warmup_epochs {
            Phase::Warmup
        } else {
            Phase::Search
        };
        problem.train_epoch(epoch, phase, ceim.distribution().mu(), &mut rng)?;
        if phase == Phase::Warmup {
            continue;
        }
        problem.begin_round(ceim.iteration(), &mut rng)?;
        let record = ceim.iterate(epoch, &mut rng, |a| problem.fitness(a))?;
        problem.on_iteration(&record)?;
        trace.push(record);
    }
    let population = ceim.population().to_vec();
    Ok(SearchOutcome {
        best: population[0].clone(),
        distribution: ceim.distribution().clone(),
        population,
        trace,
    })
}

/// Black-box maximization of `f` with no weight training.
pub fn maximize<F>(f: F, init: ArchDistribution, cfg: &CeimConfig) -> Result<SearchOutcome>
where
    F: FnMut(&[f64]) -> f64,
{
    struct BlackBox<F>(F);
    impl<F: FnMut(&[f64]) -> f64> SearchProblem for BlackBox<F> {
        fn train_epoch(&mut self, _: usize, _: Phase, _: &[f64], _: &mut ChaCha8Rng) -> Result<()> {
            Ok(())
        }
        fn fitness(&mut self, alpha: &[f64]) -> Result<f64> {
            Ok((self.0)(alpha))
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ceim = Ceim::new(init, cfg.clone())?;
    let mut problem = BlackBox(f);
    let mut trace = Vec::new();
    for epoch in cfg.warmup_epochs..cfg.epochs {
        let record = ceim.iterate(epoch, &mut rng, |a| problem.fitness(a))?;
        trace.push(record);
    }
    let population = ceim.population().to_vec();
    Ok(SearchOutcome {
        best: population[0].clone(),
        distribution: ceim.distribution().clone(),
        population,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_weights_small_n() {
        assert_eq!(rank_weights(1).unwrap(), vec![1.0]);
        let w = rank_weights(3).unwrap();
        for (a, b) in w.iter().zip([6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(rank_weights(0).is_err());
    }

    #[test]
    fn hand_update() {
        let d = ArchDistribution::new(vec![0.0], vec![1.0]).unwrap();
        let s = [FitSample::fresh(vec![3.0]), FitSample::fresh(vec![0.0])];
        let n = update_distribution(&d, &s, &[2.0 / 3.0, 1.0 / 3.0], 0.0).unwrap();
        assert!((n.mu()[0] - 2.0).abs() < 1e-12);
        assert!((n.sigma2()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn log_density_matches_closed_form() {
        let d = ArchDistribution::new(vec![1.0, -1.0], vec![4.0, 0.25]).unwrap();
        let x = [2.0, 0.0];
        let p1 = (-(1.0f64) / 8.0).exp() / (2.0 * std::f64::consts::PI * 4.0).sqrt();
        let p2 = (-(1.0f64) / 0.5).exp() / (2.0 * std::f64::consts::PI * 0.25).sqrt();
        assert!((d.log_density(&x) - (p1 * p2).ln()).abs() < 1e-12);
    }
}
