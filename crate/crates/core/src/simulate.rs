//! Synthetic data: a scalar linear-Gaussian hidden Markov model, a bootstrap
//! particle filter producing unnormalized belief measures, and random-measure
//! datasets labelled by closed-form functionals.
//!
//! Every generator is driven by a `ChaCha8Rng` seeded from a `u64`. Dataset
//! run `i` uses seed `base + i`, so runs are independent of each other and of
//! the number of runs generated.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Labeled, Record};
use crate::error::{Error, Result};
use crate::measure::{Atom, ParticleMeasure};
use crate::sum::ordered_sum;

/// `X_0 ~ N(m0, s0^2)`, `X_i = a X_{i-1} + b + q e_i`, `Y_i = c X_i + r n_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmSpec {
    #[serde(default)]
    pub initial_mean: f64,
    #[serde(default = "one")]
    pub initial_sd: f64,
    #[serde(default = "one")]
    pub transition_coef: f64,
    #[serde(default)]
    pub transition_offset: f64,
    pub process_sd: f64,
    #[serde(default = "one")]
    pub observation_coef: f64,
    pub observation_sd: f64,
    pub horizon: usize,
    /// Regime label attached to datasets built from this model.
    #[serde(default)]
    pub label: f64,
}

fn one() -> f64 {
    1.0
}

impl HmmSpec {
    /// Random walk with unit noise observed through unit noise.
    pub fn random_walk(horizon: usize) -> Self {
        Self {
            initial_mean: 0.0,
            initial_sd: 1.0,
            transition_coef: 1.0,
            transition_offset: 0.0,
            process_sd: 1.0,
            observation_coef: 1.0,
            observation_sd: 1.0,
            horizon,
            label: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.initial_mean,
            self.initial_sd,
            self.transition_coef,
            self.transition_offset,
            self.process_sd,
            self.observation_coef,
            self.observation_sd,
            self.label,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("HMM parameters must be finite".into()));
        }
        if self.initial_sd < 0.0 || self.process_sd < 0.0 || self.observation_sd < 0.0 {
            return Err(Error::InvalidArgument(
                "HMM standard deviations must be nonnegative".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("HMM horizon must be at least 1".into()));
        }
        Ok(())
    }

    fn transition<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        self.transition_coef * x + self.transition_offset + self.process_sd * normal(rng)
    }

    /// `log p(y | x)`.
    fn log_likelihood(&self, y: f64, x: f64) -> f64 {
        let r = self.observation_sd;
        let e = (y - self.observation_coef * x) / r;
        -0.5 * e * e - r.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmPath {
    /// `x_0, ..., x_T`.
    pub hidden: Vec<f64>,
    /// `y_1, ..., y_T`.
    pub observations: Vec<f64>,
}

pub fn hmm_generate(spec: &HmmSpec, seed: u64) -> Result<HmmPath> {
    hmm_generate_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn hmm_generate_with<R: Rng + ?Sized>(spec: &HmmSpec, rng: &mut R) -> Result<HmmPath> {
    spec.validate()?;
    let mut hidden = Vec::with_capacity(spec.horizon + 1);
    let mut observations = Vec::with_capacity(spec.horizon);
    let mut x = spec.initial_mean + spec.initial_sd * normal(rng);
    hidden.push(x);
    for _ in 0..spec.horizon {
        x = spec.transition(x, rng);
        hidden.push(x);
        observations.push(spec.observation_coef * x + spec.observation_sd * normal(rng));
    }
    Ok(HmmPath { hidden, observations })
}

/// Particle cloud after assimilating observation `step` (one based).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub step: usize,
    /// `sum_j L_j delta_{x_j}` with `L_j` the accumulated likelihood of particle `j`.
    pub measure: ParticleMeasure,
    /// `log L_j`, before exponentiation.
    pub log_weights: Vec<f64>,
}

impl FilterState {
    pub fn particle_count(&self) -> usize {
        self.log_weights.len()
    }

    /// Posterior mean estimate `int x dmu / mu(E)` (first coordinate).
    pub fn mean(&self) -> f64 {
        self.measure
            .integrate_with(|x| Ok(x[0]), true)
            .expect("filter measures are one-dimensional")
    }
}

/// Bootstrap particle filter.
///
/// Particles start from the initial law with unit weight, are propagated by the
/// transition kernel, and have their weights multiplied by the observation
/// likelihood. Each emitted state holds the weighted cloud before resampling.
/// With `resample`, the cloud is then resampled multinomially and every
/// particle gets weight `mu(E) / m`, so the total mass carries over.
pub fn bootstrap_filter(
    spec: &HmmSpec,
    observations: &[f64],
    particles: usize,
    seed: u64,
    resample: bool,
) -> Result<Vec<FilterState>> {
    bootstrap_filter_with(
        spec,
        observations,
        particles,
        resample,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

pub fn bootstrap_filter_with<R: Rng + ?Sized>(
    spec: &HmmSpec,
    observations: &[f64],
    particles: usize,
    resample: bool,
    rng: &mut R,
) -> Result<Vec<FilterState>> {
    spec.validate()?;
    if particles == 0 {
        return Err(Error::InvalidArgument("particle count must be at least 1".into()));
    }
    if spec.observation_sd.is_nan() || spec.observation_sd <= 0.0 {
        return Err(Error::InvalidArgument(
            "filtering needs a positive observation noise".into(),
        ));
    }
    let mut xs: Vec<f64> = (0..particles)
        .map(|_| spec.initial_mean + spec.initial_sd * normal(rng))
        .collect();
    let mut log_w = vec![0.0; particles];
    let mut states = Vec::with_capacity(observations.len());
    for (t, &y) in observations.iter().enumerate() {
        let step = t + 1;
        for (x, lw) in xs.iter_mut().zip(log_w.iter_mut()) {
            *x = spec.transition(*x, rng);
            *lw += spec.log_likelihood(y, *x);
        }
        let weights = export_weights(&log_w, step)?;
        let measure = ParticleMeasure::new(xs.iter().zip(&weights).map(|(&x, &w)| Atom::new(vec![x], w)).collect())?;
        if resample {
            let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let rel: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
            let rel_total = ordered_sum(rel.clone());
            // log(mu(E) / m), computed relative to the max to avoid underflow.
            let level = max + (rel_total / particles as f64).ln();
            let mut cumulative = Vec::with_capacity(particles);
            let mut acc = 0.0;
            for w in &rel {
                acc += w / rel_total;
                cumulative.push(acc);
            }
            let picked: Vec<f64> = (0..particles)
                .map(|_| {
                    let u: f64 = rng.random();
                    let i = cumulative.partition_point(|&c| c < u).min(particles - 1);
                    xs[i]
                })
                .collect();
            states.push(FilterState {
                step,
                measure,
                log_weights: log_w.clone(),
            });
            xs = picked;
            log_w.iter_mut().for_each(|lw| *lw = level);
        } else {
            states.push(FilterState {
                step,
                measure,
                log_weights: log_w.clone(),
            });
        }
    }
    Ok(states)
}

/// Exponentiates log weights. Individual weights below the smallest positive
/// normal are floored there; if every weight underflows, the step is reported.
fn export_weights(log_w: &[f64], step: usize) -> Result<Vec<f64>> {
    let floor = f64::MIN_POSITIVE;
    if log_w.iter().all(|lw| lw.exp() < floor) {
        return Err(Error::WeightUnderflow { step });
    }
    Ok(log_w.iter().map(|lw| lw.exp().max(floor)).collect())
}

/// Belief-state classification data: for every regime, `runs` independent
/// trajectories are filtered and the terminal measure is labelled with the
/// regime's label. Run `k` of regime `r` uses seed `seed + r * runs + k`.
pub fn make_belief_dataset(
    regimes: &[HmmSpec],
    runs: usize,
    particles: usize,
    seed: u64,
    resample: bool,
) -> Result<Vec<Record>> {
    if regimes.len() < 2 {
        return Err(Error::InvalidArgument(
            "belief datasets need at least two regimes".into(),
        ));
    }
    if runs == 0 {
        return Err(Error::InvalidArgument(
            "runs must be at least 1; the dataset would be empty".into(),
        ));
    }
    let mut out = Vec::with_capacity(regimes.len() * runs);
    for (r, spec) in regimes.iter().enumerate() {
        for k in 0..runs {
            let run_seed = seed.wrapping_add((r * runs + k) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
            let path = hmm_generate_with(spec, &mut rng)?;
            let states = bootstrap_filter_with(spec, &path.observations, particles, resample, &mut rng)?;
            let terminal = states.into_iter().last().expect("horizon >= 1");
            out.push(Labeled::new(terminal.measure, spec.label));
        }
    }
    Ok(out)
}

/// Continuous functionals of `(mu(E), mu / mu(E))` with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    NormalizedMean,
    NormalizedVariance,
    ArctanMass,
    /// `arctan(mu(E)) * mean`.
    MixedMassMean,
}

impl Functional {
    pub fn evaluate(&self, mu: &ParticleMeasure) -> f64 {
        let mean = || mu.integrate_with(|x| Ok(x[0]), true).expect("infallible");
        match self {
            Functional::NormalizedMean => mean(),
            Functional::NormalizedVariance => {
                let m = mean();
                mu.integrate_with(|x| Ok((x[0] - m) * (x[0] - m)), true)
                    .expect("infallible")
            }
            Functional::ArctanMass => mu.total_mass().atan(),
            Functional::MixedMassMean => mu.total_mass().atan() * mean(),
        }
    }

    /// Whether the functional changes when every weight is scaled.
    pub fn depends_on_mass(&self) -> bool {
        matches!(self, Functional::ArctanMass | Functional::MixedMassMean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSampler {
    /// Inclusive atom-count range.
    pub atoms: (usize, usize),
    /// Weights are uniform on `(lo, hi]`.
    pub weights: (f64, f64),
}

impl Default for MeasureSampler {
    fn default() -> Self {
        Self {
            atoms: (1, 8),
            weights: (0.1, 2.0),
        }
    }
}

impl MeasureSampler {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.atoms;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidArgument(format!("invalid atom-count range [{lo}, {hi}]")));
        }
        let (wl, wh) = self.weights;
        if !(wl >= 0.0 && wl < wh && wh.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid weight range ({wl}, {wh}]")));
        }
        Ok(())
    }

    /// A random measure on `[0,1]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParticleMeasure {
        let n = rng.random_range(self.atoms.0..=self.atoms.1);
        let (wl, wh) = self.weights;
        let atoms = (0..n)
            .map(|_| {
                let x: f64 = rng.random();
                // 1 - U lies in (0, 1], keeping the weight strictly above wl >= 0.
                let u: f64 = 1.0 - rng.random::<f64>();
                Atom::new(vec![x], wl + (wh - wl) * u)
            })
            .collect();
        ParticleMeasure::new(atoms).expect("sampled atoms are valid")
    }
}

/// `count` random measures on `[0,1]` labelled by `target`.
pub fn make_functional_dataset(
    target: Functional,
    count: usize,
    sampler: &MeasureSampler,
    seed: u64,
) -> Result<Vec<Record>> {
    sampler.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mu = sampler.sample(&mut rng);
            let y = target.evaluate(&mu);
            Labeled::new(mu, y)
        })
        .collect())
}
