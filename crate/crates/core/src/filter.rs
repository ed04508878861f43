//! One-dimensional bootstrap particle filter over beacon distance.
//!
//! Particles never move: there is no motion model, so each update only
//! reweights the particle set by a Gaussian likelihood around the measured
//! distance. Multinomial resampling fires when the effective particle count
//! drops below `beta * N`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("particle count must be at least 2, got {0}")]
    ParticleCount(usize),
    #[error("beta must lie in (0, 1], got {0}")]
    Beta(f64),
    #[error("measurement noise must be positive, got {0}")]
    Noise(f64),
    #[error("state range [{0}, {1}] is empty")]
    Range(f64, f64),
    #[error("measurement {0} is not finite")]
    Measurement(f64),
    #[error("particles and weights differ in length ({0} vs {1})")]
    Shape(usize, usize),
    #[error("weights must be non-negative with a positive sum")]
    Weights,
}

/// How [`estimate`] centers the weighted standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdForm {
    /// Spread about the weighted mean of the particles.
    #[default]
    Conventional,
    /// Spread about the arithmetic mean of the weights instead of the
    /// particles. Kept for comparison only.
    WeightMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub particle_count: usize,
    pub beta: f64,
    /// Standard deviation of the measurement likelihood, meters.
    pub measurement_noise: f64,
    pub state_min: f64,
    pub state_max: f64,
    pub seed: u64,
    pub std_form: StdForm,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            particle_count: 1000,
            beta: 0.5,
            measurement_noise: 1.2,
            state_min: 0.0,
            state_max: 4.0,
            seed: 0,
            std_form: StdForm::Conventional,
        }
    }
}

impl FilterConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        FilterConfig { seed, ..self }
    }

    pub fn with_particles(self, particle_count: usize) -> Self {
        FilterConfig {
            particle_count,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.particle_count < 2 {
            return Err(FilterError::ParticleCount(self.particle_count));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(FilterError::Beta(self.beta));
        }
        if !(self.measurement_noise > 0.0 && self.measurement_noise.is_finite()) {
            return Err(FilterError::Noise(self.measurement_noise));
        }
        if !(self.state_min < self.state_max
            && self.state_min.is_finite()
            && self.state_max.is_finite())
        {
            return Err(FilterError::Range(self.state_min, self.state_max));
        }
        Ok(())
    }
}

/// Particle positions (meters) and their normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    particles: Vec<f64>,
    weights: Vec<f64>,
}

impl FilterState {
    /// Builds a state from explicit particles and weights; weights are normalized.
    pub fn from_parts(particles: Vec<f64>, mut weights: Vec<f64>) -> Result<Self, FilterError> {
        if particles.len() != weights.len() {
            return Err(FilterError::Shape(particles.len(), weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(FilterError::Weights);
        }
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(FilterError::Weights);
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(FilterState { particles, weights })
    }

    fn uniform<R: Rng>(config: &FilterConfig, rng: &mut R) -> Self {
        let n = config.particle_count;
        let mut particles: Vec<f64> = (0..n)
            .map(|_| rng.random_range(config.state_min..=config.state_max))
            .collect();
        // Kept ascending; resampling preserves the order.
        particles.sort_by(f64::total_cmp);
        FilterState {
            particles,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// `1 / sum(w^2)`.
    pub fn effective_particles(&self) -> f64 {
        effective_particles(&self.weights)
    }

    /// Weighted mean, weighted standard deviation and effective particle count.
    pub fn estimate(&self, form: StdForm) -> DistanceEstimate {
        let total: f64 = self.weights.iter().sum();
        let mean = self
            .particles
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| p * w)
            .sum::<f64>()
            / total;
        let center = match form {
            StdForm::Conventional => mean,
            StdForm::WeightMean => total / self.weights.len() as f64,
        };
        let nonzero = self.weights.iter().filter(|&&w| w > 0.0).count() as f64;
        let spread: f64 = self
            .particles
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * (p - center).powi(2))
            .sum();
        let std = if nonzero > 1.0 {
            (spread / ((nonzero - 1.0) / nonzero * total)).sqrt()
        } else {
            0.0
        };
        DistanceEstimate {
            mean,
            std,
            effective_particles: self.effective_particles(),
        }
    }

    /// Multinomial resampling: `N` sorted uniform variates are pushed through
    /// the inverse of the weight CDF, and all weights reset to `1/N`.
    pub fn resample<R: Rng>(&mut self, rng: &mut R) {
        let n = self.particles.len();
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cumulative.push(acc);
        }
        // Last index with non-zero weight absorbs rounding at the top of the CDF.
        let last = self
            .weights
            .iter()
            .rposition(|&w| w > 0.0)
            .expect("normalized weights have a positive entry");

        let mut draws: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * acc).collect();
        draws.sort_by(f64::total_cmp);

        let mut selected = Vec::with_capacity(n);
        let mut idx = 0;
        for u in draws {
            while idx < last && cumulative[idx] <= u {
                idx += 1;
            }
            selected.push(self.particles[idx]);
        }
        self.particles = selected;
        self.weights = vec![1.0 / n as f64; n];
    }
}

pub fn effective_particles(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gaussian gain applied to a particle at squared distance `sq` from the measurement.
pub fn gain(sq: f64, noise: f64) -> f64 {
    (-0.5 * sq / (noise * noise)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub mean: f64,
    pub std: f64,
    pub effective_particles: f64,
}

/// What happened during one [`ParticleFilter::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UpdateOutcome {
    pub resampled: bool,
    /// Every gain underflowed to zero; the filter was reinitialized uniformly.
    pub degenerate: bool,
}

/// A seeded particle filter tracking one beacon's distance.
#[derive(Debug, Clone)]
pub struct ParticleFilter {
    config: FilterConfig,
    state: FilterState,
    rng: ChaCha8Rng,
}

impl ParticleFilter {
    pub fn new(config: FilterConfig) -> Result<Self, FilterError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let state = FilterState::uniform(&config, &mut rng);
        Ok(ParticleFilter { config, state, rng })
    }

    /// Wraps an explicit state, e.g. to resume from a trace or for testing.
    pub fn with_state(config: FilterConfig, state: FilterState) -> Result<Self, FilterError> {
        config.validate()?;
        Ok(ParticleFilter {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            state,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn effective_particles(&self) -> f64 {
        self.state.effective_particles()
    }

    /// Clamps a measured distance into the filter's state range.
    pub fn clamp(&self, z: f64) -> f64 {
        z.clamp(self.config.state_min, self.config.state_max)
    }

    /// Reweights by the likelihood of measurement `z` (meters), normalizes,
    /// then resamples if the particle set has degenerated.
    pub fn update(&mut self, z: f64) -> Result<UpdateOutcome, FilterError> {
        if !z.is_finite() {
            return Err(FilterError::Measurement(z));
        }
        let z = self.clamp(z);
        let noise = self.config.measurement_noise;
        let mut total = 0.0;
        for (p, w) in self.state.particles.iter().zip(self.state.weights.iter_mut()) {
            *w *= gain((p - z).powi(2), noise);
            total += *w;
        }
        if !(total > 0.0 && total.is_finite()) {
            log::warn!("particle weights collapsed at measurement {z:.3} m; reinitializing");
            self.state = FilterState::uniform(&self.config, &mut self.rng);
            return Ok(UpdateOutcome {
                resampled: false,
                degenerate: true,
            });
        }
        self.state.weights.iter_mut().for_each(|w| *w /= total);
        Ok(UpdateOutcome {
            resampled: self.maybe_resample(),
            degenerate: false,
        })
    }

    /// Resamples when `N_eff < N * beta`. Returns whether it fired.
    pub fn maybe_resample(&mut self) -> bool {
        let threshold = self.state.len() as f64 * self.config.beta;
        if self.state.effective_particles() < threshold {
            self.state.resample(&mut self.rng);
            true
        } else {
            false
        }
    }

    pub fn estimate(&self) -> DistanceEstimate {
        self.state.estimate(self.config.std_form)
    }
}
