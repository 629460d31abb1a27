//! Sequential Monte Carlo over model executions.
//!
//! Each particle owns a [`Ctx`] (forest, generator, log-weight) and a model
//! state. Particles are stepped independently, possibly in parallel; the
//! weight normalization and resampling that follow are a barrier. All
//! random streams are derived from the master seed, the particle slot and
//! the resampling epoch, so results do not depend on the schedule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::model::{Ctx, InferenceMode, Model, ParentPolicy, RandomVar};
use crate::rng::stream_rng;

/// Stream id reserved for the resampling draws.
const RESAMPLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampler {
    #[default]
    Systematic,
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Steps particles on the rayon pool when the `parallel` feature is
    /// enabled, sequentially otherwise.
    #[default]
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmcConfig {
    pub particles: usize,
    /// Resample when `ess < ess_threshold * particles`.
    pub ess_threshold: f64,
    pub resampler: Resampler,
    pub execution: Execution,
    pub mode: InferenceMode,
    pub policy: ParentPolicy,
}

impl SmcConfig {
    pub fn new(particles: usize) -> Self {
        Self {
            particles,
            ess_threshold: 0.5,
            resampler: Resampler::default(),
            execution: Execution::default(),
            mode: InferenceMode::default(),
            policy: ParentPolicy::default(),
        }
    }

    pub fn with_mode(mut self, mode: InferenceMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Particle<S> {
    pub ctx: Ctx,
    pub state: S,
}

pub struct ParticleCloud<'m, M: Model> {
    model: &'m M,
    particles: Vec<Particle<M::State>>,
    weights: Vec<f64>,
    config: SmcConfig,
    seed: u64,
    step: usize,
    epoch: u64,
    last_ess: f64,
}

impl<'m, M: Model> ParticleCloud<'m, M> {
    /// `n` particles, each initialized with `model.init` and its own stream.
    pub fn init(model: &'m M, config: SmcConfig, seed: u64) -> Result<Self> {
        let n = config.particles;
        if n == 0 {
            return Err(Error::InvalidArgument(
                "particle count must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&config.ess_threshold) {
            return Err(Error::InvalidArgument(format!(
                "ess threshold {} outside [0, 1]",
                config.ess_threshold
            )));
        }
        let particles = (0..n)
            .map(|k| {
                let mut ctx = Ctx::new(stream_rng(seed, k as u64, 0), config.mode, config.policy);
                let state = model.init(&mut ctx)?;
                ctx.collect(&state);
                Ok(Particle { ctx, state })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cloud = Self {
            model,
            particles,
            weights: vec![1.0 / n as f64; n],
            config,
            seed,
            step: 0,
            epoch: 0,
            last_ess: n as f64,
        };
        // Observations in `init` contribute to the weights as well.
        cloud.reweight()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn particles(&self) -> &[Particle<M::State>] {
        &self.particles
    }

    pub fn particles_mut(&mut self) -> &mut [Particle<M::State>] {
        &mut self.particles
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of resampling events so far.
    pub fn resample_count(&self) -> u64 {
        self.epoch
    }

    /// ESS computed before the last resampling decision.
    pub fn last_ess(&self) -> f64 {
        self.last_ess
    }

    /// Advances every particle by one step and returns their outputs, in
    /// particle order, as produced before any resampling.
    pub fn step(&mut self, input: &M::Input) -> Result<Vec<M::Output>> {
        let model = self.model;
        let run = |p: &mut Particle<M::State>| -> Result<M::Output> {
            let state = p.state.clone();
            let (next, out) = model.step(&mut p.ctx, state, input)?;
            p.ctx.collect(&next);
            p.state = next;
            Ok(out)
        };
        let results: Vec<Result<M::Output>> = match self.config.execution {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                self.particles.par_iter_mut().map(run).collect()
            }
            _ => self.particles.iter_mut().map(run).collect(),
        };
        self.step += 1;
        let outputs = results.into_iter().collect::<Result<Vec<_>>>()?;
        self.reweight()?;
        Ok(outputs)
    }

    /// Mixture mean and covariance of the variable picked by `extract`.
    pub fn estimate<F>(&mut self, extract: F) -> Result<(DVector<f64>, DMatrix<f64>)>
    where
        F: Fn(&M::State) -> &RandomVar,
    {
        let mut mean: Option<DVector<f64>> = None;
        let mut second: Option<DMatrix<f64>> = None;
        for (p, &w) in self.particles.iter_mut().zip(&self.weights) {
            let (m, c) = p.ctx.moments(extract(&p.state))?;
            let outer = &c + &m * m.transpose();
            match (&mut mean, &mut second) {
                (Some(acc_m), Some(acc_s)) => {
                    check_dim("estimate", acc_m.len(), m.len())?;
                    *acc_m += m * w;
                    *acc_s += outer * w;
                }
                _ => {
                    mean = Some(m * w);
                    second = Some(outer * w);
                }
            }
        }
        let mean = mean.expect("cloud is never empty");
        let cov = second.unwrap() - &mean * mean.transpose();
        Ok((mean, crate::gauss::symmetrize(&cov)))
    }

    fn reweight(&mut self) -> Result<()> {
        let log_w: Vec<f64> = self.particles.iter().map(|p| p.ctx.log_weight()).collect();
        self.weights =
            normalize_log_weights(&log_w).ok_or(Error::DegenerateCloud { step: self.step })?;
        let n = self.particles.len();
        self.last_ess = ess(&self.weights);
        if self.last_ess < self.config.ess_threshold * n as f64 {
            self.resample();
        }
        Ok(())
    }

    fn resample(&mut self) {
        let mut rng = stream_rng(self.seed, RESAMPLE_STREAM, self.step as u64);
        let indices = match self.config.resampler {
            Resampler::Systematic => systematic_resample_with(&self.weights, &mut rng),
            Resampler::Multinomial => multinomial_resample(&self.weights, &mut rng),
        };
        self.epoch += 1;
        let n = self.particles.len();
        let mut next: Vec<Particle<M::State>> =
            indices.iter().map(|&i| self.particles[i].clone()).collect();
        for (k, p) in next.iter_mut().enumerate() {
            p.ctx.reset_log_weight();
            p.ctx.reseed(stream_rng(self.seed, k as u64, self.epoch));
        }
        self.particles = next;
        self.weights = vec![1.0 / n as f64; n];
    }
}

/// Normalizes log-weights with log-sum-exp. `None` when no particle has
/// positive weight.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_w.iter().any(|w| w.is_nan()) {
        return None;
    }
    let exp: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Some(exp.into_iter().map(|e| e / total).collect())
}

/// Effective sample size `1 / Σ wᵢ²` of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling driven by one offset `u ∈ [0, 1/n)`: position
/// `u + k/n` selects the first index whose cumulative weight exceeds it.
///
/// The scan runs on `n`-scaled weights so that positions are `n u + k`
/// and uniform weights hit integer boundaries exactly.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let scale = n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights.first().map_or(0.0, |w| w * scale);
    let mut i = 0;
    let start = u * scale;
    for k in 0..n {
        let pos = start + k as f64;
        while pos >= cumulative && i + 1 < n {
            i += 1;
            cumulative += weights[i] * scale;
        }
        out.push(i);
    }
    out
}

pub fn systematic_resample_with<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let u = rng.random::<f64>() / weights.len() as f64;
    systematic_resample(weights, u)
}

pub fn multinomial_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    (0..n)
        .map(|_| {
            let x = rng.random::<f64>() * acc;
            cumulative.partition_point(|&c| c <= x).min(n - 1)
        })
        .collect()
}
