//! Runner tracking from speedometer and altimeter readings.
//!
//! The runner's speed follows a Gaussian random walk and its position
//! integrates the previous speed plus noise. The altitude is a known
//! nonlinear function of the position. Both sensors report only every
//! `observe_every` steps.
//!
//! The inference model observes the speed before the position is built,
//! so with [`Algo::Sbp`] the speed stays symbolic and is filtered exactly
//! while the position is sampled. [`Algo::Smc`] runs the same program with
//! every variable sampled, which is the bootstrap particle filter.

use std::time::Instant;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AffineExpr, Ctx, InferenceMode, Model, RandomVar};
use crate::rng::{derive_seed, stream_rng};
use crate::smc::{Execution, ParticleCloud, SmcConfig};

use super::quantile;

const TRUTH_STREAM: u64 = u64::MAX - 3;

/// Altitude map of the trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case", deny_unknown_fields)]
pub enum Terrain {
    /// `amp_long · sin(x / scale_long) + amp_short · sin(x / scale_short)`.
    Sines {
        amp_long: f64,
        scale_long: f64,
        amp_short: f64,
        scale_short: f64,
    },
}

impl Default for Terrain {
    fn default() -> Self {
        Terrain::Sines {
            amp_long: 10.0,
            scale_long: 10.0,
            amp_short: 5.0,
            scale_short: 3.0,
        }
    }
}

impl Terrain {
    pub fn altitude(&self, x: f64) -> f64 {
        match *self {
            Terrain::Sines {
                amp_long,
                scale_long,
                amp_short,
                scale_short,
            } => amp_long * (x / scale_long).sin() + amp_short * (x / scale_short).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Initial speed standard deviation.
    pub sigma_s0: f64,
    /// Initial position standard deviation.
    pub sigma_x0: f64,
    /// Speed random-walk standard deviation.
    pub sigma_s: f64,
    /// Position noise standard deviation.
    pub sigma_x: f64,
    /// Speedometer noise standard deviation. The default models an
    /// accurate speedometer: sampled speeds are then heavily penalized by
    /// the speed reading, which exact speed filtering avoids.
    pub sigma_t: f64,
    /// Altimeter noise standard deviation.
    pub sigma_b: f64,
    pub horizon: usize,
    pub observe_every: usize,
    pub terrain: Terrain,
    pub divergence_threshold: f64,
    pub divergence_patience: usize,
    /// Report the true speed and altitude to the sensors without noise.
    /// The inference model keeps its configured sensor noise.
    pub noise_free_observations: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            sigma_s0: 1.0,
            sigma_x0: 1.0,
            sigma_s: 0.3,
            sigma_x: 0.1,
            sigma_t: 0.01,
            sigma_b: 1.0,
            horizon: 1000,
            observe_every: 5,
            terrain: Terrain::default(),
            divergence_threshold: 10.0,
            divergence_patience: 10,
            noise_free_observations: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.sigma_s0,
            self.sigma_x0,
            self.sigma_s,
            self.sigma_x,
            self.sigma_t,
            self.sigma_b,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(
                "every sigma must be positive".into(),
            ));
        }
        if self.horizon == 0 || self.observe_every == 0 || self.divergence_patience == 0 {
            return Err(Error::InvalidArgument(
                "horizon, observe_every and divergence_patience must be at least 1".into(),
            ));
        }
        if self.divergence_threshold.is_nan() || self.divergence_threshold <= 0.0 {
            return Err(Error::InvalidArgument(
                "divergence threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Sbp,
    Smc,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Sbp => "sbp",
            Algo::Smc => "smc",
        }
    }

    fn mode(self) -> InferenceMode {
        match self {
            Algo::Sbp => InferenceMode::Exact,
            Algo::Smc => InferenceMode::SampleAll,
        }
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sbp" => Ok(Algo::Sbp),
            "smc" => Ok(Algo::Smc),
            other => Err(Error::InvalidArgument(format!(
                "unknown algorithm {other:?}"
            ))),
        }
    }
}

/// Sensor readings for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunnerObs {
    pub speed: Option<f64>,
    pub altitude: Option<f64>,
}

/// Simulated runner: positions and readings for steps `1..=horizon`.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub position: Vec<f64>,
    pub speed: Vec<f64>,
    pub obs: Vec<RunnerObs>,
}

pub fn simulate_truth(config: &TrackerConfig, seed: u64) -> GroundTruth {
    let mut rng = stream_rng(seed, TRUTH_STREAM, 0);
    let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut s = config.sigma_s0 * z();
    let mut x = config.sigma_x0 * z();
    let mut truth = GroundTruth {
        position: Vec::with_capacity(config.horizon),
        speed: Vec::with_capacity(config.horizon),
        obs: Vec::with_capacity(config.horizon),
    };
    for t in 1..=config.horizon {
        let x_next = x + s + config.sigma_x * z();
        let s_next = s + config.sigma_s * z();
        let (speed_noise, alt_noise) = (config.sigma_t * z(), config.sigma_b * z());
        let obs = if t % config.observe_every == 0 {
            let clean = config.noise_free_observations;
            RunnerObs {
                speed: Some(s_next + if clean { 0.0 } else { speed_noise }),
                altitude: Some(
                    config.terrain.altitude(x_next) + if clean { 0.0 } else { alt_noise },
                ),
            }
        } else {
            RunnerObs::default()
        };
        truth.position.push(x_next);
        truth.speed.push(s_next);
        truth.obs.push(obs);
        s = s_next;
        x = x_next;
    }
    truth
}

/// The tracker as an engine model. State is `(speed, position)`.
pub struct RunnerModel<'a> {
    pub config: &'a TrackerConfig,
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

impl Model for RunnerModel<'_> {
    type State = (RandomVar, RandomVar);
    type Input = RunnerObs;
    type Output = f64;

    fn init(&self, ctx: &mut Ctx) -> Result<Self::State> {
        let c = self.config;
        let s = ctx.rand_normal(AffineExpr::scalar(0.0), c.sigma_s0.powi(2))?;
        let x = ctx.rand_normal(AffineExpr::scalar(0.0), c.sigma_x0.powi(2))?;
        Ok((s, x))
    }

    fn step(
        &self,
        ctx: &mut Ctx,
        (s, x): Self::State,
        obs: &RunnerObs,
    ) -> Result<(Self::State, f64)> {
        let c = self.config;
        let s_next = ctx.rand_normal(ctx.expr(&s)?, c.sigma_s.powi(2))?;
        // Observing the speed before the position keeps it exact.
        if let Some(v) = obs.speed {
            let reading = ctx.rand_normal(ctx.expr(&s_next)?, c.sigma_t.powi(2))?;
            ctx.observe_rv(&reading, &v1(v))?;
        }
        let mean = ctx.expr(&x)?.plus(ctx.expr(&s)?)?;
        let mut x_next = ctx.rand_normal(mean, c.sigma_x.powi(2))?;
        let position = ctx.scalar_value_of(&mut x_next)?;
        let altitude = c.terrain.altitude(position);
        if let Some(v) = obs.altitude {
            let reading = ctx.rand_normal(AffineExpr::scalar(altitude), c.sigma_b.powi(2))?;
            ctx.observe_rv(&reading, &v1(v))?;
        }
        Ok(((s_next, x_next), position))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub sim: usize,
    pub seed: u64,
    pub algo: Algo,
    pub particles: usize,
    /// First step of the run of consecutive far-off estimates that
    /// triggered divergence, or the horizon if the tracker never diverged.
    pub divergence_step: usize,
    pub wallclock_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<f64>>,
}

/// Seed of simulation `sim` under `master`. Ground truth depends only on
/// this value, never on the algorithm.
pub fn sim_seed(master: u64, sim: usize) -> u64 {
    derive_seed(master, sim as u64, 0)
}

pub fn run_tracker_sim(
    config: &TrackerConfig,
    algo: Algo,
    particles: usize,
    sim: usize,
    master_seed: u64,
    execution: Execution,
    record_estimates: bool,
) -> Result<RunResult> {
    config.validate()?;
    let seed = sim_seed(master_seed, sim);
    let truth = simulate_truth(config, seed);
    let start = Instant::now();
    let model = RunnerModel { config };
    let smc = SmcConfig::new(particles)
        .with_mode(algo.mode())
        .with_execution(execution);
    let mut cloud = ParticleCloud::init(&model, smc, derive_seed(seed, 1, 0))?;
    let mut estimates = record_estimates.then(|| Vec::with_capacity(config.horizon));
    let mut streak = 0;
    let mut divergence_step = config.horizon;
    for t in 1..=config.horizon {
        match cloud.step(&truth.obs[t - 1]) {
            Ok(_) => {}
            Err(Error::DegenerateCloud { .. }) => {
                divergence_step = t;
                break;
            }
            Err(e) => return Err(e),
        }
        let estimate = cloud.estimate(|(_, x)| x)?.0[0];
        if let Some(est) = estimates.as_mut() {
            est.push(estimate);
        }
        if (estimate - truth.position[t - 1]).abs() > config.divergence_threshold {
            streak += 1;
            if streak == config.divergence_patience {
                divergence_step = t + 1 - streak;
                break;
            }
        } else {
            streak = 0;
        }
    }
    Ok(RunResult {
        sim,
        seed,
        algo,
        particles,
        divergence_step,
        wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
        estimates,
    })
}

/// Runs `sims` simulations. Simulations run in parallel when the
/// `parallel` feature is enabled; results are returned in simulation order
/// and do not depend on the schedule.
pub fn run_study(
    config: &TrackerConfig,
    algo: Algo,
    particles: usize,
    sims: usize,
    master_seed: u64,
) -> Result<Vec<RunResult>> {
    if sims == 0 {
        return Err(Error::InvalidArgument("sims must be at least 1".into()));
    }
    config.validate()?;
    let run = |sim: usize| {
        run_tracker_sim(
            config,
            algo,
            particles,
            sim,
            master_seed,
            Execution::Sequential,
            false,
        )
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<RunResult>> = {
        use rayon::prelude::*;
        (0..sims).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<RunResult>> = (0..sims).map(run).collect();
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub algo: Algo,
    pub particles: usize,
    pub sims: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Divergence-step quantiles of a study. `results` must be non-empty and
/// share one algorithm and particle count.
pub fn summarize(results: &[RunResult]) -> StudySummary {
    let mut steps: Vec<f64> = results.iter().map(|r| r.divergence_step as f64).collect();
    steps.sort_by(f64::total_cmp);
    StudySummary {
        algo: results[0].algo,
        particles: results[0].particles,
        sims: results.len(),
        min: steps[0],
        q25: quantile(&steps, 0.25),
        median: quantile(&steps, 0.5),
        q75: quantile(&steps, 0.75),
        max: steps[steps.len() - 1],
    }
}
