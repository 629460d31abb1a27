//! Filtering a linear state-space model with the engine and with the
//! closed-form Kalman recursions, side by side.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::Gaussian;
use crate::model::{AffineExpr, Ctx, Model, RandomVar};
use crate::oracles::{kalman_predict, kalman_update, LinearSsm};
use crate::rng::stream_rng;
use crate::smc::{Execution, ParticleCloud, SmcConfig};

/// The state-space model written against the engine: one symbolic state
/// per step, with an observation child when a measurement is available.
pub struct SsmFilter<'a> {
    pub ssm: &'a LinearSsm,
}

impl Model for SsmFilter<'_> {
    type State = RandomVar;
    type Input = Option<DVector<f64>>;
    type Output = ();

    fn init(&self, ctx: &mut Ctx) -> Result<RandomVar> {
        let init = &self.ssm.initial;
        ctx.rand_gaussian(
            AffineExpr::constant(init.mean().clone()),
            init.cov().clone(),
        )
    }

    fn step(
        &self,
        ctx: &mut Ctx,
        x: RandomVar,
        y: &Option<DVector<f64>>,
    ) -> Result<(RandomVar, ())> {
        let mean = ctx.expr(&x)?.transform(&self.ssm.transition)?;
        let next = ctx.rand_gaussian(mean, self.ssm.process_noise.clone())?;
        if let Some(y) = y {
            let obs_mean = ctx.expr(&next)?.transform(&self.ssm.observation)?;
            let obs = ctx.rand_gaussian(obs_mean, self.ssm.observation_noise.clone())?;
            ctx.observe_rv(&obs, y)?;
        }
        Ok((next, ()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    pub dim: usize,
    pub steps: usize,
    pub seed: u64,
    /// Observe every `observe_every` steps; 0 disables observations.
    pub observe_every: usize,
    /// `Q = process_noise · I`.
    pub process_noise: f64,
    /// `R = observation_noise · I`.
    pub observation_noise: f64,
    /// Random stable transition and random observation matrix instead of
    /// identities.
    pub random_dynamics: bool,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            steps: 1000,
            seed: 0,
            observe_every: 1,
            process_noise: 1.0,
            observation_noise: 1.0,
            random_dynamics: false,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument(
                "dim and steps must be positive".into(),
            ));
        }
        if [self.process_noise, self.observation_noise]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return Err(Error::InvalidArgument(
                "noise scales must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The model described by this configuration; random matrices are
    /// drawn from a stream of `seed`.
    pub fn build_ssm(&self) -> Result<LinearSsm> {
        self.validate()?;
        let d = self.dim;
        let mut rng = stream_rng(self.seed, u64::MAX - 2, 0);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let (transition, observation) = if self.random_dynamics {
            let m = DMatrix::from_fn(d, d, |_, _| normal());
            // Frobenius norm bounds the spectral radius.
            let transition = &m * (0.95 / m.norm());
            let observation = DMatrix::from_fn(d, d, |_, _| normal());
            (transition, observation)
        } else {
            (DMatrix::identity(d, d), DMatrix::identity(d, d))
        };
        LinearSsm::new(
            transition,
            DMatrix::identity(d, d) * self.process_noise,
            observation,
            DMatrix::identity(d, d) * self.observation_noise,
            Gaussian::standard(d)?,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KalmanReport {
    pub dim: usize,
    pub steps: usize,
    pub seed: u64,
    pub max_mean_diff: f64,
    pub max_cov_diff: f64,
    pub kalman_ms: f64,
    pub engine_ms: f64,
    pub max_live_nodes: usize,
    pub final_mean: Vec<f64>,
    pub final_cov_trace: f64,
}

/// Simulates a trajectory and filters it with both implementations.
pub fn run_kalman(config: &KalmanConfig) -> Result<KalmanReport> {
    let ssm = config.build_ssm()?;
    let mut rng = stream_rng(config.seed, u64::MAX - 1, 0);
    let (_, ys) = ssm.simulate(config.steps, &mut rng)?;
    let inputs: Vec<Option<DVector<f64>>> = ys
        .into_iter()
        .enumerate()
        .map(|(t, y)| {
            (config.observe_every > 0 && (t + 1) % config.observe_every == 0).then_some(y)
        })
        .collect();

    let start = Instant::now();
    let mut reference = Vec::with_capacity(config.steps);
    let mut g = ssm.initial.clone();
    for y in &inputs {
        g = kalman_predict(&g, &ssm.transition, &ssm.process_noise)?;
        if let Some(y) = y {
            g = kalman_update(&g, &ssm.observation, &ssm.observation_noise, y)?.0;
        }
        reference.push((g.mean().clone(), g.cov().clone()));
    }
    let kalman_ms = start.elapsed().as_secs_f64() * 1e3;

    let model = SsmFilter { ssm: &ssm };
    let start = Instant::now();
    let smc = SmcConfig::new(1).with_execution(Execution::Sequential);
    let mut cloud = ParticleCloud::init(&model, smc, config.seed)?;
    let mut engine = Vec::with_capacity(config.steps);
    let mut max_live_nodes = 0;
    for y in &inputs {
        cloud.step(y)?;
        max_live_nodes = max_live_nodes.max(cloud.particles()[0].ctx.forest().live_node_count());
        engine.push(cloud.estimate(|x| x)?);
    }
    let engine_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut max_mean_diff = 0.0f64;
    let mut max_cov_diff = 0.0f64;
    for ((km, kc), (em, ec)) in reference.iter().zip(&engine) {
        max_mean_diff = max_mean_diff.max((km - em).amax());
        max_cov_diff = max_cov_diff.max((kc - ec).amax());
    }
    let (final_mean, final_cov) = engine.last().expect("steps > 0");
    Ok(KalmanReport {
        dim: config.dim,
        steps: config.steps,
        seed: config.seed,
        max_mean_diff,
        max_cov_diff,
        kalman_ms,
        engine_ms,
        max_live_nodes,
        final_mean: final_mean.iter().copied().collect(),
        final_cov_trace: final_cov.trace(),
    })
}
