//! Throughput of the engine on a scalar random-walk filter.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::Gaussian;
use crate::oracles::LinearSsm;
use crate::rng::stream_rng;
use crate::smc::{Execution, ParticleCloud, SmcConfig};

use super::kalman::SsmFilter;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub horizons: Vec<usize>,
    pub seed: u64,
    /// Time each horizon this many times and keep the fastest.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            horizons: vec![1000, 2000, 4000, 8000],
            seed: 0,
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchPoint {
    pub horizon: usize,
    pub observed: bool,
    pub steps_per_sec: f64,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    /// Slope of log wall-clock against log horizon for the observed runs.
    pub loglog_slope: f64,
    pub loglog_r2: f64,
}

fn scalar_ssm() -> Result<LinearSsm> {
    LinearSsm::random_walk(1.0, 1.0, Gaussian::scalar(0.0, 1.0)?)
}

fn inputs(
    ssm: &LinearSsm,
    steps: usize,
    observed: bool,
    seed: u64,
) -> Result<Vec<Option<DVector<f64>>>> {
    let mut rng = stream_rng(seed, u64::MAX - 1, 0);
    let (_, ys) = ssm.simulate(steps, &mut rng)?;
    Ok(ys.into_iter().map(|y| observed.then_some(y)).collect())
}

fn time_filter(ssm: &LinearSsm, inputs: &[Option<DVector<f64>>], seed: u64) -> Result<f64> {
    let model = SsmFilter { ssm };
    let start = Instant::now();
    let smc = SmcConfig::new(1).with_execution(Execution::Sequential);
    let mut cloud = ParticleCloud::init(&model, smc, seed)?;
    for y in inputs {
        cloud.step(y)?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Least-squares fit `y = a + b x`; returns `(b, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, r2)
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.horizons.len() < 2 || config.horizons.contains(&0) || config.repeats == 0 {
        return Err(Error::InvalidArgument(
            "bench needs at least two positive horizons and one repeat".into(),
        ));
    }
    let ssm = scalar_ssm()?;
    let mut points = Vec::new();
    for observed in [true, false] {
        for &horizon in &config.horizons {
            let ys = inputs(&ssm, horizon, observed, config.seed)?;
            let mut best = f64::INFINITY;
            for _ in 0..config.repeats {
                best = best.min(time_filter(&ssm, &ys, config.seed)?);
            }
            points.push(BenchPoint {
                horizon,
                observed,
                steps_per_sec: horizon as f64 / (best.max(1e-9) / 1e3),
                wallclock_ms: best,
            });
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.observed)
        .map(|p| ((p.horizon as f64).ln(), p.wallclock_ms.max(1e-9).ln()))
        .unzip();
    let (loglog_slope, loglog_r2) = linear_fit(&xs, &ys);
    Ok(BenchReport {
        points,
        loglog_slope,
        loglog_r2,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MemoryReport {
    pub steps: usize,
    /// Largest live node count seen at a step boundary.
    pub max_live: usize,
    pub first_decile_mean_ns: f64,
    pub last_decile_mean_ns: f64,
}

/// Filters an observed scalar random walk for `steps` steps, tracking the
/// live node count and per-step time.
pub fn bounded_memory_run(steps: usize, seed: u64) -> Result<MemoryReport> {
    if steps < 10 {
        return Err(Error::InvalidArgument("need at least 10 steps".into()));
    }
    let ssm = scalar_ssm()?;
    let ys = inputs(&ssm, steps, true, seed)?;
    let model = SsmFilter { ssm: &ssm };
    let smc = SmcConfig::new(1).with_execution(Execution::Sequential);
    let mut cloud = ParticleCloud::init(&model, smc, seed)?;
    let mut times = Vec::with_capacity(steps);
    let mut max_live = 0;
    for y in &ys {
        let start = Instant::now();
        cloud.step(y)?;
        times.push(start.elapsed().as_nanos() as f64);
        max_live = max_live.max(cloud.particles()[0].ctx.forest().live_node_count());
    }
    let decile = steps / 10;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(MemoryReport {
        steps,
        max_live,
        first_decile_mean_ns: mean(&times[..decile]),
        last_decile_mean_ns: mean(&times[steps - decile..]),
    })
}
