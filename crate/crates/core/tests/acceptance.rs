//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use streambp::experiments::{
    bounded_memory_run, run_bridge, run_kalman, run_study, summarize, Algo, BridgeConfig,
    KalmanConfig, SsmFilter, TrackerConfig,
};
use streambp::oracles::LinearSsm;
use streambp::smc::systematic_resample_with;
use streambp::{ess, systematic_resample, Execution, Gaussian, ParticleCloud, SmcConfig};

type Criterion = (&'static str, fn() -> Outcome, Duration);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn a1() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        for (dim, random_dynamics) in [(1, false), (3, true)] {
            let config = KalmanConfig {
                dim,
                seed,
                random_dynamics,
                ..Default::default()
            };
            match run_kalman(&config) {
                Ok(r) => worst = worst.max(r.max_mean_diff).max(r.max_cov_diff),
                Err(e) => return check(false, format!("dim {dim} seed {seed}: {e}")),
            }
        }
    }
    check(
        worst < 1e-8,
        format!("max |engine - kalman| = {worst:.3e} over 20 runs"),
    )
}

fn a2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA2);
    let mut worst = 0.0f64;
    let mut observations = 0;
    for case in 0..500 {
        match common::random_schedule_case(&mut rng, 10) {
            Ok(d) => {
                worst = worst.max(d.max());
                observations += d.observations;
            }
            Err(e) => return check(false, format!("case {case}: {e}")),
        }
    }
    check(
        worst < 1e-8,
        format!("max deviation {worst:.3e} over 500 forests, {observations} observations"),
    )
}

fn a3() -> Outcome {
    match run_bridge(&BridgeConfig::default()) {
        Ok(r) => {
            let mid = r.cov[24][24];
            check(
                r.max_abs_error < 1e-8 && (mid - 0.25).abs() < 1e-8,
                format!(
                    "max error {:.3e}, midpoint variance {mid:.12}",
                    r.max_abs_error
                ),
            )
        }
        Err(e) => check(false, e.to_string()),
    }
}

fn a4() -> Outcome {
    let config = TrackerConfig::default();
    let horizon = config.horizon as f64;
    let median = |algo, particles| -> Result<f64, String> {
        run_study(&config, algo, particles, 30, 0)
            .map(|r| summarize(&r).median)
            .map_err(|e| e.to_string())
    };
    let run = || -> Result<Outcome, String> {
        let mut pass = true;
        let mut parts = Vec::new();
        let sbp10 = median(Algo::Sbp, 10)?;
        pass &= sbp10 >= 0.95 * horizon;
        for p in [5, 10, 20] {
            let sbp = if p == 10 {
                sbp10
            } else {
                median(Algo::Sbp, p)?
            };
            let smc = median(Algo::Smc, p)?;
            pass &= sbp > smc;
            parts.push(format!("p={p}: sbp {sbp} vs smc {smc}"));
        }
        let smc40 = median(Algo::Smc, 40)?;
        pass &= smc40 < horizon;
        parts.push(format!("smc@40 {smc40}"));
        Ok(check(pass, format!("medians {}", parts.join("; "))))
    };
    run().unwrap_or_else(|e| check(false, e))
}

fn a5() -> Outcome {
    match bounded_memory_run(100_000, 0) {
        Ok(r) => {
            let ratio = r.last_decile_mean_ns / r.first_decile_mean_ns;
            check(
                r.max_live <= 3 && ratio <= 2.0,
                format!(
                    "max live {}, per-step {:.0} ns -> {:.0} ns (ratio {ratio:.2})",
                    r.max_live, r.first_decile_mean_ns, r.last_decile_mean_ns
                ),
            )
        }
        Err(e) => check(false, e.to_string()),
    }
}

fn chi_square_offspring(weights: &[f64], trials: usize, rng: &mut ChaCha8Rng) -> f64 {
    let n = weights.len();
    let mut counts = vec![0usize; n];
    for _ in 0..trials {
        for i in systematic_resample_with(weights, rng) {
            counts[i] += 1;
        }
    }
    let stat: f64 = counts
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&o, &w)| {
            let e = trials as f64 * n as f64 * w;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let df = weights.iter().filter(|&&w| w > 0.0).count() - 1;
    1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat)
}

fn exact_weights_equal() -> Result<bool, String> {
    let ssm = LinearSsm::random_walk(1.0, 1.0, Gaussian::scalar(0.0, 1.0).unwrap())
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (_, ys) = ssm.simulate(200, &mut rng).map_err(|e| e.to_string())?;
    let model = SsmFilter { ssm: &ssm };
    let mut cloud = ParticleCloud::init(
        &model,
        SmcConfig::new(16).with_execution(Execution::Parallel),
        6,
    )
    .map_err(|e| e.to_string())?;
    for y in ys {
        cloud.step(&Some(y)).map_err(|e| e.to_string())?;
        let w0 = cloud.weights()[0].to_bits();
        if cloud.weights().iter().any(|w| w.to_bits() != w0) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn a6() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;

    let ess_ok = ess(&[0.25; 4]) == 4.0
        && ess(&[0.0, 1.0, 0.0]) == 1.0
        && (ess(&[0.5, 0.25, 0.25]) - 8.0 / 3.0).abs() < 1e-12;
    pass &= ess_ok;
    parts.push(format!("ess {}", if ess_ok { "ok" } else { "mismatch" }));

    let sys_ok = systematic_resample(&[0.5, 0.5], 0.1) == vec![0, 1]
        && systematic_resample(&[0.0, 0.0, 1.0, 0.0], 0.2) == vec![2; 4]
        && systematic_resample(&[0.2; 5], 0.0) == vec![0, 1, 2, 3, 4]
        && systematic_resample(&[0.2; 5], 0.19) == vec![0, 1, 2, 3, 4];
    pass &= sys_ok;
    parts.push(format!(
        "systematic {}",
        if sys_ok { "ok" } else { "mismatch" }
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let weights = [0.05, 0.3, 0.15, 0.02, 0.28, 0.2];
    let p = chi_square_offspring(&weights, 10_000, &mut rng);
    pass &= p > 0.01;
    parts.push(format!("chi2 p-value {p:.3}"));

    match exact_weights_equal() {
        Ok(eq) => {
            pass &= eq;
            parts.push(format!(
                "exact weights {}",
                if eq { "bit-equal" } else { "differ" }
            ));
        }
        Err(e) => {
            pass = false;
            parts.push(e);
        }
    }
    check(pass, parts.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("A1 kalman equivalence", a1, Duration::from_secs(5)),
        ("A2 dense-oracle equivalence", a2, Duration::from_secs(30)),
        ("A3 conditioned random walk", a3, Duration::from_secs(5)),
        ("A4 tracker ordering", a4, Duration::from_secs(300)),
        ("A5 bounded memory", a5, Duration::from_secs(60)),
        ("A6 smc internals", a6, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let pass = outcome.pass && elapsed < budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.2}s / {}s budget]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
