//! Experiment drivers: Kalman equivalence, conditioned random walk,
//! runner tracking, and throughput.

pub mod bench;
pub mod bridge;
pub mod kalman;
pub mod tracker;

pub use bench::{
    bounded_memory_run, run_bench, BenchConfig, BenchPoint, BenchReport, MemoryReport,
};
pub use bridge::{run_bridge, BridgeConfig, BridgeReport};
pub use kalman::{run_kalman, KalmanConfig, KalmanReport, SsmFilter};
pub use tracker::{
    run_study, run_tracker_sim, summarize, Algo, RunResult, RunnerModel, StudySummary, Terrain,
    TrackerConfig,
};

/// Linear-interpolation quantile of sorted data (`p ∈ [0, 1]`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::quantile;

    #[test]
    fn quantile_interpolates() {
        let d = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&d, 0.5), 2.5);
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert_eq!(quantile(&d, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }
}
