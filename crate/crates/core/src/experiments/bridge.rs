//! Random walk from zero conditioned to end at zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::GaussForest;
use crate::gauss::{AffineEdge, Gaussian};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    pub n_steps: usize,
    pub horizon: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            n_steps: 50,
            horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BridgeReport {
    pub n_steps: usize,
    pub horizon: f64,
    /// `cov[i][j] = Cov(X_{i+1}, X_{j+1})`; the last row and column belong
    /// to the observed endpoint and are zero.
    pub cov: Vec<Vec<f64>>,
    /// Largest deviation from `min(s, t) - s t / T` on the grid.
    pub max_abs_error: f64,
}

/// Covariance of the bridge limit at grid times `s` and `t`.
pub fn bridge_covariance(s: f64, t: f64, horizon: f64) -> f64 {
    s.min(t) - s * t / horizon
}

/// Builds `X_k = X_{k-1} + N(0, T/n)` with `X_0 = 0`, observes `X_n = 0`
/// and reads every pairwise covariance from the forest.
pub fn run_bridge(config: &BridgeConfig) -> Result<BridgeReport> {
    let n = config.n_steps;
    if n < 2 {
        return Err(Error::InvalidArgument(
            "bridge needs at least 2 steps".into(),
        ));
    }
    if config.horizon.is_nan() || config.horizon <= 0.0 {
        return Err(Error::InvalidArgument(
            "bridge horizon must be positive".into(),
        ));
    }
    let dt = config.horizon / n as f64;
    let mut forest = GaussForest::new();
    let mut nodes = vec![forest.new_root(Gaussian::scalar(0.0, dt)?)];
    let step = AffineEdge::scalar(1.0, 0.0, dt)?;
    for k in 1..n {
        nodes.push(forest.add_child(nodes[k - 1], step.clone())?);
    }
    let end = nodes.pop().expect("n >= 2");
    forest.observe(end, &DVector::zeros(1))?;

    let mut cov = DMatrix::zeros(n, n);
    for (i, &u) in nodes.iter().enumerate() {
        for (j, &v) in nodes.iter().enumerate().skip(i) {
            let c = forest.joint_moments(u, v)?[(0, 0)];
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let mut max_abs_error = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let s = (i + 1) as f64 * dt;
            let t = (j + 1) as f64 * dt;
            max_abs_error =
                max_abs_error.max((cov[(i, j)] - bridge_covariance(s, t, config.horizon)).abs());
        }
    }
    Ok(BridgeReport {
        n_steps: n,
        horizon: config.horizon,
        cov: crate::gauss::matrix_to_rows(&cov),
        max_abs_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn midpoint_and_endpoint() {
        let r = run_bridge(&BridgeConfig::default()).unwrap();
        assert_abs_diff_eq!(r.cov[24][24], 0.25, epsilon = 1e-12);
        assert_eq!(r.cov[49][49], 0.0);
        assert!(r.max_abs_error < 1e-8);
    }

    #[test]
    fn four_step_entry() {
        let r = run_bridge(&BridgeConfig {
            n_steps: 4,
            horizon: 1.0,
        })
        .unwrap();
        assert_abs_diff_eq!(r.cov[0][1], 0.125, epsilon = 1e-14);
    }

    #[test]
    fn rejects_too_few_steps() {
        assert!(run_bridge(&BridgeConfig {
            n_steps: 1,
            horizon: 1.0
        })
        .is_err());
    }
}
