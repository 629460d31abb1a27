//! Reference implementations used to check the engine.
//!
//! [`kalman_predict`] and [`kalman_update`] are the textbook filter
//! recursions. [`DenseJoint`] assembles the full joint Gaussian of a small
//! tree by affine composition and conditions it with Schur complements.
//! Neither path shares code with the forest's edge reversals.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::gauss::{AffineEdge, Gaussian};

/// States and observations of a simulated run.
pub type Trajectory = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// `x' = F x + N(0, Q)`, `y = H x' + N(0, R)`.
#[derive(Debug, Clone)]
pub struct LinearSsm {
    pub transition: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub observation: DMatrix<f64>,
    pub observation_noise: DMatrix<f64>,
    pub initial: Gaussian,
}

impl LinearSsm {
    pub fn new(
        transition: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        observation: DMatrix<f64>,
        observation_noise: DMatrix<f64>,
        initial: Gaussian,
    ) -> Result<Self> {
        let d = initial.dim();
        check_dim("transition rows", d, transition.nrows())?;
        check_dim("transition cols", d, transition.ncols())?;
        check_dim("process noise", d, process_noise.nrows())?;
        check_dim("observation cols", d, observation.ncols())?;
        check_dim(
            "observation noise",
            observation.nrows(),
            observation_noise.nrows(),
        )?;
        // Both noises must be valid covariances.
        Gaussian::new(DVector::zeros(d), process_noise.clone())?;
        Gaussian::new(
            DVector::zeros(observation.nrows()),
            observation_noise.clone(),
        )?;
        Ok(Self {
            transition,
            process_noise,
            observation,
            observation_noise,
            initial,
        })
    }

    /// 1D random walk observed with noise.
    pub fn random_walk(q: f64, r: f64, initial: Gaussian) -> Result<Self> {
        let one = DMatrix::from_element(1, 1, 1.0);
        Self::new(
            one.clone(),
            DMatrix::from_element(1, 1, q),
            one,
            DMatrix::from_element(1, 1, r),
            initial,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.nrows()
    }

    /// Simulates `steps` transitions from a draw of the initial state,
    /// returning the states `x_1..x_T` and observations `y_1..y_T`.
    pub fn simulate<R: Rng + ?Sized>(&self, steps: usize, rng: &mut R) -> Result<Trajectory> {
        let q = Gaussian::new(DVector::zeros(self.state_dim()), self.process_noise.clone())?;
        let r = Gaussian::new(
            DVector::zeros(self.obs_dim()),
            self.observation_noise.clone(),
        )?;
        let mut x = self.initial.draw(rng);
        let mut states = Vec::with_capacity(steps);
        let mut obs = Vec::with_capacity(steps);
        for _ in 0..steps {
            x = &self.transition * x + q.draw(rng);
            obs.push(&self.observation * &x + r.draw(rng));
            states.push(x.clone());
        }
        Ok((states, obs))
    }
}

fn spd_factor(m: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite { context })
}

fn gaussian_log_density(mean: &DVector<f64>, cov: &DMatrix<f64>, x: &DVector<f64>) -> Result<f64> {
    let chol = spd_factor(cov, "oracle log-density")?;
    let diff = x - mean;
    let quad = diff.dot(&chol.solve(&diff));
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (mean.len() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
}

/// `N(F m, F P Fᵀ + Q)`.
pub fn kalman_predict(g: &Gaussian, f: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<Gaussian> {
    check_dim("kalman_predict", g.dim(), f.ncols())?;
    check_dim("kalman_predict noise", f.nrows(), q.nrows())?;
    let mean = f * g.mean();
    let cov = f * g.cov() * f.transpose() + q;
    Gaussian::new(mean, (&cov + cov.transpose()) * 0.5)
}

/// Innovation-form update. Returns the posterior and `log N(y | H m, H P Hᵀ + R)`.
pub fn kalman_update(
    g: &Gaussian,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(Gaussian, f64)> {
    check_dim("kalman_update", g.dim(), h.ncols())?;
    check_dim("kalman_update observation", h.nrows(), y.len())?;
    check_dim("kalman_update noise", h.nrows(), r.nrows())?;
    let p = g.cov();
    let predicted = h * g.mean();
    let s = h * p * h.transpose() + r;
    let s_chol = spd_factor(&s, "innovation covariance")?;
    // K = P Hᵀ S⁻¹
    let gain = s_chol.solve(&(h * p)).transpose();
    let innovation = y - &predicted;
    let mean = g.mean() + &gain * &innovation;
    let cov = p - &gain * h * p;
    let log_evidence = gaussian_log_density(&predicted, &s, y)?;
    Ok((
        Gaussian::new(mean, (&cov + cov.transpose()) * 0.5)?,
        log_evidence,
    ))
}

/// Node of a tree description consumed by [`DenseJoint::build`].
#[derive(Debug, Clone)]
pub enum NodeSpec {
    Root(Gaussian),
    Child { parent: usize, edge: AffineEdge },
}

/// Description of a Gaussian forest: node `i` is `nodes[i]`.
#[derive(Debug, Clone, Default)]
pub struct TreeSpec {
    pub nodes: Vec<NodeSpec>,
}

impl TreeSpec {
    pub fn push(&mut self, node: NodeSpec) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }
}

/// Joint Gaussian over named variables.
#[derive(Debug, Clone)]
pub struct DenseJoint {
    /// `(variable id, offset, dim)` in storage order.
    index: Vec<(usize, usize, usize)>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl DenseJoint {
    /// Assembles the joint by affine composition in topological order.
    pub fn build(spec: &TreeSpec) -> Result<Self> {
        let n = spec.nodes.len();
        for node in &spec.nodes {
            if let NodeSpec::Child { parent, .. } = node {
                if *parent >= n {
                    return Err(Error::UnknownVariable(*parent));
                }
            }
        }
        let mut joint = DenseJoint {
            index: Vec::new(),
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
        };
        let mut placed = vec![false; n];
        let mut remaining = n;
        while remaining > 0 {
            let mut progressed = false;
            for (id, node) in spec.nodes.iter().enumerate() {
                if placed[id] {
                    continue;
                }
                match node {
                    NodeSpec::Root(g) => joint.append_independent(id, g),
                    NodeSpec::Child { parent, edge } => {
                        if !placed[*parent] {
                            continue;
                        }
                        joint.append_child(id, *parent, edge)?;
                    }
                }
                placed[id] = true;
                remaining -= 1;
                progressed = true;
            }
            if !progressed {
                return Err(Error::Cycle);
            }
        }
        Ok(joint)
    }

    fn total_dim(&self) -> usize {
        self.mean.len()
    }

    fn append_independent(&mut self, id: usize, g: &Gaussian) {
        let (old, d) = (self.total_dim(), g.dim());
        let mut mean = DVector::zeros(old + d);
        mean.rows_mut(0, old).copy_from(&self.mean);
        mean.rows_mut(old, d).copy_from(g.mean());
        let mut cov = DMatrix::zeros(old + d, old + d);
        cov.view_mut((0, 0), (old, old)).copy_from(&self.cov);
        cov.view_mut((old, old), (d, d)).copy_from(g.cov());
        self.index.push((id, old, d));
        self.mean = mean;
        self.cov = cov;
    }

    fn append_child(&mut self, id: usize, parent: usize, edge: &AffineEdge) -> Result<()> {
        let (p_off, p_dim) = self.block(parent)?;
        check_dim("dense child edge", p_dim, edge.parent_dim())?;
        let (old, d) = (self.total_dim(), edge.child_dim());
        let a = edge.a();
        // Cov(child, everything) = A Cov(parent, everything).
        let cross = a * self.cov.rows(p_off, p_dim);
        let var =
            a * self.cov.view((p_off, p_off), (p_dim, p_dim)) * a.transpose() + edge.noise_cov();
        let mut mean = DVector::zeros(old + d);
        mean.rows_mut(0, old).copy_from(&self.mean);
        mean.rows_mut(old, d)
            .copy_from(&(a * self.mean.rows(p_off, p_dim) + edge.b()));
        let mut cov = DMatrix::zeros(old + d, old + d);
        cov.view_mut((0, 0), (old, old)).copy_from(&self.cov);
        cov.view_mut((old, 0), (d, old)).copy_from(&cross);
        cov.view_mut((0, old), (old, d))
            .copy_from(&cross.transpose());
        cov.view_mut((old, old), (d, d)).copy_from(&var);
        self.index.push((id, old, d));
        self.mean = mean;
        self.cov = cov;
        Ok(())
    }

    fn block(&self, var: usize) -> Result<(usize, usize)> {
        self.index
            .iter()
            .find(|(id, _, _)| *id == var)
            .map(|&(_, off, d)| (off, d))
            .ok_or(Error::UnknownVariable(var))
    }

    pub fn contains(&self, var: usize) -> bool {
        self.block(var).is_ok()
    }

    pub fn variables(&self) -> Vec<usize> {
        self.index.iter().map(|(id, _, _)| *id).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Mean and covariance of one variable.
    pub fn marginal(&self, var: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (off, d) = self.block(var)?;
        Ok((
            self.mean.rows(off, d).into_owned(),
            self.cov.view((off, off), (d, d)).into_owned(),
        ))
    }

    /// `Cov(x_v, x_u)`.
    pub fn cross_cov(&self, u: usize, v: usize) -> Result<DMatrix<f64>> {
        let (uo, ud) = self.block(u)?;
        let (vo, vd) = self.block(v)?;
        Ok(self.cov.view((vo, uo), (vd, ud)).into_owned())
    }

    /// Full joint log-density at `x` (storage order).
    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("dense logpdf", self.total_dim(), x.len())?;
        gaussian_log_density(&self.mean, &self.cov, x)
    }

    /// Conditions on `x_var = value` by Schur complement, removing the
    /// variable. Returns the conditioned joint and the log-density of the
    /// observation under the variable's marginal.
    pub fn condition(&self, var: usize, value: &DVector<f64>) -> Result<(DenseJoint, f64)> {
        let (off, d) = self.block(var)?;
        check_dim("dense condition value", d, value.len())?;
        let keep: Vec<usize> = (0..self.total_dim())
            .filter(|&i| i < off || i >= off + d)
            .collect();
        let m_o = self.mean.rows(off, d).into_owned();
        let c_oo = self.cov.view((off, off), (d, d)).into_owned();
        let loglik = gaussian_log_density(&m_o, &c_oo, value)?;
        let chol = spd_factor(&c_oo, "dense conditioning block")?;

        let m_r = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.mean[i]));
        let c_rr = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.cov[(keep[i], keep[j])]);
        let c_ro = DMatrix::from_fn(keep.len(), d, |i, j| self.cov[(keep[i], off + j)]);

        let mean = m_r + &c_ro * chol.solve(&(value - &m_o));
        let cov = &c_rr - &c_ro * chol.solve(&c_ro.transpose());
        let cov = (&cov + cov.transpose()) * 0.5;

        let index = self
            .index
            .iter()
            .filter(|(id, _, _)| *id != var)
            .map(|&(id, o, dd)| (id, if o > off { o - d } else { o }, dd))
            .collect();
        Ok((DenseJoint { index, mean, cov }, loglik))
    }
}

/// Alias of [`DenseJoint::build`].
pub fn dense_build(spec: &TreeSpec) -> Result<DenseJoint> {
    DenseJoint::build(spec)
}

/// Alias of [`DenseJoint::condition`].
pub fn dense_condition(
    j: &DenseJoint,
    var: usize,
    value: &DVector<f64>,
) -> Result<(DenseJoint, f64)> {
    j.condition(var, value)
}
