//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use streambp::oracles::{DenseJoint, NodeSpec, TreeSpec};
use streambp::{AffineEdge, GaussForest, Gaussian, NodeHandle, Result};

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn normal_vector<R: Rng>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Well-conditioned random covariance `L Lᵀ + floor · I`.
pub fn random_cov<R: Rng>(rng: &mut R, dim: usize, floor: f64) -> DMatrix<f64> {
    let l = normal_matrix(rng, dim, dim) * 0.7;
    &l * l.transpose() + DMatrix::identity(dim, dim) * floor
}

pub fn random_gaussian<R: Rng>(rng: &mut R, dim: usize) -> Gaussian {
    let mean = normal_vector(rng, dim);
    Gaussian::new(mean, random_cov(rng, dim, 0.5)).unwrap()
}

pub fn random_edge<R: Rng>(rng: &mut R, parent_dim: usize, child_dim: usize) -> AffineEdge {
    let a = normal_matrix(rng, child_dim, parent_dim);
    let b = normal_vector(rng, child_dim);
    AffineEdge::new(a, b, random_cov(rng, child_dim, 0.5)).unwrap()
}

/// A random forest with up to `max_nodes` nodes of dimension 1..=3, built
/// both in the engine and as a dense specification with matching ids.
pub struct RandomForest {
    pub forest: GaussForest,
    pub handles: Vec<NodeHandle>,
    pub spec: TreeSpec,
}

pub fn random_forest<R: Rng>(rng: &mut R, max_nodes: usize) -> RandomForest {
    let n = rng.random_range(1..=max_nodes);
    let mut forest = GaussForest::new();
    let mut handles = Vec::with_capacity(n);
    let mut dims = Vec::with_capacity(n);
    let mut spec = TreeSpec::default();
    for i in 0..n {
        let dim = rng.random_range(1..=3);
        if i == 0 || rng.random_bool(0.2) {
            let g = random_gaussian(rng, dim);
            handles.push(forest.new_root(g.clone()));
            spec.push(NodeSpec::Root(g));
        } else {
            let parent = rng.random_range(0..i);
            let edge = random_edge(rng, dims[parent], dim);
            handles.push(forest.add_child(handles[parent], edge.clone()).unwrap());
            spec.push(NodeSpec::Child { parent, edge });
        }
        dims.push(dim);
    }
    RandomForest {
        forest,
        handles,
        spec,
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Discrepancy {
    pub marginal: f64,
    pub loglik: f64,
    pub observations: usize,
}

impl Discrepancy {
    pub fn max(self) -> f64 {
        self.marginal.max(self.loglik)
    }
}

fn compare_marginals(
    f: &mut RandomForest,
    joint: &DenseJoint,
    alive: &[bool],
    d: &mut Discrepancy,
) -> Result<()> {
    for (id, &h) in f.handles.iter().enumerate() {
        if !alive[id] {
            continue;
        }
        let g = f.forest.marginal(h)?;
        let (m, c) = joint.marginal(id)?;
        d.marginal = d
            .marginal
            .max((g.mean() - m).amax())
            .max((g.cov() - c).amax());
    }
    Ok(())
}

/// Runs a random schedule of retarget, observe and sample operations on a
/// random forest and records the largest deviation from dense conditioning.
pub fn random_schedule_case<R: Rng>(rng: &mut R, max_nodes: usize) -> Result<Discrepancy> {
    let mut f = random_forest(rng, max_nodes);
    let mut joint = DenseJoint::build(&f.spec)?;
    let mut alive = vec![true; f.handles.len()];
    let mut d = Discrepancy::default();
    compare_marginals(&mut f, &joint, &alive, &mut d)?;
    let ops = rng.random_range(1..=8);
    for _ in 0..ops {
        let live: Vec<usize> = (0..alive.len()).filter(|&i| alive[i]).collect();
        if live.is_empty() {
            break;
        }
        let id = live[rng.random_range(0..live.len())];
        let h = f.handles[id];
        match rng.random_range(0..3) {
            0 => f.forest.retarget(h)?,
            1 => {
                let (m, c) = joint.marginal(id)?;
                let value =
                    Gaussian::new(m, c)?.draw(rng) + normal_vector(rng, f.forest.dim(h)?) * 0.5;
                let ll = f.forest.observe(h, &value)?;
                let (next, dense_ll) = joint.condition(id, &value)?;
                d.loglik = d.loglik.max((ll - dense_ll).abs());
                d.observations += 1;
                joint = next;
                alive[id] = false;
            }
            _ => {
                let value = f.forest.sample_node(h, rng)?;
                joint = joint.condition(id, &value)?.0;
                alive[id] = false;
            }
        }
        compare_marginals(&mut f, &joint, &alive, &mut d)?;
    }
    Ok(d)
}
