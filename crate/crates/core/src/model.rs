//! Streaming probabilistic models over a Gaussian forest.
//!
//! A model is a state machine: [`Model::init`] builds the initial state
//! and [`Model::step`] consumes the previous state and one input to
//! produce the next state and an output. Random quantities in the state
//! are [`RandomVar`]s, which are either symbolic (a live forest node) or
//! concrete vectors.
//!
//! [`Ctx::rand_gaussian`] keeps a new variable symbolic whenever its mean
//! is affine in at most one symbolic variable. Any non-affine use of a
//! symbolic variable goes through [`Ctx::value_of`], which samples it from
//! its exact marginal and conditions the rest of its tree on the draw.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::forest::{GaussForest, NodeHandle};
use crate::gauss::{AffineEdge, Gaussian};
use crate::rng::EngineRng;

#[derive(Debug, Clone, PartialEq)]
pub enum RandomVar {
    Symbolic(NodeHandle),
    Concrete(DVector<f64>),
}

impl RandomVar {
    pub fn scalar(value: f64) -> Self {
        RandomVar::Concrete(DVector::from_element(1, value))
    }

    pub fn is_symbolic(&self) -> bool {
        matches!(self, RandomVar::Symbolic(_))
    }
}

/// `Σ coef_i · x_i + constant` over symbolic variables `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    terms: Vec<(NodeHandle, DMatrix<f64>)>,
    constant: DVector<f64>,
}

impl AffineExpr {
    pub fn constant(value: DVector<f64>) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(DVector::from_element(1, value))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::constant(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.constant.len()
    }

    pub fn terms(&self) -> &[(NodeHandle, DMatrix<f64>)] {
        &self.terms
    }

    pub fn constant_part(&self) -> &DVector<f64> {
        &self.constant
    }

    pub fn symbolic_count(&self) -> usize {
        self.terms.len()
    }

    /// Left-multiplies the expression by `m`.
    pub fn transform(self, m: &DMatrix<f64>) -> Result<Self> {
        check_dim("affine transform", self.dim(), m.ncols())?;
        Ok(Self {
            terms: self.terms.into_iter().map(|(h, c)| (h, m * c)).collect(),
            constant: m * self.constant,
        })
    }

    pub fn scale(self, factor: f64) -> Self {
        Self {
            terms: self
                .terms
                .into_iter()
                .map(|(h, c)| (h, c * factor))
                .collect(),
            constant: self.constant * factor,
        }
    }

    pub fn offset(mut self, shift: &DVector<f64>) -> Result<Self> {
        check_dim("affine offset", self.dim(), shift.len())?;
        self.constant += shift;
        Ok(self)
    }

    /// Sum of two expressions; coefficients of a shared variable are merged.
    pub fn plus(mut self, other: AffineExpr) -> Result<Self> {
        check_dim("affine sum", self.dim(), other.dim())?;
        self.constant += other.constant;
        for (h, c) in other.terms {
            match self.terms.iter_mut().find(|(g, _)| *g == h) {
                Some((_, existing)) => *existing += c,
                None => self.terms.push((h, c)),
            }
        }
        Ok(self)
    }

    fn fold(&mut self, idx: usize, value: &DVector<f64>) {
        let (_, coef) = self.terms.remove(idx);
        self.constant += coef * value;
    }
}

/// Handles of symbolic variables reachable from a model state. The engine
/// releases every forest node not reported here at the end of each step.
pub trait Trace {
    fn trace(&self, out: &mut Vec<NodeHandle>);
}

impl Trace for RandomVar {
    fn trace(&self, out: &mut Vec<NodeHandle>) {
        if let RandomVar::Symbolic(h) = self {
            out.push(*h);
        }
    }
}

impl Trace for NodeHandle {
    fn trace(&self, out: &mut Vec<NodeHandle>) {
        out.push(*self);
    }
}

impl Trace for () {
    fn trace(&self, _: &mut Vec<NodeHandle>) {}
}

impl Trace for f64 {
    fn trace(&self, _: &mut Vec<NodeHandle>) {}
}

impl Trace for usize {
    fn trace(&self, _: &mut Vec<NodeHandle>) {}
}

impl Trace for DVector<f64> {
    fn trace(&self, _: &mut Vec<NodeHandle>) {}
}

impl<T: Trace> Trace for Option<T> {
    fn trace(&self, out: &mut Vec<NodeHandle>) {
        if let Some(v) = self {
            v.trace(out);
        }
    }
}

impl<T: Trace> Trace for Vec<T> {
    fn trace(&self, out: &mut Vec<NodeHandle>) {
        self.iter().for_each(|v| v.trace(out));
    }
}

impl<T: Trace, const N: usize> Trace for [T; N] {
    fn trace(&self, out: &mut Vec<NodeHandle>) {
        self.iter().for_each(|v| v.trace(out));
    }
}

macro_rules! trace_tuple {
    ($($name:ident),+) => {
        impl<$($name: Trace),+> Trace for ($($name,)+) {
            #[allow(non_snake_case)]
            fn trace(&self, out: &mut Vec<NodeHandle>) {
                let ($($name,)+) = self;
                $($name.trace(out);)+
            }
        }
    };
}

trace_tuple!(A);
trace_tuple!(A, B);
trace_tuple!(A, B, C);
trace_tuple!(A, B, C, D);

/// A streaming model. `step` must be deterministic given the state, the
/// input and the context's generator.
pub trait Model: Sync {
    type State: Clone + Send + Trace;
    type Input: Sync + ?Sized;
    type Output: Send;

    fn init(&self, ctx: &mut Ctx) -> Result<Self::State>;

    fn step(
        &self,
        ctx: &mut Ctx,
        state: Self::State,
        input: &Self::Input,
    ) -> Result<(Self::State, Self::Output)>;
}

/// How variables are kept symbolic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InferenceMode {
    /// Keep everything affine symbolic; sample only when forced.
    #[default]
    Exact,
    /// Sample every parent before each `rand`: a bootstrap particle filter.
    SampleAll,
}

/// Which parent survives when a mean depends on several symbolic variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParentPolicy {
    /// Sample parents by increasing marginal covariance trace and keep
    /// the most uncertain one.
    #[default]
    MostUncertain,
    RetainFirst,
    RetainLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Known {
    Sampled,
    Observed,
}

/// Per-particle inference state: forest, generator and log-weight.
#[derive(Debug, Clone)]
pub struct Ctx {
    forest: GaussForest,
    rng: EngineRng,
    log_weight: f64,
    mode: InferenceMode,
    policy: ParentPolicy,
    known: BTreeMap<NodeHandle, (DVector<f64>, Known)>,
    draws: u64,
}

impl Ctx {
    pub fn new(rng: EngineRng, mode: InferenceMode, policy: ParentPolicy) -> Self {
        Self {
            forest: GaussForest::new(),
            rng,
            log_weight: 0.0,
            mode,
            policy,
            known: BTreeMap::new(),
            draws: 0,
        }
    }

    pub fn with_seed(seed: u64) -> Self {
        Self::new(
            crate::rng::stream_rng(seed, 0, 0),
            InferenceMode::Exact,
            ParentPolicy::default(),
        )
    }

    pub fn forest(&self) -> &GaussForest {
        &self.forest
    }

    pub fn forest_mut(&mut self) -> &mut GaussForest {
        &mut self.forest
    }

    pub fn rng(&mut self) -> &mut EngineRng {
        &mut self.rng
    }

    pub(crate) fn reseed(&mut self, rng: EngineRng) {
        self.rng = rng;
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub(crate) fn reset_log_weight(&mut self) {
        self.log_weight = 0.0;
    }

    pub fn mode(&self) -> InferenceMode {
        self.mode
    }

    /// Number of symbolic variables sampled so far.
    pub fn draw_count(&self) -> u64 {
        self.draws
    }

    /// Identity expression of `rv`.
    pub fn expr(&self, rv: &RandomVar) -> Result<AffineExpr> {
        match rv {
            RandomVar::Concrete(v) => Ok(AffineExpr::constant(v.clone())),
            RandomVar::Symbolic(h) => {
                if let Some((v, _)) = self.known.get(h) {
                    return Ok(AffineExpr::constant(v.clone()));
                }
                let dim = self.forest.dim(*h)?;
                Ok(AffineExpr {
                    terms: vec![(*h, DMatrix::identity(dim, dim))],
                    constant: DVector::zeros(dim),
                })
            }
        }
    }

    /// `x ~ N(mean, noise_cov)`.
    pub fn rand_gaussian(
        &mut self,
        mut mean: AffineExpr,
        noise_cov: DMatrix<f64>,
    ) -> Result<RandomVar> {
        self.resolve_known(&mut mean)?;
        let keep = match self.mode {
            InferenceMode::SampleAll => 0,
            InferenceMode::Exact => 1,
        };
        if mean.terms.len() > keep {
            let order = self.sampling_order(&mean, keep)?;
            for h in order {
                let value = self.sample_handle(h)?;
                let idx = mean.terms.iter().position(|(g, _)| *g == h).expect("term");
                mean.fold(idx, &value);
            }
        }
        match mean.terms.pop() {
            None => {
                let prior = Gaussian::new(mean.constant, noise_cov)?;
                Ok(RandomVar::Symbolic(self.forest.new_root(prior)))
            }
            Some((parent, coef)) => {
                let edge = AffineEdge::new(coef, mean.constant, noise_cov)?;
                Ok(RandomVar::Symbolic(self.forest.add_child(parent, edge)?))
            }
        }
    }

    /// Scalar shorthand: `x ~ N(mean, var)`.
    pub fn rand_normal(&mut self, mean: AffineExpr, var: f64) -> Result<RandomVar> {
        self.rand_gaussian(mean, DMatrix::from_element(1, 1, var))
    }

    /// Conditions on `rv = value` and adds the predictive log-density to
    /// the log-weight.
    pub fn observe_rv(&mut self, rv: &RandomVar, value: &DVector<f64>) -> Result<()> {
        let h = match rv {
            RandomVar::Concrete(_) => return Err(Error::ObserveConcrete),
            RandomVar::Symbolic(h) => *h,
        };
        match self.known.get(&h) {
            Some((_, Known::Sampled)) => return Err(Error::ObserveConcrete),
            Some((_, Known::Observed)) => return Err(Error::DeadHandle(h)),
            None => {}
        }
        let ll = self.forest.observe(h, value)?;
        self.log_weight += ll;
        self.known.insert(h, (value.clone(), Known::Observed));
        Ok(())
    }

    /// Concrete value of `rv`, sampling it if it is still symbolic. The
    /// binding is replaced by the concrete value.
    pub fn value_of(&mut self, rv: &mut RandomVar) -> Result<DVector<f64>> {
        let value = match rv {
            RandomVar::Concrete(v) => return Ok(v.clone()),
            RandomVar::Symbolic(h) => match self.known.get(h) {
                Some((v, _)) => v.clone(),
                None => self.sample_handle(*h)?,
            },
        };
        *rv = RandomVar::Concrete(value.clone());
        Ok(value)
    }

    /// Scalar shorthand for [`Ctx::value_of`].
    pub fn scalar_value_of(&mut self, rv: &mut RandomVar) -> Result<f64> {
        let v = self.value_of(rv)?;
        check_dim("scalar value", 1, v.len())?;
        Ok(v[0])
    }

    /// Mean and covariance of `rv` without sampling it. Concrete values
    /// have zero covariance.
    pub fn moments(&mut self, rv: &RandomVar) -> Result<(DVector<f64>, DMatrix<f64>)> {
        match rv {
            RandomVar::Concrete(v) => Ok((v.clone(), DMatrix::zeros(v.len(), v.len()))),
            RandomVar::Symbolic(h) => match self.known.get(h) {
                Some((v, _)) => Ok((v.clone(), DMatrix::zeros(v.len(), v.len()))),
                None => {
                    let g = self.forest.marginal(*h)?;
                    Ok((g.mean().clone(), g.cov().clone()))
                }
            },
        }
    }

    /// Releases every node that `state` does not reference.
    pub fn collect<T: Trace + ?Sized>(&mut self, state: &T) {
        let mut handles = Vec::new();
        state.trace(&mut handles);
        handles.sort_unstable();
        self.known.retain(|h, _| handles.binary_search(h).is_ok());
        self.forest.retain_only(&handles);
    }

    fn resolve_known(&self, expr: &mut AffineExpr) -> Result<()> {
        let mut i = 0;
        while i < expr.terms.len() {
            let h = expr.terms[i].0;
            if let Some((v, _)) = self.known.get(&h) {
                let v = v.clone();
                expr.fold(i, &v);
                continue;
            }
            let dim = self.forest.dim(h)?;
            check_dim("affine term", dim, expr.terms[i].1.ncols())?;
            check_dim("affine term", expr.dim(), expr.terms[i].1.nrows())?;
            i += 1;
        }
        Ok(())
    }

    /// Handles to sample so that at most `keep` symbolic terms remain.
    fn sampling_order(&mut self, expr: &AffineExpr, keep: usize) -> Result<Vec<NodeHandle>> {
        let handles: Vec<NodeHandle> = expr.terms.iter().map(|(h, _)| *h).collect();
        let n_sample = handles.len() - keep;
        if keep == 0 {
            return Ok(handles);
        }
        Ok(match self.policy {
            ParentPolicy::RetainFirst => handles[1..].to_vec(),
            ParentPolicy::RetainLast => handles[..n_sample].to_vec(),
            ParentPolicy::MostUncertain => {
                let mut scored = Vec::with_capacity(handles.len());
                for (i, h) in handles.iter().enumerate() {
                    scored.push((self.forest.marginal(*h)?.cov().trace(), i, *h));
                }
                // Stable on ties: earlier terms are sampled first.
                scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                scored
                    .into_iter()
                    .take(n_sample)
                    .map(|(_, _, h)| h)
                    .collect()
            }
        })
    }

    fn sample_handle(&mut self, h: NodeHandle) -> Result<DVector<f64>> {
        let value = self.forest.sample_node(h, &mut self.rng)?;
        self.draws += 1;
        self.known.insert(h, (value.clone(), Known::Sampled));
        Ok(value)
    }
}
