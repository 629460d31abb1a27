//! Multivariate Gaussian primitives in moment form.
//!
//! Every covariance is validated once on construction by a Cholesky
//! factorization. When the plain factorization fails, a single diagonal
//! jitter of `JITTER_SCALE * trace / dim` is added before giving up. The
//! lower factor is cached, so log-densities and draws never refactorize.
//!
//! The two edge operations used by tree re-rooting live here as well:
//! [`push_forward`] gives the marginal of a child, and [`reverse`] turns a
//! parent-to-child conditional into the child-to-parent conditional.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Relative scale of the single diagonal jitter tried before a
/// covariance is declared not positive definite.
pub const JITTER_SCALE: f64 = 1e-10;

/// Maximum tolerated asymmetry, relative to the largest entry, of a
/// covariance handed to a constructor.
pub const SYMMETRY_TOL: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Lower Cholesky factor of `m`, retrying once with diagonal jitter.
pub(crate) fn cholesky_lower(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context });
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol.l());
    }
    let dim = m.nrows();
    let jitter = JITTER_SCALE * m.trace() / dim as f64;
    if jitter.is_nan() || jitter <= 0.0 {
        return Err(Error::NotPositiveDefinite { context });
    }
    let mut jittered = m.clone();
    for i in 0..dim {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered)
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite { context })
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn validate_covariance(cov: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    check_dim(context, cov.nrows(), cov.ncols())?;
    if cov.nrows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{context}: zero-dimensional covariance"
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context });
    }
    let scale = cov.amax().max(1.0);
    let asym = (cov - cov.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument(format!(
            "{context}: covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(symmetrize(cov))
}

/// A multivariate normal distribution `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let cov = validate_covariance(&cov, "Gaussian covariance")?;
        check_dim("Gaussian mean", cov.nrows(), mean.len())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Gaussian mean",
            });
        }
        Self::from_symmetric(mean, cov, "Gaussian covariance")
    }

    /// One-dimensional `N(mean, var)`.
    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, var),
        )
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim))
    }

    /// Constructor for covariances produced by internal algebra, which
    /// may carry round-off asymmetry.
    pub(crate) fn from_computed(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        context: &'static str,
    ) -> Result<Self> {
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context });
        }
        Self::from_symmetric(mean, symmetrize(&cov), context)
    }

    fn from_symmetric(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        context: &'static str,
    ) -> Result<Self> {
        let chol = cholesky_lower(&cov, context)?;
        Ok(Self { mean, cov, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the (possibly jittered) covariance.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `log N(x | mean, cov)`.
    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("logpdf argument", self.dim(), x.len())?;
        let diff = x - &self.mean;
        let white = self
            .chol
            .solve_lower_triangular(&diff)
            .ok_or(Error::NotPositiveDefinite { context: "logpdf" })?;
        let log_det: f64 = self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + log_det + white.norm_squared()))
    }

    /// `mean + L z` with `z` standard normal.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * z
    }
}

#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<GaussianRepr> for Gaussian {
    type Error = Error;

    fn try_from(repr: GaussianRepr) -> Result<Self> {
        let cov = rows_to_matrix(&repr.cov)?;
        Gaussian::new(DVector::from_vec(repr.mean), cov)
    }
}

impl From<Gaussian> for GaussianRepr {
    fn from(g: Gaussian) -> Self {
        GaussianRepr {
            mean: g.mean.iter().copied().collect(),
            cov: matrix_to_rows(&g.cov),
        }
    }
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for row in rows {
        check_dim("matrix row", ncols, row.len())?;
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Conditional linear-Gaussian density `p(child | parent) = N(A parent + b, noise_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineEdge {
    a: DMatrix<f64>,
    b: DVector<f64>,
    noise_cov: DMatrix<f64>,
}

impl AffineEdge {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let noise_cov = validate_covariance(&noise_cov, "edge noise covariance")?;
        check_dim("edge offset", a.nrows(), b.len())?;
        check_dim("edge noise covariance", a.nrows(), noise_cov.nrows())?;
        if a.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "edge with zero parent dimension".into(),
            ));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "edge coefficients",
            });
        }
        cholesky_lower(&noise_cov, "edge noise covariance")?;
        Ok(Self { a, b, noise_cov })
    }

    pub fn scalar(a: f64, b: f64, noise_var: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, b),
            DMatrix::from_element(1, 1, noise_var),
        )
    }

    pub(crate) fn from_computed(
        a: DMatrix<f64>,
        b: DVector<f64>,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let noise_cov = symmetrize(&noise_cov);
        cholesky_lower(&noise_cov, "reversed edge covariance")?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "reversed edge coefficients",
            });
        }
        Ok(Self { a, b, noise_cov })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn parent_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn child_dim(&self) -> usize {
        self.a.nrows()
    }

    /// The conditional distribution of the child once the parent takes `value`.
    pub fn condition(&self, value: &DVector<f64>) -> Result<Gaussian> {
        check_dim("edge conditioning value", self.parent_dim(), value.len())?;
        Gaussian::from_computed(
            &self.a * value + &self.b,
            self.noise_cov.clone(),
            "edge conditional",
        )
    }
}

/// Marginal of the child: `N(A mean + b, noise_cov + A cov Aᵀ)`.
pub fn push_forward(parent: &Gaussian, edge: &AffineEdge) -> Result<Gaussian> {
    check_dim("push_forward", edge.parent_dim(), parent.dim())?;
    let mean = edge.a() * parent.mean() + edge.b();
    let cov = edge.noise_cov() + edge.a() * parent.cov() * edge.a().transpose();
    Gaussian::from_computed(mean, cov, "push_forward result")
}

/// Reverses an edge: returns the child marginal together with the
/// conditional of the parent given the child.
///
/// The reversed edge is computed with the gain `K = P Aᵀ S⁻¹`, where `S`
/// is the child covariance, so only `S` is ever factorized. The reversed
/// noise uses the Joseph form `(I - K A) P (I - K A)ᵀ + K Σ Kᵀ`, which
/// stays positive semi-definite under round-off.
pub fn reverse(parent: &Gaussian, edge: &AffineEdge) -> Result<(Gaussian, AffineEdge)> {
    let child = push_forward(parent, edge)?;
    let a = edge.a();
    let p = parent.cov();
    // S Kᵀ = A P, solved through the cached factor of S.
    let ap = a * p;
    let l = child.cholesky_factor();
    let y = l
        .solve_lower_triangular(&ap)
        .ok_or(Error::NotPositiveDefinite { context: "reverse" })?;
    let gain_t = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or(Error::NotPositiveDefinite { context: "reverse" })?;
    let gain = gain_t.transpose();

    let offset = parent.mean() - &gain * child.mean();
    let residual = DMatrix::identity(parent.dim(), parent.dim()) - &gain * a;
    let noise = &residual * p * residual.transpose() + &gain * edge.noise_cov() * gain.transpose();
    let reversed = AffineEdge::from_computed(gain, offset, noise)?;
    Ok((child, reversed))
}

/// Convenience wrapper for `Gaussian::logpdf`.
pub fn logpdf(g: &Gaussian, x: &DVector<f64>) -> Result<f64> {
    g.logpdf(x)
}

/// Convenience wrapper for `Gaussian::draw`.
pub fn draw<R: Rng + ?Sized>(g: &Gaussian, rng: &mut R) -> DVector<f64> {
    g.draw(rng)
}
