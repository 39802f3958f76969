//! Input distributions: multivariate Gaussians and weighted Dirac mixtures.
//!
//! Both types validate their invariants at construction and are immutable
//! afterwards, so every downstream consumer may assume a well-formed input.
//! Deserialization funnels through the same constructors.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for covariance symmetry at construction.
pub const COV_SYMMETRY_TOL: f64 = 1e-12;
/// Smallest admissible Cholesky pivot; at or below this the covariance is
/// treated as singular.
pub const COV_MIN_PIVOT: f64 = 1e-12;
/// Absolute tolerance on |sum of weights - 1| before exact renormalization.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Absolute bisection tolerance for the standard normal quantile.
const QUANTILE_TOL: f64 = 1e-12;
/// Bisection bracket for the standard normal quantile; the CDF is
/// indistinguishable from 0/1 in f64 far inside these bounds.
const QUANTILE_BRACKET: f64 = 40.0;

/// Multivariate Gaussian with strictly positive-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    /// Validates symmetry (within [`COV_SYMMETRY_TOL`]) and positive
    /// definiteness (smallest Cholesky pivot above [`COV_MIN_PIVOT`]).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::Dimension("Gaussian mean must be non-empty".into()));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} but mean has length {n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("Gaussian mean has non-finite entries".into()));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Covariance("covariance has non-finite entries".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > COV_SYMMETRY_TOL {
                    return Err(Error::Covariance(format!(
                        "asymmetric at ({i},{j}): {} vs {}",
                        cov[(i, j)],
                        cov[(j, i)]
                    )));
                }
            }
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Covariance("covariance is not positive definite".into()))?;
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_pivot <= COV_MIN_PIVOT {
            return Err(Error::Covariance(format!(
                "covariance is numerically singular (smallest Cholesky pivot {min_pivot:.3e})"
            )));
        }
        Ok(Self { mean, cov })
    }

    /// Univariate convenience constructor from mean and variance.
    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        Self::new(
            DVector::from_vec(vec![mean]),
            DMatrix::from_element(1, 1, variance),
        )
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Prepares a reusable sampler (factorizes the covariance once).
    pub(crate) fn sampler(&self) -> GaussianSampler {
        let chol = Cholesky::new(self.cov.clone())
            .expect("covariance was validated positive definite at construction");
        GaussianSampler {
            mean: self.mean.clone(),
            l: chol.unpack(),
        }
    }
}

pub(crate) struct GaussianSampler {
    mean: DVector<f64>,
    l: DMatrix<f64>,
}

impl GaussianSampler {
    pub(crate) fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample(StandardNormal));
        &self.mean + &self.l * z
    }
}

/// Weighted mixture of Dirac positions with weights in (0, 1] summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracMixture {
    weights: Vec<f64>,
    points: Vec<DVector<f64>>,
}

impl DiracMixture {
    /// Weights must lie in (0, 1] and sum to 1 within [`WEIGHT_SUM_TOL`];
    /// they are renormalized by their exact sum. Points must share one
    /// dimension.
    pub fn new(weights: Vec<f64>, points: Vec<DVector<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Size("Dirac mixture needs at least one point".into()));
        }
        if weights.len() != points.len() {
            return Err(Error::Size(format!(
                "{} weights for {} points",
                weights.len(),
                points.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::Dimension("Dirac points must be non-empty".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Dimension(format!(
                    "point {i} has dimension {} but point 0 has {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("point {i} has non-finite entries")));
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 || w > 1.0 {
                return Err(Error::Weight(format!("weight {i} = {w} outside (0, 1]")));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Weight(format!(
                "weights sum to {sum}, outside 1 +/- {WEIGHT_SUM_TOL:e}"
            )));
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self { weights, points })
    }

    /// Equal-weight mixture over the given points.
    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        let m = points.len();
        if m == 0 {
            return Err(Error::Size("Dirac mixture needs at least one point".into()));
        }
        Self::new(vec![1.0 / m as f64; m], points)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    /// Number of support points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

}

/// Either input class accepted by the distance and GP layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InputRepr", into = "InputRepr")]
pub enum InputDistribution {
    Gaussian(Gaussian),
    Dirac(DiracMixture),
}

impl InputDistribution {
    pub fn dim(&self) -> usize {
        match self {
            InputDistribution::Gaussian(g) => g.dim(),
            InputDistribution::Dirac(d) => d.dim(),
        }
    }

    /// Short class name for error messages.
    pub fn class(&self) -> &'static str {
        match self {
            InputDistribution::Gaussian(_) => "gaussian",
            InputDistribution::Dirac(_) => "dirac",
        }
    }

    pub fn as_gaussian(&self) -> Option<&Gaussian> {
        match self {
            InputDistribution::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_dirac(&self) -> Option<&DiracMixture> {
        match self {
            InputDistribution::Dirac(d) => Some(d),
            _ => None,
        }
    }
}

impl From<Gaussian> for InputDistribution {
    fn from(g: Gaussian) -> Self {
        InputDistribution::Gaussian(g)
    }
}

impl From<DiracMixture> for InputDistribution {
    fn from(d: DiracMixture) -> Self {
        InputDistribution::Dirac(d)
    }
}

/// Re-checks every construction invariant of an input distribution.
///
/// Constructors already enforce these, so this is chiefly useful as an
/// explicit guard after assembling inputs from foreign data.
pub fn validate(dist: &InputDistribution) -> Result<()> {
    match dist {
        InputDistribution::Gaussian(g) => {
            Gaussian::new(g.mean.clone(), g.cov.clone()).map(|_| ())
        }
        InputDistribution::Dirac(d) => {
            DiracMixture::new(d.weights.clone(), d.points.clone()).map(|_| ())
        }
    }
}

/// Wire representation; keeps the public types free to hold matrix types.
#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum InputRepr {
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    Dirac {
        weights: Vec<f64>,
        points: Vec<Vec<f64>>,
    },
}

impl TryFrom<InputRepr> for InputDistribution {
    type Error = Error;

    fn try_from(repr: InputRepr) -> Result<Self> {
        match repr {
            InputRepr::Gaussian { mean, cov } => {
                let n = mean.len();
                let rows = cov.len();
                if cov.iter().any(|r| r.len() != n) || rows != n {
                    return Err(Error::Dimension(format!(
                        "covariance rows do not form an {n}x{n} matrix"
                    )));
                }
                let flat: Vec<f64> = cov.into_iter().flatten().collect();
                Ok(Gaussian::new(DVector::from_vec(mean), DMatrix::from_row_slice(n, n, &flat))?.into())
            }
            InputRepr::Dirac { weights, points } => {
                let points = points.into_iter().map(DVector::from_vec).collect();
                Ok(DiracMixture::new(weights, points)?.into())
            }
        }
    }
}

impl From<InputDistribution> for InputRepr {
    fn from(dist: InputDistribution) -> Self {
        match dist {
            InputDistribution::Gaussian(g) => InputRepr::Gaussian {
                mean: g.mean.iter().cloned().collect(),
                cov: (0..g.cov.nrows())
                    .map(|i| g.cov.row(i).iter().cloned().collect())
                    .collect(),
            },
            InputDistribution::Dirac(d) => InputRepr::Dirac {
                weights: d.weights.clone(),
                points: d.points.iter().map(|p| p.iter().cloned().collect()).collect(),
            },
        }
    }
}

/// Standard normal CDF via the error function.
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal quantile by bisection on the CDF, accurate to
/// [`QUANTILE_TOL`] in the abscissa. Deliberately avoids any special-function
/// inverse so the result depends only on `erf`.
fn std_normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let mut lo = -QUANTILE_BRACKET;
    let mut hi = QUANTILE_BRACKET;
    while hi - lo > QUANTILE_TOL {
        let mid = 0.5 * (lo + hi);
        if std_normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Deterministic m-point quantile representation of a univariate Gaussian:
/// equal weights and points `mean + sd * quantile((i - 0.5) / m)` for
/// i = 1..=m, strictly increasing.
pub fn deterministic_sample(g: &Gaussian, m: usize) -> Result<DiracMixture> {
    if g.dim() != 1 {
        return Err(Error::Dimension(format!(
            "deterministic sampling is univariate only; got dimension {}",
            g.dim()
        )));
    }
    if m == 0 {
        return Err(Error::Size("sample count must be at least 1".into()));
    }
    let mu = g.mean[0];
    let sd = g.cov[(0, 0)].sqrt();
    let points = (1..=m)
        .map(|i| {
            let p = (i as f64 - 0.5) / m as f64;
            DVector::from_vec(vec![mu + sd * std_normal_quantile(p)])
        })
        .collect();
    DiracMixture::uniform(points)
}

/// `m` i.i.d. draws from a Gaussian, bit-reproducible for a fixed seed.
pub fn random_sample(g: &Gaussian, m: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = g.sampler();
    (0..m).map(|_| sampler.draw(&mut rng)).collect()
}

/// Mean vector and covariance matrix of an input distribution.
///
/// For a Dirac mixture these are the weighted sample moments (population
/// form, no small-sample correction), so the covariance is PSD and possibly
/// singular.
pub fn moments(dist: &InputDistribution) -> (DVector<f64>, DMatrix<f64>) {
    match dist {
        InputDistribution::Gaussian(g) => (g.mean.clone(), g.cov.clone()),
        InputDistribution::Dirac(d) => {
            let n = d.dim();
            let mut mean = DVector::zeros(n);
            for (w, p) in d.weights.iter().zip(&d.points) {
                mean.axpy(*w, p, 1.0);
            }
            let mut cov = DMatrix::zeros(n, n);
            for (w, p) in d.weights.iter().zip(&d.points) {
                let c = p - &mean;
                cov.syger(*w, &c, &c, 1.0);
            }
            // syger fills the lower triangle; mirror it.
            for i in 0..n {
                for j in (i + 1)..n {
                    cov[(i, j)] = cov[(j, i)];
                }
            }
            (mean, cov)
        }
    }
}
