//! Distances between probability distributions.
//!
//! Every family is a genuine or near metric on the input class it supports:
//!
//! * [`mcvmd_dirac`] — modified Cramér–von Mises distance between Dirac
//!   mixtures, the closed form of a localized-CDF double integral;
//!   [`mcvmd_lcd_oracle`] evaluates that defining integral numerically and
//!   exists purely to check the closed form against it.
//! * [`wasserstein_dirac`] — order-p Wasserstein distance between
//!   equal-size uniform Dirac mixtures via an exact assignment solver;
//!   [`assignment_bruteforce_oracle`] cross-checks it by enumeration.
//! * [`lp_distance`], [`hellinger`], [`jensen_shannon`] — quadrature-based
//!   distances between univariate Gaussian densities.
//!
//! Dirac families canonicalize the argument order internally so that
//! `d(a, b)` and `d(b, a)` run bit-identical computations.

mod assignment;
mod mcvmd;
mod quadrature;

use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{DiracMixture, InputDistribution};
use crate::error::{Error, Result};

pub use assignment::{assignment_bruteforce_oracle, wasserstein_dirac, BRUTEFORCE_MAX_POINTS};
pub use mcvmd::{
    mcvmd_dirac, mcvmd_dirac_with_constant, mcvmd_lcd_oracle, EULER_MASCHERONI,
    MCVMD_CB_CONSTANT, MCVMD_NEG_CLAMP,
};
pub use quadrature::{hellinger, jensen_shannon, lp_distance, JS_DENSITY_FLOOR};

/// Default upper kernel-width bound for the Cramér–von Mises family.
pub const DEFAULT_B_MAX: f64 = 100.0;
/// Default order for Wasserstein and L_p distances.
pub const DEFAULT_P: f64 = 2.0;
/// Default Simpson node count per axis.
pub const DEFAULT_QUAD_NODES: usize = 2001;
/// Minimum node count per axis for the localized-CDF integral oracle.
pub const LCD_ORACLE_MIN_NODES: usize = 51;

static MATRIX_BUILDS: AtomicU64 = AtomicU64::new(0);

/// Number of distance matrices built by this process.
///
/// Diagnostic hook: lets tests assert that a pipeline computes its distance
/// matrix exactly once and that hyperparameter optimization never rebuilds it.
pub fn matrix_build_count() -> u64 {
    MATRIX_BUILDS.load(AtomicOrdering::Relaxed)
}

/// Distance family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceFamily {
    Mcvmd,
    Wasserstein,
    Lp,
    /// Total variation with respect to the Lebesgue measure; evaluates the
    /// same integral as [`DistanceFamily::Lp`] (choose `p = 1` for the
    /// classical form).
    TotalVariation,
    Hellinger,
    JensenShannon,
}

impl DistanceFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            DistanceFamily::Mcvmd => "mcvmd",
            DistanceFamily::Wasserstein => "wasserstein",
            DistanceFamily::Lp => "lp",
            DistanceFamily::TotalVariation => "total_variation",
            DistanceFamily::Hellinger => "hellinger",
            DistanceFamily::JensenShannon => "jensen_shannon",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "mcvmd" => DistanceFamily::Mcvmd,
            "wasserstein" => DistanceFamily::Wasserstein,
            "lp" => DistanceFamily::Lp,
            "total_variation" => DistanceFamily::TotalVariation,
            "hellinger" => DistanceFamily::Hellinger,
            "jensen_shannon" => DistanceFamily::JensenShannon,
            other => return Err(Error::Parameter(format!("unknown distance family '{other}'"))),
        })
    }
}

impl std::fmt::Display for DistanceFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Simpson grid for the quadrature-based families.
///
/// `bounds: None` derives the interval per pair: the span of the two means
/// extended by eight of the larger standard deviation (for the localized-CDF
/// oracle, the support span extended by six kernel widths per outer node).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub nodes: usize,
    pub bounds: Option<(f64, f64)>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            nodes: DEFAULT_QUAD_NODES,
            bounds: None,
        }
    }
}

impl QuadratureConfig {
    pub fn with_nodes(nodes: usize) -> Self {
        QuadratureConfig { nodes, bounds: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 3 || self.nodes % 2 == 0 {
            return Err(Error::Quadrature(format!(
                "Simpson rule needs an odd node count of at least 3, got {}",
                self.nodes
            )));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Quadrature(format!(
                    "bounds ({lo}, {hi}) are not a finite increasing interval"
                )));
            }
        }
        Ok(())
    }
}

/// Full parameterization of a distance computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    pub family: DistanceFamily,
    /// Upper kernel-width bound for [`DistanceFamily::Mcvmd`].
    pub b_max: f64,
    /// Order for [`DistanceFamily::Wasserstein`] and the L_p integral.
    pub p: f64,
    pub quadrature: QuadratureConfig,
}

impl DistanceSpec {
    pub fn new(family: DistanceFamily) -> Self {
        DistanceSpec {
            family,
            b_max: DEFAULT_B_MAX,
            p: DEFAULT_P,
            quadrature: QuadratureConfig::default(),
        }
    }

    pub fn with_b_max(mut self, b_max: f64) -> Self {
        self.b_max = b_max;
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn with_quadrature(mut self, quadrature: QuadratureConfig) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.b_max.is_finite() || self.b_max <= 0.0 {
            return Err(Error::Parameter(format!("b_max = {} must be positive", self.b_max)));
        }
        if !self.p.is_finite() || self.p < 1.0 {
            return Err(Error::Parameter(format!("order p = {} must be >= 1", self.p)));
        }
        self.quadrature.validate()
    }
}

/// Evaluates the spec's distance family on a pair of inputs.
///
/// Families reject input classes they do not support rather than converting:
/// Dirac families require two Dirac mixtures, quadrature families require two
/// univariate Gaussians.
pub fn distance(spec: &DistanceSpec, a: &InputDistribution, b: &InputDistribution) -> Result<f64> {
    spec.validate()?;
    match spec.family {
        DistanceFamily::Mcvmd => {
            let (f, g) = dirac_pair(spec.family, a, b)?;
            mcvmd_dirac(f, g, spec.b_max)
        }
        DistanceFamily::Wasserstein => {
            let (f, g) = dirac_pair(spec.family, a, b)?;
            wasserstein_dirac(f, g, spec.p)
        }
        DistanceFamily::Lp | DistanceFamily::TotalVariation => {
            let (f, g) = gaussian_pair(spec.family, a, b)?;
            lp_distance(f, g, spec.p, &spec.quadrature)
        }
        DistanceFamily::Hellinger => {
            let (f, g) = gaussian_pair(spec.family, a, b)?;
            hellinger(f, g, &spec.quadrature)
        }
        DistanceFamily::JensenShannon => {
            let (f, g) = gaussian_pair(spec.family, a, b)?;
            jensen_shannon(f, g, &spec.quadrature)
        }
    }
}

fn dirac_pair<'a>(
    family: DistanceFamily,
    a: &'a InputDistribution,
    b: &'a InputDistribution,
) -> Result<(&'a DiracMixture, &'a DiracMixture)> {
    match (a, b) {
        (InputDistribution::Dirac(f), InputDistribution::Dirac(g)) => Ok((f, g)),
        _ => Err(Error::UnsupportedPair(format!(
            "{family} requires two Dirac mixtures, got {} and {}",
            a.class(),
            b.class()
        ))),
    }
}

fn gaussian_pair<'a>(
    family: DistanceFamily,
    a: &'a InputDistribution,
    b: &'a InputDistribution,
) -> Result<(&'a crate::distributions::Gaussian, &'a crate::distributions::Gaussian)> {
    match (a, b) {
        (InputDistribution::Gaussian(f), InputDistribution::Gaussian(g)) => Ok((f, g)),
        _ => Err(Error::UnsupportedPair(format!(
            "{family} requires two Gaussian densities, got {} and {}",
            a.class(),
            b.class()
        ))),
    }
}

/// Symmetric pairwise distance matrix with an exactly zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    spec: DistanceSpec,
    values: DMatrix<f64>,
}

impl DistanceMatrix {
    /// Assembles a matrix from parts, checking shape and symmetry contracts.
    pub fn from_parts(spec: DistanceSpec, values: DMatrix<f64>) -> Result<Self> {
        spec.validate()?;
        let n = values.nrows();
        if values.ncols() != n || n == 0 {
            return Err(Error::Size(format!(
                "distance matrix must be square and non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(Error::Inconsistent(format!(
                    "diagonal entry ({i},{i}) = {} is not zero",
                    values[(i, i)]
                )));
            }
            for j in 0..i {
                let (v, w) = (values[(i, j)], values[(j, i)]);
                if v != w {
                    return Err(Error::Inconsistent(format!(
                        "asymmetric entries at ({i},{j}): {v} vs {w}"
                    )));
                }
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Inconsistent(format!(
                        "entry ({i},{j}) = {v} is not a finite non-negative distance"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { spec, values })
    }

    pub fn spec(&self) -> &DistanceSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Computes all pairwise distances under `spec`.
///
/// Off-diagonal cells are evaluated once (upper triangle, possibly in
/// parallel) and mirrored, the diagonal is exactly zero, and the first
/// failing pair aborts the build with its index pair attached. Results do not
/// depend on the worker count: every cell is a pure function of its pair and
/// cells are written by index.
pub fn distance_matrix(inputs: &[InputDistribution], spec: &DistanceSpec) -> Result<DistanceMatrix> {
    spec.validate()?;
    let n = inputs.len();
    if n == 0 {
        return Err(Error::Size("distance matrix needs at least one input".into()));
    }
    MATRIX_BUILDS.fetch_add(1, AtomicOrdering::Relaxed);

    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let computed: Vec<((usize, usize), Result<f64>)> = pairs
        .into_par_iter()
        .map(|(i, j)| ((i, j), distance(spec, &inputs[i], &inputs[j])))
        .collect();

    let mut values = DMatrix::zeros(n, n);
    for ((i, j), r) in computed {
        let v = r.map_err(|e| pair_context(e, i, j))?;
        values[(i, j)] = v;
        values[(j, i)] = v;
    }
    Ok(DistanceMatrix {
        spec: spec.clone(),
        values,
    })
}

fn pair_context(e: Error, i: usize, j: usize) -> Error {
    e.with_context(&format!("pair ({i}, {j})"))
}

/// `x * ln(x)` extended continuously to zero at the origin.
pub fn xlog(x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!("xlog requires x >= 0, got {x}")));
    }
    Ok(xlog_unchecked(x))
}

#[inline]
pub(crate) fn xlog_unchecked(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Canonical argument order for Dirac pair distances: evaluating `(f, g)` or
/// `(g, f)` runs the identical computation, making symmetry exact in floating
/// point.
pub(crate) fn canonical_pair<'a>(
    f: &'a DiracMixture,
    g: &'a DiracMixture,
) -> (&'a DiracMixture, &'a DiracMixture) {
    if mixture_le(f, g) {
        (f, g)
    } else {
        (g, f)
    }
}

fn mixture_le(a: &DiracMixture, b: &DiracMixture) -> bool {
    use std::cmp::Ordering;
    match a.len().cmp(&b.len()) {
        Ordering::Less => return true,
        Ordering::Greater => return false,
        Ordering::Equal => {}
    }
    for (pa, pb) in a.points().iter().zip(b.points()) {
        match pa.len().cmp(&pb.len()) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
        for (xa, xb) in pa.iter().zip(pb.iter()) {
            match xa.total_cmp(xb) {
                Ordering::Less => return true,
                Ordering::Greater => return false,
                Ordering::Equal => {}
            }
        }
    }
    for (wa, wb) in a.weights().iter().zip(b.weights()) {
        match wa.total_cmp(wb) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    true
}
