//! Gaussian process regression whose Gram matrix is built from a cached
//! distance matrix.
//!
//! The pipeline is: compute a [`DistanceMatrix`] once, substitute it through
//! a stationary kernel, factorize, and then fit, evaluate the marginal
//! likelihood, and predict without ever touching the distances again. The
//! factorization core ([`fit_gram`]) works on any symmetric matrix, so the
//! closed-form mean-kernel baseline reuses it unchanged.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distances::{distance, DistanceMatrix, DistanceSpec};
use crate::distributions::{DiracMixture, Gaussian, InputDistribution};
use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, KernelFamily, KernelSpec};
use crate::optim::{multistart_minimize, NelderMeadConfig};

/// Round-off floor for the predictive variance, in units of the prior
/// variance at the test point (never scaled below one): values in
/// `[floor * max(1, k_self), 0)` are clamped to zero, anything lower is an
/// error. Cancellation in `k_self - |L^-1 k*|^2` scales with `k_self`, so an
/// absolute floor would misfire at large amplitudes.
pub const VARIANCE_CLAMP_FLOOR: f64 = -1e-10;

/// Jitter ladder for indefinite or near-singular Gram matrices: multiples of
/// the mean diagonal, starting at `INITIAL`, growing by `GROWTH` per step, up
/// to `CEILING` inclusive.
pub const JITTER_INITIAL_FACTOR: f64 = 1e-10;
pub const JITTER_GROWTH: f64 = 10.0;
pub const JITTER_CEILING_FACTOR: f64 = 1e-2;

/// Gaussian predictive density, determined by its mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub mean: f64,
    pub variance: f64,
}

/// Cholesky factorization of a regularized Gram matrix plus everything the
/// predictive equations need.
#[derive(Debug, Clone, PartialEq)]
pub struct GramFit {
    chol: DMatrix<f64>,
    weights: DVector<f64>,
    jitter_used: f64,
    log_marginal: f64,
}

/// Factorizes `gram` (+ jitter if needed) and solves for the prediction
/// weights.
///
/// A plain Cholesky is attempted first; on failure, `jitter * I` is added
/// with jitter climbing the ladder defined by the `JITTER_*` constants,
/// scaled by the mean diagonal. Running past the ceiling is an error: the
/// matrix is indefinite beyond what round-off repair should mask.
pub fn fit_gram(gram: &DMatrix<f64>, targets: &DVector<f64>) -> Result<GramFit> {
    fit_gram_regularized(gram, targets, false)
}

/// [`fit_gram`] with an explicit regularization policy. With `always_jitter`
/// the ladder starts at its first rung instead of attempting an
/// unregularized factorization.
///
/// Kernel-only callers (noise variance exactly zero) must pass `true`: their
/// Gram matrices are singular up to round-off once inputs correlate, and
/// whether a plain Cholesky survives one is luck, not rank. A lucky
/// factorization reports jitter 0 and predictive variances that are float
/// noise (an ulp or two of the prior, either sign) instead of calibrated
/// near-zeros at a known regularization scale.
pub(crate) fn fit_gram_regularized(
    gram: &DMatrix<f64>,
    targets: &DVector<f64>,
    always_jitter: bool,
) -> Result<GramFit> {
    let n = gram.nrows();
    if gram.ncols() != n || n == 0 {
        return Err(Error::Size(format!(
            "gram matrix must be square and non-empty, got {}x{}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    if targets.len() != n {
        return Err(Error::Dimension(format!(
            "{} targets for a {n}x{n} gram matrix",
            targets.len()
        )));
    }
    if let Some(bad) = targets.iter().find(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("target value {bad} is not finite")));
    }
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(Error::Covariance("gram matrix has non-finite entries".into()));
    }

    let mean_diag = gram.diagonal().mean();
    let mut jitter = if always_jitter {
        JITTER_INITIAL_FACTOR * mean_diag
    } else {
        0.0
    };
    let chol = loop {
        let candidate = if jitter == 0.0 {
            gram.clone()
        } else {
            let mut m = gram.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            m
        };
        if let Some(c) = candidate.cholesky() {
            break c;
        }
        jitter = if jitter == 0.0 {
            JITTER_INITIAL_FACTOR * mean_diag
        } else {
            jitter * JITTER_GROWTH
        };
        if jitter > JITTER_CEILING_FACTOR * mean_diag || jitter <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "Cholesky failed with jitter up to {:.3e} (mean diagonal {mean_diag:.3e})",
                JITTER_CEILING_FACTOR * mean_diag
            )));
        }
    };

    let chol = chol.unpack();
    let z = chol
        .solve_lower_triangular(targets)
        .ok_or_else(|| Error::Covariance("forward triangular solve failed".into()))?;
    let weights = chol
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Covariance("backward triangular solve failed".into()))?;

    let log_det_half: f64 = chol.diagonal().iter().map(|d| d.ln()).sum();
    let log_marginal = -0.5 * targets.dot(&weights)
        - log_det_half
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    Ok(GramFit {
        chol,
        weights,
        jitter_used: jitter,
        log_marginal,
    })
}

impl GramFit {
    /// Lower-triangular Cholesky factor of the regularized Gram matrix.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Solution of `(K + noise I + jitter I) w = y`.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Log marginal likelihood of the targets the fit was built from.
    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    pub fn n(&self) -> usize {
        self.chol.nrows()
    }

    /// Predictive mean and variance from a cross-covariance vector `k*` and
    /// the prior variance `k(x*, x*)` at the test input.
    pub fn predict_from_cross(&self, k_star: &DVector<f64>, k_self: f64) -> Result<PredictionResult> {
        if k_star.len() != self.n() {
            return Err(Error::Dimension(format!(
                "cross-covariance has {} entries for {} training points",
                k_star.len(),
                self.n()
            )));
        }
        let mean = k_star.dot(&self.weights);
        let v = self
            .chol
            .solve_lower_triangular(k_star)
            .ok_or_else(|| Error::Covariance("forward triangular solve failed".into()))?;
        let variance = clamp_variance(k_self - v.norm_squared(), k_self)?;
        Ok(PredictionResult { mean, variance })
    }
}

fn clamp_variance(variance: f64, prior_variance: f64) -> Result<f64> {
    let floor = VARIANCE_CLAMP_FLOOR * prior_variance.max(1.0);
    if variance >= 0.0 {
        Ok(variance)
    } else if variance >= floor {
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance(format!(
            "predictive variance {variance} is below the {floor} round-off floor"
        )))
    }
}

/// A fitted distance-kernel Gaussian process.
///
/// Immutable once fitted; all prediction paths go through the stored
/// Cholesky factor and weights, so a deserialized model with bit-identical
/// fields reproduces predictions bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGP {
    kernel: KernelSpec,
    noise_var: f64,
    fit: GramFit,
    train_inputs: Vec<InputDistribution>,
    train_targets: DVector<f64>,
    distance_spec: DistanceSpec,
}

impl TrainedGP {
    /// Fits the GP: builds `K + noise I` from the distance matrix through the
    /// kernel, factorizes with the jitter ladder, and solves for weights.
    pub fn fit(
        inputs: &[InputDistribution],
        targets: &DVector<f64>,
        dm: &DistanceMatrix,
        kernel: &KernelSpec,
        noise_var: f64,
    ) -> Result<TrainedGP> {
        if inputs.len() != dm.n() || targets.len() != dm.n() {
            return Err(Error::Dimension(format!(
                "{} inputs and {} targets for a {}x{} distance matrix",
                inputs.len(),
                targets.len(),
                dm.n(),
                dm.n()
            )));
        }
        let gram = gram_matrix(kernel, dm.values(), noise_var)?;
        let fit = fit_gram_regularized(&gram, targets, noise_var == 0.0).map_err(|e| match e {
            Error::NotPositiveDefinite(m) => Error::NotPositiveDefinite(format!(
                "kernel {} over {} distances: {m}",
                kernel.family,
                dm.spec().family
            )),
            other => other,
        })?;
        Ok(TrainedGP {
            kernel: kernel.clone(),
            noise_var,
            fit,
            train_inputs: inputs.to_vec(),
            train_targets: targets.clone(),
            distance_spec: dm.spec().clone(),
        })
    }

    /// Reassembles a fitted model from stored fields (deserialization path).
    ///
    /// Shapes and finiteness are checked; the Cholesky factor is trusted to
    /// match its Gram matrix, since verifying that would require recomputing
    /// every pairwise distance.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kernel: KernelSpec,
        noise_var: f64,
        jitter_used: f64,
        chol: DMatrix<f64>,
        weights: DVector<f64>,
        train_inputs: Vec<InputDistribution>,
        train_targets: DVector<f64>,
        distance_spec: DistanceSpec,
    ) -> Result<TrainedGP> {
        kernel.validate()?;
        distance_spec.validate()?;
        if !noise_var.is_finite() || noise_var < 0.0 {
            return Err(Error::Parameter(format!(
                "noise variance = {noise_var} must be finite and non-negative"
            )));
        }
        if !jitter_used.is_finite() || jitter_used < 0.0 {
            return Err(Error::Parameter(format!(
                "jitter = {jitter_used} must be finite and non-negative"
            )));
        }
        let n = train_inputs.len();
        if n == 0
            || chol.nrows() != n
            || chol.ncols() != n
            || weights.len() != n
            || train_targets.len() != n
        {
            return Err(Error::Dimension(format!(
                "inconsistent model: {n} inputs, {}x{} factor, {} weights, {} targets",
                chol.nrows(),
                chol.ncols(),
                weights.len(),
                train_targets.len()
            )));
        }
        for input in &train_inputs {
            crate::distributions::validate(input)?;
        }
        if chol.iter().any(|v| !v.is_finite()) || weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Covariance("model factor has non-finite entries".into()));
        }
        if chol.diagonal().iter().any(|d| *d <= 0.0) {
            return Err(Error::Covariance(
                "Cholesky factor has a non-positive diagonal".into(),
            ));
        }
        let log_det_half: f64 = chol.diagonal().iter().map(|d| d.ln()).sum();
        let log_marginal = -0.5 * train_targets.dot(&weights)
            - log_det_half
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(TrainedGP {
            kernel,
            noise_var,
            fit: GramFit {
                chol,
                weights,
                jitter_used,
                log_marginal,
            },
            train_inputs,
            train_targets,
            distance_spec,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train_inputs.len()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn jitter_used(&self) -> f64 {
        self.fit.jitter_used
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        self.fit.chol()
    }

    pub fn weights(&self) -> &DVector<f64> {
        self.fit.weights()
    }

    pub fn train_inputs(&self) -> &[InputDistribution] {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &DVector<f64> {
        &self.train_targets
    }

    pub fn distance_spec(&self) -> &DistanceSpec {
        &self.distance_spec
    }

    /// Log marginal likelihood of the training targets under this model.
    pub fn log_marginal(&self) -> f64 {
        self.fit.log_marginal
    }

    /// Prediction from precomputed distances to the training inputs, with the
    /// test input at distance zero from itself.
    pub fn predict(&self, test_dist: &DVector<f64>) -> Result<PredictionResult> {
        self.predict_with_self(test_dist, 0.0)
    }

    /// Prediction with an explicit self-distance (nonzero only for exotic
    /// distance surrogates; the prior variance term is `kernel(self_dist)`).
    pub fn predict_with_self(
        &self,
        test_dist: &DVector<f64>,
        self_dist: f64,
    ) -> Result<PredictionResult> {
        if test_dist.len() != self.n_train() {
            return Err(Error::Dimension(format!(
                "{} test distances for {} training points",
                test_dist.len(),
                self.n_train()
            )));
        }
        let k_star = DVector::from_iterator(
            test_dist.len(),
            test_dist
                .iter()
                .map(|&d| crate::kernels::kernel_eval(&self.kernel, d))
                .collect::<Result<Vec<f64>>>()?,
        );
        let k_self = crate::kernels::kernel_eval(&self.kernel, self_dist)?;
        self.fit.predict_from_cross(&k_star, k_self)
    }

    /// Prediction at a distribution test input: distances to every training
    /// input are computed under the model's distance spec, then substituted
    /// through the kernel.
    pub fn predict_dist(&self, test_input: &InputDistribution) -> Result<PredictionResult> {
        let dists = self
            .train_inputs
            .iter()
            .map(|train| distance(&self.distance_spec, test_input, train))
            .collect::<Result<Vec<f64>>>()?;
        self.predict(&DVector::from_vec(dists))
    }

    /// Monte Carlo prediction at an uncertain Gaussian test input: draws `t`
    /// samples, predicts at each as a single-point Dirac, and moment-matches
    /// the resulting mixture (mean of means; mean of variances plus the
    /// spread of the means).
    pub fn predict_mc(
        &self,
        test_gaussian: &Gaussian,
        t: usize,
        seed: u64,
    ) -> Result<PredictionResult> {
        if t == 0 {
            return Err(Error::Parameter("sample count must be positive".into()));
        }
        let sampler = test_gaussian.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means = Vec::with_capacity(t);
        let mut mean_variance = 0.0;
        for _ in 0..t {
            let point = sampler.draw(&mut rng);
            let dirac: InputDistribution = DiracMixture::uniform(vec![point])?.into();
            let r = self.predict_dist(&dirac)?;
            means.push(r.mean);
            mean_variance += r.variance;
        }
        let inv_t = 1.0 / t as f64;
        mean_variance *= inv_t;
        let mean: f64 = means.iter().sum::<f64>() * inv_t;
        let spread: f64 = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() * inv_t;
        Ok(PredictionResult {
            mean,
            variance: mean_variance + spread,
        })
    }
}

/// Log marginal likelihood of `targets` under the kernel/noise model, without
/// keeping the fit.
pub fn log_marginal_likelihood(
    targets: &DVector<f64>,
    dm: &DistanceMatrix,
    kernel: &KernelSpec,
    noise_var: f64,
) -> Result<f64> {
    let gram = gram_matrix(kernel, dm.values(), noise_var)?;
    Ok(fit_gram_regularized(&gram, targets, noise_var == 0.0)?.log_marginal())
}

/// Search configuration for [`optimize_hyperparameters`].
///
/// Starts are drawn log-uniformly from the ranges, one RNG stream per
/// restart seeded with `seed + restart index`, in the fixed order amplitude,
/// lengthscale, noise (when optimized), shape (rational quadratic only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// `Some(v)` pins the noise variance at `v` instead of optimizing it.
    pub fix_noise: Option<f64>,
    /// Each range seeds the restart draws and bounds the search box for its
    /// parameter. The box matters: on noise-free targets the unbounded
    /// likelihood diverges along growing amplitude and lengthscale with
    /// vanishing noise, where the fit is numerically meaningless.
    pub amplitude_range: (f64, f64),
    pub lengthscale_range: (f64, f64),
    pub noise_range: (f64, f64),
    /// Range for the rational-quadratic shape; ignored elsewhere.
    pub shape_range: (f64, f64),
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            restarts: 8,
            max_iters: 400,
            seed: 0,
            fix_noise: None,
            amplitude_range: (1e-2, 1e2),
            lengthscale_range: (1e-2, 1e2),
            // The ceiling is a noise VARIANCE and must stay above the
            // residual variance of a badly misfit model, or the box would
            // clamp the likelihood's honest noise estimate.
            noise_range: (1e-6, 1e3),
            shape_range: (1e-1, 1e1),
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Parameter("restarts must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        if let Some(v) = self.fix_noise {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!(
                    "fixed noise variance = {v} must be finite and non-negative"
                )));
            }
        }
        for (name, (lo, hi)) in [
            ("amplitude", self.amplitude_range),
            ("lengthscale", self.lengthscale_range),
            ("noise", self.noise_range),
            ("shape", self.shape_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                return Err(Error::Parameter(format!(
                    "{name} init range ({lo}, {hi}) must be positive and ordered"
                )));
            }
        }
        Ok(())
    }
}

/// Winner of a hyperparameter search.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedHyperparameters {
    pub kernel: KernelSpec,
    pub noise_var: f64,
    pub log_marginal: f64,
    /// Which restart won; ties go to the lowest index.
    pub restart_index: usize,
}

pub(crate) fn log_bounds(range: (f64, f64)) -> (f64, f64) {
    (range.0.ln(), range.1.ln())
}

pub(crate) fn outside_box(x: &[f64], ln_bounds: &[(f64, f64)]) -> bool {
    x.iter()
        .zip(ln_bounds)
        .any(|(&v, &(lo, hi))| v < lo || v > hi)
}

/// Maximizes the log marginal likelihood over log-parameters with
/// multistart Nelder–Mead, restricted to the configured search box.
///
/// The distance matrix is computed by the caller exactly once; every
/// objective evaluation reuses it and only rebuilds the kernel Gram matrix.
/// Shape parameters other than the rational-quadratic `shape` (Matérn order,
/// gamma exponent) stay fixed at their values in `family`. Deterministic for
/// a fixed seed, independent of the worker count.
pub fn optimize_hyperparameters(
    targets: &DVector<f64>,
    dm: &DistanceMatrix,
    family: KernelFamily,
    config: &OptimizeConfig,
) -> Result<OptimizedHyperparameters> {
    config.validate()?;
    if targets.len() != dm.n() {
        return Err(Error::Dimension(format!(
            "{} targets for a {}x{} distance matrix",
            targets.len(),
            dm.n(),
            dm.n()
        )));
    }
    let optimize_shape = matches!(family, KernelFamily::RationalQuadratic { .. });
    let optimize_noise = config.fix_noise.is_none();

    let unpack = |x: &[f64]| -> (KernelSpec, f64) {
        let amplitude = x[0].exp();
        let lengthscale = x[1].exp();
        let mut next = 2;
        let noise_var = match config.fix_noise {
            Some(v) => v,
            None => {
                next += 1;
                x[next - 1].exp()
            }
        };
        let family = if optimize_shape {
            KernelFamily::RationalQuadratic { shape: x[next].exp() }
        } else {
            family
        };
        (KernelSpec::new(family, amplitude, lengthscale), noise_var)
    };

    let mut ln_bounds = vec![
        log_bounds(config.amplitude_range),
        log_bounds(config.lengthscale_range),
    ];
    if optimize_noise {
        ln_bounds.push(log_bounds(config.noise_range));
    }
    if optimize_shape {
        ln_bounds.push(log_bounds(config.shape_range));
    }

    let objective = |x: &[f64]| -> f64 {
        if outside_box(x, &ln_bounds) {
            return f64::INFINITY;
        }
        let (kernel, noise_var) = unpack(x);
        match log_marginal_likelihood(targets, dm, &kernel, noise_var) {
            Ok(lml) => -lml,
            Err(_) => f64::INFINITY,
        }
    };

    let starts: Vec<Vec<f64>> = (0..config.restarts)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r as u64));
            let mut draw = |range: (f64, f64)| {
                let u: f64 = rand::Rng::gen(&mut rng);
                let (lo, hi) = (range.0.ln(), range.1.ln());
                lo + u * (hi - lo)
            };
            let mut start = vec![draw(config.amplitude_range), draw(config.lengthscale_range)];
            if optimize_noise {
                start.push(draw(config.noise_range));
            }
            if optimize_shape {
                start.push(draw(config.shape_range));
            }
            start
        })
        .collect();

    let nm = NelderMeadConfig {
        max_iters: config.max_iters,
        ..NelderMeadConfig::default()
    };
    let (restart_index, best) = multistart_minimize(objective, &starts, &nm).map_err(|e| {
        Error::Optimization(format!(
            "hyperparameter search for kernel {family} failed: {e}"
        ))
    })?;
    let (kernel, noise_var) = unpack(&best.x);
    Ok(OptimizedHyperparameters {
        kernel,
        noise_var,
        log_marginal: -best.value,
        restart_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distances::{distance_matrix, DistanceFamily};
    use rand::Rng;

    fn dirac_point(x: f64) -> InputDistribution {
        DiracMixture::uniform(vec![DVector::from_vec(vec![x])])
            .unwrap()
            .into()
    }

    fn wasserstein_spec() -> DistanceSpec {
        DistanceSpec::new(DistanceFamily::Wasserstein)
    }

    fn se(amplitude: f64, lengthscale: f64) -> KernelSpec {
        KernelSpec::squared_exponential(amplitude, lengthscale)
    }

    fn setup(
        points: &[f64],
        targets: &[f64],
        kernel: &KernelSpec,
        noise: f64,
    ) -> (Vec<InputDistribution>, DistanceMatrix, TrainedGP) {
        let inputs: Vec<InputDistribution> = points.iter().map(|&x| dirac_point(x)).collect();
        let dm = distance_matrix(&inputs, &wasserstein_spec()).unwrap();
        let y = DVector::from_vec(targets.to_vec());
        let gp = TrainedGP::fit(&inputs, &y, &dm, kernel, noise).unwrap();
        (inputs, dm, gp)
    }

    #[test]
    fn single_point_fit_is_exact_up_to_the_jitter_floor() {
        // Noise-free fits always take the first ladder rung, so the system
        // solved is 1 + 1e-10 and every quantity sits a hair off the exact
        // interpolant, at a scale the fit reports through jitter_used.
        let (_, _, gp) = setup(&[0.0], &[3.0], &se(1.0, 1.0), 0.0);
        assert_eq!(gp.jitter_used(), JITTER_INITIAL_FACTOR);
        assert!((gp.weights()[0] - 3.0).abs() <= 1e-9);
        let r = gp.predict(&DVector::from_vec(vec![0.0])).unwrap();
        assert!((r.mean - 3.0).abs() <= 1e-9);
        assert!(r.variance > 0.0);
        assert!((r.variance - JITTER_INITIAL_FACTOR).abs() <= 1e-13);
    }

    #[test]
    fn far_test_input_recovers_the_prior() {
        let (_, _, gp) = setup(&[0.0], &[3.0], &se(1.3, 1.0), 0.0);
        let r = gp.predict(&DVector::from_vec(vec![1e6])).unwrap();
        assert_eq!(r.mean, 0.0, "squared exponential underflows to exactly zero");
        assert_eq!(r.variance, 1.3 * 1.3);
    }

    #[test]
    fn duplicate_inputs_need_jitter() {
        let (_, dm, gp) = setup(&[0.5, 0.5], &[1.0, 2.0], &se(1.0, 1.0), 0.0);
        assert!(gp.jitter_used() > 0.0);
        // Solve contract against the explicitly regularized matrix.
        let mut k = crate::kernels::gram_matrix(&se(1.0, 1.0), dm.values(), 0.0).unwrap();
        for i in 0..2 {
            k[(i, i)] += gp.jitter_used();
        }
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let residual = (&k * gp.weights() - &y).norm();
        assert!(residual <= 1e-8 * y.norm(), "residual {residual}");
    }

    #[test]
    fn factorization_contracts_hold_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<f64> = (0..30).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let targets: Vec<f64> = points.iter().map(|x| (0.7 * x).sin()).collect();
        let kernel = se(1.2, 1.0);
        let (_, dm, gp) = setup(&points, &targets, &kernel, 0.1);

        let mut k = crate::kernels::gram_matrix(&kernel, dm.values(), 0.1).unwrap();
        for i in 0..30 {
            k[(i, i)] += gp.jitter_used();
        }
        let y = DVector::from_vec(targets);
        let residual = (&k * gp.weights() - &y).norm();
        assert!(residual <= 1e-8 * y.norm(), "residual {residual}");
        let recon = gp.chol() * gp.chol().transpose();
        let err = (&recon - &k).norm() / k.norm();
        assert!(err <= 1e-8, "reconstruction error {err}");
    }

    #[test]
    fn interpolation_suite_with_zero_noise() {
        // Targets are an exact kernel expansion y = K c, so they lie in the
        // span the regularized solve can reproduce; the interpolation error
        // is then of the order of the jitter, not of the targets.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<f64> = (0..50).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let kernel = se(1.0, 5.0);
        let inputs_raw: Vec<InputDistribution> = points.iter().map(|&x| dirac_point(x)).collect();
        let dm = distance_matrix(&inputs_raw, &wasserstein_spec()).unwrap();
        let k0 = crate::kernels::gram_matrix(&kernel, dm.values(), 0.0).unwrap();
        let c = DVector::from_fn(50, |_, _| {
            0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let y = &k0 * c;
        let targets: Vec<f64> = y.iter().copied().collect();
        let (inputs, _, gp) = setup(&points, &targets, &kernel, 0.0);
        assert!(
            gp.jitter_used() > 0.0,
            "this configuration is meant to exercise the jitter ladder"
        );
        for (input, &target) in inputs.iter().zip(targets.iter()) {
            let r = gp.predict_dist(input).unwrap();
            assert!(
                (r.mean - target).abs() <= 1e-6,
                "mean {} vs target {target}",
                r.mean
            );
            assert!(
                r.variance <= 10.0 * gp.jitter_used(),
                "variance {} vs jitter {}",
                r.variance,
                gp.jitter_used()
            );
        }
    }

    #[test]
    fn variance_shrinks_as_training_data_grows() {
        let pool: Vec<f64> = vec![
            -4.0, -3.1, -2.2, -1.5, -0.8, 0.0, 0.9, 1.6, 2.4, 3.3, 4.1, -3.7, 2.9, -1.1, 0.4,
            -2.8, 3.8, 1.2, -0.3, 4.6,
        ];
        let test = dirac_point(0.37);
        let mut last = f64::INFINITY;
        for n in [5, 10, 20] {
            let points = &pool[..n];
            let targets: Vec<f64> = points.iter().map(|x| x.cos()).collect();
            let (_, _, gp) = setup(points, &targets, &se(1.0, 1.0), 0.01);
            let var = gp.predict_dist(&test).unwrap().variance;
            assert!(var <= last + 1e-9, "variance rose from {last} to {var} at n={n}");
            last = var;
        }
    }

    #[test]
    fn log_marginal_matches_reference_values() {
        // Scalar cases: noise-free fits take the jitter floor, so the system
        // is K = [[1 + j]] and the value is -y^2/(2(1+j)) - ln(2 pi (1+j))/2.
        let scalar_lml = |y: f64| {
            let k = 1.0 + JITTER_INITIAL_FACTOR;
            -0.5 * y * y / k - 0.5 * k.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        };
        let (_, dm, _) = setup(&[0.0], &[0.0], &se(1.0, 1.0), 0.0);
        let y0 = DVector::from_vec(vec![0.0]);
        let lml = log_marginal_likelihood(&y0, &dm, &se(1.0, 1.0), 0.0).unwrap();
        assert!((lml - scalar_lml(0.0)).abs() < 1e-12, "{lml}");
        let y2 = DVector::from_vec(vec![2.0]);
        let lml = log_marginal_likelihood(&y2, &dm, &se(1.0, 1.0), 0.0).unwrap();
        assert!((lml - scalar_lml(2.0)).abs() < 1e-12, "{lml}");

        // Frozen general 2x2 case through the gram-level API.
        let gram = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        let fit = fit_gram(&gram, &y).unwrap();
        assert_eq!(fit.jitter_used(), 0.0);
        assert!(
            (fit.log_marginal() - -3.2605421032341995).abs() < 1e-12,
            "{}",
            fit.log_marginal()
        );
    }

    #[test]
    fn log_marginal_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let points: Vec<f64> = (0..15).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let targets: Vec<f64> = points.iter().map(|x| x.tanh()).collect();
        let kernel = se(0.9, 1.4);
        let (_, dm, gp) = setup(&points, &targets, &kernel, 0.3);
        assert_eq!(gp.jitter_used(), 0.0, "noise 0.3 keeps the matrix well conditioned");

        let k = crate::kernels::gram_matrix(&kernel, dm.values(), 0.3).unwrap();
        let y = DVector::from_vec(targets);
        let inv = k.clone().try_inverse().unwrap();
        let dense = -0.5 * y.dot(&(&inv * &y))
            - 0.5 * k.determinant().ln()
            - 0.5 * 15.0 * (2.0 * std::f64::consts::PI).ln();
        let rel = (gp.log_marginal() - dense).abs() / dense.abs();
        assert!(rel <= 1e-8, "cholesky {} vs dense {dense}", gp.log_marginal());
    }

    #[test]
    fn likelihood_peaks_near_the_generative_noise() {
        // Draw y from the exact generative model so the likelihood curve has
        // its maximum near the true noise variance by construction.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let points: Vec<f64> = (0..60).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let inputs: Vec<InputDistribution> = points.iter().map(|&x| dirac_point(x)).collect();
        let dm = distance_matrix(&inputs, &wasserstein_spec()).unwrap();
        let kernel = se(1.0, 1.0);
        let gram = crate::kernels::gram_matrix(&kernel, dm.values(), 1e-10).unwrap();
        let l = gram.cholesky().unwrap().unpack();
        let z = DVector::from_fn(60, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let noise = DVector::from_fn(60, |_, _| {
            0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let y = &l * z + noise;

        let grid = [1e-4, 0.01, 0.09, 0.5, 2.0];
        let lmls: Vec<f64> = grid
            .iter()
            .map(|&nv| log_marginal_likelihood(&y, &dm, &kernel, nv).unwrap())
            .collect();
        let best = lmls
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(grid[best], 0.09, "lml curve {lmls:?}");
    }

    #[test]
    fn predict_dist_matches_manual_distances_and_rejects_bad_pairs() {
        let (_, _, gp) = setup(&[0.0, 1.0, 3.0], &[0.5, -0.2, 0.9], &se(1.0, 1.0), 0.01);
        let test = dirac_point(0.4);
        let by_dist = gp
            .predict(&DVector::from_vec(vec![0.4, 0.6, 2.6]))
            .unwrap();
        let by_input = gp.predict_dist(&test).unwrap();
        assert_eq!(by_dist, by_input);

        let gaussian_test: InputDistribution =
            Gaussian::univariate(0.0, 1.0).unwrap().into();
        let err = gp.predict_dist(&gaussian_test).unwrap_err();
        assert!(matches!(err, Error::UnsupportedPair(_)), "{err}");
    }

    #[test]
    fn predict_mc_degenerates_to_the_point_prediction() {
        let (_, _, gp) = setup(&[0.0, 1.0, 2.5], &[1.0, 0.0, -1.0], &se(1.0, 1.0), 0.01);
        let tight = Gaussian::univariate(0.8, 1e-12).unwrap();
        let mc = gp.predict_mc(&tight, 64, 9).unwrap();
        let point = gp.predict_dist(&dirac_point(0.8)).unwrap();
        assert!((mc.mean - point.mean).abs() < 1e-6);
        assert!((mc.variance - point.variance).abs() < 1e-6);
    }

    #[test]
    fn predict_mc_single_draw_has_no_spread_term() {
        let (_, _, gp) = setup(&[0.0, 2.0], &[1.0, -1.0], &se(1.0, 1.0), 0.1);
        let g = Gaussian::univariate(1.0, 0.5).unwrap();
        let mc = gp.predict_mc(&g, 1, 123).unwrap();
        // Reproduce the single draw to know which point it predicted at.
        let sampler_draw = {
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            1.0 + 0.5f64.sqrt() * z
        };
        let point = gp.predict_dist(&dirac_point(sampler_draw)).unwrap();
        assert_eq!(mc.mean, point.mean);
        assert_eq!(mc.variance, point.variance);
        assert_eq!(mc, gp.predict_mc(&g, 1, 123).unwrap(), "seed determinism");
    }

    #[test]
    fn predict_mc_converges_statistically() {
        let (_, _, gp) = setup(
            &[-3.0, -1.5, 0.0, 1.5, 3.0],
            &[0.1, -0.4, 1.0, 0.3, -0.8],
            &se(1.0, 1.0),
            0.05,
        );
        let g = Gaussian::univariate(0.5, 0.7).unwrap();
        let a = gp.predict_mc(&g, 10_000, 31).unwrap();
        let b = gp.predict_mc(&g, 100_000, 33).unwrap();
        // The mixture variance bounds the variance of the component means,
        // so this standard-error estimate is conservative.
        let se_bound = 3.0 * (a.variance / 1e4 + b.variance / 1e5).sqrt();
        assert!(
            (a.mean - b.mean).abs() <= se_bound,
            "{} vs {} (allowed {se_bound})",
            a.mean,
            b.mean
        );
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let inputs = vec![dirac_point(0.0), dirac_point(1.0)];
        let dm = distance_matrix(&inputs, &wasserstein_spec()).unwrap();
        let y_short = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            TrainedGP::fit(&inputs, &y_short, &dm, &se(1.0, 1.0), 0.0).unwrap_err(),
            Error::Dimension(_)
        ));
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let gp = TrainedGP::fit(&inputs, &y, &dm, &se(1.0, 1.0), 0.1).unwrap();
        assert!(matches!(
            gp.predict(&DVector::from_vec(vec![0.0])).unwrap_err(),
            Error::Dimension(_)
        ));
        assert!(gp.predict_mc(&Gaussian::univariate(0.0, 1.0).unwrap(), 0, 0).is_err());
        assert!(matches!(
            fit_gram(&DMatrix::zeros(2, 3), &y).unwrap_err(),
            Error::Size(_)
        ));
    }

    #[test]
    fn indefinite_gram_exhausts_the_jitter_ladder() {
        // A hard indefinite matrix: jitter up to 1e-2 of the mean diagonal
        // cannot repair an eigenvalue at -1.
        let gram = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let y = DVector::from_vec(vec![0.0, 0.0]);
        let err = fit_gram(&gram, &y).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite(_)), "{err}");
    }

    #[test]
    fn model_reassembly_reproduces_predictions_bitwise() {
        let (inputs, _, gp) = setup(&[0.0, 1.0, 2.0], &[0.3, -0.1, 0.8], &se(1.1, 0.9), 0.05);
        let rebuilt = TrainedGP::from_parts(
            gp.kernel().clone(),
            gp.noise_var(),
            gp.jitter_used(),
            gp.chol().clone(),
            gp.weights().clone(),
            inputs,
            gp.train_targets().clone(),
            gp.distance_spec().clone(),
        )
        .unwrap();
        assert_eq!(rebuilt.log_marginal(), gp.log_marginal());
        let test = dirac_point(0.7);
        assert_eq!(
            rebuilt.predict_dist(&test).unwrap(),
            gp.predict_dist(&test).unwrap()
        );
    }

    #[test]
    fn optimizer_is_deterministic_and_respects_fixed_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<f64> = (0..25).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let targets: Vec<f64> = points.iter().map(|x| (0.8 * x).sin()).collect();
        let inputs: Vec<InputDistribution> = points.iter().map(|&x| dirac_point(x)).collect();
        let dm = distance_matrix(&inputs, &wasserstein_spec()).unwrap();
        let y = DVector::from_vec(targets);

        let config = OptimizeConfig {
            restarts: 2,
            max_iters: 100,
            seed: 7,
            ..OptimizeConfig::default()
        };
        let a = optimize_hyperparameters(&y, &dm, KernelFamily::SquaredExponential, &config)
            .unwrap();
        let b = optimize_hyperparameters(&y, &dm, KernelFamily::SquaredExponential, &config)
            .unwrap();
        assert_eq!(a, b);

        let fixed = OptimizeConfig {
            fix_noise: Some(0.125),
            ..config
        };
        let c = optimize_hyperparameters(&y, &dm, KernelFamily::SquaredExponential, &fixed)
            .unwrap();
        assert_eq!(c.noise_var, 0.125);
    }

    #[test]
    fn optimizer_recovers_generative_lengthscale() {
        // y drawn exactly from a GP with lengthscale 1; the estimate must land
        // within +-0.5 in log space.
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let points: Vec<f64> = (0..40).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let inputs: Vec<InputDistribution> = points.iter().map(|&x| dirac_point(x)).collect();
        let dm = distance_matrix(&inputs, &wasserstein_spec()).unwrap();
        let kernel = se(1.5, 1.0);
        let gram = crate::kernels::gram_matrix(&kernel, dm.values(), 1e-10).unwrap();
        let l = gram.cholesky().unwrap().unpack();
        let z = DVector::from_fn(40, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let eps = DVector::from_fn(40, |_, _| {
            0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let y = &l * z + eps;

        let config = OptimizeConfig {
            restarts: 4,
            max_iters: 250,
            seed: 2,
            ..OptimizeConfig::default()
        };
        let best =
            optimize_hyperparameters(&y, &dm, KernelFamily::SquaredExponential, &config).unwrap();
        let log_l = best.kernel.lengthscale.ln();
        assert!(log_l.abs() <= 0.5, "recovered lengthscale {}", best.kernel.lengthscale);
    }

    #[test]
    fn degenerate_init_ranges_pin_the_start() {
        let (_, dm, _) = setup(&[0.0, 1.0, 2.0], &[0.1, 0.4, -0.2], &se(1.0, 1.0), 0.1);
        let y = DVector::from_vec(vec![0.1, 0.4, -0.2]);
        let config = OptimizeConfig {
            restarts: 3,
            max_iters: 150,
            amplitude_range: (1.0, 1.0),
            lengthscale_range: (2.0, 2.0),
            noise_range: (0.1, 0.1),
            ..OptimizeConfig::default()
        };
        let r = optimize_hyperparameters(&y, &dm, KernelFamily::SquaredExponential, &config)
            .unwrap();
        // All restarts start identically, so the first one wins.
        assert_eq!(r.restart_index, 0);
        assert!(r.log_marginal.is_finite());
    }

    #[test]
    fn optimizer_rejects_bad_configs() {
        let (_, dm, _) = setup(&[0.0, 1.0], &[0.1, 0.2], &se(1.0, 1.0), 0.1);
        let y = DVector::from_vec(vec![0.1, 0.2]);
        let bad = OptimizeConfig {
            restarts: 0,
            ..OptimizeConfig::default()
        };
        assert!(optimize_hyperparameters(&y, &dm, KernelFamily::SquaredExponential, &bad).is_err());
        let bad = OptimizeConfig {
            noise_range: (0.0, 1.0),
            ..OptimizeConfig::default()
        };
        assert!(optimize_hyperparameters(&y, &dm, KernelFamily::SquaredExponential, &bad).is_err());
        let y_short = DVector::from_vec(vec![0.1]);
        assert!(matches!(
            optimize_hyperparameters(
                &y_short,
                &dm,
                KernelFamily::SquaredExponential,
                &OptimizeConfig::default()
            )
            .unwrap_err(),
            Error::Dimension(_)
        ));
    }
}
