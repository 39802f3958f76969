//! Covariance functions over distances between distributions.
//!
//! The stationary families take a precomputed distance `d >= 0` and never see
//! the inputs themselves, so any distance family can be plugged in. Two
//! non-stationary forms complement them: an inner-product modulation of the
//! squared exponential, and the closed-form expectation of the squared
//! exponential under a pair of Gaussian inputs (with a Monte Carlo oracle for
//! checking it).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::Gaussian;
use crate::error::{Error, Result};

/// Matérn smoothness restricted to the half-integer orders with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

impl TryFrom<f64> for MaternNu {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        if v == 0.5 {
            Ok(MaternNu::Half)
        } else if v == 1.5 {
            Ok(MaternNu::ThreeHalves)
        } else if v == 2.5 {
            Ok(MaternNu::FiveHalves)
        } else {
            Err(Error::Parameter(format!(
                "nu = {v} is not one of the supported orders 0.5, 1.5, 2.5"
            )))
        }
    }
}

impl From<MaternNu> for f64 {
    fn from(nu: MaternNu) -> f64 {
        nu.value()
    }
}

/// Stationary kernel family; shape parameters that are fixed during
/// hyperparameter optimization live here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    SquaredExponential,
    Exponential,
    Matern { nu: MaternNu },
    GammaExponential { gamma: f64 },
    RationalQuadratic { shape: f64 },
    /// Constant covariance `amplitude^2` regardless of distance.
    Constant,
}

impl KernelFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Exponential => "exponential",
            KernelFamily::Matern { .. } => "matern",
            KernelFamily::GammaExponential { .. } => "gamma_exponential",
            KernelFamily::RationalQuadratic { .. } => "rational_quadratic",
            KernelFamily::Constant => "constant",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            KernelFamily::GammaExponential { gamma } => {
                if !gamma.is_finite() || gamma <= 0.0 || gamma > 2.0 {
                    return Err(Error::Parameter(format!(
                        "gamma = {gamma} must lie in (0, 2]"
                    )));
                }
            }
            KernelFamily::RationalQuadratic { shape } => {
                if !shape.is_finite() || shape <= 0.0 {
                    return Err(Error::Parameter(format!("shape = {shape} must be positive")));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelFamily::Matern { nu } => write!(f, "matern(nu={})", nu.value()),
            KernelFamily::GammaExponential { gamma } => {
                write!(f, "gamma_exponential(gamma={gamma})")
            }
            KernelFamily::RationalQuadratic { shape } => {
                write!(f, "rational_quadratic(shape={shape})")
            }
            other => f.write_str(other.tag()),
        }
    }
}

/// A stationary covariance function `k(d) = amplitude^2 * rho(d / lengthscale)`.
///
/// Serializes as a flat object with only the active fields, for example
/// `{"family":"se","alpha":2.0,"lengthscale":0.5}`; the amplitude travels
/// under the name `alpha` and shape parameters appear only for the families
/// that read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub amplitude: f64,
    pub lengthscale: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, amplitude: f64, lengthscale: f64) -> Self {
        KernelSpec {
            family,
            amplitude,
            lengthscale,
        }
    }

    pub fn squared_exponential(amplitude: f64, lengthscale: f64) -> Self {
        Self::new(KernelFamily::SquaredExponential, amplitude, lengthscale)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() || self.amplitude <= 0.0 {
            return Err(Error::Parameter(format!(
                "amplitude = {} must be positive",
                self.amplitude
            )));
        }
        if !self.lengthscale.is_finite() || self.lengthscale <= 0.0 {
            return Err(Error::Parameter(format!(
                "lengthscale = {} must be positive",
                self.lengthscale
            )));
        }
        self.family.validate()
    }

    /// Kernel value at distance zero.
    pub fn variance(&self) -> f64 {
        self.amplitude * self.amplitude
    }

    fn eval_unchecked(&self, d: f64) -> f64 {
        let a2 = self.amplitude * self.amplitude;
        let r = d / self.lengthscale;
        match self.family {
            KernelFamily::SquaredExponential => a2 * (-0.5 * r * r).exp(),
            // The exponential family and Matérn at nu = 1/2 are the same
            // function; they share this expression so they agree bitwise.
            KernelFamily::Exponential | KernelFamily::Matern { nu: MaternNu::Half } => {
                a2 * (-r).exp()
            }
            KernelFamily::Matern {
                nu: MaternNu::ThreeHalves,
            } => {
                let s = 3.0f64.sqrt() * r;
                a2 * (1.0 + s) * (-s).exp()
            }
            KernelFamily::Matern {
                nu: MaternNu::FiveHalves,
            } => {
                let s = 5.0f64.sqrt() * r;
                a2 * (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
            }
            KernelFamily::GammaExponential { gamma } => a2 * (-r.powf(gamma)).exp(),
            KernelFamily::RationalQuadratic { shape } => {
                a2 * (1.0 + r * r / (2.0 * shape)).powf(-shape)
            }
            KernelFamily::Constant => a2,
        }
    }
}

/// Flat wire form of [`KernelSpec`]. Inactive fields are omitted on write and
/// rejected on read, so a shape parameter attached to the wrong family is a
/// format error rather than silently ignored.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelRepr {
    family: String,
    alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lengthscale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shape: Option<f64>,
}

impl From<KernelSpec> for KernelRepr {
    fn from(spec: KernelSpec) -> Self {
        let (nu, gamma, shape) = match spec.family {
            KernelFamily::Matern { nu } => (Some(nu.value()), None, None),
            KernelFamily::GammaExponential { gamma } => (None, Some(gamma), None),
            KernelFamily::RationalQuadratic { shape } => (None, None, Some(shape)),
            _ => (None, None, None),
        };
        let lengthscale = match spec.family {
            KernelFamily::Constant => None,
            _ => Some(spec.lengthscale),
        };
        KernelRepr {
            family: spec.family.tag().to_string(),
            alpha: spec.amplitude,
            lengthscale,
            nu,
            gamma,
            shape,
        }
    }
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = Error;

    fn try_from(repr: KernelRepr) -> Result<Self> {
        let family = match repr.family.as_str() {
            "se" | "squared_exponential" => KernelFamily::SquaredExponential,
            "exponential" => KernelFamily::Exponential,
            "matern" => {
                let nu = repr
                    .nu
                    .ok_or_else(|| Error::Format("matern kernel needs a nu field".into()))?;
                KernelFamily::Matern {
                    nu: MaternNu::try_from(nu)?,
                }
            }
            "gamma_exponential" => KernelFamily::GammaExponential {
                gamma: repr.gamma.ok_or_else(|| {
                    Error::Format("gamma_exponential kernel needs a gamma field".into())
                })?,
            },
            "rational_quadratic" => KernelFamily::RationalQuadratic {
                shape: repr.shape.ok_or_else(|| {
                    Error::Format("rational_quadratic kernel needs a shape field".into())
                })?,
            },
            "constant" => KernelFamily::Constant,
            other => {
                return Err(Error::Format(format!("unknown kernel family '{other}'")));
            }
        };
        let stray = [
            (repr.nu.is_some(), matches!(family, KernelFamily::Matern { .. }), "nu"),
            (
                repr.gamma.is_some(),
                matches!(family, KernelFamily::GammaExponential { .. }),
                "gamma",
            ),
            (
                repr.shape.is_some(),
                matches!(family, KernelFamily::RationalQuadratic { .. }),
                "shape",
            ),
        ];
        for (present, active, name) in stray {
            if present && !active {
                return Err(Error::Format(format!(
                    "field {name} does not apply to the {} family",
                    repr.family
                )));
            }
        }
        let lengthscale = match family {
            // The constant kernel never reads the lengthscale; give it a
            // harmless value so the spec still validates.
            KernelFamily::Constant => repr.lengthscale.unwrap_or(1.0),
            _ => repr.lengthscale.ok_or_else(|| {
                Error::Format(format!("the {} family needs a lengthscale", repr.family))
            })?,
        };
        Ok(KernelSpec::new(family, repr.alpha, lengthscale))
    }
}

/// Evaluates the kernel at one distance.
pub fn kernel_eval(spec: &KernelSpec, d: f64) -> Result<f64> {
    spec.validate()?;
    check_distance(d)?;
    Ok(spec.eval_unchecked(d))
}

fn check_distance(d: f64) -> Result<()> {
    if !d.is_finite() || d < 0.0 {
        return Err(Error::Domain(format!(
            "kernel distance {d} must be finite and non-negative"
        )));
    }
    Ok(())
}

/// Applies the kernel elementwise to a matrix of distances (for example a
/// rectangular test-by-train block). No noise is added.
pub fn kernel_apply(spec: &KernelSpec, distances: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let mut out = DMatrix::zeros(distances.nrows(), distances.ncols());
    for j in 0..distances.ncols() {
        for i in 0..distances.nrows() {
            let d = distances[(i, j)];
            check_distance(d).map_err(|e| entry_context(e, i, j))?;
            out[(i, j)] = spec.eval_unchecked(d);
        }
    }
    Ok(out)
}

/// Builds the kernel matrix over a square symmetric distance matrix and adds
/// `noise_variance` to the diagonal.
///
/// Only the upper triangle is evaluated and it is mirrored below, so the
/// result is exactly symmetric even if the input is only symmetric up to
/// round-off.
pub fn gram_matrix(
    spec: &KernelSpec,
    distances: &DMatrix<f64>,
    noise_variance: f64,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if !noise_variance.is_finite() || noise_variance < 0.0 {
        return Err(Error::Parameter(format!(
            "noise variance = {noise_variance} must be finite and non-negative"
        )));
    }
    let n = distances.nrows();
    if distances.ncols() != n || n == 0 {
        return Err(Error::Size(format!(
            "distance matrix must be square and non-empty, got {}x{}",
            distances.nrows(),
            distances.ncols()
        )));
    }
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = spec.variance() + noise_variance;
        for j in (i + 1)..n {
            let d = distances[(i, j)];
            check_distance(d).map_err(|e| entry_context(e, i, j))?;
            let v = spec.eval_unchecked(d);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

fn entry_context(e: Error, i: usize, j: usize) -> Error {
    e.with_context(&format!("entry ({i}, {j})"))
}

/// Inner-product modulation of a stationary kernel:
/// `(mean_i^T weight mean_j) * k(d)`.
///
/// With a positive semidefinite `weight` the product of the two factors stays
/// a valid covariance function while the prior variance now scales with the
/// input means. The inner product itself may be negative; only the diagonal
/// of the resulting kernel matrix is guaranteed non-negative.
pub fn nonstationary_eval(
    base: &KernelSpec,
    weight: &DMatrix<f64>,
    mean_i: &DVector<f64>,
    mean_j: &DVector<f64>,
    d: f64,
) -> Result<f64> {
    base.validate()?;
    check_distance(d)?;
    let n = mean_i.len();
    if mean_j.len() != n || weight.nrows() != n || weight.ncols() != n {
        return Err(Error::Dimension(format!(
            "means of lengths {} and {} need a {n}x{n} weight matrix, got {}x{}",
            n,
            mean_j.len(),
            weight.nrows(),
            weight.ncols()
        )));
    }
    let asym = (weight - weight.transpose()).abs().max();
    if asym > 1e-12 {
        return Err(Error::Covariance(format!(
            "weight matrix is asymmetric by {asym}"
        )));
    }
    Ok((mean_i.dot(&(weight * mean_j))) * base.eval_unchecked(d))
}

/// Expected squared-exponential covariance under Gaussian inputs, in closed
/// form:
///
/// `amplitude^2 det(I + (S_f + S_g)/l^2)^{-1/2}
///  exp(-(mu_f - mu_g)^T (S_f + S_g + l^2 I)^{-1} (mu_f - mu_g) / 2)`
///
/// This is `E[k_SE(x - y)]` for independent `x ~ f`, `y ~ g`; it degrades
/// smoothly to the plain squared exponential as both covariances shrink.
pub fn mean_kernel_se_gaussian(
    f: &Gaussian,
    g: &Gaussian,
    amplitude: f64,
    lengthscale: f64,
) -> Result<f64> {
    let spec = KernelSpec::squared_exponential(amplitude, lengthscale);
    spec.validate()?;
    if f.dim() != g.dim() {
        return Err(Error::Dimension(format!(
            "inputs have dimensions {} and {}",
            f.dim(),
            g.dim()
        )));
    }
    let a2 = amplitude * amplitude;
    let l2 = lengthscale * lengthscale;
    if f.dim() == 1 {
        // Scalar fast path; the benchmark evaluates this thousands of times
        // per optimization step.
        let s = f.cov()[(0, 0)] + g.cov()[(0, 0)];
        let dm = f.mean()[0] - g.mean()[0];
        return Ok(a2 * (1.0 + s / l2).powf(-0.5) * (-0.5 * dm * dm / (s + l2)).exp());
    }
    let n = f.dim();
    let s = f.cov() + g.cov();
    let a = DMatrix::identity(n, n) + &s / l2;
    let chol_a = a
        .cholesky()
        .ok_or_else(|| Error::Covariance("I + S/l^2 is not positive definite".into()))?;
    let det_a: f64 = chol_a.l_dirty().diagonal().iter().map(|x| x * x).product();
    let shifted = s + DMatrix::from_diagonal_element(n, n, l2);
    let chol_s = shifted
        .cholesky()
        .ok_or_else(|| Error::Covariance("S + l^2 I is not positive definite".into()))?;
    let dm = f.mean() - g.mean();
    let solved = chol_s.solve(&dm);
    Ok(a2 * det_a.powf(-0.5) * (-0.5 * dm.dot(&solved)).exp())
}

/// Monte Carlo estimate of `E[k_SE(x - y)]` over paired draws `x ~ f`,
/// `y ~ g`; exists to check [`mean_kernel_se_gaussian`].
pub fn mean_kernel_mc_oracle(
    f: &Gaussian,
    g: &Gaussian,
    amplitude: f64,
    lengthscale: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    KernelSpec::squared_exponential(amplitude, lengthscale).validate()?;
    if f.dim() != g.dim() {
        return Err(Error::Dimension(format!(
            "inputs have dimensions {} and {}",
            f.dim(),
            g.dim()
        )));
    }
    if samples == 0 {
        return Err(Error::Parameter("sample count must be positive".into()));
    }
    let sampler_f = f.sampler();
    let sampler_g = g.sampler();
    let mut rng_f = ChaCha8Rng::seed_from_u64(seed);
    let mut rng_g = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let a2 = amplitude * amplitude;
    let inv_2l2 = 1.0 / (2.0 * lengthscale * lengthscale);
    let mut acc = 0.0;
    for _ in 0..samples {
        let x = sampler_f.draw(&mut rng_f);
        let y = sampler_g.draw(&mut rng_g);
        acc += a2 * (-(&x - &y).norm_squared() * inv_2l2).exp();
    }
    Ok(acc / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(family: KernelFamily) -> KernelSpec {
        KernelSpec::new(family, 1.0, 1.0)
    }

    const ALL_FAMILIES: [KernelFamily; 8] = [
        KernelFamily::SquaredExponential,
        KernelFamily::Exponential,
        KernelFamily::Matern { nu: MaternNu::Half },
        KernelFamily::Matern {
            nu: MaternNu::ThreeHalves,
        },
        KernelFamily::Matern {
            nu: MaternNu::FiveHalves,
        },
        KernelFamily::GammaExponential { gamma: 0.7 },
        KernelFamily::RationalQuadratic { shape: 2.0 },
        KernelFamily::Constant,
    ];

    #[test]
    fn stationary_spot_values() {
        let k = kernel_eval(&KernelSpec::squared_exponential(2.0, 1.0), 1.0).unwrap();
        assert!((k - 2.4261226388505337).abs() < 1e-15, "{k}");

        let k = kernel_eval(&spec(KernelFamily::Exponential), 1.0).unwrap();
        assert!((k - 0.36787944117144233).abs() < 1e-15, "{k}");

        let k = kernel_eval(
            &spec(KernelFamily::Matern {
                nu: MaternNu::ThreeHalves,
            }),
            1.0,
        )
        .unwrap();
        assert!((k - 0.48335772459650772).abs() < 1e-15, "{k}");

        let k = kernel_eval(
            &spec(KernelFamily::Matern {
                nu: MaternNu::FiveHalves,
            }),
            1.0,
        )
        .unwrap();
        assert!((k - 0.52399410883182029).abs() < 1e-15, "{k}");

        let k = kernel_eval(&spec(KernelFamily::GammaExponential { gamma: 0.7 }), 2.0).unwrap();
        assert!((k - 0.19700921144909112).abs() < 1e-15, "{k}");

        let k = kernel_eval(&spec(KernelFamily::RationalQuadratic { shape: 1.0 }), 2.0).unwrap();
        assert!((k - 1.0 / 3.0).abs() < 1e-15, "{k}");

        let k = kernel_eval(
            &KernelSpec::new(KernelFamily::RationalQuadratic { shape: 2.0 }, 1.0, 1.5),
            1.0,
        )
        .unwrap();
        assert!((k - 0.81).abs() < 1e-15, "{k}");

        let k = kernel_eval(&KernelSpec::new(KernelFamily::Constant, 1.5, 1.0), 7.0).unwrap();
        assert_eq!(k, 2.25);
    }

    #[test]
    fn matern_half_equals_exponential_bitwise() {
        let m = KernelSpec::new(KernelFamily::Matern { nu: MaternNu::Half }, 1.3, 0.7);
        let e = KernelSpec::new(KernelFamily::Exponential, 1.3, 0.7);
        for d in [0.0, 0.1, 1.0, 5.0, 42.0] {
            assert_eq!(kernel_eval(&m, d).unwrap(), kernel_eval(&e, d).unwrap());
        }
    }

    #[test]
    fn rational_quadratic_approaches_squared_exponential() {
        let se = KernelSpec::squared_exponential(1.0, 0.9);
        let rq = KernelSpec::new(KernelFamily::RationalQuadratic { shape: 1e6 }, 1.0, 0.9);
        let (a, b) = (
            kernel_eval(&se, 1.3).unwrap(),
            kernel_eval(&rq, 1.3).unwrap(),
        );
        assert!((a - b).abs() / a < 1e-5, "{a} vs {b}");
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(KernelSpec::squared_exponential(0.0, 1.0).validate().is_err());
        assert!(KernelSpec::squared_exponential(1.0, -1.0).validate().is_err());
        assert!(spec(KernelFamily::GammaExponential { gamma: 2.5 })
            .validate()
            .is_err());
        assert!(spec(KernelFamily::GammaExponential { gamma: 0.0 })
            .validate()
            .is_err());
        assert!(spec(KernelFamily::RationalQuadratic { shape: 0.0 })
            .validate()
            .is_err());
        let err = kernel_eval(&spec(KernelFamily::SquaredExponential), -0.1).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
        assert!(kernel_eval(&spec(KernelFamily::SquaredExponential), f64::NAN).is_err());
    }

    #[test]
    fn matern_nu_round_trips_through_json() {
        for nu in [MaternNu::Half, MaternNu::ThreeHalves, MaternNu::FiveHalves] {
            let json = serde_json::to_string(&nu).unwrap();
            assert_eq!(serde_json::from_str::<MaternNu>(&json).unwrap(), nu);
        }
        assert!(serde_json::from_str::<MaternNu>("2.0").is_err());
        let spec = KernelSpec::new(KernelFamily::Matern { nu: MaternNu::Half }, 1.0, 2.0);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<KernelSpec>(&json).unwrap(), spec);
    }

    #[test]
    fn kernel_spec_wire_form_carries_only_active_fields() {
        let se = KernelSpec::squared_exponential(2.0, 0.5);
        assert_eq!(
            serde_json::to_value(&se).unwrap(),
            serde_json::json!({"family": "se", "alpha": 2.0, "lengthscale": 0.5})
        );
        let rq = KernelSpec::new(KernelFamily::RationalQuadratic { shape: 1.5 }, 1.0, 2.0);
        assert_eq!(
            serde_json::to_value(&rq).unwrap(),
            serde_json::json!({"family": "rational_quadratic", "alpha": 1.0, "lengthscale": 2.0, "shape": 1.5})
        );
        let constant = KernelSpec::new(KernelFamily::Constant, 3.0, 7.0);
        assert_eq!(
            serde_json::to_value(&constant).unwrap(),
            serde_json::json!({"family": "constant", "alpha": 3.0})
        );
        let back: KernelSpec =
            serde_json::from_value(serde_json::to_value(&constant).unwrap()).unwrap();
        assert_eq!(back.family, KernelFamily::Constant);
        assert_eq!(back.amplitude, 3.0);
    }

    #[test]
    fn kernel_spec_reader_accepts_long_se_tag_and_rejects_malformed_specs() {
        let long: KernelSpec = serde_json::from_str(
            r#"{"family": "squared_exponential", "alpha": 1.0, "lengthscale": 2.0}"#,
        )
        .unwrap();
        assert_eq!(long, KernelSpec::squared_exponential(1.0, 2.0));
        for bad in [
            // inactive shape parameter on the wrong family
            r#"{"family": "se", "alpha": 1.0, "lengthscale": 1.0, "gamma": 0.5}"#,
            // missing the family's required parameter
            r#"{"family": "matern", "alpha": 1.0, "lengthscale": 1.0}"#,
            r#"{"family": "se", "alpha": 1.0}"#,
            r#"{"family": "spectral", "alpha": 1.0, "lengthscale": 1.0}"#,
            // unsupported Matern order
            r#"{"family": "matern", "alpha": 1.0, "lengthscale": 1.0, "nu": 2.0}"#,
            r#"{"family": "se", "alpha": 1.0, "lengthscale": 1.0, "extra": 0.0}"#,
        ] {
            assert!(serde_json::from_str::<KernelSpec>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn gram_matrix_adds_noise_and_mirrors_exactly() {
        let pts = [0.0f64, 0.7, 1.9, 4.2];
        let n = pts.len();
        let dm = DMatrix::from_fn(n, n, |i, j| (pts[i] - pts[j]).abs());
        let spec = KernelSpec::squared_exponential(1.2, 1.0);
        let k = gram_matrix(&spec, &dm, 0.3).unwrap();
        for i in 0..n {
            assert_eq!(k[(i, i)], 1.2 * 1.2 + 0.3);
            for j in 0..n {
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
        assert!(k.clone().cholesky().is_some(), "gram matrix should be PD");
        // Without noise the off-diagonal matches direct evaluation.
        let k0 = gram_matrix(&spec, &dm, 0.0).unwrap();
        assert_eq!(k0[(0, 1)], kernel_eval(&spec, dm[(0, 1)]).unwrap());
    }

    #[test]
    fn gram_matrix_rejects_bad_inputs() {
        let spec = KernelSpec::squared_exponential(1.0, 1.0);
        let rect = DMatrix::zeros(2, 3);
        assert!(matches!(
            gram_matrix(&spec, &rect, 0.0).unwrap_err(),
            Error::Size(_)
        ));
        let mut bad = DMatrix::zeros(2, 2);
        bad[(0, 1)] = -1.0;
        bad[(1, 0)] = -1.0;
        let err = gram_matrix(&spec, &bad, 0.0).unwrap_err();
        assert!(err.to_string().contains("(0, 1)"), "{err}");
        assert!(gram_matrix(&spec, &DMatrix::zeros(2, 2), -0.1).is_err());
    }

    #[test]
    fn kernel_apply_handles_rectangles() {
        let spec = KernelSpec::squared_exponential(1.0, 2.0);
        let dm = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let k = kernel_apply(&spec, &dm).unwrap();
        assert_eq!(k.nrows(), 2);
        assert_eq!(k.ncols(), 3);
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 2)], kernel_eval(&spec, 5.0).unwrap());
    }

    #[test]
    fn nonstationary_matches_hand_value() {
        let base = KernelSpec::squared_exponential(1.0, 2.0);
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mi = DVector::from_vec(vec![1.0, 2.0]);
        let mj = DVector::from_vec(vec![0.5, -1.0]);
        let k = nonstationary_eval(&base, &w, &mi, &mj, 1.5).unwrap();
        assert!((k - -0.75483960198900713).abs() < 1e-15, "{k}");
        // Swapping the means is symmetric through the symmetric weight.
        let k2 = nonstationary_eval(&base, &w, &mj, &mi, 1.5).unwrap();
        assert!((k - k2).abs() < 1e-15);
    }

    #[test]
    fn nonstationary_rejects_bad_shapes() {
        let base = KernelSpec::squared_exponential(1.0, 1.0);
        let w = DMatrix::identity(2, 2);
        let mi = DVector::from_vec(vec![1.0, 2.0]);
        let mj = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            nonstationary_eval(&base, &w, &mi, &mj, 1.0).unwrap_err(),
            Error::Dimension(_)
        ));
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        let mj = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            nonstationary_eval(&base, &skew, &mi, &mj, 1.0).unwrap_err(),
            Error::Covariance(_)
        ));
    }

    #[test]
    fn mean_kernel_equal_standard_normals() {
        let f = Gaussian::univariate(0.0, 1.0).unwrap();
        let k = mean_kernel_se_gaussian(&f, &f, 1.0, 1.0).unwrap();
        assert!((k - 1.0 / 3.0f64.sqrt()).abs() < 1e-15, "{k}");
    }

    #[test]
    fn mean_kernel_univariate_spot_value() {
        let f = Gaussian::univariate(1.0, 0.5).unwrap();
        let g = Gaussian::univariate(-2.0, 2.0).unwrap();
        let k = mean_kernel_se_gaussian(&f, &g, 1.3, 1.5).unwrap();
        assert!((k - 0.45101842212369775).abs() < 1e-15, "{k}");
    }

    #[test]
    fn mean_kernel_bivariate_spot_value() {
        let f = Gaussian::new(
            DVector::from_vec(vec![0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
        )
        .unwrap();
        let g = Gaussian::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[0.8, -0.1, -0.1, 1.2]),
        )
        .unwrap();
        let k = mean_kernel_se_gaussian(&f, &g, 0.9, 2.0).unwrap();
        assert!((k - 0.36178497713836916).abs() < 1e-12, "{k}");
        assert_eq!(
            k,
            mean_kernel_se_gaussian(&g, &f, 0.9, 2.0).unwrap(),
            "argument order must not change the result"
        );
    }

    #[test]
    fn mean_kernel_shrinks_to_plain_squared_exponential() {
        let f = Gaussian::univariate(0.0, 1e-14).unwrap();
        let g = Gaussian::univariate(1.0, 1e-14).unwrap();
        let k = mean_kernel_se_gaussian(&f, &g, 1.0, 1.0).unwrap();
        let se = kernel_eval(&KernelSpec::squared_exponential(1.0, 1.0), 1.0).unwrap();
        assert!((k - se).abs() < 1e-12, "{k} vs {se}");
    }

    #[test]
    fn mean_kernel_mc_oracle_agrees_with_closed_form() {
        let f = Gaussian::new(
            DVector::from_vec(vec![0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
        )
        .unwrap();
        let g = Gaussian::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[0.8, -0.1, -0.1, 1.2]),
        )
        .unwrap();
        let closed = mean_kernel_se_gaussian(&f, &g, 0.9, 2.0).unwrap();
        let mc = mean_kernel_mc_oracle(&f, &g, 0.9, 2.0, 200_000, 42).unwrap();
        let rel = (mc - closed).abs() / closed;
        assert!(rel < 1e-2, "mc {mc} vs closed {closed} (rel {rel})");
        // Seed determinism.
        let mc2 = mean_kernel_mc_oracle(&f, &g, 0.9, 2.0, 1000, 7).unwrap();
        let mc3 = mean_kernel_mc_oracle(&f, &g, 0.9, 2.0, 1000, 7).unwrap();
        assert_eq!(mc2, mc3);
    }

    #[test]
    fn mean_kernel_rejects_mismatched_dimensions() {
        let f = Gaussian::univariate(0.0, 1.0).unwrap();
        let g = Gaussian::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(matches!(
            mean_kernel_se_gaussian(&f, &g, 1.0, 1.0).unwrap_err(),
            Error::Dimension(_)
        ));
        assert!(mean_kernel_mc_oracle(&f, &f, 1.0, 1.0, 0, 0).is_err());
    }

    proptest! {
        // Stationarity in the decreasing sense: no family may grow with
        // distance, and every family starts at its variance.
        #[test]
        fn kernels_are_monotone_from_the_variance(
            family_idx in 0usize..ALL_FAMILIES.len(),
            amplitude in 0.1f64..3.0,
            lengthscale in 0.1f64..3.0,
            d1 in 0.0f64..50.0,
            d2 in 0.0f64..50.0,
        ) {
            let spec = KernelSpec::new(ALL_FAMILIES[family_idx], amplitude, lengthscale);
            let k0 = kernel_eval(&spec, 0.0).unwrap();
            prop_assert!((k0 - spec.variance()).abs() <= 1e-12 * spec.variance());
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let k_lo = kernel_eval(&spec, lo).unwrap();
            let k_hi = kernel_eval(&spec, hi).unwrap();
            prop_assert!(k_hi <= k_lo + 1e-12, "k({hi}) = {k_hi} > k({lo}) = {k_lo}");
            prop_assert!(k_hi >= 0.0);
        }
    }
}
