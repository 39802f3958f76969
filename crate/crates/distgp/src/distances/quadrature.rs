//! Quadrature-based distances between univariate Gaussian densities.
//!
//! All three families integrate a pointwise function of the two densities
//! with composite Simpson. When the config gives no bounds, the interval is
//! the span of the two means extended by eight of the larger standard
//! deviation on each side, which captures all but ~1e-15 of either mass.
//! Each integrand is a symmetric function of the two density values, so
//! swapping the arguments is bitwise neutral without canonicalization.

use super::QuadratureConfig;
use crate::distributions::Gaussian;
use crate::error::{Error, Result};

/// Densities are floored at this value inside logarithms so that tail nodes
/// evaluate to a finite contribution instead of NaN.
pub const JS_DENSITY_FLOOR: f64 = 1e-300;

/// How many standard deviations beyond the mean span the derived bounds
/// extend.
const AUTO_BOUND_SDS: f64 = 8.0;

/// L_p distance `(integral |f - g|^p)^{1/p}` between univariate Gaussians.
pub fn lp_distance(f: &Gaussian, g: &Gaussian, p: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if !p.is_finite() || p < 1.0 {
        return Err(Error::Parameter(format!("order p = {p} must be >= 1")));
    }
    let (df, dg, xs, h) = densities(f, g, cfg)?;
    let values: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let d = (df.eval(x) - dg.eval(x)).abs();
            if p == 1.0 {
                d
            } else if p == 2.0 {
                d * d
            } else {
                d.powf(p)
            }
        })
        .collect();
    let s = simpson(&values, h).max(0.0);
    Ok(if p == 1.0 {
        s
    } else if p == 2.0 {
        s.sqrt()
    } else {
        s.powf(1.0 / p)
    })
}

/// Squared-complement Bhattacharyya form `(1 - integral sqrt(f g))^2`,
/// clamped to `[0, 1]`.
pub fn hellinger(f: &Gaussian, g: &Gaussian, cfg: &QuadratureConfig) -> Result<f64> {
    let (df, dg, xs, h) = densities(f, g, cfg)?;
    let values: Vec<f64> = xs
        .iter()
        .map(|&x| (df.eval(x) * dg.eval(x)).sqrt())
        .collect();
    let coefficient = simpson(&values, h);
    Ok(((1.0 - coefficient) * (1.0 - coefficient)).clamp(0.0, 1.0))
}

/// Jensen–Shannon divergence in nats against the equal-weight mixture.
pub fn jensen_shannon(f: &Gaussian, g: &Gaussian, cfg: &QuadratureConfig) -> Result<f64> {
    let (df, dg, xs, h) = densities(f, g, cfg)?;
    let values: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let fv = df.eval(x).max(JS_DENSITY_FLOOR);
            let gv = dg.eval(x).max(JS_DENSITY_FLOOR);
            let m = 0.5 * (fv + gv);
            fv * (fv / m).ln() + gv * (gv / m).ln()
        })
        .collect();
    Ok((0.5 * simpson(&values, h)).max(0.0))
}

struct UnivariateDensity {
    mean: f64,
    inv_norm: f64,
    inv_two_var: f64,
}

impl UnivariateDensity {
    fn new(g: &Gaussian) -> Self {
        let var = g.cov()[(0, 0)];
        UnivariateDensity {
            mean: g.mean()[0],
            inv_norm: 1.0 / (2.0 * std::f64::consts::PI * var).sqrt(),
            inv_two_var: 1.0 / (2.0 * var),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let d = x - self.mean;
        self.inv_norm * (-d * d * self.inv_two_var).exp()
    }
}

fn densities(
    f: &Gaussian,
    g: &Gaussian,
    cfg: &QuadratureConfig,
) -> Result<(UnivariateDensity, UnivariateDensity, Vec<f64>, f64)> {
    if f.dim() != 1 || g.dim() != 1 {
        return Err(Error::Dimension(format!(
            "quadrature distances are univariate only; got dimensions {} and {}",
            f.dim(),
            g.dim()
        )));
    }
    cfg.validate()?;
    let (lo, hi) = cfg.bounds.unwrap_or_else(|| {
        let sd = f.cov()[(0, 0)].sqrt().max(g.cov()[(0, 0)].sqrt());
        let (mf, mg) = (f.mean()[0], g.mean()[0]);
        (
            mf.min(mg) - AUTO_BOUND_SDS * sd,
            mf.max(mg) + AUTO_BOUND_SDS * sd,
        )
    });
    let h = (hi - lo) / (cfg.nodes - 1) as f64;
    let xs: Vec<f64> = (0..cfg.nodes).map(|t| lo + t as f64 * h).collect();
    Ok((
        UnivariateDensity::new(f),
        UnivariateDensity::new(g),
        xs,
        h,
    ))
}

/// Composite Simpson rule over uniformly spaced samples.
///
/// Callers guarantee an odd length of at least 3 (the config validators
/// enforce it), so the panic branch is unreachable in practice.
pub(crate) fn simpson(values: &[f64], h: f64) -> f64 {
    assert!(
        values.len() >= 3 && values.len() % 2 == 1,
        "Simpson rule needs an odd sample count of at least 3"
    );
    let last = values.len() - 1;
    let mut acc = values[0] + values[last];
    for (t, &v) in values.iter().enumerate().take(last).skip(1) {
        acc += if t % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}
