//! Modified Cramér–von Mises distance between Dirac mixtures.
//!
//! The distance is defined through localized cumulative distributions: each
//! mixture is smoothed by a Gaussian kernel of width `b`, the squared
//! difference of the smoothed functions is integrated over position and over
//! `b` in `[0, b_max]` with weight `1/b^{n-1}`, and the distance is the
//! square root. For Dirac mixtures that double integral has the closed form
//! implemented by [`mcvmd_dirac`]; [`mcvmd_lcd_oracle`] evaluates the
//! defining integral numerically so the closed form can be validated against
//! it.

use nalgebra::DVector;
use rayon::prelude::*;

use super::quadrature::simpson;
use super::{canonical_pair, xlog_unchecked, QuadratureConfig, LCD_ORACLE_MIN_NODES};
use crate::distributions::DiracMixture;
use crate::error::{Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

/// Constant subtracted in `c_b = ln(4 b_max^2) - MCVMD_CB_CONSTANT`.
///
/// The value is forced by the defining integral: carrying out the inner
/// position integral exactly and expanding the remaining width integral for
/// large `b_max` leaves `ln(4 b_max^2) - (gamma - 1)` as the coefficient of
/// the mean-separation term (the `+1` arises from the non-logarithmic part of
/// the exponential integral). The oracle-agreement tests pin this to three
/// decimal digits of relative accuracy; a different constant fails them by
/// an order of magnitude.
pub const MCVMD_CB_CONSTANT: f64 = EULER_MASCHERONI - 1.0;

/// Round-off clamp floor: squared distances in `[MCVMD_NEG_CLAMP, 0)` are
/// treated as zero, anything lower is an error (the closed form is being
/// used outside its valid regime, not suffering round-off).
pub const MCVMD_NEG_CLAMP: f64 = -1e-10;

/// How far beyond the support the oracle integrates positions, in units of
/// the current kernel width (exp(-6^2/2) is below 2e-8).
const LCD_SPAN_WIDTHS: f64 = 6.0;

/// Closed-form modified Cramér–von Mises distance with the default constant.
pub fn mcvmd_dirac(f: &DiracMixture, g: &DiracMixture, b_max: f64) -> Result<f64> {
    mcvmd_dirac_with_constant(f, g, b_max, MCVMD_CB_CONSTANT)
}

/// Closed form with an explicit `c_b` constant (`c_b = ln(4 b_max^2) - constant`).
///
/// d^2 = pi^{n/2}/8 * (D_ff - 2 D_fg + D_gg + 2 c_b |mean_f - mean_g|^2)
/// where D_ab sums `w_i w_j xlog(|x_i - y_j|^2)` over the two supports.
pub fn mcvmd_dirac_with_constant(
    f: &DiracMixture,
    g: &DiracMixture,
    b_max: f64,
    constant: f64,
) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::Dimension(format!(
            "mixtures have dimensions {} and {}",
            f.dim(),
            g.dim()
        )));
    }
    if !b_max.is_finite() || b_max <= 0.0 {
        return Err(Error::Parameter(format!("b_max = {b_max} must be positive")));
    }
    let c_b = (4.0 * b_max * b_max).ln() - constant;
    if c_b <= 0.0 {
        return Err(Error::Parameter(format!(
            "c_b = {c_b} is not positive; b_max = {b_max} is too small for the closed form"
        )));
    }

    let (f, g) = canonical_pair(f, g);
    let n = f.dim() as f64;
    let d_ff = cross_sum(f, f);
    let d_fg = cross_sum(f, g);
    let d_gg = cross_sum(g, g);
    let d_means = (weighted_mean(f) - weighted_mean(g)).norm_squared();

    let prefactor = std::f64::consts::PI.powf(0.5 * n) / 8.0;
    let d2 = prefactor * (d_ff - 2.0 * d_fg + d_gg + 2.0 * c_b * d_means);
    if d2 < 0.0 {
        if d2 >= MCVMD_NEG_CLAMP {
            return Ok(0.0);
        }
        return Err(Error::Domain(format!(
            "squared distance {d2} is negative beyond round-off; the closed form is invalid \
             for this support spread at b_max = {b_max}"
        )));
    }
    Ok(d2.sqrt())
}

fn cross_sum(a: &DiracMixture, b: &DiracMixture) -> f64 {
    let mut total = 0.0;
    for (wi, xi) in a.weights().iter().zip(a.points()) {
        for (wj, xj) in b.weights().iter().zip(b.points()) {
            total += wi * wj * xlog_unchecked((xi - xj).norm_squared());
        }
    }
    total
}

fn weighted_mean(a: &DiracMixture) -> DVector<f64> {
    let mut mean = DVector::zeros(a.dim());
    for (w, p) in a.weights().iter().zip(a.points()) {
        mean.axpy(*w, p, 1.0);
    }
    mean
}

/// Numerical evaluation of the defining localized-CDF integral (univariate).
///
/// For each kernel width `b` the smoothed functions are
/// `F(m, b) = sum_i w_i exp(-(x_i - m)^2 / (2 b^2))` and the inner integral
/// of `(F - G)^2` runs over the support span extended by six kernel widths
/// (or fixed bounds if the config provides them); the outer integral runs
/// over `b` in `[0, b_max]`. Both use composite Simpson with the configured
/// node count. This is the reference the closed form is checked against, so
/// it shares no code path with [`mcvmd_dirac`].
pub fn mcvmd_lcd_oracle(
    f: &DiracMixture,
    g: &DiracMixture,
    b_max: f64,
    quadrature: &QuadratureConfig,
) -> Result<f64> {
    if f.dim() != 1 || g.dim() != 1 {
        return Err(Error::Dimension(format!(
            "the integral oracle is univariate only; got dimensions {} and {}",
            f.dim(),
            g.dim()
        )));
    }
    if !b_max.is_finite() || b_max <= 0.0 {
        return Err(Error::Parameter(format!("b_max = {b_max} must be positive")));
    }
    quadrature.validate()?;
    let nodes = quadrature.nodes;
    if nodes < LCD_ORACLE_MIN_NODES {
        return Err(Error::Quadrature(format!(
            "the integral oracle needs at least {LCD_ORACLE_MIN_NODES} nodes per axis, got {nodes}"
        )));
    }

    let support_min = min_point(f).min(min_point(g));
    let support_max = max_point(f).max(max_point(g));
    let h_b = b_max / (nodes - 1) as f64;

    let outer: Vec<f64> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            let b = k as f64 * h_b;
            if b == 0.0 {
                // The smoothed functions collapse to zero-width spikes whose
                // squared difference integrates to zero in the limit.
                return 0.0;
            }
            let (lo, hi) = quadrature.bounds.unwrap_or((
                support_min - LCD_SPAN_WIDTHS * b,
                support_max + LCD_SPAN_WIDTHS * b,
            ));
            let h_m = (hi - lo) / (nodes - 1) as f64;
            let inv = 1.0 / (2.0 * b * b);
            let values: Vec<f64> = (0..nodes)
                .map(|t| {
                    let m = lo + t as f64 * h_m;
                    let fv = smoothed(f, m, inv);
                    let gv = smoothed(g, m, inv);
                    let diff = fv - gv;
                    diff * diff
                })
                .collect();
            simpson(&values, h_m)
        })
        .collect();

    Ok(simpson(&outer, h_b).max(0.0).sqrt())
}

fn smoothed(mix: &DiracMixture, m: f64, inv_two_b2: f64) -> f64 {
    mix.weights()
        .iter()
        .zip(mix.points())
        .map(|(w, x)| {
            let d = x[0] - m;
            w * (-d * d * inv_two_b2).exp()
        })
        .sum()
}

fn min_point(m: &DiracMixture) -> f64 {
    m.points().iter().map(|p| p[0]).fold(f64::INFINITY, f64::min)
}

fn max_point(m: &DiracMixture) -> f64 {
    m.points().iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max)
}
