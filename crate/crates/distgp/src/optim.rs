//! Derivative-free minimization: Nelder–Mead with parallel multistart.
//!
//! The GP hyperparameter search runs in log-parameter space where gradients
//! of the marginal likelihood through the jitter ladder are unavailable, so a
//! simplex search is used. NaN objective values are treated as +inf, which
//! lets callers signal infeasible regions without special casing.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Standard simplex coefficients: reflection, expansion, contraction, shrink.
const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadConfig {
    pub max_iters: usize,
    /// Converged when the value spread across the simplex falls below
    /// `f_tol * (1 + |best|)`.
    pub f_tol: f64,
    /// Converged when every vertex is within `x_tol` of the best one in every
    /// coordinate.
    pub x_tol: f64,
    /// Offset added to each coordinate in turn to build the initial simplex.
    pub init_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            max_iters: 400,
            f_tol: 1e-9,
            x_tol: 1e-9,
            init_step: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `objective` from `x0` with the Nelder–Mead simplex method.
pub fn nelder_mead(
    objective: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    config: &NelderMeadConfig,
) -> Result<NelderMeadResult> {
    let dim = x0.len();
    if dim == 0 {
        return Err(Error::Optimization("cannot optimize over zero parameters".into()));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::Optimization(format!(
            "initial point {x0:?} has non-finite coordinates"
        )));
    }
    let eval = |x: &[f64]| {
        let v = objective(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += config.init_step;
        let f = eval(&v);
        simplex.push((v, f));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread_ok = (worst - best).abs() <= config.f_tol * (1.0 + best.abs());
        let size_ok = simplex[1..].iter().all(|(v, _)| {
            v.iter()
                .zip(&simplex[0].0)
                .all(|(a, b)| (a - b).abs() <= config.x_tol)
        });
        if spread_ok && size_ok {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..dim].iter().map(|(v, _)| v[k]).sum::<f64>() / dim as f64)
            .collect();
        let towards = |coeff: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + coeff * (c - w))
                .collect()
        };

        let reflected = towards(REFLECT, &simplex[dim].0);
        let f_reflected = eval(&reflected);
        if f_reflected < simplex[0].1 {
            let expanded = towards(EXPAND, &simplex[dim].0);
            let f_expanded = eval(&expanded);
            simplex[dim] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
            continue;
        }
        if f_reflected < simplex[dim - 1].1 {
            simplex[dim] = (reflected, f_reflected);
            continue;
        }
        // Contract toward the better of the worst vertex and its reflection.
        let (anchor, f_anchor) = if f_reflected < simplex[dim].1 {
            (reflected.clone(), f_reflected)
        } else {
            simplex[dim].clone()
        };
        let contracted: Vec<f64> = centroid
            .iter()
            .zip(&anchor)
            .map(|(c, a)| c + CONTRACT * (a - c))
            .collect();
        let f_contracted = eval(&contracted);
        if f_contracted <= f_anchor {
            simplex[dim] = (contracted, f_contracted);
            continue;
        }
        // Shrink everything toward the best vertex.
        let anchor_vertex = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            for (v, a) in entry.0.iter_mut().zip(&anchor_vertex) {
                *v = a + SHRINK * (*v - a);
            }
            entry.1 = eval(&entry.0);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Ok(NelderMeadResult {
        x,
        value,
        iterations,
        converged,
    })
}

/// Runs [`nelder_mead`] from every start in parallel and returns the index of
/// the winning start together with its result.
///
/// Starts are compared by `(value, index)`, so ties resolve to the earliest
/// start and the outcome does not depend on the worker count. Fails if no
/// start reaches a finite value.
pub fn multistart_minimize(
    objective: impl Fn(&[f64]) -> f64 + Sync,
    starts: &[Vec<f64>],
    config: &NelderMeadConfig,
) -> Result<(usize, NelderMeadResult)> {
    if starts.is_empty() {
        return Err(Error::Optimization("multistart needs at least one start".into()));
    }
    let results: Vec<Result<NelderMeadResult>> = starts
        .par_iter()
        .map(|x0| nelder_mead(&objective, x0, config))
        .collect();

    let mut best: Option<(usize, NelderMeadResult)> = None;
    for (i, r) in results.into_iter().enumerate() {
        let r = r?;
        if !r.value.is_finite() {
            continue;
        }
        if best.as_ref().map_or(true, |(_, b)| r.value < b.value) {
            best = Some((i, r));
        }
    }
    best.ok_or_else(|| {
        Error::Optimization(format!(
            "no finite objective value reached from {} starts",
            starts.len()
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn sphere(x: &[f64]) -> f64 {
        (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2)
    }

    #[test]
    fn converges_on_a_shifted_sphere() {
        let r = nelder_mead(sphere, &[0.0, 0.0], &NelderMeadConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-6, "{:?}", r.x);
        assert!((r.x[1] + 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!(r.value < 1e-12);
    }

    #[test]
    fn converges_on_the_rosenbrock_valley() {
        let rosenbrock =
            |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let config = NelderMeadConfig {
            max_iters: 2000,
            ..NelderMeadConfig::default()
        };
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &config).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3, "{:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn one_dimensional_problems_work() {
        let r = nelder_mead(|x| (x[0] - 0.7).powi(2), &[5.0], &NelderMeadConfig::default())
            .unwrap();
        assert!((r.x[0] - 0.7).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn iteration_budget_is_respected() {
        let config = NelderMeadConfig {
            max_iters: 5,
            ..NelderMeadConfig::default()
        };
        let r = nelder_mead(sphere, &[100.0, 100.0], &config).unwrap();
        assert_eq!(r.iterations, 5);
        assert!(!r.converged);
    }

    #[test]
    fn nan_regions_are_avoided() {
        // NaN left of the origin acts as an infeasible half-space.
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 1.0).powi(2)
            }
        };
        let r = nelder_mead(f, &[0.5], &NelderMeadConfig::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!(r.value.is_finite());
    }

    #[test]
    fn rejects_empty_and_nonfinite_starts() {
        assert!(nelder_mead(|_| 0.0, &[], &NelderMeadConfig::default()).is_err());
        assert!(nelder_mead(|x| x[0], &[f64::NAN], &NelderMeadConfig::default()).is_err());
    }

    #[test]
    fn multistart_returns_the_earliest_best() {
        // Two basins; starts 1 and 2 both land in the deeper one.
        let f = |x: &[f64]| {
            let a = (x[0] + 2.0).powi(2) + 1.0;
            let b = (x[0] - 2.0).powi(2);
            a.min(b)
        };
        let starts = vec![vec![-2.5], vec![1.5], vec![2.5]];
        let (idx, r) = multistart_minimize(f, &starts, &NelderMeadConfig::default()).unwrap();
        assert_eq!(idx, 1);
        assert!((r.x[0] - 2.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn multistart_fails_when_everything_is_infeasible() {
        let starts = vec![vec![0.0], vec![1.0]];
        let err =
            multistart_minimize(|_| f64::NAN, &starts, &NelderMeadConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Optimization(_)), "{err}");
        assert!(multistart_minimize(|x| x[0], &[], &NelderMeadConfig::default()).is_err());
    }

    #[test]
    fn multistart_is_deterministic_across_worker_counts() {
        let calls = AtomicUsize::new(0);
        let f = |x: &[f64]| {
            calls.fetch_add(1, Ordering::Relaxed);
            (x[0] - 1.0).powi(2) * (x[0] + 1.0).powi(2)
        };
        let starts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 - 3.0]).collect();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1
            .install(|| multistart_minimize(&f, &starts, &NelderMeadConfig::default()))
            .unwrap();
        let b = pool4
            .install(|| multistart_minimize(&f, &starts, &NelderMeadConfig::default()))
            .unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.x, b.1.x);
        assert!(calls.load(Ordering::Relaxed) > 0);
    }
}
