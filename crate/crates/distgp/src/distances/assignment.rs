//! Wasserstein distance between equal-size uniform Dirac mixtures.
//!
//! With `m` points a side and uniform weights the transport problem reduces
//! to a minimum-cost perfect matching: d_p = (min_perm (1/m) sum_i
//! |x_i - y_perm(i)|^p)^{1/p}. The solver is an exact O(m^3) shortest
//! augmenting path method over dual potentials; the brute-force oracle
//! enumerates all m! matchings and must agree bitwise on the shared cost
//! matrix whenever the optimum is unique.

use nalgebra::DMatrix;

use super::canonical_pair;
use crate::distributions::DiracMixture;
use crate::error::{Error, Result};

/// Upper support size accepted by the factorial-time oracle.
pub const BRUTEFORCE_MAX_POINTS: usize = 8;

/// Tolerance on |w_i - 1/m| when checking for uniform weights.
const UNIFORM_WEIGHT_TOL: f64 = 1e-12;

/// Order-p Wasserstein distance between equal-size uniform Dirac mixtures.
pub fn wasserstein_dirac(f: &DiracMixture, g: &DiracMixture, p: f64) -> Result<f64> {
    let (f, g) = checked_pair(f, g, p)?;
    let cost = cost_matrix(f, g, p);
    let perm = solve_assignment(&cost);
    Ok(normalize(total_cost(&cost, &perm), f.len(), p))
}

/// Reference result by enumerating every matching; supports at most
/// [`BRUTEFORCE_MAX_POINTS`] points per side.
pub fn assignment_bruteforce_oracle(f: &DiracMixture, g: &DiracMixture, p: f64) -> Result<f64> {
    let (f, g) = checked_pair(f, g, p)?;
    let m = f.len();
    if m > BRUTEFORCE_MAX_POINTS {
        return Err(Error::Size(format!(
            "brute-force enumeration is limited to {BRUTEFORCE_MAX_POINTS} points, got {m}"
        )));
    }
    let cost = cost_matrix(f, g, p);
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm over index permutations.
    let mut c = vec![0usize; m];
    best = best.min(total_cost(&cost, &perm));
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let t = total_cost(&cost, &perm);
            if t < best {
                best = t;
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(normalize(best, m, p))
}

fn checked_pair<'a>(
    f: &'a DiracMixture,
    g: &'a DiracMixture,
    p: f64,
) -> Result<(&'a DiracMixture, &'a DiracMixture)> {
    if !p.is_finite() || p < 1.0 {
        return Err(Error::Parameter(format!("order p = {p} must be >= 1")));
    }
    if f.dim() != g.dim() {
        return Err(Error::Dimension(format!(
            "mixtures have dimensions {} and {}",
            f.dim(),
            g.dim()
        )));
    }
    if f.len() != g.len() {
        return Err(Error::Cardinality(format!(
            "mixtures have {} and {} points; the matching form needs equal counts",
            f.len(),
            g.len()
        )));
    }
    for mix in [f, g] {
        let uniform = 1.0 / mix.len() as f64;
        for (i, w) in mix.weights().iter().enumerate() {
            if (w - uniform).abs() > UNIFORM_WEIGHT_TOL {
                return Err(Error::Weight(format!(
                    "weight {i} = {w} is not the uniform 1/{}; the matching form needs \
                     uniform weights",
                    mix.len()
                )));
            }
        }
    }
    Ok(canonical_pair(f, g))
}

fn cost_matrix(f: &DiracMixture, g: &DiracMixture, p: f64) -> DMatrix<f64> {
    let m = f.len();
    DMatrix::from_fn(m, m, |i, j| {
        let d2 = (&f.points()[i] - &g.points()[j]).norm_squared();
        if p == 2.0 {
            d2
        } else if p == 1.0 {
            d2.sqrt()
        } else {
            d2.sqrt().powf(p)
        }
    })
}

fn total_cost(cost: &DMatrix<f64>, perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum()
}

fn normalize(total: f64, m: usize, p: f64) -> f64 {
    let mean = total / m as f64;
    if p == 1.0 {
        mean
    } else if p == 2.0 {
        mean.sqrt()
    } else {
        mean.powf(1.0 / p)
    }
}

/// Exact minimum-cost perfect matching on a square cost matrix.
///
/// Shortest augmenting path formulation with dual potentials (the classic
/// O(n^3) Hungarian variant); index 0 of each working array is a sentinel
/// column. Returns the row-to-column permutation.
fn solve_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    // p[j] = row matched to column j (1-indexed; 0 = unmatched sentinel).
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mix(points: &[f64]) -> DiracMixture {
        DiracMixture::uniform(points.iter().map(|&x| DVector::from_vec(vec![x])).collect())
            .unwrap()
    }

    fn random_mix(rng: &mut ChaCha8Rng, m: usize, dim: usize) -> DiracMixture {
        DiracMixture::uniform(
            (0..m)
                .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-5.0..5.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn crossing_pairs_prefer_the_identity_matching() {
        let d = wasserstein_dirac(&mix(&[0.0, 2.0]), &mix(&[1.0, 3.0]), 1.0).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn singleton_distance_is_euclidean() {
        let d = wasserstein_dirac(&mix(&[0.0]), &mix(&[3.0]), 2.0).unwrap();
        assert_eq!(d, 3.0);
    }

    #[test]
    fn fractional_order_matches_hand_value() {
        let d = wasserstein_dirac(&mix(&[0.0, 2.0]), &mix(&[1.0, 3.0]), 1.5).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn identical_mixtures_have_zero_distance() {
        let f = mix(&[0.4, -1.2, 3.3]);
        assert_eq!(wasserstein_dirac(&f, &f, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn solver_matches_bruteforce_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for case in 0..40 {
            let m = rng.gen_range(1..=6);
            let dim = rng.gen_range(1..=2);
            let f = random_mix(&mut rng, m, dim);
            let g = random_mix(&mut rng, m, dim);
            let p = if case % 2 == 0 { 1.0 } else { 2.0 };
            let fast = wasserstein_dirac(&f, &g, p).unwrap();
            let slow = assignment_bruteforce_oracle(&f, &g, p).unwrap();
            assert_eq!(fast, slow, "case {case}: m={m} dim={dim} p={p}");
        }
    }

    #[test]
    fn symmetry_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_mix(&mut rng, 5, 2);
        let g = random_mix(&mut rng, 5, 2);
        assert_eq!(
            wasserstein_dirac(&f, &g, 2.0).unwrap(),
            wasserstein_dirac(&g, &f, 2.0).unwrap()
        );
    }

    #[test]
    fn rejects_mismatched_counts() {
        let err = wasserstein_dirac(&mix(&[0.0]), &mix(&[0.0, 1.0]), 2.0).unwrap_err();
        assert!(matches!(err, Error::Cardinality(_)), "{err}");
    }

    #[test]
    fn rejects_nonuniform_weights() {
        let f = DiracMixture::new(
            vec![0.3, 0.7],
            vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])],
        )
        .unwrap();
        let err = wasserstein_dirac(&f, &mix(&[0.0, 1.0]), 2.0).unwrap_err();
        assert!(matches!(err, Error::Weight(_)), "{err}");
    }

    #[test]
    fn rejects_bad_order_and_dimension() {
        let err = wasserstein_dirac(&mix(&[0.0]), &mix(&[1.0]), 0.5).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)), "{err}");
        let g2 = DiracMixture::uniform(vec![DVector::from_vec(vec![0.0, 0.0])]).unwrap();
        let err = wasserstein_dirac(&mix(&[0.0]), &g2, 2.0).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
    }

    #[test]
    fn bruteforce_rejects_large_supports() {
        let f = mix(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let err = assignment_bruteforce_oracle(&f, &f, 2.0).unwrap_err();
        assert!(matches!(err, Error::Size(_)), "{err}");
    }

    #[test]
    fn triangle_inequality_holds_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = rng.gen_range(1..=5);
            let a = random_mix(&mut rng, m, 1);
            let b = random_mix(&mut rng, m, 1);
            let c = random_mix(&mut rng, m, 1);
            let ab = wasserstein_dirac(&a, &b, 2.0).unwrap();
            let bc = wasserstein_dirac(&b, &c, 2.0).unwrap();
            let ac = wasserstein_dirac(&a, &c, 2.0).unwrap();
            assert!(ac <= ab + bc + 1e-9, "{ac} > {ab} + {bc}");
        }
    }
}
