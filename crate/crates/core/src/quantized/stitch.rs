//! PSD projection and stitching of per-subspace estimates into one metric.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{lstsq_min_norm, SOLVE_RCOND};
use crate::subspace::{build_pi, PiMap, Subspace, SubspaceMetric};
use crate::sym::{vec_to_sym, SymMatrix};

/// Default Huber threshold.
pub const HUBER_DELTA: f64 = 1.35;
const IRLS_TOL: f64 = 1e-9;
const IRLS_MAX_ITERS: usize = 10_000;

/// Frobenius-nearest PSD matrix: negative eigenvalues clamped to zero.
pub fn psd_project(a: &SymMatrix) -> Result<SymMatrix> {
    if !a.is_finite() {
        return Err(Error::InvalidParameter("matrix has non-finite entries"));
    }
    let eig = a.to_matrix().symmetric_eigen();
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    SymMatrix::from_matrix(&(v * DMatrix::from_diagonal(&clamped) * v.transpose()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StitchMode {
    LeastSquares,
    /// Huber regression on the packed residuals, with `delta` in units of
    /// their robust (MAD) scale.
    Robust {
        delta: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchResult {
    pub metric: SymMatrix,
    /// `‖Q̂_λ - B_λᵀÂB_λ‖_F` per subspace.
    pub residuals: Vec<f64>,
    /// Smallest singular value of `Π` over the stitched subspaces.
    pub sigma_min: f64,
    pub rank: usize,
    pub unique: bool,
    /// Reweighting passes; zero for plain least squares.
    pub iterations: usize,
}

/// Least-squares solution of `B_λᵀAB_λ = Q̂_λ`. Errors when `Π` is not injective.
pub fn stitch_ls(estimates: &[SubspaceMetric]) -> Result<StitchResult> {
    stitch(estimates, StitchMode::LeastSquares, false)
}

/// Huber-loss solution of `B_λᵀAB_λ = Q̂_λ` by iteratively reweighted least
/// squares. Errors when `Π` is not injective.
pub fn stitch_robust(estimates: &[SubspaceMetric], delta: f64) -> Result<StitchResult> {
    stitch(estimates, StitchMode::Robust { delta }, false)
}

/// Shared entry point; with `allow_underdetermined` a non-injective `Π` yields
/// the minimum-norm solution with `unique = false`.
pub fn stitch(
    estimates: &[SubspaceMetric],
    mode: StitchMode,
    allow_underdetermined: bool,
) -> Result<StitchResult> {
    let subspaces: Vec<Subspace> = estimates.iter().map(|e| e.subspace.clone()).collect();
    let pi = build_pi(&subspaces)?;
    if !pi.is_injective() && !allow_underdetermined {
        return Err(Error::Underdetermined {
            rank: pi.rank(),
            required: pi.domain_dim(),
        });
    }
    let rhs = pi.stack(estimates)?;
    let (metric, iterations) = match mode {
        StitchMode::LeastSquares => (pi.solve(&rhs)?.0, 0),
        StitchMode::Robust { delta } => huber_irls(&pi, &rhs, delta)?,
    };
    let image = pi.matrix() * crate::sym::sym_to_vec(&metric);
    let residuals = (0..estimates.len())
        .map(|i| {
            let range = pi.block(i);
            (image.rows(range.start, range.len()) - rhs.rows(range.start, range.len())).norm()
        })
        .collect();
    Ok(StitchResult {
        metric,
        residuals,
        sigma_min: pi.min_singular(),
        rank: pi.rank(),
        unique: pi.is_injective(),
        iterations,
    })
}

fn huber_irls(pi: &PiMap, rhs: &DVector<f64>, delta: f64) -> Result<(SymMatrix, usize)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter("huber delta must be positive"));
    }
    let x = pi.matrix();
    let scale_floor = 1e-9 * rhs.amax().max(1.0);
    let mut a = lstsq_min_norm(x, rhs, SOLVE_RCOND)?.solution;
    let mut weighted = x.clone();
    let mut target = rhs.clone();
    for iteration in 1..=IRLS_MAX_ITERS {
        let residual = x * &a - rhs;
        let threshold = delta * robust_scale(residual.as_slice()).max(scale_floor);
        for i in 0..residual.len() {
            let w = if residual[i].abs() <= threshold {
                1.0
            } else {
                threshold / residual[i].abs()
            };
            let s = libm::sqrt(w);
            weighted.row_mut(i).copy_from(&(x.row(i) * s));
            target[i] = rhs[i] * s;
        }
        let next = lstsq_min_norm(&weighted, &target, SOLVE_RCOND)?.solution;
        let change = (&next - &a).norm();
        a = next;
        if change <= IRLS_TOL {
            return Ok((vec_to_sym(pi.ambient_dim(), &a)?, iteration));
        }
    }
    Err(Error::NoConvergence {
        iterations: IRLS_MAX_ITERS,
    })
}

/// Normalized median absolute deviation, consistent for Gaussian residuals.
pub(crate) fn robust_scale(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    let center = median(residuals.to_vec());
    median(residuals.iter().map(|r| (r - center).abs()).collect()) / 0.674_489_750_196_081_7
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::project_metric;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_pd(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        SymMatrix::from_matrix(&(&g * g.transpose() + DMatrix::identity(d, d) * 0.5)).unwrap()
    }

    fn random_subspace(rng: &mut ChaCha8Rng, d: usize, r: usize) -> Subspace {
        Subspace::from_spanning(DMatrix::from_fn(d, r, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    fn restrictions(m: &SymMatrix, subspaces: &[Subspace]) -> Vec<SubspaceMetric> {
        subspaces
            .iter()
            .map(|v| project_metric(v, m).unwrap())
            .collect()
    }

    fn line(x: &[f64]) -> Subspace {
        Subspace::from_spanning(DMatrix::from_column_slice(x.len(), 1, x)).unwrap()
    }

    #[test]
    fn psd_input_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_pd(&mut rng, 4);
        assert!(psd_project(&a).unwrap().distance(&a).unwrap() < 1e-12);
        assert_eq!(
            psd_project(&SymMatrix::identity(3).scaled(-1.0))
                .unwrap()
                .frobenius_norm(),
            0.0
        );
    }

    #[test]
    fn indefinite_diagonal_matches_grid_search() {
        let a = SymMatrix::from_diagonal(&[1.0, -1.0]);
        let p = psd_project(&a).unwrap();
        assert!(p.distance(&SymMatrix::from_diagonal(&[1.0, 0.0])).unwrap() < 1e-12);

        // every 2×2 PSD matrix on a grid is at least as far from `a`
        let best = p.distance(&a).unwrap();
        let steps = 40;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in -steps..=steps {
                    let (x, z, y) = (
                        2.0 * i as f64 / steps as f64,
                        2.0 * j as f64 / steps as f64,
                        k as f64 / steps as f64,
                    );
                    if x * z - y * y < 0.0 {
                        continue;
                    }
                    let cand = SymMatrix::from_row_major(2, &[x, y, y, z]).unwrap();
                    assert!(cand.distance(&a).unwrap() >= best - 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nearest(entries in proptest::collection::vec(-3.0f64..3.0, 9), seed in 0u64..1000) {
            let a = SymMatrix::from_matrix(&DMatrix::from_row_slice(3, 3, &entries)).unwrap();
            let p = psd_project(&a).unwrap();
            prop_assert!(psd_project(&p).unwrap().distance(&p).unwrap() <= 1e-12);
            let gap = a.distance(&p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..100 {
                let g = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
                let cand = SymMatrix::from_matrix(&(&g * g.transpose())).unwrap();
                prop_assert!(gap <= a.distance(&cand).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn ls_recovers_from_exact_restrictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_pd(&mut rng, 4);
        let subspaces: Vec<_> = (0..8)
            .map(|i| random_subspace(&mut rng, 4, 1 + i % 2))
            .collect();
        let result = stitch_ls(&restrictions(&m, &subspaces)).unwrap();
        assert!(result.unique);
        assert!(result.metric.distance(&m).unwrap() <= 1e-8 * m.frobenius_norm());
        assert!(result.residuals.iter().all(|&r| r < 1e-10));
    }

    #[test]
    fn ls_hand_example_in_plane() {
        let m = SymMatrix::from_row_major(2, &[2.0, 1.0, 1.0, 3.0]).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let subspaces = [line(&[1.0, 0.0]), line(&[0.0, 1.0]), line(&[s, s])];
        let qs: Vec<f64> = restrictions(&m, &subspaces)
            .iter()
            .map(|e| e.q.get(0, 0))
            .collect();
        // q = (m11, m22, (m11 + 2 m12 + m22)/2) = (2, 3, 3.5)
        assert!(
            (qs[0] - 2.0).abs() < 1e-14
                && (qs[1] - 3.0).abs() < 1e-14
                && (qs[2] - 3.5).abs() < 1e-14
        );
        let m12 = qs[2] - (qs[0] + qs[1]) / 2.0;
        assert!((m12 - 1.0).abs() < 1e-14);
        let result = stitch_ls(&restrictions(&m, &subspaces)).unwrap();
        assert!(result.metric.distance(&m).unwrap() < 1e-12);
    }

    #[test]
    fn ls_perturbation_is_bounded_by_inverse_singular_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_pd(&mut rng, 3);
            let subspaces: Vec<_> = (0..7).map(|_| random_subspace(&mut rng, 3, 1)).collect();
            let mut est = restrictions(&m, &subspaces);
            let eps = 0.01;
            est[2].q = &est[2].q + &SymMatrix::from_diagonal(&[eps]);
            let result = stitch_ls(&est).unwrap();
            assert!(result.metric.distance(&m).unwrap() <= eps / result.sigma_min + 1e-10);
        }
    }

    #[test]
    fn ls_all_perturbed_obeys_sqrt_n_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = random_pd(&mut rng, 3);
            let n = 8;
            let subspaces: Vec<_> = (0..n).map(|_| random_subspace(&mut rng, 3, 2)).collect();
            let eps = 0.05;
            let est: Vec<_> = restrictions(&m, &subspaces)
                .into_iter()
                .map(|mut e| {
                    let noise = SymMatrix::from_matrix(&DMatrix::from_fn(2, 2, |_, _| {
                        rng.sample(StandardNormal)
                    }))
                    .unwrap();
                    e.q = &e.q + &noise.scaled(eps / noise.frobenius_norm());
                    e
                })
                .collect();
            let result = stitch_ls(&est).unwrap();
            let bound = libm::sqrt(n as f64) * eps / result.sigma_min;
            assert!(result.metric.distance(&m).unwrap() <= bound + 1e-10);
        }
    }

    #[test]
    fn non_injective_is_rejected_unless_allowed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_pd(&mut rng, 3);
        let subspaces: Vec<_> = (0..5).map(|_| random_subspace(&mut rng, 3, 1)).collect();
        let est = restrictions(&m, &subspaces);
        assert!(matches!(
            stitch_ls(&est),
            Err(Error::Underdetermined {
                rank: 5,
                required: 6
            })
        ));
        assert!(stitch_robust(&est, HUBER_DELTA).is_err());
        let loose = stitch(&est, StitchMode::LeastSquares, true).unwrap();
        assert!(!loose.unique);
        assert!(loose.residuals.iter().all(|&r| r < 1e-10));
    }

    #[test]
    fn robust_with_huge_delta_matches_ls() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_pd(&mut rng, 3);
        let subspaces: Vec<_> = (0..9).map(|_| random_subspace(&mut rng, 3, 1)).collect();
        let mut est = restrictions(&m, &subspaces);
        est[0].q = &est[0].q + &SymMatrix::from_diagonal(&[0.3]);
        let ls = stitch_ls(&est).unwrap();
        let robust = stitch_robust(&est, 1e6).unwrap();
        assert!(robust.metric.distance(&ls.metric).unwrap() <= 1e-8);
    }

    #[test]
    fn robust_single_full_subspace_returns_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_pd(&mut rng, 3).scaled(50.0);
        let est = [SubspaceMetric::new(Subspace::full(3), q.clone()).unwrap()];
        for delta in [0.01, 1.35, 1e6] {
            assert!(
                stitch_robust(&est, delta)
                    .unwrap()
                    .metric
                    .distance(&q)
                    .unwrap()
                    < 1e-9
            );
        }
        assert!(stitch_robust(&est, 0.0).is_err());
    }

    #[test]
    fn robust_resists_one_corrupted_subspace() {
        for (d, r, n) in [(3, 2, 12), (5, 1, 30)] {
            let (mut robust_err, mut ls_err) = (0.0, 0.0);
            for seed in 0..10 {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let m = SymMatrix::from_matrix(&(&g * g.transpose())).unwrap();
                let m = m.scaled(d as f64 / m.frobenius_norm());
                let subspaces: Vec<_> = (0..n).map(|_| random_subspace(&mut rng, d, r)).collect();
                let mut est = restrictions(&m, &subspaces);
                let bump = SymMatrix::from_matrix(&DMatrix::from_element(r, r, 100.0)).unwrap();
                est[0].q = &est[0].q + &bump;
                let rel = |a: &SymMatrix| a.distance(&m).unwrap() / m.frobenius_norm();
                robust_err += rel(&stitch_robust(&est, HUBER_DELTA).unwrap().metric) / 10.0;
                ls_err += rel(&stitch_ls(&est).unwrap().metric) / 10.0;
            }
            assert!(robust_err <= 0.05, "d={d} r={r}: robust {robust_err}");
            assert!(ls_err >= 0.5, "d={d} r={r}: ls {ls_err}");
        }
    }

    #[test]
    fn robust_scale_is_normalized_mad() {
        assert_eq!(robust_scale(&[]), 0.0);
        let s = robust_scale(&[-1.0, 1.0, -1.0, 1.0, 0.0, 0.0, 100.0]);
        assert!((s - 1.0 / 0.674_489_750_196_081_7).abs() < 1e-12);
    }

    #[test]
    fn residuals_report_corruption_location() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_pd(&mut rng, 2);
        let subspaces: Vec<_> = (0..6).map(|_| random_subspace(&mut rng, 2, 1)).collect();
        let mut est = restrictions(&m, &subspaces);
        est[4].q = &est[4].q + &SymMatrix::from_diagonal(&[50.0]);
        let result = stitch_robust(&est, HUBER_DELTA).unwrap();
        let worst = (0..6)
            .max_by(|&a, &b| result.residuals[a].total_cmp(&result.residuals[b]))
            .unwrap();
        assert_eq!(worst, 4);
        assert_eq!(result.residuals.len(), 6);
    }
}
