use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative ridge added to covariances before square roots and inverses.
pub const COV_RIDGE: f64 = 1e-10;

fn to_matrix(set: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = set.first().map(|v| v.len()).unwrap_or(0);
    if set.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("embedding lengths differ within a set".into()));
    }
    Ok(DMatrix::from_fn(set.len(), d, |r, c| set[r][c]))
}

/// Sample mean and unbiased covariance of the rows of `x`, with the ridge
/// `COV_RIDGE·tr(Σ)/d·I` added.
pub fn mean_and_covariance(set: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if set.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {}", set.len())));
    }
    let x = to_matrix(set)?;
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n - 1.0);
    let d = cov.nrows();
    let ridge = COV_RIDGE * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    Ok((mean, cov))
}

/// Symmetric positive semi-definite square root; negative eigenvalues from
/// round-off are treated as zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^½)` between Gaussians fitted to the
/// two sets. The trace of `(ΣaΣb)^½` is evaluated as that of the symmetric
/// `(Σa^½ Σb Σa^½)^½`.
pub fn frechet_distance(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = mean_and_covariance(set_a)?;
    let (mb, cb) = mean_and_covariance(set_b)?;
    if ma.len() != mb.len() {
        return Err(Error::Shape(format!("embedding dimensions {} and {} differ", ma.len(), mb.len())));
    }
    let sa = psd_sqrt(&ca);
    let inner = &sa * &cb * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let value = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::SingularCovariance("Fréchet distance is not finite".into()));
    }
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn gaussian_set(n: usize, mean: &[f64], scale: &[f64], seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| {
                mean.iter()
                    .zip(scale)
                    .map(|(m, s)| m + s * r.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    /// Set whose sample mean and unbiased covariance are exactly `mean` and
    /// `diag(var)`: ± columns of a scaled identity.
    fn exact_set(mean: &[f64], var: &[f64]) -> Vec<Vec<f64>> {
        let d = mean.len();
        let n = 2 * d;
        let mut out = Vec::new();
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut v = mean.to_vec();
                v[i] += sign * (var[i] * (n - 1) as f64 / 2.0).sqrt();
                out.push(v);
            }
        }
        out
    }

    /// Denman–Beavers iteration for the principal square root of a
    /// (possibly non-symmetric) matrix with positive spectrum.
    fn denman_beavers(a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = a.clone();
        let mut z = DMatrix::identity(a.nrows(), a.ncols());
        for _ in 0..100 {
            let yi = y.clone().try_inverse().unwrap();
            let zi = z.clone().try_inverse().unwrap();
            y = (&y + zi) * 0.5;
            z = (&z + yi) * 0.5;
        }
        y
    }

    #[test]
    fn identical_sets_give_zero() {
        let a = gaussian_set(200, &[1.0, -2.0, 0.5, 3.0], &[1.0, 2.0, 0.3, 1.5], 1);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn unit_covariances_leave_only_the_mean_term() {
        let a = exact_set(&[0.0, 0.0], &[1.0, 1.0]);
        let b = exact_set(&[3.0, 4.0], &[1.0, 1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 1e-6);
    }

    #[test]
    fn diagonal_closed_form() {
        // Σ_i (√va − √vb)² for commuting diagonal covariances.
        let (va, vb) = ([1.0, 4.0, 0.25], [9.0, 1.0, 0.25]);
        let a = exact_set(&[1.0, 0.0, 2.0], &va);
        let b = exact_set(&[0.0, 2.0, 2.0], &vb);
        let want = 1.0 + 4.0 + va.iter().zip(&vb).map(|(x, y): (&f64, &f64)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
        assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn matches_independent_matrix_square_root() {
        for seed in 0..5 {
            let a = gaussian_set(40, &[0.0, 1.0, 2.0], &[1.0, 0.5, 2.0], seed);
            let b = gaussian_set(50, &[0.5, 0.0, 1.0], &[0.7, 1.5, 1.0], seed + 100);
            let (ma, ca) = mean_and_covariance(&a).unwrap();
            let (mb, cb) = mean_and_covariance(&b).unwrap();
            let root = denman_beavers(&(&ca * &cb));
            let want = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * root.trace();
            let got = frechet_distance(&a, &b).unwrap();
            assert!((got - want).abs() < 1e-8 * (1.0 + want), "{got} vs {want}");
        }
    }

    #[test]
    fn singular_sets_are_regularized() {
        let a: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        let b: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 + 1.0, 0.0, 1.0]).collect();
        let v = frechet_distance(&a, &b).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(frechet_distance(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
        assert!(frechet_distance(&[vec![1.0], vec![2.0]], &[vec![1.0, 0.0], vec![2.0, 0.0]]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symmetric_and_non_negative(seed in 0u64..1000, shift in -3.0f64..3.0) {
            let a = gaussian_set(30, &[0.0, 0.0, 0.0], &[1.0, 2.0, 0.5], seed);
            let b = gaussian_set(25, &[shift, 0.0, 1.0], &[0.5, 1.0, 1.0], seed + 1);
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
        }
    }
}
