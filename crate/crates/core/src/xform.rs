//! Train-fitted feature transforms: z-score standardization and exact
//! SVD-based PCA.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are treated as zero variance.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerParams {
    pub means: Vec<f64>,
    /// Population standard deviations; zero-variance columns record 1.
    pub stds: Vec<f64>,
}

impl StandardizerParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            means: vec![0.0; dim],
            stds: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }
}

fn column_means(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|col| col.iter().fold(0.0, |acc, v| acc + v) / n)
        .collect()
}

pub fn standardize_fit(train: &DMatrix<f64>) -> Result<StandardizerParams> {
    if train.nrows() < 2 {
        return Err(Error::DegenerateFit(train.nrows()));
    }
    if train.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("standardizer input".into()));
    }
    let n = train.nrows() as f64;
    let means = column_means(train);
    let stds = train
        .column_iter()
        .zip(&means)
        .map(|(col, &mean)| {
            let var = col.iter().fold(0.0, |acc, v| acc + (v - mean) * (v - mean)) / n;
            let std = var.sqrt();
            if std < MIN_STD {
                1.0
            } else {
                std
            }
        })
        .collect();
    Ok(StandardizerParams { means, stds })
}

pub fn standardize_apply(params: &StandardizerParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: x.ncols(),
        });
    }
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let (mean, std) = (params.means[j], params.stds[j]);
        col.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// `q x d`, orthonormal rows ordered by decreasing singular value.
    pub components: DMatrix<f64>,
    pub train_means: Vec<f64>,
    /// Per-component variance, `s^2 / (n - 1)`.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn q(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }
}

/// Fits PCA by a full thin SVD of the centered training matrix, keeping the
/// top `q` right singular vectors. Each component is signed so that its
/// largest-magnitude entry (earliest on ties) is positive.
pub fn pca_fit(train_standardized: &DMatrix<f64>, q: usize) -> Result<PcaModel> {
    let (n, d) = train_standardized.shape();
    let max = n.saturating_sub(1).min(d);
    if q < 1 || q > max {
        return Err(Error::PcaDimOutOfRange { q, max });
    }
    if train_standardized.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pca input".into()));
    }
    let train_means = column_means(train_standardized);
    let mut centered = train_standardized.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        let mean = train_means[j];
        col.iter_mut().for_each(|v| *v -= mean);
    }

    let svd = centered
        .try_svd(false, true, f64::EPSILON, 0)
        .ok_or(Error::SingularSystem)?;
    let v_t = svd.v_t.expect("v_t requested");
    let singular = svd.singular_values;

    let mut order: Vec<usize> = (0..singular.len()).collect();
    order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]).then(a.cmp(&b)));

    let mut components = DMatrix::zeros(q, d);
    let mut explained_variance = Vec::with_capacity(q);
    for (row, &src) in order.iter().take(q).enumerate() {
        let mut v: DVector<f64> = v_t.row(src).transpose();
        let (pivot, _) = v.iter().enumerate().fold((0, 0.0f64), |best, (i, x)| {
            if x.abs() > best.1 {
                (i, x.abs())
            } else {
                best
            }
        });
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        components.set_row(row, &v.transpose());
        explained_variance.push(singular[src] * singular[src] / (n as f64 - 1.0));
    }
    Ok(PcaModel {
        components,
        train_means,
        explained_variance,
    })
}

pub fn pca_apply(model: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: x.ncols(),
        });
    }
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        let mean = model.train_means[j];
        col.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(centered * model.components.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, j| rng.random_range(-1.0..1.0) * (1.0 + j as f64))
    }

    #[test]
    fn two_point_column() {
        let p = standardize_fit(&DMatrix::from_column_slice(2, 1, &[1.0, 3.0])).unwrap();
        assert_eq!(p.means, vec![2.0]);
        assert_eq!(p.stds, vec![1.0]);
        let out = standardize_apply(&p, &DMatrix::from_column_slice(2, 1, &[1.0, 3.0])).unwrap();
        assert_eq!(out.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column_guard() {
        let x = DMatrix::from_column_slice(3, 1, &[4.0, 4.0, 4.0]);
        let p = standardize_fit(&x).unwrap();
        assert_eq!(p.stds, vec![1.0]);
        let out = standardize_apply(&p, &x).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_input_is_fixed_point() {
        let x = standardize_apply(
            &standardize_fit(&random_matrix(50, 3, 1)).unwrap(),
            &random_matrix(50, 3, 1),
        )
        .unwrap();
        let p = standardize_fit(&x).unwrap();
        for (m, s) in p.means.iter().zip(&p.stds) {
            assert!(m.abs() < 1e-12);
            assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_params_leave_input() {
        let x = random_matrix(4, 2, 3);
        let out = standardize_apply(&StandardizerParams::identity(2), &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn standardize_errors() {
        assert!(matches!(
            standardize_fit(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0])),
            Err(Error::DegenerateFit(1))
        ));
        let p = StandardizerParams::identity(3);
        assert!(matches!(
            standardize_apply(&p, &random_matrix(2, 2, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rank_one_direction() {
        // Points on the line (t, 2t): the single component is (1, 2) / sqrt(5).
        let ts = [-2.0, -1.0, 0.5, 1.0, 3.0];
        let x = DMatrix::from_fn(ts.len(), 2, |i, j| ts[i] * (j as f64 + 1.0));
        let m = pca_fit(&x, 1).unwrap();
        let s5 = 5f64.sqrt();
        assert_abs_diff_eq!(m.components[(0, 0)], 1.0 / s5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.components[(0, 1)], 2.0 / s5, epsilon = 1e-12);
    }

    #[test]
    fn full_rank_projection_preserves_distances() {
        let x = random_matrix(30, 5, 11);
        let m = pca_fit(&x, 5).unwrap();
        let z = pca_apply(&m, &x).unwrap();
        for i in 0..x.nrows() {
            for j in 0..i {
                let dx = (x.row(i) - x.row(j)).norm_squared();
                let dz = (z.row(i) - z.row(j)).norm_squared();
                assert_abs_diff_eq!(dx, dz, epsilon = 1e-8 * (1.0 + dx));
            }
        }
        // Reconstruction through the transposed basis recovers centered data.
        let recon = &z * &m.components;
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                assert_abs_diff_eq!(recon[(i, j)], x[(i, j)] - m.train_means[j], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn pca_range_checks() {
        let x = random_matrix(3, 5, 2);
        assert!(matches!(
            pca_fit(&x, 4),
            Err(Error::PcaDimOutOfRange { q: 4, max: 2 })
        ));
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&x, 2).is_ok());
    }

    #[test]
    fn apply_centers_and_is_rowwise() {
        let x = random_matrix(20, 4, 5);
        let m = pca_fit(&x, 3).unwrap();
        let means = DMatrix::from_row_slice(1, 4, &m.train_means);
        assert!(pca_apply(&m, &means)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-12));
        let dup = DMatrix::from_fn(2, 4, |_, j| x[(7, j)]);
        let out = pca_apply(&m, &dup).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert!(pca_apply(&m, &random_matrix(2, 3, 0)).is_err());
    }

    #[test]
    fn sign_convention_largest_entry_positive() {
        let x = random_matrix(40, 6, 8);
        let m = pca_fit(&x, 6).unwrap();
        for row in m.components.row_iter() {
            let mut best = (0, 0.0f64);
            for (i, v) in row.iter().enumerate() {
                if v.abs() > best.1 {
                    best = (i, v.abs());
                }
            }
            assert!(row[best.0] > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn pca_invariants(seed in any::<u64>(), n in 8usize..30, d in 2usize..7) {
            let x = random_matrix(n, d, seed);
            let q = d.min(n - 1);
            let full = pca_fit(&x, q).unwrap();
            let gram = &full.components * full.components.transpose();
            for i in 0..q {
                for j in 0..q {
                    let target = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((gram[(i, j)] - target).abs() < 1e-8);
                }
            }
            for w in full.explained_variance.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            let nested = pca_fit(&x, 1.max(q / 2)).unwrap();
            for i in 0..nested.q() {
                prop_assert_eq!(nested.components.row(i), full.components.row(i));
            }
            let again = pca_fit(&x, q).unwrap();
            prop_assert_eq!(again, full);

            let std = standardize_fit(&x).unwrap();
            let z = standardize_apply(&std, &x).unwrap();
            for col in z.column_iter() {
                prop_assert!((col.sum() / n as f64).abs() < 1e-10);
            }
        }
    }
}
