use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{project, Dataset};
use crate::error::{Error, Result};
use crate::scalar::{gemm, sqrt, MatRef, Scalar};

/// `x -> W (x - mean)` with `W = E diag(1 / sqrt(lambda_i + epsilon)) E^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcaTransform {
    pub mean: Vec<Scalar>,
    /// Row-major `D x D`.
    pub matrix: Vec<Scalar>,
    pub epsilon: Scalar,
}

impl ZcaTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn zca_fit(dataset: &Dataset, epsilon: Scalar) -> Result<ZcaTransform> {
    let n = dataset.len();
    let d = dataset.shape().size();
    if n == 0 {
        return Err(Error::Dataset("cannot fit ZCA on an empty dataset".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("zca_fit", alloc::format!("epsilon must be >= 0, got {epsilon}")));
    }
    let mut mean = alloc::vec![0.0; d];
    for img in dataset.images().chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(img) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as Scalar;
    }
    let centered: Vec<Scalar> = dataset
        .images()
        .chunks_exact(d)
        .flat_map(|img| img.iter().zip(&mean).map(|(v, m)| v - m))
        .collect();
    let mut cov = alloc::vec![0.0; d * d];
    gemm(
        1.0 / n as Scalar,
        MatRef::transposed(&centered, n, d),
        MatRef::row_major(&centered, n, d),
        0.0,
        &mut cov,
    );
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ZCA covariance"));
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
    let scales: Vec<Scalar> = eig
        .eigenvalues
        .iter()
        .map(|&l| 1.0 / sqrt(l.max(0.0) + epsilon))
        .collect();
    let e = &eig.eigenvectors;
    let mut matrix = alloc::vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v: Scalar = (0..d).map(|k| e[(i, k)] * scales[k] * e[(j, k)]).sum();
            matrix[i * d + j] = v;
            matrix[j * d + i] = v;
        }
    }
    Ok(ZcaTransform { mean, matrix, epsilon })
}

pub fn zca_apply(transform: &ZcaTransform, dataset: &Dataset) -> Result<Dataset> {
    let d = dataset.shape().size();
    if d != transform.dim() {
        return Err(Error::Dataset(alloc::format!(
            "ZCA transform is {}-dimensional, images have {d} values",
            transform.dim()
        )));
    }
    let centered: Vec<Scalar> = dataset
        .images()
        .chunks_exact(d)
        .flat_map(|img| img.iter().zip(&transform.mean).map(|(v, m)| v - m))
        .collect();
    let images = project(&centered, dataset.len(), d, &transform.matrix, d);
    Ok(dataset.map_images(dataset.shape(), images))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{global_contrast_normalize, synthetic_dataset};
    use crate::netarch::FeatureShape;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white(n: usize, d: usize) -> Dataset {
        let mut r = rng::seeded(11, 100, 0);
        let images = (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect();
        Dataset::new(images, FeatureShape::new(1, 1, d), alloc::vec![0; n], 1).unwrap()
    }

    fn moments(d: &Dataset) -> (Vec<Scalar>, Vec<Scalar>) {
        let dim = d.shape().size();
        let n = d.len() as Scalar;
        let mut mean = alloc::vec![0.0; dim];
        let mut var = alloc::vec![0.0; dim];
        for img in d.images().chunks_exact(dim) {
            for k in 0..dim {
                mean[k] += img[k] / n;
            }
        }
        for img in d.images().chunks_exact(dim) {
            for k in 0..dim {
                var[k] += (img[k] - mean[k]) * (img[k] - mean[k]) / n;
            }
        }
        (mean, var)
    }

    #[test]
    fn isotropic_data_gives_near_identity() {
        let t = zca_fit(&white(200_000, 4), 1e-5).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let v = t.matrix[i * 4 + j];
                if i == j {
                    assert!((v - 1.0).abs() < 0.02, "{v}");
                } else {
                    assert!(v.abs() < 0.02, "{v}");
                }
            }
        }
    }

    #[test]
    fn refit_on_whitened_data_is_identity() {
        let d = synthetic_dataset(5, 400, 4, FeatureShape::new(1, 2, 3)).unwrap();
        let once = zca_apply(&zca_fit(&d, 0.0).unwrap(), &d).unwrap();
        let again = zca_fit(&once, 0.0).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((again.matrix[i * 6 + j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn huge_epsilon_shrinks() {
        let d = synthetic_dataset(5, 50, 2, FeatureShape::new(1, 2, 2)).unwrap();
        let t = zca_fit(&d, 1e12).unwrap();
        for i in 0..4 {
            assert!((t.matrix[i * 5] * 1e6 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gcn_then_zca_moments() {
        let d = global_contrast_normalize(&synthetic_dataset(8, 2000, 5, FeatureShape::new(1, 3, 3)).unwrap());
        let w = zca_apply(&zca_fit(&d, 1e-5).unwrap(), &d).unwrap();
        let (mean, var) = moments(&w);
        assert!(mean.iter().all(|m| m.abs() <= 1e-8));
        // GCN removes one direction (the per-image mean), so one component
        // has eigenvalue ~0 and is shrunk; the remaining variance sums to D-1.
        let total: Scalar = var.iter().sum();
        assert!((total - 8.0).abs() < 0.1, "{total}");
    }

    #[test]
    fn dimension_mismatch() {
        let t = zca_fit(&white(10, 3), 1e-5).unwrap();
        assert!(zca_apply(&t, &white(10, 4)).is_err());
    }
}
