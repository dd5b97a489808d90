use crate::error::{Error, Result};
use crate::feature::{FeatureVector, Modality};
use crate::linalg::{symmetric_eigen, Matrix};

/// Weighted 2DPCA model over H x W image matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct W2dpcaModel {
    pub mean_image: Matrix,
    /// W x k, orthonormal columns.
    pub basis: Matrix,
    pub eigenvalues: Vec<f64>,
}

/// Weighted mean image and image scatter matrix:
///
/// ```text
/// mean = sum_i w_i A_i / sum_i w_i
/// G    = sum_i w_i (A_i - mean)^T (A_i - mean) / sum_i w_i
/// ```
pub fn weighted_scatter(images: &[Matrix], weights: &[f64]) -> Result<(Matrix, Matrix)> {
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientData("weighted 2DPCA needs at least one image".into()))?;
    if weights.len() != images.len() {
        return Err(Error::DimensionMismatch {
            expected: images.len(),
            actual: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Config(format!("image weight {w} must be finite and non-negative")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("image weights sum to zero".into()));
    }
    let (h, w) = (first.rows(), first.cols());
    for img in images {
        if img.rows() != h || img.cols() != w {
            return Err(Error::DimensionMismatch {
                expected: h * w,
                actual: img.rows() * img.cols(),
            });
        }
    }

    let mut mean = Matrix::zeros(h, w);
    for (img, &wt) in images.iter().zip(weights) {
        for r in 0..h {
            for c in 0..w {
                mean[(r, c)] += wt * img[(r, c)];
            }
        }
    }
    for r in 0..h {
        for c in 0..w {
            mean[(r, c)] /= total;
        }
    }

    let mut g = Matrix::zeros(w, w);
    for (img, &wt) in images.iter().zip(weights) {
        if wt == 0.0 {
            continue;
        }
        for r in 0..h {
            let diff: Vec<f64> = (0..w).map(|c| img[(r, c)] - mean[(r, c)]).collect();
            for i in 0..w {
                for j in i..w {
                    g[(i, j)] += wt * diff[i] * diff[j];
                }
            }
        }
    }
    for i in 0..w {
        for j in i..w {
            let v = g[(i, j)] / total;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok((mean, g))
}

pub fn fit_w2dpca(images: &[Matrix], weights: &[f64], k: usize) -> Result<W2dpcaModel> {
    let (mean_image, g) = weighted_scatter(images, weights)?;
    let w = g.rows();
    if k == 0 || k > w {
        return Err(Error::Config(format!(
            "2DPCA component count {k} must be in [1, {w}]"
        )));
    }
    let eig = symmetric_eigen(&g)?;
    Ok(W2dpcaModel {
        mean_image,
        basis: eig.vectors.leading_columns(k),
        eigenvalues: eig.values[..k].iter().map(|l| l.max(0.0)).collect(),
    })
}

/// `(img - mean) * basis`, flattened row-major into `H * k` values.
pub fn project_w2dpca(model: &W2dpcaModel, img: &Matrix, modality: Modality) -> Result<FeatureVector> {
    let (h, w) = (model.mean_image.rows(), model.mean_image.cols());
    if img.rows() != h || img.cols() != w {
        return Err(Error::DimensionMismatch {
            expected: h * w,
            actual: img.rows() * img.cols(),
        });
    }
    let mut centered = Matrix::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            centered[(r, c)] = img[(r, c)] - model.mean_image[(r, c)];
        }
    }
    let features = centered.matmul(&model.basis)?;
    FeatureVector::new(modality, features.as_slice().to_vec())
}
