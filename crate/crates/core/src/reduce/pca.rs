use std::path::Path;

use crate::container::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::feature::{FeatureVector, Modality};
use crate::linalg::{canonical_sign, dot, symmetric_eigen, Matrix};

const MAGIC: &[u8; 4] = b"BFPC";

/// Eigenvalues below this fraction of the largest one count as zero.
const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcaTarget {
    /// Keep exactly this many components.
    Components(usize),
    /// Keep the fewest components whose eigenvalues reach this fraction of the total.
    VarianceFraction(f64),
}

/// How the covariance eigenproblem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaMethod {
    /// Snapshot when samples are fewer than dimensions, direct otherwise.
    #[default]
    Auto,
    /// Eigendecomposition of the n x n Gram matrix.
    Snapshot,
    /// Eigendecomposition of the d x d covariance matrix.
    Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// d x k, orthonormal columns.
    basis: Matrix,
    eigenvalues: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn explained_fraction(&self) -> f64 {
        if self.total_variance == 0.0 {
            return 0.0;
        }
        (self.eigenvalues.iter().sum::<f64>() / self.total_variance).min(1.0)
    }

    /// Same model restricted to its leading `k` components.
    pub fn truncate(&self, k: usize) -> Result<PcaModel> {
        if k == 0 || k > self.components() {
            return Err(Error::Config(format!(
                "cannot truncate a {}-component model to {k}",
                self.components()
            )));
        }
        Ok(PcaModel {
            mean: self.mean.clone(),
            basis: self.basis.leading_columns(k),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            total_variance: self.total_variance,
        })
    }

    /// `mean + basis * coords`.
    pub fn reconstruct(&self, coords: &[f64]) -> Result<Vec<f64>> {
        if coords.len() != self.components() {
            return Err(Error::DimensionMismatch {
                expected: self.components(),
                actual: coords.len(),
            });
        }
        Ok((0..self.dim())
            .map(|r| self.mean[r] + dot(self.basis.row(r), coords))
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u64(self.dim() as u64)
            .u64(self.components() as u64)
            .f64s(&self.mean)
            .f64s(self.basis.as_slice())
            .f64s(&self.eigenvalues)
            .f64(self.total_variance);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, MAGIC, name)?;
        let d = r.len(8)?;
        let k = r.len(8)?;
        let mean = r.f64s(d)?;
        let basis = Matrix::from_row_major(d, k, r.f64s(d * k)?)?;
        let eigenvalues = r.f64s(k)?;
        let total_variance = r.f64()?;
        r.finish()?;
        Ok(PcaModel {
            mean,
            basis,
            eigenvalues,
            total_variance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

fn check_samples(samples: &[FeatureVector]) -> Result<(usize, Modality)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no samples".into()))?;
    for s in samples {
        s.check_dim(first.dim())?;
        if s.modality() != first.modality() {
            return Err(Error::ModalityMismatch {
                expected: first.modality().to_string(),
                actual: s.modality().to_string(),
            });
        }
    }
    Ok((first.dim(), first.modality()))
}

/// Fits PCA with the sample covariance (divisor `n - 1`).
///
/// Eigenvectors are normalized to a positive largest-magnitude entry, so the
/// fitted model depends only on the samples and the method.
pub fn fit_pca(samples: &[FeatureVector], target: PcaTarget, method: PcaMethod) -> Result<PcaModel> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    let (d, _) = check_samples(samples)?;
    if let PcaTarget::VarianceFraction(f) = target {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("variance fraction {f} outside (0, 1]")));
        }
    }

    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.values().iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let denom = (n - 1) as f64;
    let total_variance = centered.iter().map(|c| dot(c, c)).sum::<f64>() / denom;
    if total_variance == 0.0 {
        return Err(Error::Degenerate("all samples identical: covariance has rank 0".into()));
    }

    let use_snapshot = match method {
        PcaMethod::Auto => n < d,
        PcaMethod::Snapshot => true,
        PcaMethod::Covariance => false,
    };
    let (eigenvalues, columns) = if use_snapshot {
        snapshot_eigen(&centered, denom)?
    } else {
        covariance_eigen(&centered, d, denom)?
    };

    let k = select_components(&eigenvalues, target, d.min(n - 1))?;
    let mut basis = Matrix::zeros(d, k);
    for (j, col) in columns.iter().take(k).enumerate() {
        for (r, &x) in col.iter().enumerate() {
            basis[(r, j)] = x;
        }
    }
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues: eigenvalues[..k].to_vec(),
        total_variance,
    })
}

/// Number of eigenvalues above the rank tolerance, capped at `limit`.
fn numerical_rank(eigenvalues: &[f64], limit: usize) -> usize {
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    eigenvalues
        .iter()
        .take_while(|&&l| l > RANK_TOLERANCE * top)
        .count()
        .min(limit)
}

fn select_components(eigenvalues: &[f64], target: PcaTarget, limit: usize) -> Result<usize> {
    let rank = numerical_rank(eigenvalues, limit);
    if rank == 0 {
        return Err(Error::Degenerate("covariance has rank 0".into()));
    }
    match target {
        PcaTarget::Components(k) if k == 0 || k > rank => Err(Error::Config(format!(
            "requested {k} components but the training covariance has rank {rank}"
        ))),
        PcaTarget::Components(k) => Ok(k),
        PcaTarget::VarianceFraction(f) => {
            let total: f64 = eigenvalues.iter().sum();
            let goal = f * total - 1e-12 * total;
            let mut acc = 0.0;
            for (i, &l) in eigenvalues.iter().enumerate().take(rank) {
                acc += l;
                if acc >= goal {
                    return Ok(i + 1);
                }
            }
            Ok(rank)
        }
    }
}

fn clamp_nonneg(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().map(|l| l.max(0.0)).collect()
}

fn covariance_eigen(centered: &[Vec<f64>], d: usize, denom: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut cov = Matrix::zeros(d, d);
    for c in centered {
        for i in 0..d {
            if c[i] == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = symmetric_eigen(&cov)?;
    let columns = (0..d).map(|j| eig.vectors.column(j)).collect();
    Ok((clamp_nonneg(eig.values), columns))
}

fn snapshot_eigen(centered: &[Vec<f64>], denom: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = centered.len();
    let mut gram = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(&centered[i], &centered[j]) / denom;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = symmetric_eigen(&gram)?;
    let values = clamp_nonneg(eig.values);
    let rank = numerical_rank(&values, n);
    let d = centered[0].len();
    // X^T u / sqrt((n-1) lambda) is a unit eigenvector of the covariance
    let columns = (0..rank)
        .map(|j| {
            let u = eig.vectors.column(j);
            let scale = 1.0 / (denom * values[j]).sqrt();
            let mut col = vec![0.0; d];
            for (row, &ui) in centered.iter().zip(&u) {
                for (c, &x) in col.iter_mut().zip(row) {
                    *c += ui * x;
                }
            }
            col.iter_mut().for_each(|c| *c *= scale);
            canonical_sign(&mut col);
            col
        })
        .collect();
    Ok((values, columns))
}

/// `basis^T (v - mean)`, keeping the modality tag.
pub fn project(model: &PcaModel, v: &FeatureVector) -> Result<FeatureVector> {
    v.check_dim(model.dim())?;
    let k = model.components();
    let mut out = vec![0.0; k];
    for (r, (&x, &m)) in v.values().iter().zip(&model.mean).enumerate() {
        let c = x - m;
        if c == 0.0 {
            continue;
        }
        for (o, &b) in out.iter_mut().zip(model.basis.row(r)) {
            *o += c * b;
        }
    }
    Ok(FeatureVector::from_finite(v.modality(), out))
}
