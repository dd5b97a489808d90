//! Feature-level fusion of reduced face and fingerprint vectors.
//!
//! Each modality is whitened with its own training statistics (the diagonal
//! Mahalanobis transform, exact in PCA coordinates), squashed into `(0, 1)`
//! with `0.5 * (tanh(c * x) + 1)`, and the two vectors are averaged
//! componentwise. The fused vector keeps the unimodal dimension.

use std::path::Path;

use crate::container::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::feature::{FeatureVector, Modality};

const MAGIC: &[u8; 4] = b"BFWS";

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-8;
pub const DEFAULT_TANH_C: f64 = 0.01;

/// Per-component mean and standard deviation of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningStats {
    modality: Modality,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl WhiteningStats {
    pub fn new(modality: Modality, mu: Vec<f64>, sigma: Vec<f64>, floor: f64) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                actual: sigma.len(),
            });
        }
        if floor.is_nan() || floor <= 0.0 {
            return Err(Error::Config(format!("sigma floor must be positive, got {floor}")));
        }
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("whitening statistics must be finite".into()));
        }
        let sigma = sigma.into_iter().map(|s| s.max(floor)).collect();
        Ok(WhiteningStats { modality, mu, sigma })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u8(self.modality.code())
            .u64(self.dim() as u64)
            .f64s(&self.mu)
            .f64s(&self.sigma);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, MAGIC, name)?;
        let code = r.u8()?;
        let modality = Modality::from_code(code).ok_or_else(|| r.err(format!("bad modality code {code}")))?;
        let k = r.len(16)?;
        let mu = r.f64s(k)?;
        let sigma = r.f64s(k)?;
        r.finish()?;
        if sigma.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Container {
                path: name.to_string(),
                reason: "non-positive sigma".into(),
            });
        }
        Ok(WhiteningStats { modality, mu, sigma })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

/// Componentwise mean and sample standard deviation (divisor `n - 1`),
/// with every deviation floored at `floor`.
pub fn fit_whitening(samples: &[FeatureVector], floor: f64) -> Result<WhiteningStats> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "whitening needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let first = &samples[0];
    for s in samples {
        s.check_dim(first.dim())?;
        if s.modality() != first.modality() {
            return Err(Error::ModalityMismatch {
                expected: first.modality().to_string(),
                actual: s.modality().to_string(),
            });
        }
    }
    let n = samples.len() as f64;
    let k = first.dim();
    let mut mu = vec![0.0; k];
    for s in samples {
        for (m, v) in mu.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; k];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.values()).zip(&mu) {
            *acc += (v - m) * (v - m);
        }
    }
    let sigma = var.into_iter().map(|v| (v / (n - 1.0)).sqrt()).collect();
    WhiteningStats::new(first.modality(), mu, sigma, floor)
}

/// `(v_i - mu_i) / sigma_i`.
pub fn whiten(v: &FeatureVector, stats: &WhiteningStats) -> Result<FeatureVector> {
    v.check_dim(stats.dim())?;
    let out = v
        .values()
        .iter()
        .zip(&stats.mu)
        .zip(&stats.sigma)
        .map(|((x, m), s)| (x - m) / s)
        .collect();
    FeatureVector::new(v.modality(), out)
}

/// `0.5 * (tanh(c * v_i) + 1)`, kept strictly inside `(0, 1)`.
pub fn tanh_normalize(v: &FeatureVector, c: f64) -> FeatureVector {
    let out = v.values().iter().map(|&x| squash(c * x)).collect();
    FeatureVector::from_finite(v.modality(), out)
}

fn squash(x: f64) -> f64 {
    // 0.5 * (tanh(x) + 1) == 1 / (1 + exp(-2x)); the logistic form keeps
    // precision for large negative x
    let y = 1.0 / (1.0 + (-2.0 * x).exp());
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Average sum rule: `(a_i + b_i) / 2`, tagged as fused.
pub fn fuse(face: &FeatureVector, fingerprint: &FeatureVector) -> Result<FeatureVector> {
    fingerprint.check_dim(face.dim()).map_err(|_| Error::DimensionMismatch {
        expected: face.dim(),
        actual: fingerprint.dim(),
    })?;
    for v in [face, fingerprint] {
        if v.modality() == Modality::Fused {
            return Err(Error::ModalityMismatch {
                expected: "a unimodal vector".into(),
                actual: "fused".into(),
            });
        }
    }
    let out = face
        .values()
        .iter()
        .zip(fingerprint.values())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(FeatureVector::from_finite(Modality::Fused, out))
}

/// Norm of the whitened vector.
pub fn mahalanobis_distance(v: &FeatureVector, stats: &WhiteningStats) -> Result<f64> {
    let w = whiten(v, stats)?;
    Ok(w.values().iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Fitted statistics for both modalities plus the tanh scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Fuser {
    pub face: WhiteningStats,
    pub fingerprint: WhiteningStats,
    pub tanh_c: f64,
}

impl Fuser {
    /// Whitens, normalizes and fuses a pair of PCA-projected vectors.
    pub fn fuse_projected(&self, face: &FeatureVector, fingerprint: &FeatureVector) -> Result<FeatureVector> {
        let f = tanh_normalize(&whiten(face, &self.face)?, self.tanh_c);
        let p = tanh_normalize(&whiten(fingerprint, &self.fingerprint)?, self.tanh_c);
        fuse(&f, &p)
    }
}
