use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Fingerprint,
    Fused,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Fingerprint => "fingerprint",
            Modality::Fused => "fused",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Modality::Face => 0,
            Modality::Fingerprint => 1,
            Modality::Fused => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Face),
            1 => Some(Modality::Fingerprint),
            2 => Some(Modality::Fused),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(Modality::Face),
            "fingerprint" => Ok(Modality::Fingerprint),
            "fused" => Ok(Modality::Fused),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// Real-valued descriptor tagged with the modality it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    modality: Modality,
    values: Vec<f64>,
}

impl FeatureVector {
    /// Fails if any component is not finite.
    pub fn new(modality: Modality, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "feature component {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(FeatureVector { modality, values })
    }

    pub(crate) fn from_finite(modality: Modality, values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        FeatureVector { modality, values }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            });
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
