//! Face and fingerprint feature extraction with feature-level fusion.
//!
//! The pipeline runs histogram equalization ([`enhance`]), Gabor filter bank
//! magnitudes ([`gabor`]), PCA reduction ([`reduce`]) and Mahalanobis / tanh /
//! average-rule fusion ([`fuse`]), with nearest-neighbour matching and an
//! evaluation harness in [`matching`] and [`eval`].

pub mod config;
mod container;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod feature;
pub mod fuse;
pub mod gabor;
pub mod imageio;
pub mod linalg;
pub mod matching;
pub mod pipeline;
pub mod reduce;

pub use container::FORMAT_VERSION;
pub use error::{Error, ErrorKind, Result};
pub use feature::{FeatureVector, Modality};
pub use imageio::GrayImage;
