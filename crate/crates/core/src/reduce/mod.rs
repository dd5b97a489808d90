//! Dimensionality reduction: PCA over feature vectors and weighted 2DPCA
//! over image matrices.

mod pca;
mod w2dpca;

pub use pca::{fit_pca, project, PcaMethod, PcaModel, PcaTarget};
pub use w2dpca::{fit_w2dpca, project_w2dpca, weighted_scatter, W2dpcaModel};
