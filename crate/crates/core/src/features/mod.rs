//! Tabular account features: raw tables with missing cells, dense numeric
//! tables, basic transforms, stability screening and denoising-autoencoder
//! latent features.

mod dae;
mod psi;
mod table;
mod transform;

pub use dae::{dae_encode, dae_train, DaeConfig, DaeGradient, DaeModel, DaeWeights};
pub use psi::{
    psi, psi_from_fractions, psi_report, PsiEntry, PsiReport, DEFAULT_PSI_BINS, DEFAULT_UNSTABLE_PSI, PSI_EPSILON,
};
pub use table::{Column, ColumnData, ColumnKind, DenseTable, EmbeddingMatrix, FeatureTable};
pub use transform::{
    equal_frequency_edges, fit_transform_basic, ColumnTransform, Discretization, FittedColumn, FittedTransform,
    Scaling, TransformConfig,
};
