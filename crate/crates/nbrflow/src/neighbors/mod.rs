//! Neighborhood construction and storage: PCA projection, exact kNN search,
//! clustering with prototypes, and the frozen neighborhood table.

mod kmeans;
mod knn;
mod pca;
mod table;

pub use kmeans::{kmeans, KmeansResult};
pub use knn::{knn_query, knn_query_point};
pub use pca::{fit_pca, PcaProjection};
pub use table::{
    build_table, cluster_neighborhoods, sample_neighborhood, Neighborhood, NeighborhoodSource,
    NeighborhoodTable, TableMode,
};

/// Default PCA variance threshold for neighbor search.
pub const DEFAULT_PCA_VARIANCE: f64 = 0.99;
/// Default neighborhood size.
pub const DEFAULT_K: usize = 5;
