//! Heterogeneous anomaly distribution generation: clusters the labeled
//! normals and assembles support/query datasets that each expose a
//! different slice of normality and abnormality.

mod kmeans;
mod subsets;

pub use kmeans::{kmeans, sq_dist, sse, ClusterAssignment, KMeansConfig};
pub use subsets::{
    build_distributions, build_random_subsets, AnomalyMode, DistributionDataset, DistributionSet, HadgConfig,
    NormalSource, SubsetManifest, SubsetRecord,
};
