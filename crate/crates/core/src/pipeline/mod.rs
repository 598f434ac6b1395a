//! End-to-end stages: graph building, embedding training, classifier
//! training and evaluation, embedding export and clustering.

pub mod cluster;
pub mod config;
pub mod model;
pub mod stages;
pub mod train;

pub use cluster::{cluster_similarity, ClusterResult, Merge};
pub use config::{Ablation, RunConfig};
pub use model::{Model, ModelSpec, PreparedPost};
pub use train::{evaluate, train_classifier, EpochStats, EvalReport};
