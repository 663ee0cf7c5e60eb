//! Graph-based fraud detection: typed relationship graphs, label-aggregation
//! statistics, tabular feature transforms, DeepWalk embeddings, message-passing
//! node classifiers, an edge classifier, gradient-boosted trees, evaluation
//! metrics, a synthetic fraud-ring generator and an end-to-end pipeline.

pub mod deepwalk;
pub mod distrep;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod gnn;
pub mod graph;
pub mod graph_stats;
pub mod labels;
pub mod nn;
pub mod pipeline;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
pub use features::{DenseTable, EmbeddingMatrix, FeatureTable};
pub use graph::{ComponentMap, EdgeType, GraphKind, IsolationPolicy, NodeType, TypedGraph};
pub use labels::{Label, LabelTable};
