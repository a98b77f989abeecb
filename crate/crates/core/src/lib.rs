//! Continual learning of graph neural networks for anti-money-laundering
//! data: GCN models, incremental task construction, consolidation and replay
//! strategies, and the experiment pipeline around them.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rngs;
pub mod strategy;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, RunRecord};
pub use graph::{build_graph, normalize_adjacency, FeatureMatrix, Graph, NormalizedAdjacency};
pub use metrics::{PerformanceMatrix, ScoredSet};
pub use model::{Architecture, GcnModel, TaskMode};
pub use strategy::{Learner, Method, StrategyConfig};
pub use tasks::{Ordering, TaskSequence};
pub use tensor::Matrix;
