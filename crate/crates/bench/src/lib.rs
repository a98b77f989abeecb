//! Shared fixtures for the kernel benchmarks.

use amlcgl_core::graph::{build_graph, normalize_adjacency, NormalizedAdjacency};
use amlcgl_core::model::{Architecture, GcnModel, GraphInputs, TaskMode};
use amlcgl_core::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random transaction graph with node and edge features.
pub struct BenchGraph {
    pub edges: Vec<(usize, usize)>,
    pub adj: NormalizedAdjacency,
    pub x: Matrix,
    pub edge_features: Matrix,
}

impl BenchGraph {
    pub fn new(nodes: usize, edges: usize, node_dim: usize, edge_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let list: Vec<(usize, usize)> = (0..edges).map(|_| (rng.random_range(0..nodes), rng.random_range(0..nodes))).collect();
        let adj = normalize_adjacency(&build_graph(&list, nodes).expect("valid edges")).expect("non-empty graph");
        BenchGraph {
            x: random_matrix(nodes, node_dim, &mut rng),
            edge_features: random_matrix(edges, edge_dim, &mut rng),
            edges: list,
            adj,
        }
    }

    pub fn inputs(&self) -> GraphInputs<'_> {
        GraphInputs {
            adj: &self.adj,
            x: &self.x,
            edges: &self.edges,
            edge_features: Some(&self.edge_features),
        }
    }

    pub fn model(&self, mode: TaskMode, layers: usize, hidden: usize, classes: usize, seed: u64) -> GcnModel {
        let arch = Architecture {
            layer_count: layers,
            hidden_dim: hidden,
            input_dim: self.x.cols(),
            edge_feature_dim: if mode == TaskMode::EdgeMulticlass { self.edge_features.cols() } else { 0 },
            mode,
            dropout: 0.5,
        };
        GcnModel::init(arch, classes, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid architecture")
    }
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("matching length")
}

/// A gradient and `k` memory gradients of length `dim`.
pub fn gem_instance(dim: usize, k: usize, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mem = (0..k).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    (g, mem)
}
