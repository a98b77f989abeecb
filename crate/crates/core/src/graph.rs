//! Transaction graph storage and the self-loop-augmented symmetric
//! normalization `D̃^{-1/2} (A + I) D̃^{-1/2}` used by every GCN layer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Immutable node/edge store. Parallel edges are kept; edge ids are the
/// positions in [`Graph::edges`].
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    directed: bool,
}

impl Graph {
    pub fn new(edges: Vec<(usize, usize)>, node_count: usize, directed: bool) -> Result<Self> {
        for (index, &(s, t)) in edges.iter().enumerate() {
            for node in [s, t] {
                if node >= node_count {
                    return Err(Error::EdgeOutOfRange {
                        index,
                        node,
                        node_count,
                    });
                }
            }
        }
        Ok(Graph {
            node_count,
            edges,
            directed,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> (usize, usize) {
        self.edges[id]
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn in_out_degrees(&self) -> (Vec<usize>, Vec<usize>) {
        let mut ind = vec![0; self.node_count];
        let mut outd = vec![0; self.node_count];
        for &(s, t) in &self.edges {
            outd[s] += 1;
            ind[t] += 1;
        }
        (ind, outd)
    }

    /// Applies a node relabeling `perm[old] = new` to every edge.
    pub fn relabel(&self, perm: &[usize]) -> Result<Graph> {
        let edges = self.edges.iter().map(|&(s, t)| (perm[s], perm[t])).collect();
        Graph::new(edges, self.node_count, self.directed)
    }
}

/// Builds a directed transaction multigraph with dense edge ids in input order.
pub fn build_graph(edges: &[(usize, usize)], node_count: usize) -> Result<Graph> {
    Graph::new(edges.to_vec(), node_count, true)
}

/// Row-major feature storage, one row per node or edge.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Matrix);

impl FeatureMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::Divergence("feature matrix holds non-finite values".into()));
        }
        Ok(FeatureMatrix(values))
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }
}

/// Symmetric normalized adjacency with self-loops in CSR layout.
///
/// Column indices within a row are sorted ascending, which fixes the
/// accumulation order of [`NormalizedAdjacency::spmm`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m.set(i, j, v);
            }
        }
        m
    }

    /// Exact sparse-dense product `Â · dense`.
    pub fn spmm(&self, dense: &Matrix) -> Result<Matrix> {
        if dense.rows() != self.n {
            return Err(Error::shape(
                "spmm",
                format!("adjacency {}x{} times {:?}", self.n, self.n, dense.shape()),
            ));
        }
        let d = dense.cols();
        let mut out = Matrix::zeros(self.n, d);
        if d == 0 {
            return Ok(out);
        }
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            for (j, v) in self.row(i) {
                for (o, &x) in out_row.iter_mut().zip(dense.row(j)) {
                    *o += v * x;
                }
            }
        };
        if self.n >= 2048 {
            out.data_mut().par_chunks_mut(d).enumerate().for_each(kernel);
        } else {
            out.data_mut().chunks_mut(d).enumerate().for_each(kernel);
        }
        Ok(out)
    }
}

/// Collapses the graph to simple undirected structure, adds self-loops and
/// applies symmetric degree normalization.
pub fn normalize_adjacency(g: &Graph) -> Result<NormalizedAdjacency> {
    let n = g.node_count();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut nbrs: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(s, t) in g.edges() {
        if s != t {
            nbrs[s].push(t);
            nbrs[t].push(s);
        }
    }
    for list in &mut nbrs {
        list.sort_unstable();
        list.dedup();
    }
    let deg: Vec<f64> = nbrs.iter().map(|l| l.len() as f64).collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let nnz = nbrs.iter().map(Vec::len).sum();
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    for (i, list) in nbrs.iter().enumerate() {
        for &j in list {
            col_idx.push(j);
            values.push(1.0 / (deg[i] * deg[j]).sqrt());
        }
        row_ptr.push(col_idx.len());
    }
    Ok(NormalizedAdjacency {
        n,
        row_ptr,
        col_idx,
        values,
    })
}
