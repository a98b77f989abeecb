//! Independent reference implementations used by the integration and
//! acceptance tests.
#![allow(dead_code)]

use amlcgl_core::autodiff::{Mode, Tape};
use amlcgl_core::graph::{build_graph, normalize_adjacency, NormalizedAdjacency};
use amlcgl_core::model::{Architecture, GcnModel, GraphInputs, TaskMode};
use amlcgl_core::strategy::{composite_loss, StrategyConfig, StrategyState};
use amlcgl_core::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Directed edges with possible self-loops and repeats.
pub fn random_edges(n: usize, m: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    (0..m).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect()
}

/// A small random graph with features and a random model on top.
pub struct Fixture {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub adj: NormalizedAdjacency,
    pub x: Matrix,
    pub edge_features: Matrix,
}

impl Fixture {
    pub fn new(n: usize, m: usize, input_dim: usize, edge_dim: usize, rng: &mut impl Rng) -> Self {
        let edges = random_edges(n, m, rng);
        let adj = normalize_adjacency(&build_graph(&edges, n).unwrap()).unwrap();
        Fixture {
            n,
            x: random_matrix(n, input_dim, rng),
            edge_features: random_matrix(edges.len(), edge_dim, rng),
            edges,
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
}

pub fn arch(mode: TaskMode, layers: usize, hidden: usize, input_dim: usize, edge_dim: usize, dropout: f64) -> Architecture {
    Architecture {
        layer_count: layers,
        hidden_dim: hidden,
        input_dim,
        edge_feature_dim: if mode == TaskMode::EdgeMulticlass { edge_dim } else { 0 },
        mode,
        dropout,
    }
}

/// `D^{-1/2}(A + I)D^{-1/2}` built densely from the raw edge list, with `A`
/// the binary symmetric adjacency without self-loops.
pub fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for &(s, t) in edges {
        if s != t {
            a[s][t] = 1.0;
            a[t][s] = 1.0;
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum::<f64>()).collect();
    (0..n).map(|i| (0..n).map(|j| a[i][j] / (d[i] * d[j]).sqrt()).collect()).collect()
}

fn dense_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = if inner == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|r| (0..cols).map(|c| (0..inner).map(|k| r[k] * b[k][c]).sum()).collect())
        .collect()
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Eval-mode logits computed with dense loops only.
pub fn dense_logits(model: &GcnModel, f: &Fixture, ids: &[usize]) -> Vec<Vec<f64>> {
    let a = dense_adjacency(f.n, &f.edges);
    let params = model.params();
    let layers = model.arch().layer_count;
    let mut h = rows_of(&f.x);
    for w in params.iter().take(layers) {
        h = dense_mul(&dense_mul(&a, &h), &rows_of(w))
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
    }
    let head_w = rows_of(params[layers]);
    let head_b = params[layers + 1].row(0).to_vec();
    ids.iter()
        .map(|&id| {
            let input: Vec<f64> = match model.arch().mode {
                TaskMode::NodeBinary => h[id].clone(),
                TaskMode::EdgeMulticlass => {
                    let (s, t) = f.edges[id];
                    h[s].iter().chain(&h[t]).chain(f.edge_features.row(id)).copied().collect()
                }
            };
            head_w
                .iter()
                .zip(&head_b)
                .map(|(w, b)| w.iter().zip(&input).map(|(x, y)| x * y).sum::<f64>() + b)
                .collect()
        })
        .collect()
}

/// Value and flattened gradient of the composite loss at `model`.
pub fn loss_and_grad(
    model: &GcnModel,
    f: &Fixture,
    ids: &[usize],
    labels: &[usize],
    config: &StrategyConfig,
    state: &StrategyState,
    lwf_target: Option<&Matrix>,
) -> (f64, Vec<f64>) {
    let inputs = f.inputs();
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let mut r = rng(0);
    let loss = composite_loss(&mut tape, model, &params, &inputs, ids, labels, config, state, lwf_target, Mode::Train, &mut r).unwrap();
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).unwrap();
    let flat = params.vars.iter().flat_map(|&v| grads.wrt(v).data().to_vec()).collect();
    (value, flat)
}

/// Central differences of the composite loss over every parameter.
#[allow(clippy::too_many_arguments)]
pub fn numeric_grad(
    model: &GcnModel,
    f: &Fixture,
    ids: &[usize],
    labels: &[usize],
    config: &StrategyConfig,
    state: &StrategyState,
    lwf_target: Option<&Matrix>,
    h: f64,
) -> Vec<f64> {
    let theta = model.flatten();
    (0..theta.len())
        .map(|i| {
            let mut p = theta.clone();
            p[i] = theta[i] + h;
            let up = loss_and_grad(&model.unflatten(&p).unwrap(), f, ids, labels, config, state, lwf_target).0;
            p[i] = theta[i] - h;
            let down = loss_and_grad(&model.unflatten(&p).unwrap(), f, ids, labels, config, state, lwf_target).0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting; `None`
/// when `A` is numerically singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    Some(x)
}

/// Euclidean projection of `g` onto `{x : ⟨x, g_k⟩ ≥ margin}` by trying
/// every active set and keeping the closest feasible KKT point. `None` when
/// no active set yields a feasible point.
pub fn projection_oracle(g: &[f64], memory: &[Vec<f64>], margin: f64) -> Option<Vec<f64>> {
    let k = memory.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let set: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let x = if set.is_empty() {
            g.to_vec()
        } else {
            // x = g + Σ_S v_s g_s with ⟨x, g_s⟩ = margin on S
            let a: Vec<Vec<f64>> = set.iter().map(|&i| set.iter().map(|&j| dot(&memory[i], &memory[j])).collect()).collect();
            let b: Vec<f64> = set.iter().map(|&i| margin - dot(&memory[i], g)).collect();
            let Some(v) = solve(a, b) else { continue };
            if v.iter().any(|&vi| vi < -1e-12) {
                continue;
            }
            let mut x = g.to_vec();
            for (vi, &i) in v.iter().zip(&set) {
                for (xj, mj) in x.iter_mut().zip(&memory[i]) {
                    *xj += vi * mj;
                }
            }
            x
        };
        if memory.iter().all(|m| dot(&x, m) >= margin - 1e-9) {
            let d: f64 = x.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
    }
    best.map(|(_, x)| x)
}

/// `(Σ_i M[i][k-1]) / k` and `(Σ_{i<k-1} M[i][i] − M[i][k-1]) / (k − 1)`,
/// written with explicit loops over a dense matrix.
pub fn ap_af_oracle(m: &[Vec<f64>]) -> (f64, Option<f64>) {
    let k = m.len();
    let mut ap = 0.0;
    for row in m {
        ap += row[k - 1];
    }
    ap /= k as f64;
    if k == 1 {
        return (ap, None);
    }
    let mut af = 0.0;
    for (i, row) in m.iter().enumerate().take(k - 1) {
        af += row[i] - row[k - 1];
    }
    (ap, Some(af / (k - 1) as f64))
}
