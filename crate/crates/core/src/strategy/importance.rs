//! Per-parameter importance estimates and the quadratic anchor penalty.
//!
//! Importances are stored per parameter matrix, row-major. After the head
//! grows, stored vectors cover a prefix of the head blocks, which is exactly
//! the set of entries that existed when they were computed.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tape, Var};
use crate::error::Result;
use crate::model::{BoundParams, GcnModel, GraphInputs};
use crate::rngs::{stream, Purpose};

/// Anchor parameters with their importance weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consolidation {
    pub anchor: Vec<Vec<f64>>,
    pub importance: Vec<Vec<f64>>,
}

impl Consolidation {
    pub fn new(model: &GcnModel, importance: Vec<Vec<f64>>) -> Self {
        Consolidation {
            anchor: model.params().iter().map(|p| p.data().to_vec()).collect(),
            importance,
        }
    }
}

/// `Σ_i w_i (θ_i − θ*_i)²` over every parameter matrix.
pub fn anchor_penalty(tape: &mut Tape<'_>, params: &BoundParams, c: &Consolidation) -> Result<Var> {
    let mut terms = Vec::with_capacity(params.vars.len());
    for ((&v, a), w) in params.vars.iter().zip(&c.anchor).zip(&c.importance) {
        terms.push(tape.weighted_sq_diff(v, a.clone(), w.clone())?);
    }
    tape.sum(&terms)
}

fn zeros_like(model: &GcnModel) -> Vec<Vec<f64>> {
    model.params().iter().map(|p| vec![0.0; p.len()]).collect()
}

fn per_example(
    model: &GcnModel,
    inputs: &GraphInputs<'_>,
    ids: &[usize],
    loss: impl Fn(&mut Tape<'_>, Var, usize) -> Result<Var>,
    fold: impl Fn(f64) -> f64,
) -> Result<Vec<Vec<f64>>> {
    let mut acc = zeros_like(model);
    if ids.is_empty() {
        return Ok(acc);
    }
    let mut no_rng = stream(0, Purpose::Importance, 0);
    for (k, &id) in ids.iter().enumerate() {
        let mut tape = Tape::new();
        let params = model.bind(&mut tape);
        let f = model.forward(&mut tape, &params, inputs, &[id], Mode::Eval, &mut no_rng)?;
        let l = loss(&mut tape, f.logits, k)?;
        let grads = tape.backward(l)?;
        for (a, &v) in acc.iter_mut().zip(&params.vars) {
            for (o, g) in a.iter_mut().zip(grads.wrt(v).data()) {
                *o += fold(*g);
            }
        }
    }
    let n = ids.len() as f64;
    for a in acc.iter_mut() {
        a.iter_mut().for_each(|v| *v /= n);
    }
    Ok(acc)
}

/// Diagonal empirical Fisher: mean over `ids` of `(∂CE_example/∂θ)²`.
pub fn fisher_diagonal(model: &GcnModel, inputs: &GraphInputs<'_>, ids: &[usize], labels: &[usize]) -> Result<Vec<Vec<f64>>> {
    per_example(
        model,
        inputs,
        ids,
        |tape, logits, k| tape.cross_entropy_rows(logits, vec![0], vec![labels[k]]),
        |g| g * g,
    )
}

/// Output sensitivity: mean over `ids` of `|∂‖f(x)‖²/∂θ|`. Labels are unused.
pub fn output_sensitivity(model: &GcnModel, inputs: &GraphInputs<'_>, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
    per_example(model, inputs, ids, |tape, logits, _| Ok(tape.sum_squares(logits)), f64::abs)
}

/// Topology importance `(∂‖Â H⁽ᴸ⁾‖²/∂θ)²` over the whole graph.
pub fn topology_importance(model: &GcnModel, inputs: &GraphInputs<'_>) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let x = tape.constant_ref(inputs.x);
    let mut no_rng = stream(0, Purpose::Importance, 0);
    let h = model.embed(&mut tape, &params, inputs.adj, x, Mode::Eval, &mut no_rng)?;
    let agg = tape.spmm(inputs.adj, h)?;
    let l = tape.sum_squares(agg);
    let grads = tape.backward(l)?;
    Ok(params.vars.iter().map(|&v| grads.wrt(v).data().iter().map(|g| g * g).collect()).collect())
}

/// Elementwise `a + s·b`, growing `a` with zeros where `b` is longer.
pub fn add_scaled(a: &mut [Vec<f64>], b: &[Vec<f64>], s: f64) {
    for (x, y) in a.iter_mut().zip(b) {
        if x.len() < y.len() {
            x.resize(y.len(), 0.0);
        }
        for (o, v) in x.iter_mut().zip(y) {
            *o += s * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, normalize_adjacency};
    use crate::model::{Architecture, TaskMode};
    use crate::tensor::Matrix;

    /// Single node, x = 1, one layer with W = [[1]] so h = 1; head logits
    /// `(θ, 0)`.
    fn scalar_model(theta: f64) -> GcnModel {
        let arch = Architecture {
            layer_count: 1,
            hidden_dim: 1,
            input_dim: 1,
            edge_feature_dim: 0,
            mode: TaskMode::NodeBinary,
            dropout: 0.0,
        };
        GcnModel::from_parts(
            arch,
            vec![Matrix::from_rows(&[vec![1.0]])],
            Matrix::from_rows(&[vec![theta], vec![0.0]]),
            Matrix::zeros(1, 2),
        )
        .unwrap()
    }

    fn with_inputs<T>(f: impl FnOnce(&GraphInputs<'_>) -> T) -> T {
        let adj = normalize_adjacency(&build_graph(&[], 1).unwrap()).unwrap();
        let x = Matrix::from_rows(&[vec![1.0]]);
        let inputs = GraphInputs {
            adj: &adj,
            x: &x,
            edges: &[],
            edge_features: None,
        };
        f(&inputs)
    }

    #[test]
    fn bernoulli_fisher_is_quarter() {
        let m = scalar_model(0.0);
        for label in [0, 1] {
            let f = with_inputs(|inp| fisher_diagonal(&m, inp, &[0], &[label]).unwrap());
            // p(1 − p) at p = 1/2
            assert!((f[1][0] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn mas_of_theta_squared() {
        let m = scalar_model(3.0);
        let o = with_inputs(|inp| output_sensitivity(&m, inp, &[0]).unwrap());
        assert!((o[1][0] - 6.0).abs() < 1e-12);
        // d(θ²w²)/dw at w = 1
        assert!((o[0][0] - 18.0).abs() < 1e-12);
        assert_eq!(o[1][1], 0.0);
    }

    #[test]
    fn dead_model_has_zero_sensitivity() {
        let m = scalar_model(0.0);
        let o = with_inputs(|inp| output_sensitivity(&m, inp, &[0]).unwrap());
        assert!(o.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn penalty_hand_value() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::from_rows(&[vec![2.0]]));
        let params = BoundParams { vars: vec![p] };
        let c = Consolidation {
            anchor: vec![vec![1.0]],
            importance: vec![vec![2.0]],
        };
        let pen = anchor_penalty(&mut tape, &params, &c).unwrap();
        // λ/2 · F · (θ − θ*)² with λ = 1
        assert_eq!(tape.value(pen).item() * 0.5, 1.0);
    }

    #[test]
    fn add_scaled_grows() {
        let mut a = vec![vec![1.0], vec![1.0, 1.0]];
        add_scaled(&mut a, &[vec![1.0], vec![1.0, 1.0, 2.0]], 2.0);
        assert_eq!(a, vec![vec![3.0], vec![3.0, 3.0, 4.0]]);
    }
}
