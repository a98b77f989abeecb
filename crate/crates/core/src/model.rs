//! GCN backbone with a node head or an edge head over
//! `concat(h_source, h_target, edge_features)`.
//!
//! Parameter order (used by flattening, checkpoints and optimizer slots):
//! GCN layer weights by layer index, then the head weight, then the head
//! bias, each row-major. The head weight is stored class-major (`classes ×
//! head_input`), so growing the class set appends rows and keeps every
//! existing entry at the same flat offset within the head block.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    NodeBinary,
    EdgeMulticlass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_count: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    /// Edge feature width; zero in node mode.
    pub edge_feature_dim: usize,
    pub mode: TaskMode,
    pub dropout: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.layer_count == 0 || self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config(format!(
                "layer_count, hidden_dim and input_dim must be positive (got {}, {}, {})",
                self.layer_count, self.hidden_dim, self.input_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_input_dim(&self) -> usize {
        match self.mode {
            TaskMode::NodeBinary => self.hidden_dim,
            TaskMode::EdgeMulticlass => 2 * self.hidden_dim + self.edge_feature_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelCheckpoint", try_from = "ModelCheckpoint")]
pub struct GcnModel {
    arch: Architecture,
    layers: Vec<Matrix>,
    head_w: Matrix,
    head_b: Matrix,
}

/// Model parameters registered on a tape, in canonical order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    fn layer(&self, l: usize) -> Var {
        self.vars[l]
    }
    fn head_w(&self) -> Var {
        self.vars[self.vars.len() - 2]
    }
    fn head_b(&self) -> Var {
        self.vars[self.vars.len() - 1]
    }
}

/// Static inputs shared by every forward pass over one graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphInputs<'a> {
    pub adj: &'a NormalizedAdjacency,
    pub x: &'a Matrix,
    pub edges: &'a [(usize, usize)],
    /// One row per edge; required in edge mode.
    pub edge_features: Option<&'a Matrix>,
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Final GCN layer activations, one row per node.
    pub embeddings: Var,
    pub logits: Var,
}

impl GcnModel {
    pub fn init<R: Rng + ?Sized>(arch: Architecture, classes: usize, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        if classes < 2 {
            return Err(Error::Config(format!("head needs at least 2 classes, got {classes}")));
        }
        let mut layers = Vec::with_capacity(arch.layer_count);
        let mut fan_in = arch.input_dim;
        for _ in 0..arch.layer_count {
            layers.push(Matrix::glorot(fan_in, arch.hidden_dim, fan_in, arch.hidden_dim, rng));
            fan_in = arch.hidden_dim;
        }
        let hin = arch.head_input_dim();
        let head_w = Matrix::glorot(classes, hin, hin, classes, rng);
        Ok(GcnModel {
            arch,
            layers,
            head_w,
            head_b: Matrix::zeros(1, classes),
        })
    }

    /// Builds a model from explicit parameters.
    pub fn from_parts(arch: Architecture, layers: Vec<Matrix>, head_w: Matrix, head_b: Matrix) -> Result<Self> {
        arch.validate()?;
        let m = GcnModel {
            arch,
            layers,
            head_w,
            head_b,
        };
        let expected = param_shapes(&arch, m.head_b.cols());
        let got: Vec<_> = m.params().iter().map(|p| p.shape()).collect();
        if expected != got {
            return Err(Error::shape("from_parts", format!("expected {expected:?}, got {got:?}")));
        }
        Ok(m)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.head_b.cols()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = self.layers.iter().collect();
        v.push(&self.head_w);
        v.push(&self.head_b);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = self.layers.iter_mut().collect();
        v.push(&mut self.head_w);
        v.push(&mut self.head_b);
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Index of the head weight and bias within [`GcnModel::params`].
    pub fn head_param_indices(&self) -> (usize, usize) {
        (self.layers.len(), self.layers.len() + 1)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.params() {
            out.extend_from_slice(p.data());
        }
        out
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<GcnModel> {
        if flat.len() != self.param_count() {
            return Err(Error::FlatLength {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut m = self.clone();
        let mut off = 0;
        for p in m.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(m)
    }

    /// Grows the head to `new_classes`. Existing rows are kept bitwise; new
    /// weight rows are Glorot-initialized, new bias entries are zero.
    pub fn expand_classes<R: Rng + ?Sized>(&mut self, new_classes: usize, rng: &mut R) -> Result<()> {
        let current = self.classes();
        if new_classes < current {
            return Err(Error::ShrinkHead {
                current,
                requested: new_classes,
            });
        }
        if new_classes == current {
            return Ok(());
        }
        let hin = self.arch.head_input_dim();
        let extra = Matrix::glorot(new_classes - current, hin, hin, new_classes, rng);
        let mut w = self.head_w.data().to_vec();
        w.extend_from_slice(extra.data());
        self.head_w = Matrix::from_vec(new_classes, hin, w)?;
        let mut b = self.head_b.data().to_vec();
        b.resize(new_classes, 0.0);
        self.head_b = Matrix::from_vec(1, new_classes, b)?;
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<'_>) -> BoundParams {
        BoundParams {
            vars: self.params().into_iter().map(|p| tape.param(p.clone())).collect(),
        }
    }

    /// Binds the parameters as constants (no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape<'_>) -> BoundParams {
        BoundParams {
            vars: self.params().into_iter().map(|p| tape.constant(p.clone())).collect(),
        }
    }

    /// `H⁽ˡ⁺¹⁾ = ReLU(Â H⁽ˡ⁾ W⁽ˡ⁾)` for every layer, with dropout after each
    /// activation in training mode.
    pub fn embed<'a, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'a>,
        params: &BoundParams,
        adj: &'a NormalizedAdjacency,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let xs = tape.value(x).shape();
        if xs != (adj.dim(), self.arch.input_dim) {
            return Err(Error::shape(
                "forward",
                format!("features {xs:?}, expected ({}, {})", adj.dim(), self.arch.input_dim),
            ));
        }
        let mut h = x;
        for l in 0..self.layers.len() {
            let agg = tape.spmm(adj, h)?;
            let lin = tape.matmul(agg, params.layer(l))?;
            let act = tape.relu(lin);
            h = tape.dropout(act, self.arch.dropout, mode, rng)?;
        }
        Ok(h)
    }

    pub fn forward_nodes<'a, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'a>,
        params: &BoundParams,
        adj: &'a NormalizedAdjacency,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        let h = self.embed(tape, params, adj, x, mode, rng)?;
        let z = tape.matmul_bt(h, params.head_w())?;
        let logits = tape.add_row(z, params.head_b())?;
        Ok(Forward {
            embeddings: h,
            logits,
        })
    }

    /// Logits for the edges `edge_ids` of `edges`, one row per requested id.
    /// `edge_features` holds one row per edge of the whole graph.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_edges<'a, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'a>,
        params: &BoundParams,
        adj: &'a NormalizedAdjacency,
        x: Var,
        edge_features: &Matrix,
        edges: &[(usize, usize)],
        edge_ids: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        if edge_features.cols() != self.arch.edge_feature_dim || edge_features.rows() != edges.len() {
            return Err(Error::shape(
                "forward_edges",
                format!(
                    "edge features {:?} for {} edges, expected width {}",
                    edge_features.shape(),
                    edges.len(),
                    self.arch.edge_feature_dim
                ),
            ));
        }
        if let Some(&bad) = edge_ids.iter().find(|&&e| e >= edges.len()) {
            return Err(Error::shape("forward_edges", format!("edge id {bad} of {}", edges.len())));
        }
        let h = self.embed(tape, params, adj, x, mode, rng)?;
        let src: Vec<usize> = edge_ids.iter().map(|&e| edges[e].0).collect();
        let dst: Vec<usize> = edge_ids.iter().map(|&e| edges[e].1).collect();
        let hs = tape.gather_rows(h, src)?;
        let hd = tape.gather_rows(h, dst)?;
        let ef = tape.constant(edge_features.gather_rows(edge_ids));
        let cat = tape.concat(&[hs, hd, ef])?;
        let z = tape.matmul_bt(cat, params.head_w())?;
        let logits = tape.add_row(z, params.head_b())?;
        Ok(Forward {
            embeddings: h,
            logits,
        })
    }

    /// Logits for the examples `ids` (nodes or edges, by architecture mode),
    /// one row per id.
    pub fn forward<'a, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'a>,
        params: &BoundParams,
        inputs: &GraphInputs<'a>,
        ids: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        let x = tape.constant_ref(inputs.x);
        match self.arch.mode {
            TaskMode::NodeBinary => {
                if let Some(&bad) = ids.iter().find(|&&i| i >= inputs.adj.dim()) {
                    return Err(Error::shape("forward", format!("node id {bad} of {}", inputs.adj.dim())));
                }
                let f = self.forward_nodes(tape, params, inputs.adj, x, mode, rng)?;
                let logits = tape.gather_rows(f.logits, ids.to_vec())?;
                Ok(Forward {
                    embeddings: f.embeddings,
                    logits,
                })
            }
            TaskMode::EdgeMulticlass => {
                let ef = inputs
                    .edge_features
                    .ok_or_else(|| Error::Config("edge mode needs edge features".into()))?;
                self.forward_edges(tape, params, inputs.adj, x, ef, inputs.edges, ids, mode, rng)
            }
        }
    }

    /// Eval-mode logits for `ids`.
    pub fn logits(&self, inputs: &GraphInputs<'_>, ids: &[usize]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        // eval mode draws nothing
        let mut no_rng = ChaCha8Rng::seed_from_u64(0);
        let f = self.forward(&mut tape, &params, inputs, ids, Mode::Eval, &mut no_rng)?;
        Ok(tape.value(f.logits).clone())
    }

    /// Eval-mode argmax class for `ids` over every head class.
    pub fn predict(&self, inputs: &GraphInputs<'_>, ids: &[usize]) -> Result<Vec<usize>> {
        Ok(self.logits(inputs, ids)?.argmax_rows())
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            architecture: self.arch,
            classes: self.classes(),
            params: self.flatten(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let shapes = param_shapes(&ck.architecture, ck.classes);
        let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if total != ck.params.len() {
            return Err(Error::FlatLength {
                expected: total,
                got: ck.params.len(),
            });
        }
        let mut mats = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for (r, c) in shapes {
            mats.push(Matrix::from_vec(r, c, ck.params[off..off + r * c].to_vec())?);
            off += r * c;
        }
        let head_b = mats.pop().expect("bias");
        let head_w = mats.pop().expect("head");
        GcnModel::from_parts(ck.architecture, mats, head_w, head_b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(&self.to_checkpoint())?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: ModelCheckpoint = serde_json::from_slice(&bytes)?;
        GcnModel::from_checkpoint(&ck)
    }
}

impl From<GcnModel> for ModelCheckpoint {
    fn from(m: GcnModel) -> Self {
        m.to_checkpoint()
    }
}

impl TryFrom<ModelCheckpoint> for GcnModel {
    type Error = Error;
    fn try_from(ck: ModelCheckpoint) -> Result<Self> {
        GcnModel::from_checkpoint(&ck)
    }
}

pub const CHECKPOINT_FORMAT: &str = "amlcgl-gcn";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: architecture plus the flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub classes: usize,
    pub params: Vec<f64>,
}

pub fn param_shapes(arch: &Architecture, classes: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(arch.layer_count + 2);
    let mut fan_in = arch.input_dim;
    for _ in 0..arch.layer_count {
        v.push((fan_in, arch.hidden_dim));
        fan_in = arch.hidden_dim;
    }
    v.push((classes, arch.head_input_dim()));
    v.push((1, classes));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{softmax, OpKind};
    use crate::graph::{build_graph, normalize_adjacency};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node_arch(layers: usize, hidden: usize, input: usize) -> Architecture {
        Architecture {
            layer_count: layers,
            hidden_dim: hidden,
            input_dim: input,
            edge_feature_dim: 0,
            mode: TaskMode::NodeBinary,
            dropout: 0.5,
        }
    }

    #[test]
    fn two_node_path_hand_case() {
        let adj = normalize_adjacency(&build_graph(&[(0, 1)], 2).unwrap()).unwrap();
        let arch = node_arch(1, 1, 1);
        let model = GcnModel::from_parts(
            arch,
            vec![Matrix::scalar(1.0)],
            Matrix::from_rows(&[vec![1.0], vec![0.0]]),
            Matrix::zeros(1, 2),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = Tape::new();
        let p = model.bind(&mut t);
        let x = t.constant(Matrix::from_rows(&[vec![1.0], vec![0.0]]));
        let f = model.forward_nodes(&mut t, &p, &adj, x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(t.value(f.embeddings), &Matrix::filled(2, 1, 0.5));
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let adj = normalize_adjacency(&build_graph(&[(0, 1), (1, 2)], 3).unwrap()).unwrap();
        let arch = node_arch(2, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = GcnModel::init(arch, 2, &mut rng).unwrap();
        let model = model.unflatten(&vec![0.0; model.param_count()]).unwrap();
        let mut t = Tape::new();
        let p = model.bind(&mut t);
        let x = t.constant(Matrix::filled(3, 3, 1.0));
        let f = model.forward_nodes(&mut t, &p, &adj, x, Mode::Eval, &mut rng).unwrap();
        assert!(t.value(f.logits).data().iter().all(|&v| v == 0.0));
        let s = softmax(t.value(f.logits), 1.0);
        assert!(s.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn flatten_length_and_round_trip() {
        // one layer 2×3, head 2 classes × 3, bias 2
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = GcnModel::init(node_arch(1, 3, 2), 2, &mut rng).unwrap();
        assert_eq!(m.flatten().len(), 6 + 6 + 2);
        assert_eq!(m.unflatten(&m.flatten()).unwrap(), m);
        assert!(matches!(m.unflatten(&[0.0; 3]), Err(Error::FlatLength { .. })));
        let m2 = GcnModel::init(node_arch(1, 3, 2), 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(m.flatten(), m2.flatten());
    }

    #[test]
    fn expand_preserves_rows_and_old_logits() {
        let arch = Architecture {
            layer_count: 1,
            hidden_dim: 4,
            input_dim: 2,
            edge_feature_dim: 1,
            mode: TaskMode::EdgeMulticlass,
            dropout: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = build_graph(&[(0, 1), (1, 2), (2, 0)], 3).unwrap();
        let adj = normalize_adjacency(&g).unwrap();
        let xf = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        let ef = Matrix::from_rows(&[vec![0.1], vec![0.2], vec![0.3]]);
        let logits = |m: &GcnModel| {
            let mut t = Tape::new();
            let p = m.bind(&mut t);
            let x = t.constant(xf.clone());
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let f = m
                .forward_edges(&mut t, &p, &adj, x, &ef, g.edges(), &[0, 1, 2], Mode::Eval, &mut r)
                .unwrap();
            t.value(f.logits).clone()
        };
        let m2 = GcnModel::init(arch, 2, &mut rng).unwrap();
        let before = logits(&m2);
        let mut m3 = m2.clone();
        m3.expand_classes(3, &mut rng).unwrap();
        let after = logits(&m3);
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(before.get(r, c).to_bits(), after.get(r, c).to_bits());
            }
        }
        // renormalized softmax over the old classes equals the old softmax
        let old = softmax(&before, 1.0);
        let renorm = softmax(&after.leading_cols(2), 1.0);
        assert!(old.max_abs_diff(&renorm) < 1e-15);

        let flat2 = m2.flatten();
        let flat3 = m3.flatten();
        assert_eq!(&flat2[..4 * 2 + 2 * 9], &flat3[..4 * 2 + 2 * 9]);

        let mut twice = m2.clone();
        twice.expand_classes(3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        twice.expand_classes(4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut once = m2.clone();
        once.expand_classes(4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(&twice.head_w.data()[..18], &once.head_w.data()[..18]);
        assert!(matches!(once.expand_classes(2, &mut rng), Err(Error::ShrinkHead { .. })));
    }

    #[test]
    fn one_layer_uses_one_aggregation() {
        let adj = normalize_adjacency(&build_graph(&[(0, 1)], 2).unwrap()).unwrap();
        for layers in 1..=3 {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let m = GcnModel::init(node_arch(layers, 4, 2), 2, &mut rng).unwrap();
            let mut t = Tape::new();
            let p = m.bind(&mut t);
            let x = t.constant(Matrix::filled(2, 2, 1.0));
            m.forward_nodes(&mut t, &p, &adj, x, Mode::Train, &mut rng).unwrap();
            assert_eq!(t.count(OpKind::Spmm), layers);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let adj = normalize_adjacency(&build_graph(&[(0, 1)], 2).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = GcnModel::init(node_arch(1, 4, 3), 2, &mut rng).unwrap();
        let mut t = Tape::new();
        let p = m.bind(&mut t);
        let x = t.constant(Matrix::filled(2, 2, 1.0));
        assert!(m.forward_nodes(&mut t, &p, &adj, x, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = GcnModel::init(node_arch(2, 5, 3), 2, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = GcnModel::load(&path).unwrap();
        let a: Vec<u64> = m.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.arch(), m.arch());
    }
}
