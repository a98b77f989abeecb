//! Continual-learning strategies behind one trainer.
//!
//! Training is full batch: one Adam step per epoch over every training
//! example of the task. Strategy state is updated at the end of each task.

pub mod gem;
pub mod importance;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{BoundParams, GcnModel, GraphInputs};
use crate::optim::{AdamConfig, AdamState};
use crate::rngs::{stream, Purpose};
use crate::tasks::TaskSequence;
use crate::tensor::Matrix;

pub use gem::{gem_project, gem_sample_memory, Projection};
pub use importance::{anchor_penalty, fisher_diagonal, output_sensitivity, topology_importance, Consolidation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bare,
    Joint,
    Ewc,
    Lwf,
    Mas,
    Twp,
    Gem,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Bare,
        Method::Joint,
        Method::Ewc,
        Method::Lwf,
        Method::Mas,
        Method::Twp,
        Method::Gem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bare => "bare",
            Method::Joint => "joint",
            Method::Ewc => "ewc",
            Method::Lwf => "lwf",
            Method::Mas => "mas",
            Method::Twp => "twp",
            Method::Gem => "gem",
        }
    }

    /// Default regularization strength for the penalty methods.
    pub fn default_lambda(self) -> f64 {
        match self {
            Method::Mas => 1.0,
            _ => 10_000.0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

fn default_lwf_lambda() -> f64 {
    1.0
}
fn default_temperature() -> f64 {
    2.0
}
fn default_beta() -> f64 {
    0.01
}
fn default_memory() -> usize {
    100
}
fn default_epochs() -> usize {
    1
}
fn default_samples() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub method: Method,
    /// Penalty strength for ewc, mas and twp; the method default when absent.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_lwf_lambda")]
    pub lwf_lambda: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_beta")]
    pub twp_beta: f64,
    #[serde(default)]
    pub gem_margin: f64,
    #[serde(default = "default_memory")]
    pub gem_memory: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Examples drawn per task for per-example importance estimates; 0 uses
    /// every training example.
    #[serde(default = "default_samples")]
    pub importance_samples: usize,
    /// Upper bound on the accumulated joint training set.
    #[serde(default)]
    pub joint_capacity: Option<usize>,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl StrategyConfig {
    pub fn new(method: Method) -> Self {
        StrategyConfig {
            method,
            lambda: None,
            lwf_lambda: default_lwf_lambda(),
            temperature: default_temperature(),
            twp_beta: default_beta(),
            gem_margin: 0.0,
            gem_memory: default_memory(),
            epochs: default_epochs(),
            importance_samples: default_samples(),
            joint_capacity: None,
            adam: AdamConfig::default(),
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.method.default_lambda())
    }

    /// The same config with every defaulted value written out.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.lambda = Some(self.lambda());
        c
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [("lambda", self.lambda()), ("lwf_lambda", self.lwf_lambda), ("twp_beta", self.twp_beta), ("gem_margin", self.gem_margin)];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.gem_memory == 0 {
            return Err(Error::Config("gem_memory must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0 && (0.0..1.0).contains(&self.adam.beta1) && (0.0..1.0).contains(&self.adam.beta2) && self.adam.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {:?}", self.adam)));
        }
        Ok(())
    }
}

/// Auxiliary state carried across tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum StrategyState {
    Bare,
    Joint {
        seen: Vec<usize>,
    },
    /// One anchor per past task.
    Ewc {
        tasks: Vec<Consolidation>,
    },
    Lwf {
        old: Option<GcnModel>,
    },
    /// Accumulated importance with the latest anchor.
    Mas {
        total: Option<Consolidation>,
    },
    Twp {
        tasks: Vec<Consolidation>,
    },
    /// Replay memory per past task as `(example id, class)`.
    Gem {
        memories: Vec<Vec<(usize, usize)>>,
    },
}

impl StrategyState {
    pub fn empty(method: Method) -> Self {
        match method {
            Method::Bare => StrategyState::Bare,
            Method::Joint => StrategyState::Joint { seen: Vec::new() },
            Method::Ewc => StrategyState::Ewc { tasks: Vec::new() },
            Method::Lwf => StrategyState::Lwf { old: None },
            Method::Mas => StrategyState::Mas { total: None },
            Method::Twp => StrategyState::Twp { tasks: Vec::new() },
            Method::Gem => StrategyState::Gem { memories: Vec::new() },
        }
    }

    pub fn method(&self) -> Method {
        match self {
            StrategyState::Bare => Method::Bare,
            StrategyState::Joint { .. } => Method::Joint,
            StrategyState::Ewc { .. } => Method::Ewc,
            StrategyState::Lwf { .. } => Method::Lwf,
            StrategyState::Mas { .. } => Method::Mas,
            StrategyState::Twp { .. } => Method::Twp,
            StrategyState::Gem { .. } => Method::Gem,
        }
    }

    fn consolidations(&self) -> &[Consolidation] {
        match self {
            StrategyState::Ewc { tasks } | StrategyState::Twp { tasks } => tasks,
            StrategyState::Mas { total: Some(c) } => std::slice::from_ref(c),
            _ => &[],
        }
    }
}

/// Training statistics for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: usize,
    pub train_examples: usize,
    pub losses: Vec<f64>,
    pub gem_projections: usize,
    pub gem_fallbacks: usize,
}

/// Inputs every task of a run shares.
#[derive(Debug, Clone, Copy)]
pub struct TaskContext<'a> {
    pub inputs: GraphInputs<'a>,
    pub seq: &'a TaskSequence,
    pub seed: u64,
}

/// Training objective for `ids`: cross-entropy plus the strategy's penalty or
/// distillation term. Terms are kept even when their weight is zero.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss<'a, R: rand::Rng + ?Sized>(
    tape: &mut Tape<'a>,
    model: &GcnModel,
    params: &BoundParams,
    inputs: &GraphInputs<'a>,
    ids: &[usize],
    labels: &[usize],
    config: &StrategyConfig,
    state: &StrategyState,
    lwf_target: Option<&Matrix>,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let f = model.forward(tape, params, inputs, ids, mode, rng)?;
    let ce = tape.cross_entropy_rows(f.logits, (0..ids.len()).collect(), labels.to_vec())?;
    let mut terms = vec![ce];
    let anchors = state.consolidations();
    if !anchors.is_empty() {
        let mut pens = Vec::with_capacity(anchors.len());
        for c in anchors {
            pens.push(anchor_penalty(tape, params, c)?);
        }
        let total = tape.sum(&pens)?;
        terms.push(tape.scale(total, config.lambda() / 2.0));
    }
    if let (StrategyState::Lwf { old: Some(old) }, Some(target)) = (state, lwf_target) {
        let student = tape.leading_cols(f.logits, old.classes())?;
        let d = tape.distill(student, target.clone(), config.temperature)?;
        terms.push(tape.scale(d, config.lwf_lambda));
    }
    tape.sum(&terms)
}

/// Softened old-model probabilities used as distillation targets.
pub fn lwf_targets(old: &GcnModel, inputs: &GraphInputs<'_>, ids: &[usize], temperature: f64) -> Result<Matrix> {
    Ok(softmax(&old.logits(inputs, ids)?, temperature))
}

fn flatten(grads: &[Matrix]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.data().iter().copied()).collect()
}

fn memory_gradient(model: &GcnModel, inputs: &GraphInputs<'_>, memory: &[(usize, usize)]) -> Result<Vec<f64>> {
    let ids: Vec<usize> = memory.iter().map(|m| m.0).collect();
    let labels: Vec<usize> = memory.iter().map(|m| m.1).collect();
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let mut no_rng = stream(0, Purpose::Dropout, 0);
    let f = model.forward(&mut tape, &params, inputs, &ids, Mode::Eval, &mut no_rng)?;
    let ce = tape.cross_entropy_rows(f.logits, (0..ids.len()).collect(), labels)?;
    let mut grads = tape.backward(ce)?;
    Ok(flatten(&params.vars.iter().map(|&v| grads.take(v)).collect::<Vec<_>>()))
}

/// A model trained by one strategy across a task sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub config: StrategyConfig,
    pub model: GcnModel,
    pub optimizer: AdamState,
    pub state: StrategyState,
}

impl Learner {
    pub fn new(model: GcnModel, config: StrategyConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamState::new(config.adam, &model.params());
        let state = StrategyState::empty(config.method);
        Ok(Learner {
            config,
            model,
            optimizer,
            state,
        })
    }

    fn grow_head(&mut self, classes: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<()> {
        if classes <= self.model.classes() {
            return Ok(());
        }
        self.model.expand_classes(classes, rng)?;
        let (w, b) = self.model.head_param_indices();
        let params = self.model.params();
        let (wl, bl) = (params[w].len(), params[b].len());
        self.optimizer.grow(w, wl);
        self.optimizer.grow(b, bl);
        Ok(())
    }

    /// Trains on task `t` for the configured epochs, then updates the
    /// strategy state.
    pub fn train_task(&mut self, ctx: &TaskContext<'_>, t: usize) -> Result<TaskReport> {
        let task = ctx.seq.tasks.get(t).ok_or_else(|| Error::Config(format!("no task {t}")))?;
        if task.train.is_empty() {
            return Err(Error::Empty("task without training examples"));
        }
        self.grow_head(ctx.seq.classes_through(t), &mut stream(ctx.seed, Purpose::Init, t as u64 + 1))?;

        let ids: Vec<usize> = match &self.state {
            StrategyState::Joint { seen } => {
                let total = seen.len() + task.train.len();
                if let Some(cap) = self.config.joint_capacity {
                    if total > cap {
                        return Err(Error::Capacity(format!("joint training set of {total} examples exceeds capacity {cap}")));
                    }
                }
                seen.iter().chain(&task.train).copied().collect()
            }
            _ => task.train.clone(),
        };
        let labels = ctx.seq.labels_of(&ids);
        let lwf_target = match &self.state {
            StrategyState::Lwf { old: Some(old) } => Some(lwf_targets(old, &ctx.inputs, &ids, self.config.temperature)?),
            _ => None,
        };

        let mut report = TaskReport {
            task: t,
            train_examples: ids.len(),
            losses: Vec::with_capacity(self.config.epochs),
            gem_projections: 0,
            gem_fallbacks: 0,
        };
        let mut rng = stream(ctx.seed, Purpose::Dropout, t as u64);
        for epoch in 0..self.config.epochs {
            let mut tape = Tape::new();
            let params = self.model.bind(&mut tape);
            let loss = composite_loss(
                &mut tape,
                &self.model,
                &params,
                &ctx.inputs,
                &ids,
                &labels,
                &self.config,
                &self.state,
                lwf_target.as_ref(),
                Mode::Train,
                &mut rng,
            )?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence(format!("loss {value} at task {} epoch {}", t + 1, epoch + 1)));
            }
            report.losses.push(value);
            let mut grads = tape.backward(loss)?;
            let mut gs: Vec<Matrix> = params.vars.iter().map(|&v| grads.take(v)).collect();
            drop(tape);

            if let StrategyState::Gem { memories } = &self.state {
                if !memories.is_empty() {
                    let model = &self.model;
                    let inputs = &ctx.inputs;
                    let mem_grads: Vec<Vec<f64>> = memories
                        .par_iter()
                        .map(|m| memory_gradient(model, inputs, m))
                        .collect::<Result<_>>()?;
                    let p = gem_project(&flatten(&gs), &mem_grads, self.config.gem_margin)?;
                    if p.projected {
                        report.gem_projections += 1;
                    }
                    if p.fell_back {
                        report.gem_fallbacks += 1;
                    }
                    if p.projected && !p.fell_back {
                        let mut off = 0;
                        for g in gs.iter_mut() {
                            let n = g.len();
                            g.data_mut().copy_from_slice(&p.gradient[off..off + n]);
                            off += n;
                        }
                    }
                }
            }
            self.optimizer.step(&mut self.model.params_mut(), &gs)?;
        }
        self.end_task(ctx, t)?;
        Ok(report)
    }

    fn importance_ids(&self, ctx: &TaskContext<'_>, t: usize) -> Vec<usize> {
        let train = &ctx.seq.tasks[t].train;
        let s = self.config.importance_samples;
        if s == 0 || s >= train.len() {
            return train.clone();
        }
        let mut rng = stream(ctx.seed, Purpose::Importance, t as u64);
        let mut picks = rand::seq::index::sample(&mut rng, train.len(), s).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| train[i]).collect()
    }

    fn end_task(&mut self, ctx: &TaskContext<'_>, t: usize) -> Result<()> {
        let inputs = &ctx.inputs;
        match self.config.method {
            Method::Bare => {}
            Method::Joint => {
                if let StrategyState::Joint { seen } = &mut self.state {
                    seen.extend_from_slice(&ctx.seq.tasks[t].train);
                }
            }
            Method::Ewc => {
                let ids = self.importance_ids(ctx, t);
                let f = fisher_diagonal(&self.model, inputs, &ids, &ctx.seq.labels_of(&ids))?;
                let c = Consolidation::new(&self.model, f);
                if let StrategyState::Ewc { tasks } = &mut self.state {
                    tasks.push(c);
                }
            }
            Method::Twp => {
                let ids = self.importance_ids(ctx, t);
                let mut imp = fisher_diagonal(&self.model, inputs, &ids, &ctx.seq.labels_of(&ids))?;
                let topo = topology_importance(&self.model, inputs)?;
                importance::add_scaled(&mut imp, &topo, self.config.twp_beta);
                let c = Consolidation::new(&self.model, imp);
                if let StrategyState::Twp { tasks } = &mut self.state {
                    tasks.push(c);
                }
            }
            Method::Mas => {
                let ids = self.importance_ids(ctx, t);
                let omega = output_sensitivity(&self.model, inputs, &ids)?;
                let model = &self.model;
                if let StrategyState::Mas { total } = &mut self.state {
                    let mut acc = total.take().map(|c| c.importance).unwrap_or_default();
                    if acc.is_empty() {
                        acc = omega;
                    } else {
                        importance::add_scaled(&mut acc, &omega, 1.0);
                    }
                    *total = Some(Consolidation::new(model, acc));
                }
            }
            Method::Lwf => {
                if let StrategyState::Lwf { old } = &mut self.state {
                    *old = Some(self.model.clone());
                }
            }
            Method::Gem => {
                let train = &ctx.seq.tasks[t].train;
                let examples: Vec<(usize, usize)> = train.iter().map(|&i| (i, ctx.seq.label(i))).collect();
                let mem = gem_sample_memory(&examples, self.config.gem_memory, &mut stream(ctx.seed, Purpose::Memory, t as u64))?;
                if let StrategyState::Gem { memories } = &mut self.state {
                    memories.push(mem);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c: StrategyConfig = toml::from_str("method = \"ewc\"").unwrap();
        assert_eq!(c.lambda(), 10_000.0);
        assert_eq!(c.resolved().lambda, Some(10_000.0));
        assert_eq!(StrategyConfig::new(Method::Mas).lambda(), 1.0);
        assert_eq!(c.temperature, 2.0);
        assert_eq!(c.gem_memory, 100);
        assert!(c.clone().with_epochs(0).validate().is_err());
        let mut bad = c.clone();
        bad.temperature = 0.0;
        assert!(bad.validate().is_err());
        bad = c.clone();
        bad.lambda = Some(-1.0);
        assert!(bad.validate().is_err());
        assert!(toml::from_str::<StrategyConfig>("method = \"ewc\"\nlamda = 1.0").is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(StrategyState::empty(m).method(), m);
        }
    }
}
