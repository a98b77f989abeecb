//! Task sequences over a static graph.
//!
//! IBM edges form a class-incremental sequence: class 0 is legitimate and the
//! pattern introduced by task `t` (0-based) is class `t + 1`. Elliptic nodes
//! form a domain-incremental sequence over time steps with the fixed classes
//! licit (0) and illicit (1).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::elliptic::TIME_STEPS;
use crate::data::{EdgeLabel, EllipticDataset, IbmDataset, Pattern};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleKind {
    Node,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    #[default]
    EasyToHard,
    HardToEasy,
    FrequentToRare,
    RareToFrequent,
    FixedRandom,
}

impl Ordering {
    pub const ALL: [Ordering; 5] = [
        Ordering::EasyToHard,
        Ordering::HardToEasy,
        Ordering::FrequentToRare,
        Ordering::RareToFrequent,
        Ordering::FixedRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ordering::EasyToHard => "easy-to-hard",
            Ordering::HardToEasy => "hard-to-easy",
            Ordering::FrequentToRare => "frequent-to-rare",
            Ordering::RareToFrequent => "rare-to-frequent",
            Ordering::FixedRandom => "fixed-random",
        }
    }

    pub fn permutation(self) -> [Pattern; 8] {
        use Pattern::*;
        const EASY: [Pattern; 8] = [FanIn, FanOut, Bipartite, GatherScatter, ScatterGather, Stack, Cycle, Random];
        const FREQUENT: [Pattern; 8] = [GatherScatter, ScatterGather, Stack, FanOut, FanIn, Cycle, Bipartite, Random];
        let mut p = match self {
            Ordering::EasyToHard | Ordering::HardToEasy => EASY,
            Ordering::FrequentToRare | Ordering::RareToFrequent => FREQUENT,
            Ordering::FixedRandom => [FanOut, FanIn, GatherScatter, ScatterGather, Cycle, Random, Bipartite, Stack],
        };
        if matches!(self, Ordering::HardToEasy | Ordering::RareToFrequent) {
            p.reverse();
        }
        p
    }
}

impl std::fmt::Display for Ordering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Ordering {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ordering::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ordering '{s}'")))
    }
}

/// Where legitimate IBM edges go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePlacement {
    /// All legitimate edges belong to the first task; later tasks hold only
    /// their new pattern.
    #[default]
    FirstTask,
    /// Legitimate edges are partitioned uniformly at random over all tasks.
    AllTasks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub train_fraction: f64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy { train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct IbmScheduleOptions {
    pub ordering: Ordering,
    /// Restricts the sequence to these patterns, kept in ordering order.
    pub patterns: Option<Vec<Pattern>>,
    pub negatives: NegativePlacement,
    /// Uniform subsample of legitimate edges before placement.
    pub max_negatives: Option<usize>,
    pub split: SplitPolicy,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub index: usize,
    /// Classes visible once this task is learned.
    pub classes: Vec<usize>,
    /// Classes first seen in this task.
    pub new_classes: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub kind: ExampleKind,
    pub class_names: Vec<String>,
    /// Class per example id; `None` for examples outside every task.
    pub labels: Vec<Option<usize>>,
    pub tasks: Vec<TaskSpec>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Number of classes visible after task `j`.
    pub fn classes_through(&self, j: usize) -> usize {
        self.tasks[..=j].iter().flat_map(|t| t.classes.iter()).max().map_or(0, |m| m + 1)
    }

    /// Final class count.
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn label(&self, id: usize) -> usize {
        self.labels[id].expect("example carries a label")
    }

    pub fn labels_of(&self, ids: &[usize]) -> Vec<usize> {
        ids.iter().map(|&i| self.label(i)).collect()
    }

    /// Training examples of tasks `0..=j`.
    pub fn train_union(&self, j: usize) -> Vec<usize> {
        self.tasks[..=j].iter().flat_map(|t| t.train.iter().copied()).collect()
    }

    /// Test examples of every task.
    pub fn pooled_test(&self) -> Vec<usize> {
        self.tasks.iter().flat_map(|t| t.test.iter().copied()).collect()
    }

    /// Human-readable listing of every task.
    pub fn manifest(&self, seed: u64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} tasks over {:?} examples, seed {seed}", self.len(), self.kind);
        let _ = writeln!(s, "task\tclasses\tnew\ttrain\ttest");
        for t in &self.tasks {
            let names = |cs: &[usize]| cs.iter().map(|&c| self.class_names[c].as_str()).collect::<Vec<_>>().join(",");
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                t.index + 1,
                names(&t.classes),
                names(&t.new_classes),
                t.train.len(),
                t.test.len()
            );
        }
        s
    }

    pub fn write_manifest(&self, path: &Path, seed: u64) -> Result<()> {
        std::fs::write(path, self.manifest(seed)).map_err(|e| Error::io(path, e))
    }
}

/// Stratified split of `(id, class)` pairs. Each class with `n ≥ 2` examples
/// puts `round(n · fraction)` in train, clamped so both sides are nonempty; a
/// single example goes to train.
pub fn split_task<R: Rng + ?Sized>(examples: &[(usize, usize)], policy: SplitPolicy, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(policy.train_fraction > 0.0 && policy.train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {} outside (0, 1)", policy.train_fraction)));
    }
    if examples.is_empty() {
        return Err(Error::Empty("task with no examples"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(id, c) in examples {
        by_class.entry(c).or_default().push(id);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut ids) in by_class {
        ids.shuffle(rng);
        let n = ids.len();
        if n == 1 {
            warn!("class {class} has a single example; it goes to train only");
            train.push(ids[0]);
            continue;
        }
        let k = ((n as f64 * policy.train_fraction).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&ids[..k]);
        test.extend_from_slice(&ids[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Class-incremental pattern schedule over the laundering edges of `ds`.
/// Not-classified edges are dropped.
pub fn ibm_schedule<R: Rng + ?Sized>(ds: &IbmDataset, opts: &IbmScheduleOptions, rng: &mut R) -> Result<TaskSequence> {
    let order: Vec<Pattern> = match &opts.patterns {
        None => opts.ordering.permutation().to_vec(),
        Some(subset) => opts.ordering.permutation().into_iter().filter(|p| subset.contains(p)).collect(),
    };
    if order.is_empty() {
        return Err(Error::Config("pattern subset selects no pattern".into()));
    }
    let k = order.len();
    let mut pattern_edges: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut negatives = Vec::new();
    for (e, l) in ds.labels.iter().enumerate() {
        match l {
            EdgeLabel::Legitimate => negatives.push(e),
            EdgeLabel::Pattern(p) => {
                if let Some(t) = order.iter().position(|q| q == p) {
                    pattern_edges[t].push(e);
                }
            }
            EdgeLabel::NotClassified => {}
        }
    }
    if let Some(t) = pattern_edges.iter().position(Vec::is_empty) {
        return Err(Error::MissingPattern(order[t].name().to_string()));
    }
    if negatives.is_empty() {
        return Err(Error::Empty("no legitimate edges"));
    }
    if let Some(max) = opts.max_negatives {
        if max == 0 {
            return Err(Error::Config("max_negatives must be positive".into()));
        }
        if negatives.len() > max {
            negatives.shuffle(rng);
            negatives.truncate(max);
            negatives.sort_unstable();
        }
    }

    let mut labels = vec![None; ds.edge_count()];
    let mut per_task: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    match opts.negatives {
        NegativePlacement::FirstTask => per_task[0].extend(negatives.iter().map(|&e| (e, 0))),
        NegativePlacement::AllTasks => {
            let mut shuffled = negatives.clone();
            shuffled.shuffle(rng);
            for (i, &e) in shuffled.iter().enumerate() {
                per_task[i % k].push((e, 0));
            }
        }
    }
    for &e in &negatives {
        labels[e] = Some(0);
    }
    for (t, edges) in pattern_edges.iter().enumerate() {
        for &e in edges {
            labels[e] = Some(t + 1);
            per_task[t].push((e, t + 1));
        }
    }

    let mut tasks = Vec::with_capacity(k);
    for (t, examples) in per_task.iter_mut().enumerate() {
        examples.sort_unstable();
        let (train, test) = split_task(examples, opts.split, rng)?;
        let mut classes: Vec<usize> = vec![t + 1];
        if examples.iter().any(|&(_, c)| c == 0) {
            classes.insert(0, 0);
        }
        let new_classes = if t == 0 { vec![0, 1] } else { vec![t + 1] };
        tasks.push(TaskSpec {
            index: t,
            classes,
            new_classes,
            train,
            test,
        });
    }
    let class_names = std::iter::once("legitimate".to_string()).chain(order.iter().map(|p| p.name().to_string())).collect();
    Ok(TaskSequence {
        kind: ExampleKind::Edge,
        class_names,
        labels,
        tasks,
    })
}

/// Domain-incremental temporal schedule: `granularity` tasks of
/// `49 / granularity` consecutive time steps. Unknown-label nodes stay out of
/// every example set.
pub fn elliptic_schedule<R: Rng + ?Sized>(
    ds: &EllipticDataset,
    granularity: usize,
    split: SplitPolicy,
    rng: &mut R,
) -> Result<TaskSequence> {
    if granularity != 7 && granularity != 49 {
        return Err(Error::Config(format!("elliptic granularity must be 7 or 49, got {granularity}")));
    }
    let steps = TIME_STEPS as usize;
    let per_task = steps / granularity;
    let mut per: Vec<Vec<(usize, usize)>> = vec![Vec::new(); granularity];
    let mut labels = vec![None; ds.node_count()];
    for (node, (&step, label)) in ds.time_steps.iter().zip(&ds.labels).enumerate() {
        if !(1..=TIME_STEPS).contains(&step) {
            return Err(Error::TimeStep { node, step: step as i64 });
        }
        let step = step as usize;
        if let Some(c) = label.class() {
            labels[node] = Some(c);
            per[(step - 1) / per_task].push((node, c));
        }
    }
    let mut tasks = Vec::with_capacity(granularity);
    for (t, examples) in per.iter().enumerate() {
        let (train, test) = split_task(examples, split, rng)?;
        tasks.push(TaskSpec {
            index: t,
            classes: vec![0, 1],
            new_classes: if t == 0 { vec![0, 1] } else { Vec::new() },
            train,
            test,
        });
    }
    Ok(TaskSequence {
        kind: ExampleKind::Node,
        class_names: vec!["licit".into(), "illicit".into()],
        labels,
        tasks,
    })
}

/// Task index (1-based) holding time step `step` at the given granularity.
pub fn elliptic_task_of(step: usize, granularity: usize) -> usize {
    (step - 1) / (TIME_STEPS as usize / granularity) + 1
}
