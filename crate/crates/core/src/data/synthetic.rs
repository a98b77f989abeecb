//! Desk-scale transaction graphs with injected laundering motifs.
//!
//! Background accounts trade uniformly at random. Each pattern instance
//! lives on fresh accounts that additionally make a few ordinary
//! transactions with background accounts.
//!
//! Size conventions (`size`, `width` default to `size`):
//! fan-out / fan-in: `size` counterparties; cycle: ring of `size` ≥ 3;
//! bipartite: `size` senders × `width` receivers; scatter-gather: source →
//! `size` intermediaries → sink; gather-scatter: `size` senders → hub →
//! `width` receivers; stack: layers of `size`, `width`, `size` accounts with
//! complete links between consecutive layers; random: random tree on `size`
//! ≥ 2 accounts.

use std::collections::{HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EdgeLabel, IbmDataset, Pattern, Transaction};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub kind: Pattern,
    pub instances: usize,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

impl PatternSpec {
    pub fn width(&self) -> usize {
        self.width.unwrap_or(self.size)
    }

    pub fn edges_per_instance(&self) -> usize {
        let (s, w) = (self.size, self.width());
        match self.kind {
            Pattern::FanOut | Pattern::FanIn | Pattern::Cycle => s,
            Pattern::Bipartite => s * w,
            Pattern::ScatterGather => 2 * s,
            Pattern::GatherScatter => s + w,
            Pattern::Stack => 2 * s * w,
            Pattern::Random => s.saturating_sub(1),
        }
    }

    fn check(&self) -> Result<()> {
        let min = match self.kind {
            Pattern::Cycle => 3,
            Pattern::Random => 2,
            _ => 1,
        };
        if self.size < min || self.width() < 1 {
            return Err(Error::Infeasible(format!(
                "{} needs size >= {min} and width >= 1 (got {}, {})",
                self.kind,
                self.size,
                self.width()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub background_nodes: usize,
    pub background_edges: usize,
    /// Ordinary transactions each pattern account makes with the background.
    #[serde(default = "default_attach")]
    pub attach_edges: usize,
    /// Laundering transactions outside every attempt.
    #[serde(default)]
    pub not_classified_edges: usize,
    pub patterns: Vec<PatternSpec>,
}

fn default_attach() -> usize {
    2
}

impl Default for SyntheticSpec {
    /// One instance of every motif inside ~30 000 background transactions,
    /// about 0.1% laundering.
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            background_nodes: 2_000,
            background_edges: 30_000,
            attach_edges: default_attach(),
            not_classified_edges: 0,
            patterns: Pattern::ALL
                .into_iter()
                .map(|kind| PatternSpec {
                    kind,
                    instances: 1,
                    size: match kind {
                        Pattern::Cycle | Pattern::Random => 5,
                        Pattern::Bipartite | Pattern::Stack | Pattern::ScatterGather | Pattern::GatherScatter => 2,
                        _ => 4,
                    },
                    width: None,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternInstance {
    pub kind: Pattern,
    pub size: usize,
    pub width: usize,
    pub nodes: Vec<usize>,
    /// Edge ids of the laundering transactions.
    pub edges: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: IbmDataset,
    pub instances: Vec<PatternInstance>,
}

impl SyntheticData {
    /// Attempt groups in the layout the IBM writer expects.
    pub fn attempt_groups(&self) -> Vec<(Pattern, Vec<usize>)> {
        self.instances.iter().map(|i| (i.kind, i.edges.clone())).collect()
    }
}

const CURRENCIES: [&str; 3] = ["Euro", "US Dollar", "Yuan"];
const FORMATS: [&str; 5] = ["ACH", "Cash", "Cheque", "Credit Card", "Wire"];
/// 2022-09-01 00:00 UTC in minutes.
const BASE_MINUTES: i64 = 27_699_840;
const WINDOW_MINUTES: i64 = 14 * 24 * 60;

struct Builder {
    rng: ChaCha8Rng,
    accounts: Vec<(String, String)>,
    transactions: Vec<Transaction>,
    labels: Vec<EdgeLabel>,
}

impl Builder {
    fn new_node(&mut self) -> usize {
        let id = self.accounts.len();
        let bank = format!("{:03}", self.rng.random_range(1..=40));
        self.accounts.push((bank, format!("{:09X}", 0x8000_0000u64 + id as u64)));
        id
    }

    fn push(&mut self, from: usize, to: usize, label: EdgeLabel) -> usize {
        let amount = (self.rng.random_range(10f64.ln()..20_000f64.ln()).exp() * 100.0).round() / 100.0;
        let currency = CURRENCIES.choose(&mut self.rng).unwrap().to_string();
        let format = FORMATS.choose(&mut self.rng).unwrap().to_string();
        let timestamp = BASE_MINUTES + self.rng.random_range(0..WINDOW_MINUTES);
        self.transactions.push(Transaction {
            timestamp,
            from,
            to,
            amount_received: amount,
            receiving_currency: currency.clone(),
            amount_paid: amount,
            payment_currency: currency,
            payment_format: format,
            laundering: label.is_laundering(),
        });
        self.labels.push(label);
        self.transactions.len() - 1
    }

    fn fresh(&mut self, k: usize) -> Vec<usize> {
        (0..k).map(|_| self.new_node()).collect()
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    for p in &spec.patterns {
        p.check()?;
    }
    let needs_background = spec.background_edges > 0 || (spec.attach_edges > 0 && spec.patterns.iter().any(|p| p.instances > 0));
    if needs_background && spec.background_nodes < 2 {
        return Err(Error::Infeasible("background needs at least 2 accounts".into()));
    }
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        accounts: Vec::new(),
        transactions: Vec::new(),
        labels: Vec::new(),
    };
    let bg = spec.background_nodes;
    b.fresh(bg);
    for _ in 0..spec.background_edges {
        let s = b.rng.random_range(0..bg);
        let mut t = b.rng.random_range(0..bg - 1);
        if t >= s {
            t += 1;
        }
        b.push(s, t, EdgeLabel::Legitimate);
    }

    let mut instances = Vec::new();
    for p in &spec.patterns {
        let label = EdgeLabel::Pattern(p.kind);
        let (s, w) = (p.size, p.width());
        for _ in 0..p.instances {
            let mut edges = Vec::new();
            let nodes = match p.kind {
                Pattern::FanOut | Pattern::FanIn => {
                    let hub = b.new_node();
                    let others = b.fresh(s);
                    for &o in &others {
                        let (f, t) = if p.kind == Pattern::FanOut { (hub, o) } else { (o, hub) };
                        edges.push(b.push(f, t, label));
                    }
                    std::iter::once(hub).chain(others).collect()
                }
                Pattern::Cycle => {
                    let ring = b.fresh(s);
                    for i in 0..s {
                        edges.push(b.push(ring[i], ring[(i + 1) % s], label));
                    }
                    ring
                }
                Pattern::Bipartite => {
                    let left = b.fresh(s);
                    let right = b.fresh(w);
                    for &l in &left {
                        for &r in &right {
                            edges.push(b.push(l, r, label));
                        }
                    }
                    left.into_iter().chain(right).collect()
                }
                Pattern::ScatterGather => {
                    let src = b.new_node();
                    let mid = b.fresh(s);
                    let sink = b.new_node();
                    for &m in &mid {
                        edges.push(b.push(src, m, label));
                    }
                    for &m in &mid {
                        edges.push(b.push(m, sink, label));
                    }
                    std::iter::once(src).chain(mid).chain(std::iter::once(sink)).collect()
                }
                Pattern::GatherScatter => {
                    let senders = b.fresh(s);
                    let hub = b.new_node();
                    let receivers = b.fresh(w);
                    for &x in &senders {
                        edges.push(b.push(x, hub, label));
                    }
                    for &y in &receivers {
                        edges.push(b.push(hub, y, label));
                    }
                    senders.into_iter().chain(std::iter::once(hub)).chain(receivers).collect()
                }
                Pattern::Stack => {
                    let a = b.fresh(s);
                    let m = b.fresh(w);
                    let c = b.fresh(s);
                    for &x in &a {
                        for &y in &m {
                            edges.push(b.push(x, y, label));
                        }
                    }
                    for &y in &m {
                        for &z in &c {
                            edges.push(b.push(y, z, label));
                        }
                    }
                    a.into_iter().chain(m).chain(c).collect()
                }
                Pattern::Random => {
                    let nodes = b.fresh(s);
                    for i in 1..s {
                        let parent = nodes[b.rng.random_range(0..i)];
                        edges.push(b.push(parent, nodes[i], label));
                    }
                    nodes
                }
            };
            for &n in &nodes {
                for _ in 0..spec.attach_edges {
                    let other = b.rng.random_range(0..bg);
                    if b.rng.random_bool(0.5) {
                        b.push(n, other, EdgeLabel::Legitimate);
                    } else {
                        b.push(other, n, EdgeLabel::Legitimate);
                    }
                }
            }
            instances.push(PatternInstance {
                kind: p.kind,
                size: s,
                width: w,
                nodes,
                edges,
            });
        }
    }
    for _ in 0..spec.not_classified_edges {
        let pair = b.fresh(2);
        b.push(pair[0], pair[1], EdgeLabel::NotClassified);
    }

    let edges = b.transactions.iter().map(|t| (t.from, t.to)).collect();
    let graph = Graph::new(edges, b.accounts.len(), true)?;
    Ok(SyntheticData {
        dataset: IbmDataset {
            accounts: b.accounts,
            transactions: b.transactions,
            labels: b.labels,
            graph,
        },
        instances,
    })
}

/// Checks, from the edge list alone, that `edges` form the motif `kind`
/// with the given size parameters.
pub fn validate_instance(kind: Pattern, size: usize, width: usize, edges: &[(usize, usize)]) -> std::result::Result<(), String> {
    let mut outs: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut ins: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut nodes = HashSet::new();
    let mut seen = HashSet::new();
    for &(s, t) in edges {
        if s == t {
            return Err(format!("self-loop on {s}"));
        }
        if !seen.insert((s, t)) {
            return Err(format!("duplicate edge {s}->{t}"));
        }
        outs.entry(s).or_default().push(t);
        ins.entry(t).or_default().push(s);
        nodes.insert(s);
        nodes.insert(t);
    }
    let outdeg = |n: usize| outs.get(&n).map_or(0, Vec::len);
    let indeg = |n: usize| ins.get(&n).map_or(0, Vec::len);
    let expect = |cond: bool, msg: &str| if cond { Ok(()) } else { Err(msg.to_string()) };
    let pick = |f: &dyn Fn(usize) -> bool| -> Vec<usize> {
        let mut v: Vec<usize> = nodes.iter().copied().filter(|&n| f(n)).collect();
        v.sort_unstable();
        v
    };

    match kind {
        Pattern::FanOut | Pattern::FanIn => {
            expect(edges.len() == size, "edge count")?;
            let hubs = if kind == Pattern::FanOut {
                pick(&|n| outdeg(n) == size && indeg(n) == 0)
            } else {
                pick(&|n| indeg(n) == size && outdeg(n) == 0)
            };
            expect(hubs.len() == 1, "exactly one hub")?;
            expect(nodes.len() == size + 1, "distinct counterparties")?;
            expect(edges.iter().all(|&(s, t)| s == hubs[0] || t == hubs[0]), "every edge touches the hub")
        }
        Pattern::Cycle => {
            expect(size >= 3 && edges.len() == size && nodes.len() == size, "ring size")?;
            expect(nodes.iter().all(|&n| indeg(n) == 1 && outdeg(n) == 1), "in/out degree 1")?;
            let start = edges[0].0;
            let mut cur = start;
            for step in 1..=size {
                cur = outs[&cur][0];
                if cur == start {
                    return expect(step == size, "single ring");
                }
            }
            Err("ring does not close".into())
        }
        Pattern::Bipartite => {
            let left = pick(&|n| indeg(n) == 0);
            let right = pick(&|n| outdeg(n) == 0);
            expect(left.len() == size && right.len() == width, "side sizes")?;
            expect(left.len() + right.len() == nodes.len(), "sides partition the nodes")?;
            expect(edges.len() == size * width, "complete bipartite edge count")?;
            expect(left.iter().all(|&l| outdeg(l) == width), "every sender reaches every receiver")
        }
        Pattern::ScatterGather => {
            let src = pick(&|n| indeg(n) == 0);
            let sink = pick(&|n| outdeg(n) == 0);
            let mid = pick(&|n| indeg(n) == 1 && outdeg(n) == 1);
            expect(src.len() == 1 && sink.len() == 1 && mid.len() == size, "source, sink, intermediaries")?;
            expect(nodes.len() == size + 2 && edges.len() == 2 * size, "sizes")?;
            expect(
                mid.iter().all(|m| ins[m][0] == src[0] && outs[m][0] == sink[0]),
                "each intermediary relays source to sink",
            )
        }
        Pattern::GatherScatter => {
            let hubs = pick(&|n| indeg(n) == size && outdeg(n) == width);
            expect(hubs.len() == 1, "one hub")?;
            let h = hubs[0];
            let senders = pick(&|n| indeg(n) == 0 && outdeg(n) == 1 && outs[&n][0] == h);
            let receivers = pick(&|n| outdeg(n) == 0 && indeg(n) == 1 && ins[&n][0] == h);
            expect(senders.len() == size && receivers.len() == width, "sender/receiver counts")?;
            expect(nodes.len() == size + width + 1 && edges.len() == size + width, "sizes")
        }
        Pattern::Stack => {
            let first = pick(&|n| indeg(n) == 0);
            let last = pick(&|n| outdeg(n) == 0);
            let middle = pick(&|n| indeg(n) > 0 && outdeg(n) > 0);
            expect(first.len() == size && middle.len() == width && last.len() == size, "layer sizes")?;
            expect(edges.len() == 2 * size * width, "edge count")?;
            let mset: HashSet<_> = middle.iter().copied().collect();
            let lset: HashSet<_> = last.iter().copied().collect();
            expect(
                first.iter().all(|f| outs[f].len() == width && outs[f].iter().all(|x| mset.contains(x))),
                "first layer links to all of the middle layer",
            )?;
            expect(
                middle.iter().all(|m| outs[m].len() == size && outs[m].iter().all(|x| lset.contains(x)) && ins[m].len() == size),
                "middle layer links to all of the last layer",
            )
        }
        Pattern::Random => {
            expect(size >= 2 && nodes.len() == size && edges.len() == size - 1, "tree sizes")?;
            let roots = pick(&|n| indeg(n) == 0);
            expect(roots.len() == 1, "single root")?;
            expect(nodes.iter().all(|&n| n == roots[0] || indeg(n) == 1), "one parent per node")?;
            let mut stack = vec![roots[0]];
            let mut reached = HashSet::from([roots[0]]);
            while let Some(n) = stack.pop() {
                for &c in outs.get(&n).into_iter().flatten() {
                    if reached.insert(c) {
                        stack.push(c);
                    }
                }
            }
            expect(reached.len() == size, "tree reaches every node from the root")
        }
    }
}
