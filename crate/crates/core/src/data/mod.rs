//! Dataset types, loaders for the public CSV distributions, feature
//! construction and the synthetic laundering-pattern generator.

pub mod elliptic;
pub mod features;
pub mod ibm;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::graph::Graph;

pub use elliptic::{load_elliptic, write_elliptic, EllipticDataset, NodeLabel, ELLIPTIC_FEATURE_DIM};
pub use features::{featurize_ibm, raw_edge_features, raw_node_features, standardize, IbmFeatures};
pub use ibm::{load_ibm_hismall, write_ibm};
pub use synthetic::{generate_synthetic, validate_instance, PatternInstance, PatternSpec, SyntheticData, SyntheticSpec};

/// The eight laundering motifs of the IBM AML simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    FanOut,
    FanIn,
    GatherScatter,
    ScatterGather,
    Cycle,
    Random,
    Bipartite,
    Stack,
}

impl Pattern {
    pub const ALL: [Pattern; 8] = [
        Pattern::FanOut,
        Pattern::FanIn,
        Pattern::GatherScatter,
        Pattern::ScatterGather,
        Pattern::Cycle,
        Pattern::Random,
        Pattern::Bipartite,
        Pattern::Stack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::FanOut => "fan-out",
            Pattern::FanIn => "fan-in",
            Pattern::GatherScatter => "gather-scatter",
            Pattern::ScatterGather => "scatter-gather",
            Pattern::Cycle => "cycle",
            Pattern::Random => "random",
            Pattern::Bipartite => "bipartite",
            Pattern::Stack => "stack",
        }
    }

    /// Attempt type as written in the patterns file header.
    pub fn attempt_tag(self) -> &'static str {
        match self {
            Pattern::FanOut => "FAN-OUT",
            Pattern::FanIn => "FAN-IN",
            Pattern::GatherScatter => "GATHER-SCATTER",
            Pattern::ScatterGather => "SCATTER-GATHER",
            Pattern::Cycle => "CYCLE",
            Pattern::Random => "RANDOM",
            Pattern::Bipartite => "BIPARTITE",
            Pattern::Stack => "STACK",
        }
    }

    /// Parses an attempt type such as `CYCLE:  Max 5 hops` or `fan-in`.
    pub fn from_attempt_tag(tag: &str) -> Option<Pattern> {
        let head = tag.split(':').next().unwrap_or("").trim().to_ascii_uppercase();
        Pattern::ALL.into_iter().find(|p| p.attempt_tag() == head)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .or_else(|| Pattern::from_attempt_tag(s))
            .ok_or_else(|| Error::UnknownPattern(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeLabel {
    Legitimate,
    Pattern(Pattern),
    /// Laundering transaction outside every delimited attempt.
    NotClassified,
}

impl EdgeLabel {
    pub fn is_laundering(self) -> bool {
        !matches!(self, EdgeLabel::Legitimate)
    }
}

/// One row of the IBM transactions file; `from`/`to` are node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    /// Minutes since the Unix epoch.
    pub timestamp: i64,
    pub from: usize,
    pub to: usize,
    pub amount_received: f64,
    pub receiving_currency: String,
    pub amount_paid: f64,
    pub payment_currency: String,
    pub payment_format: String,
    pub laundering: bool,
}

/// Transactions between accounts with per-edge pattern labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IbmDataset {
    /// `(bank, account)` per node id.
    pub accounts: Vec<(String, String)>,
    pub transactions: Vec<Transaction>,
    pub labels: Vec<EdgeLabel>,
    pub graph: Graph,
}

impl IbmDataset {
    pub fn node_count(&self) -> usize {
        self.accounts.len()
    }

    pub fn edge_count(&self) -> usize {
        self.transactions.len()
    }

    pub fn pattern_counts(&self) -> Vec<(Pattern, usize)> {
        Pattern::ALL
            .into_iter()
            .map(|p| (p, self.labels.iter().filter(|&&l| l == EdgeLabel::Pattern(p)).count()))
            .collect()
    }

    pub fn laundering_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_laundering()).count()
    }

    pub fn not_classified_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == EdgeLabel::NotClassified).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attempt_tags_parse() {
        assert_eq!(Pattern::from_attempt_tag("CYCLE:  Max 12 hops"), Some(Pattern::Cycle));
        assert_eq!(Pattern::from_attempt_tag("GATHER-SCATTER"), Some(Pattern::GatherScatter));
        assert_eq!(Pattern::from_attempt_tag("LOOP"), None);
        assert_eq!("scatter-gather".parse::<Pattern>().unwrap(), Pattern::ScatterGather);
        for p in Pattern::ALL {
            assert_eq!(p.name().parse::<Pattern>().unwrap(), p);
        }
    }
}
